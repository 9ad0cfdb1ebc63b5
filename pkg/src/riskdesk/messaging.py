"""Channel abstraction between the engine and the humans (or their stand-ins).

Outbound inquiries and notifications route per respondent role to a
simulated respondent, the ops console, or an IM webhook. Inbound text is
delivered verbatim; screening and defenses live in the agent and guard
layers so transcripts stay faithful.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any

import httpx

from .model import InvestigationTask
from .personas import Fixture

logger = logging.getLogger(__name__)


@dataclass
class OutboundMessage:
    task_id: str
    role: str  # user | manager | admin
    identity: str
    text: str
    correlation_id: str
    expects_reply: bool


@dataclass
class InboundReply:
    role: str
    text: str
    correlation_id: str


@dataclass
class SendReceipt:
    channel: str
    delivered: bool
    reply: InboundReply | None = None  # synchronous reply (simulated channel only)


class GatewayError(Exception):
    retryable = True


class Channel:
    name = "base"

    def send(self, message: OutboundMessage, task: InvestigationTask) -> SendReceipt:  # pragma: no cover
        raise NotImplementedError


class ConsoleChannel(Channel):
    """Outbound messages surface through the event stream; humans reply via the API."""

    name = "console"

    def send(self, message: OutboundMessage, task: InvestigationTask) -> SendReceipt:
        return SendReceipt(channel=self.name, delivered=True)


class SimulatedChannel(Channel):
    """Answers from the fixture's scripted respondents, synchronously."""

    name = "simulated"

    def __init__(self):
        self._fixtures: dict[str, Fixture] = {}

    def register(self, task_id: str, fixture: Fixture) -> None:
        self._fixtures[task_id] = fixture

    def send(self, message: OutboundMessage, task: InvestigationTask) -> SendReceipt:
        fixture = self._fixtures.get(message.task_id)
        if fixture is None or not message.expects_reply:
            return SendReceipt(channel=self.name, delivered=True)
        if message.role == "admin":
            text = fixture.admin_reply
        else:
            round_index = task.transcript.rounds_for(message.role) + 1
            text = fixture.reply_for(message.role, round_index)
            if text is None:
                logger.warning(
                    "fixture %s has no %s reply for round %d", fixture.fixture_id, message.role, round_index
                )
                return SendReceipt(channel=self.name, delivered=True)
        return SendReceipt(
            channel=self.name,
            delivered=True,
            reply=InboundReply(role=message.role, text=text, correlation_id=message.correlation_id),
        )


class WebhookChannel(Channel):
    name = "webhook"

    def __init__(self, url: str, retries: int = 2, timeout: float = 10.0, client: httpx.Client | None = None):
        self.url = url
        self.retries = retries
        self._client = client or httpx.Client(timeout=timeout)

    def send(self, message: OutboundMessage, task: InvestigationTask) -> SendReceipt:
        body = {
            "task_id": message.task_id,
            "role": message.role,
            "identity": message.identity,
            "text": message.text,
            "correlation_id": message.correlation_id,
        }
        last = "unreachable"
        for _ in range(self.retries + 1):
            try:
                response = self._client.post(self.url, json=body)
            except httpx.HTTPError as exc:
                last = str(exc)
                continue
            if response.status_code < 400:
                return SendReceipt(channel=self.name, delivered=True)
            last = f"status {response.status_code}"
        raise GatewayError(f"webhook delivery failed after retries: {last}")


class MessagingGateway:
    """Routes outbound messages by respondent role and normalizes inbound payloads."""

    def __init__(self, channels: dict[str, Channel], default: Channel | None = None):
        self._channels = dict(channels)
        self._default = default or ConsoleChannel()

    def channel_for(self, role: str) -> Channel:
        return self._channels.get(role, self._default)

    def send(self, message: OutboundMessage, task: InvestigationTask) -> SendReceipt:
        return self.channel_for(message.role).send(message, task)

    @staticmethod
    def parse_inbound(payload: dict[str, Any]) -> dict[str, Any]:
        """Normalize a webhook/console inbound payload; raises ValueError on junk."""
        if not isinstance(payload, dict):
            raise ValueError("inbound payload must be an object")
        task_id = payload.get("task_id")
        role = payload.get("role")
        text = payload.get("text")
        if not isinstance(task_id, str) or not task_id:
            raise ValueError("missing task_id")
        if role not in ("user", "manager", "admin"):
            raise ValueError(f"bad role {role!r}")
        if not isinstance(text, str):
            raise ValueError("missing text")
        return {
            "task_id": task_id,
            "role": role,
            "identity": str(payload.get("identity", "")),
            "text": text,
            "correlation_id": payload.get("correlation_id"),
        }
