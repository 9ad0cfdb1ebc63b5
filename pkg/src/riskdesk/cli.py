"""Command-line entry points: evaluate, generate-fixtures, replay, ingest, serve."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .alerts import normalize_alert
from .backend import FaultProfile
from .config import ConfigError, default_config, load_config
from .model import Alert, AlertOrigin
from .store import EventLogStore


def _load_engine_config(config_path: str | None, data_dir: str | None):
    try:
        config = load_config(config_path) if config_path else default_config()
    except ConfigError as exc:
        for violation in exc.violations:
            click.echo(f"config error: {violation}", err=True)
        sys.exit(2)
    if data_dir:
        config.data_dir = Path(data_dir)
    return config


def _load_alerts(alerts_path: str | None, scale: int, seed: int) -> list[Alert]:
    from .evaluate import synth_alerts

    if alerts_path:
        docs = json.loads(Path(alerts_path).read_text(encoding="utf-8"))
        alerts = []
        for doc in docs:
            alerts.append(normalize_alert(doc, origin=AlertOrigin.QUEUE))
        return alerts
    return synth_alerts(scale, seed)


@click.group()
def main() -> None:
    """Desk-scale risk investigation engine."""


@main.command()
@click.option("--alerts", "alerts_path", type=click.Path(exists=True), help="JSON file with raw alert documents.")
@click.option("--scale", default=200, show_default=True, help="Synthetic alert count when --alerts is not given.")
@click.option("--seed", default=0, show_default=True)
@click.option("--concurrency", default=50, show_default=True)
@click.option("--faults", "faults_path", type=click.Path(exists=True), help="JSON fault profile for the scripted backend.")
@click.option("--out", "out_path", default="report.json", show_default=True)
@click.option("--markdown", "md_path", default=None, help="Also write a markdown rendering here.")
@click.option("--data-dir", default=None, help="Event-log directory (default: <config data_dir>).")
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--robustness/--no-robustness", default=True, show_default=True, help="Include the noise/adversarial fixture sets.")
@click.option("--resume", is_flag=True, help="Rehydrate existing task logs before running.")
def evaluate(alerts_path, scale, seed, concurrency, faults_path, out_path, md_path, data_dir, config_path, robustness, resume):
    """Run a scripted batch over the expanded fixture corpus and emit metrics."""
    from .evaluate import compute_metrics, emit_report, expand_dataset, robustness_fixtures, run_batch

    config = _load_engine_config(config_path, data_dir)
    alerts = _load_alerts(alerts_path, scale, seed)
    corpus = expand_dataset(alerts, seed=seed)
    if robustness:
        corpus = corpus + robustness_fixtures(alerts, seed=seed)
    faults = FaultProfile.from_dict(json.loads(Path(faults_path).read_text())) if faults_path else FaultProfile()

    click.echo(f"fixtures: {len(corpus)}  concurrency: {concurrency}  data: {config.data_dir}")
    outcomes, session = run_batch(corpus, config, config.data_dir, faults=faults, concurrency=concurrency, resume=resume)
    run_meta = {
        "seed": seed,
        "concurrency": concurrency,
        "faults": faults.to_dict(),
        "fixtures": len(corpus),
        **config.run_metadata(),
    }
    report = compute_metrics(outcomes, config, run_meta)
    Path(out_path).write_text(emit_report(report, "json"), encoding="utf-8")
    if md_path:
        Path(md_path).write_text(emit_report(report, "markdown"), encoding="utf-8")
    click.echo(f"closed {report.performance['closed_tasks']}/{report.performance['total_tasks']} tasks")
    click.echo(f"weighted OSR {report.weighted['osr']:.1f}%  FSR {report.weighted['fsr']:.1f}%")
    click.echo(f"judgment accuracy {report.judgment['accuracy_pct']:.1f}%")
    click.echo(f"report written to {out_path}")


@main.command("generate-fixtures")
@click.option("--alerts", "alerts_path", type=click.Path(exists=True))
@click.option("--scale", default=200, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", default="corpus", show_default=True)
@click.option("--robustness/--no-robustness", default=False, show_default=True)
def generate_fixtures(alerts_path, scale, seed, out_dir, robustness):
    """Expand alerts into the fixture corpus and write it to disk."""
    from .evaluate import expand_dataset, robustness_fixtures, write_corpus

    alerts = _load_alerts(alerts_path, scale, seed)
    corpus = expand_dataset(alerts, seed=seed)
    if robustness:
        corpus = corpus + robustness_fixtures(alerts, seed=seed)
    manifest = write_corpus(corpus, Path(out_dir))
    click.echo(f"{len(corpus)} fixtures written under {out_dir} (manifest: {manifest})")


@main.command()
@click.option("--task", "task_id", required=True)
@click.option("--data-dir", default="riskdesk-data", show_default=True)
def replay(task_id, data_dir):
    """Print a task's event history and the transcript it folds into."""
    store = EventLogStore(Path(data_dir))
    events = store.read_events(task_id)
    if not events:
        click.echo(f"no events for task {task_id}", err=True)
        sys.exit(1)
    from .model import fold_events

    for event in events:
        click.echo(f"{event.seq:4d}  {event.kind.value:18s}  {json.dumps(event.payload)[:140]}")
    task = fold_events(events)
    click.echo("-" * 60)
    click.echo(f"state: {task.state.value}  verdict: {task.verdict.label.value if task.verdict else '-'}")
    for exchange in task.transcript.exchanges:
        who = exchange.role if exchange.role != "agent" else f"agent->{exchange.respondent}"
        click.echo(f"[{who}] {exchange.text}")


@main.command()
@click.argument("source", type=click.Path(exists=True))
@click.option("--data-dir", default="riskdesk-data", show_default=True)
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
def ingest(source, data_dir, config_path):
    """Queue-style intake: an .ndjson alert file, or an intake directory whose
    files are consumed and renamed to .done."""
    from .gateway import AlertGateway
    from .api import EngineRuntime

    config = _load_engine_config(config_path, data_dir)
    runtime = EngineRuntime(config)
    runtime.coordinator.resume_all()
    gateway = AlertGateway(runtime.coordinator)

    source = Path(source)
    if source.is_dir():
        consumed = gateway.consume_intake_dir(source)
        for name, outcomes in consumed.items():
            ok = sum(1 for o in outcomes if o.get("task_id"))
            click.echo(f"{name}: {ok}/{len(outcomes)} records accepted")
        if not consumed:
            click.echo("nothing to consume")
        return

    records = [json.loads(line) for line in source.read_text().splitlines() if line.strip()]
    outcomes = gateway.ingest_queue(records)
    ok = sum(1 for o in outcomes if o.get("task_id"))
    click.echo(f"{ok}/{len(outcomes)} records accepted")
    for i, outcome in enumerate(outcomes):
        if not outcome.get("task_id"):
            click.echo(f"  record {i}: {outcome}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8800, show_default=True)
@click.option("--data-dir", default="riskdesk-data", show_default=True)
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--demo", default=0, help="Seed N scripted demo investigations at startup.")
@click.option("--demo-seed", default=42, show_default=True)
@click.option("--console-dir", default=None, help="Directory with the built ops console (served at /console).")
def serve(host, port, data_dir, config_path, demo, demo_seed, console_dir):
    """Run the HTTP API (and optionally the ops console) over a live engine."""
    import uvicorn

    from .api import EngineRuntime, create_app

    config = _load_engine_config(config_path, data_dir)
    if demo:
        config.channels = {**config.channels, "user": "simulated", "manager": "simulated", "admin": "console"}
    runtime = EngineRuntime(config, demo_tasks=demo, demo_seed=demo_seed)
    default_console = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    console = Path(console_dir) if console_dir else default_console
    app = create_app(runtime, console_dir=console if console.is_dir() else None)
    uvicorn.run(app, host=host, port=port, log_level="info")


if __name__ == "__main__":
    main()
