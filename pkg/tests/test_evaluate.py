from __future__ import annotations

import json
from pathlib import Path

import pytest

from riskdesk.backend import FaultProfile
from riskdesk.config import default_config
from riskdesk.evaluate import (
    ROBUSTNESS_MIX,
    compute_metrics,
    emit_report,
    expand_dataset,
    load_corpus,
    robustness_fixtures,
    run_batch,
    synth_alerts,
    write_corpus,
)
from riskdesk.personas import Overlay
from riskdesk.tools import UndefinedMetricError


def test_synth_alerts_deterministic_and_varied():
    a = synth_alerts(30, seed=2)
    b = synth_alerts(30, seed=2)
    assert [x.to_dict() for x in a] == [y.to_dict() for y in b]
    categories = {x.category for x in a}
    assert len(categories) == 6
    severities = {x.severity for x in a}
    assert len(severities) >= 3


def test_expansion_counts():
    alerts = synth_alerts(3, seed=1)
    assert len(expand_dataset(alerts, seed=1)) == 24
    assert len(expand_dataset(alerts, user_modes=2, manager_modes=1, seed=1)) == 6


def test_single_alert_covers_all_mode_combinations():
    corpus = expand_dataset(synth_alerts(1, seed=1), seed=1)
    combos = {(f.user_mode, f.manager_mode) for f in corpus}
    assert combos == {(u, m) for u in range(1, 5) for m in range(1, 3)}
    assert len(corpus) == 8


def test_expansion_requires_alerts():
    with pytest.raises(ValueError):
        expand_dataset([], seed=1)


def test_robustness_mix_sizes():
    fixtures = robustness_fixtures(synth_alerts(40, seed=3), seed=3)
    by_overlay = {}
    for fixture in fixtures:
        by_overlay.setdefault(fixture.overlay, 0)
        by_overlay[fixture.overlay] += 1
    assert by_overlay == {
        "irrelevant_topic": 50,
        "gibberish": 50,
        "emotional_appeal": 50,
        "instruction_injection": 100,
        "tool_spoof": 100,
    }
    assert len(fixtures) == sum(n for _, n in ROBUSTNESS_MIX)


def test_corpus_write_and_load_round_trip(tmp_path):
    corpus = expand_dataset(synth_alerts(2, seed=5), seed=5)
    manifest = write_corpus(corpus, tmp_path / "corpus")
    assert manifest.exists()
    loaded = load_corpus(tmp_path / "corpus")
    assert [f.to_dict() for f in loaded] == [f.to_dict() for f in corpus]
    files = list((tmp_path / "corpus" / "fixtures").glob("*.json"))
    assert len(files) == len(corpus)  # one file per investigation path


def test_compute_metrics_rejects_empty(config):
    with pytest.raises(UndefinedMetricError):
        compute_metrics([], config, {})


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    data = tmp_path_factory.mktemp("eval")
    config = default_config(data)
    corpus = expand_dataset(synth_alerts(4, seed=13), seed=13)
    outcomes, session = run_batch(corpus, config, data, faults=FaultProfile(p_malformed_json=0.2), concurrency=8)
    report = compute_metrics(outcomes, config, {"seed": 13, "concurrency": 8, **config.run_metadata()})
    return outcomes, report, session


def test_batch_closes_everything(small_run):
    outcomes, report, _ = small_run
    assert all(r["state"] == "CLOSED" for r in outcomes)
    assert report.performance["failed_tasks"] == 0
    assert report.performance["total_tasks"] == 32


def test_report_judgment_accuracy_full(small_run):
    _, report, _ = small_run
    assert report.judgment["accuracy_pct"] == 100.0


def test_report_fsr_at_least_osr(small_run):
    _, report, _ = small_run
    assert report.weighted["fsr"] >= report.weighted["osr"]
    for row in report.per_category.values():
        assert row["fsr"] >= row["osr"]


def test_report_performance_fields(small_run):
    _, report, _ = small_run
    perf = report.performance
    assert perf["mean_step_ms"] > 0
    assert perf["mean_e2e_ms"] > perf["mean_step_ms"]
    assert perf["tasks_per_day"] > 0
    assert perf["efficiency_formula"] == "tasks_per_day / human_baseline_per_day"
    assert "1 - human_baseline_per_day / tasks_per_day" in perf["reduction_formula"]


def test_efficiency_arithmetic_matches_reference():
    # throughput 1800/day against a 50/day baseline reads as a 36x gain
    assert 1800.0 / 50.0 == 36.0
    assert abs(100.0 * (1.0 - 50.0 / 1800.0) - 97.222) < 0.01


def test_json_and_markdown_agree(small_run):
    _, report, _ = small_run
    doc = json.loads(emit_report(report, "json"))
    md = emit_report(report, "markdown")
    assert f"{doc['weighted']['osr']:.1f}%" in md
    assert f"{doc['weighted']['fsr']:.1f}%" in md
    assert "| Weighted Average |" in md
    assert "Defense Success Rate" not in md or doc["defense"]


def test_single_category_weighted_equals_category():
    corpus = expand_dataset([synth_alerts(6, seed=8)[0]], seed=8)
    from riskdesk.config import default_config as make_config
    import tempfile

    with tempfile.TemporaryDirectory() as td:
        config = make_config(td)
        outcomes, _ = run_batch(corpus, config, Path(td), concurrency=4)
        report = compute_metrics(outcomes, config, {})
    assert len(report.per_category) == 1
    only = next(iter(report.per_category.values()))
    assert report.weighted["osr"] == only["osr"]
    assert report.weighted["fsr"] == only["fsr"]


def test_rerun_same_seed_byte_identical_report(tmp_path):
    corpus = expand_dataset(synth_alerts(3, seed=21), seed=21)
    blobs = []
    for name in ("one", "two"):
        config = default_config(tmp_path / name)
        outcomes, _ = run_batch(corpus, config, tmp_path / name, concurrency=6)
        report = compute_metrics(outcomes, config, {"seed": 21, "concurrency": 6, **config.run_metadata()})
        blobs.append(emit_report(report, "json"))
    assert blobs[0] == blobs[1]


def test_zero_fault_profile_means_equal_rates(tmp_path):
    corpus = expand_dataset(synth_alerts(2, seed=31), seed=31)
    config = default_config(tmp_path)
    outcomes, _ = run_batch(corpus, config, tmp_path / "d", concurrency=4)
    report = compute_metrics(outcomes, config, {})
    assert report.weighted["osr"] == report.weighted["fsr"] == 100.0
