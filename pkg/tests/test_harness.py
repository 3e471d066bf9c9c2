import dataclasses
import json

import pytest

from saslab.harness import (
    ConfigError,
    ExperimentConfig,
    build_report,
    exit_code_for,
    report_content,
    report_csv_text,
    report_json_bytes,
    run_experiment,
    sweep,
    wilson_interval,
)


def test_honest_experiment_all_completions():
    summary = run_experiment(
        ExperimentConfig(protocol="kex3", trials=200, seed=7)
    )
    assert summary.successes == 200
    assert summary.rate == 1.0
    assert summary.verdict == "within-bound"
    assert summary.expectation == "defended"
    assert summary.strategy == "honest"


def test_collision_demo_violates_bound_as_expected():
    summary = run_experiment(
        ExperimentConfig(
            protocol="kex2", strategy="kex2-collision", n_e=8,
            budget=100_000, trials=20, seed=7,
        )
    )
    assert summary.rate == 1.0
    assert summary.verdict == "violates-bound"
    assert summary.expectation == "demonstration"
    assert 2**7 <= summary.mean_iterations <= 2**9
    assert exit_code_for([summary]) == 0  # demonstrations do not gate CI


def test_defended_forge_within_bound():
    summary = run_experiment(
        ExperimentConfig(
            protocol="kex3", strategy="random-forge", n_e=8, trials=2000, seed=7
        )
    )
    assert summary.verdict == "within-bound"
    assert summary.bound == 2 * 2**-8
    assert exit_code_for([summary]) == 0


def test_exit_code_gates_on_defended_violation():
    summary = run_experiment(
        ExperimentConfig(protocol="kex3", strategy="random-forge", n_e=8, trials=50, seed=7)
    )
    forced = dataclasses.replace(summary, verdict="violates-bound")
    assert exit_code_for([forced]) == 2


def test_same_seed_same_summary():
    config = ExperimentConfig(
        protocol="kem3-commit", strategy="random-forge", n_e=8, trials=300, seed=41
    )
    first = run_experiment(config)
    second = run_experiment(config)
    assert first == second  # wall_time_s is excluded from comparison


def test_parallel_execution_matches_sequential():
    config = ExperimentConfig(protocol="kem4", trials=60, seed=3)
    sequential = run_experiment(config)
    parallel = run_experiment(dataclasses.replace(config, parallelism=4))
    assert sequential == parallel


def test_report_bytes_reproducible():
    config = ExperimentConfig(protocol="kem2", strategy="kem2-replica", n_e=8, trials=10, seed=9)
    a = build_report([run_experiment(config)], config=config)
    b = build_report([run_experiment(config)], config=config)
    assert report_content(a) == report_content(b)
    assert a["content_sha256"] == b["content_sha256"]
    stripped = lambda r: json.loads(report_json_bytes(r).decode())
    sa, sb = stripped(a), stripped(b)
    for excluded in ("generated_at", "wall_times_s"):
        sa.pop(excluded), sb.pop(excluded)
    assert json.dumps(sa, sort_keys=True) == json.dumps(sb, sort_keys=True)


def test_report_json_record_fields():
    config = ExperimentConfig(
        protocol="kem2", strategy="kem-same-key", kem2_entropy="key-only",
        trials=5, seed=1,
    )
    report = build_report([run_experiment(config)], config=config)
    record = report["results"][0]
    for key in ("strategy", "protocol", "n_e", "mode", "trials", "successes",
                "mean_iterations", "bound", "seed"):
        assert key in record, key


def test_csv_report_shape():
    config = ExperimentConfig(protocol="kex3", trials=5, seed=2)
    text = report_csv_text([run_experiment(config)])
    lines = text.strip().splitlines()
    assert len(lines) == 2
    assert lines[0].startswith("protocol,strategy,group,mode,n_e,trials")
    assert lines[1].split(",")[0] == "kex3"


def test_sweep_rates_track_entropy_width():
    config = ExperimentConfig(protocol="kex3", strategy="random-forge", seed=7)
    summaries = sweep(config, [4, 8], trials_per_point=[3000, 3000])
    assert [s.n_e for s in summaries] == [4, 8]
    for summary, p in zip(summaries, (2**-4, 2**-8)):
        assert summary.wilson_low <= p <= summary.wilson_high
    # monotone non-increasing up to interval overlap
    assert summaries[1].rate <= summaries[0].rate or (
        summaries[1].wilson_low <= summaries[0].wilson_high
    )


def test_sweep_empty_list_rejected():
    with pytest.raises(ConfigError):
        sweep(ExperimentConfig(protocol="kex3"), [])


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(protocol="kex3", strategy="kem-same-key"),
        dict(protocol="nope"),
        dict(protocol="kex2", strategy="bogus"),
        dict(protocol="kex3", trials=0),
        dict(protocol="kex3", n_e=2),
        dict(protocol="kex3", kem2_entropy="key-only"),
        dict(protocol="kem2", strategy="kem2-combined", kem_mode="det"),
        dict(protocol="kem2", strategy="kem2-replica", kem2_entropy="key-only"),
        dict(protocol="kex3", group="toy512"),
    ],
)
def test_invalid_configs_rejected(kwargs):
    with pytest.raises(ConfigError):
        ExperimentConfig(**kwargs).validate()


def test_wilson_interval_sane():
    low, high = wilson_interval(0, 100)
    assert low == 0.0 and 0.0 < high < 0.05
    low, high = wilson_interval(50, 100)
    assert 0.4 < low < 0.5 < high < 0.6
    low, high = wilson_interval(100, 100)
    assert high == 1.0 and low > 0.95


def test_budget_defaults_to_entropy_scaled():
    config = ExperimentConfig(protocol="kex2", strategy="kex2-collision", n_e=8)
    assert config.effective_budget() == 1 << 12
    assert dataclasses.replace(config, budget=77).effective_budget() == 77
