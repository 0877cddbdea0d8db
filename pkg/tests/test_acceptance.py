"""Acceptance suite: one test per criterion, one printed verdict line each.

Criterion 1 (request-reduction replication) runs the shipped desk-scale
scenario exactly as pinned: default rates, batch 1000, caps 150,000,
15 seeds (1..15), median aggregation.
"""

import json
import shutil
import time
from pathlib import Path

import numpy as np
import pytest

from abpipe import classifier as clf
from abpipe.cli import main
from abpipe.model import validate
from abpipe.orchestrator import PipelineEngine, WebStoreRunner
from abpipe.report import compare_pipelines, run_pipeline_once
from abpipe.stats import MetricAccumulator, two_proportion_test, welch_t_test
from abpipe.webstore import WebStore, generate_training_data

from case_generator import make_case
from reference_interpreter import reference_trace
from abpipe.orchestrator import ScriptedRunner, execute_pipeline

DATA = Path(__file__).parent / "data"
SEEDS = list(range(1, 16))


def verdict(number: int, name: str, ok: bool, detail: str) -> None:
    print(f"[criterion {number}] {name}: {'PASS' if ok else 'FAIL'} ({detail})")


@pytest.fixture(scope="module")
def desk_compare(seq_spec, par_spec, scenario):
    started = time.perf_counter()
    report = compare_pipelines(seq_spec, par_spec, scenario, SEEDS, batch_size=1000)
    report.elapsed_s = time.perf_counter() - started
    return report


# ---------------------------------------------------------------------------
# 1. request-reduction replication


def test_criterion_1_request_reduction(desk_compare):
    report = desk_compare
    seq_rec = report.sequential_tests["Recommendation-upgrade"]["decided_requests"]
    par_rec = report.parallel_tests["Recommendation-upgrade"]["decided_requests"]
    direction_ok = par_rec < seq_rec
    runtime_ok = report.elapsed_s < 300
    reduction = report.reduction_pct
    ok = reduction is not None and reduction >= 50.0 and direction_ok and runtime_ok
    verdict(
        1,
        "request reduction (15-seed desk scenario)",
        ok,
        f"median reduction {reduction:.2f}% (bar 50%), parallel rec decided at"
        f" {par_rec:,} vs sequential {seq_rec:,} requests,"
        f" runtime {report.elapsed_s:.1f}s",
    )
    assert direction_ok, "parallel recommendation test must decide earlier"
    assert runtime_ok
    assert reduction is not None and reduction >= 50.0, (
        f"median reduction {reduction:.2f}% is below the 50% bar; the split"
        " mechanism direction holds (parallel recommendation decided at"
        f" {par_rec:,} vs {seq_rec:,} requests) but one parallel"
        " recommendation batch costs ~1/0.042 stream requests, which the"
        " pinned scenario rates cannot amortize"
    )


# ---------------------------------------------------------------------------
# 2. split fractions


def test_criterion_2_split_fractions(desk_compare):
    fractions = desk_compare.split_fractions
    rec = fractions["Recommendation-pipeline"]
    rev = fractions["Review-pipeline"]
    ok = 0.03 <= rec <= 0.06 and 0.93 <= rev <= 0.97
    verdict(
        2,
        "split-fraction fidelity",
        ok,
        f"recommendation {rec * 100:.2f}% in [3,6], review {rev * 100:.2f}% in [93,97]",
    )
    assert 0.03 <= rec <= 0.06
    assert 0.93 <= rev <= 0.97


# ---------------------------------------------------------------------------
# 3. statistics oracle suite


def test_criterion_3_statistics_oracle():
    table = json.loads((DATA / "welch_oracle.json").read_text())
    worst = 0.0
    for case in table["cases"]:
        a = MetricAccumulator("A", "m", case["n_a"], case["mean_a"], case["m2_a"])
        b = MetricAccumulator("B", "m", case["n_b"], case["mean_b"], case["m2_b"])
        result = welch_t_test(a, b, case["direction"])
        worst = max(worst, abs(result.p_value - case["expected_p"]))

    # Welch degenerates to Student for equal sample variances and counts
    rng = np.random.default_rng(8)
    xa = rng.normal(0, 1, 25)
    xb = -xa + 0.3
    acc_a = MetricAccumulator("A", "m")
    acc_a.add_many(xa)
    acc_b = MetricAccumulator("B", "m")
    acc_b.add_many(xb)
    ra = acc_a.variance / acc_a.n
    rb = acc_b.variance / acc_b.n
    se2 = ra + rb
    df = 1.0 / ((ra / se2) ** 2 / (acc_a.n - 1) + (rb / se2) ** 2 / (acc_b.n - 1))
    df_gap = abs(df - (acc_a.n + acc_b.n - 2))

    clicks_a = MetricAccumulator("A", "clicks")
    clicks_a.add_many([1.0] * 1470 + [0.0] * 8530)
    clicks_b = MetricAccumulator("B", "clicks")
    clicks_b.add_many([1.0] * 1617 + [0.0] * 8383)
    proportion = two_proportion_test(clicks_a, clicks_b, "B_not_equal")

    ok = len(table["cases"]) == 100 and worst < 1e-9 and df_gap < 1e-9 and proportion.p_value < 0.05
    verdict(
        3,
        "statistics oracle suite",
        ok,
        f"100 oracle cases, worst |dp| {worst:.2e} (tol 1e-9); Welch-Student"
        f" df gap {df_gap:.2e}; click-rate z-test p {proportion.p_value:.4f}",
    )
    assert len(table["cases"]) == 100
    assert worst < 1e-9
    assert df_gap < 1e-9
    assert proportion.p_value < 0.05


# ---------------------------------------------------------------------------
# 4. algorithm conformance


def test_criterion_4_algorithm_conformance():
    mismatches = 0
    for seed in range(200):
        spec, scripts = make_case(seed)
        trace, _ = execute_pipeline(spec, ScriptedRunner(scripts))
        got = [(e.instance, e.event, e.detail, e.requests_total) for e in trace]
        if got != reference_trace(spec, scripts):
            mismatches += 1
    verdict(
        4,
        "algorithm conformance",
        mismatches == 0,
        f"200 randomized specs, {mismatches} trace mismatches",
    )
    assert mismatches == 0


# ---------------------------------------------------------------------------
# 5. split semantics


def test_criterion_5_split_semantics(par_spec, small_scenario):
    violations: list[str] = []
    state = {"subs": 0}

    def observer(event, knowledge):
        if event.event == "split_entry":
            state["subs"] += len(event.detail["sub_pipelines"])
        elif event.event == "split_exit":
            state["subs"] = 0
        expected = 1 + state["subs"]
        if knowledge.live_count != expected:
            violations.append(
                f"{event.event}: live={knowledge.live_count}, expected={expected}"
            )

    from dataclasses import replace

    config = replace(small_scenario, seed=4)
    store = WebStore(config)
    features, labels = generate_training_data(config, config.train_samples)
    model = clf.train(features, labels, clf.Hyperparams(seed=4))
    runner = WebStoreRunner(store, split_models={"ml-purchase-filter": model})
    engine = PipelineEngine(par_spec, runner, catalog=store.catalog, observer=observer)
    engine.run()

    stats = engine.split_stats["Population-split-purchases-prediction"]
    sets = list(stats.user_ids.values())
    disjoint = not (sets[0] & sets[1])

    serial = run_pipeline_once(par_spec, small_scenario, seed=4)
    threaded = run_pipeline_once(
        par_spec, small_scenario, seed=4, concurrent_splits=True
    )
    modes_equal = serial.engine.results == threaded.engine.results

    ok = not violations and disjoint and modes_equal and engine.knowledge.live_count == 0
    verdict(
        5,
        "split semantics",
        ok,
        f"lifecycle violations {len(violations)}, user sets disjoint {disjoint},"
        f" serial==concurrent {modes_equal}",
    )
    assert not violations, violations[:5]
    assert disjoint
    assert modes_equal
    assert engine.knowledge.live_count == 0


# ---------------------------------------------------------------------------
# 6. overhead report


def test_criterion_6_overhead(desk_compare, scenario):
    overhead = desk_compare.overhead
    triplet_ok = {"train_ms", "deploy_ms", "predict_ms_median"} <= set(overhead)
    predict_ok = overhead["predict_ms_median"] <= 1.0

    features, labels = generate_training_data(scenario, 20_000)
    model = clf.train(features, labels, clf.Hyperparams(seed=1))
    train_ok = model.train_time_ms <= 5_000

    ok = triplet_ok and predict_ok and train_ok
    verdict(
        6,
        "overhead report",
        ok,
        f"triplet {sorted(overhead)}, predict median"
        f" {overhead['predict_ms_median']:.4f} ms (<=1),"
        f" 20k-row train {model.train_time_ms:.0f} ms (<=5000)",
    )
    assert triplet_ok
    assert predict_ok
    assert train_ok


# ---------------------------------------------------------------------------
# 7. determinism


def _tree_bytes(folder: Path, skip=()) -> dict:
    return {
        p.relative_to(folder).as_posix(): p.read_bytes()
        for p in sorted(folder.rglob("*"))
        if p.is_file() and p.name not in skip
    }


def test_criterion_7_determinism(tmp_path, seq_bundle, par_bundle):
    scenario_file = Path(__file__).parent.parent / "scenarios" / "scenario.json"
    issues = []

    run_dirs = []
    for name in ("run1", "run2"):
        out = tmp_path / name
        assert (
            main(
                [
                    "run",
                    str(par_bundle),
                    "--scenario",
                    str(scenario_file),
                    "--seed",
                    "9",
                    "--out",
                    str(out),
                ]
            )
            == 0
        )
        run_dirs.append(_tree_bytes(out))
    if run_dirs[0] != run_dirs[1]:
        issues.append("run artifacts differ")

    gen = []
    for name in ("g1.csv", "g2.csv"):
        path = tmp_path / name
        assert (
            main(
                [
                    "gen-data",
                    "--scenario",
                    str(scenario_file),
                    "--n",
                    "2000",
                    "--out",
                    str(path),
                ]
            )
            == 0
        )
        gen.append(path.read_bytes())
    if gen[0] != gen[1]:
        issues.append("gen-data artifacts differ")

    models = []
    for name in ("m1.json", "m2.json"):
        path = tmp_path / name
        assert (
            main(["train", str(tmp_path / "g1.csv"), "--seed", "3", "--out", str(path)])
            == 0
        )
        models.append(path.read_bytes())
    if models[0] != models[1]:
        issues.append("model files differ")

    compares = []
    overhead_keys = []
    for name in ("c1", "c2"):
        out = tmp_path / name
        assert (
            main(
                [
                    "compare",
                    str(seq_bundle),
                    str(par_bundle),
                    "--scenario",
                    str(scenario_file),
                    "--runs",
                    "2",
                    "--seeds",
                    "11,12",
                    "--out",
                    str(out),
                ]
            )
            == 0
        )
        # overhead.json carries measured wall-times and is compared by shape
        compares.append(_tree_bytes(out, skip=("overhead.json",)))
        overhead_keys.append(set(json.loads((out / "overhead.json").read_text())))
    if compares[0] != compares[1]:
        issues.append("compare artifacts differ")
    if overhead_keys[0] != overhead_keys[1]:
        issues.append("overhead keys differ")

    verdict(7, "determinism", not issues, "; ".join(issues) or "all artifacts byte-identical")
    assert not issues, issues


# ---------------------------------------------------------------------------
# 8. validation suite


def _mutate_bundle(src: Path, dst: Path, mutate) -> None:
    shutil.copytree(src, dst)
    mutate(dst)


def test_criterion_8_validation_suite(tmp_path, seq_bundle, par_bundle, capsys):
    detected = {}

    def dangling(bundle: Path):
        record = json.loads((bundle / "pipeline.json").read_text())
        record["experiments"].append("Ghost-test")
        (bundle / "pipeline.json").write_text(json.dumps(record))

    def non_exclusive(bundle: Path):
        path = bundle / "splits" / "Population-split-purchases-prediction.json"
        record = json.loads(path.read_text())
        record["conditionalStatements"] = [
            {"op": "==", "value": 0},
            {"op": "==", "value": 0},
        ]
        path.write_text(json.dumps(record))

    def interfering(bundle: Path):
        record = json.loads((bundle / "pipeline.json").read_text())
        for sub in record["subPipelines"]:
            if sub["id"] == "Recommendation-pipeline":
                sub["experiments"].append("Review-upgrade")
        (bundle / "pipeline.json").write_text(json.dumps(record))

    def unreachable(bundle: Path):
        (bundle / "rules" / "GUI-loop.json").write_text(
            json.dumps(
                {
                    "name": "GUI-loop",
                    "assocAbTest": "GUI-upgrade",
                    "condStat": "p_value >= 0",
                    "subseqAbTest": "GUI-upgrade",
                }
            )
        )
        record = json.loads((bundle / "pipeline.json").read_text())
        record["transitionRules"] = ["GUI-loop"]
        (bundle / "pipeline.json").write_text(json.dumps(record))

    def bad_fractions(bundle: Path):
        path = bundle / "experiments" / "GUI-upgrade.json"
        record = json.loads(path.read_text())
        record["abAssignment"] = [0.7, 0.7]
        path.write_text(json.dumps(record))

    cases = {
        "unresolved-reference": (seq_bundle, dangling),
        "non-exclusive-split-conditions": (par_bundle, non_exclusive),
        "interfering-sub-pipelines": (par_bundle, interfering),
        "unreachable-end": (seq_bundle, unreachable),
        "bad-assignment-fractions": (seq_bundle, bad_fractions),
    }
    for code, (src, mutate) in cases.items():
        bundle = tmp_path / code
        _mutate_bundle(src, bundle, mutate)
        exit_code = main(["validate", str(bundle)])
        out = capsys.readouterr().out
        if code == "unresolved-reference":
            detected[code] = exit_code == 1 and "Ghost-test" in out
        else:
            detected[code] = exit_code == 1 and code in out

    clean = main(["validate", str(seq_bundle)]) == 0 and main(
        ["validate", str(par_bundle)]
    ) == 0
    capsys.readouterr()

    ok = all(detected.values()) and clean
    verdict(
        8,
        "validation suite",
        ok,
        f"detected {sorted(k for k, v in detected.items() if v)}; shipped clean {clean}",
    )
    assert all(detected.values()), detected
    assert clean
