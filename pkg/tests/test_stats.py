import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abpipe.model import ABTestSpec, Hypothesis
from abpipe.stats import (
    DegeneratePooledProportionError,
    InsufficientSamplesError,
    MetricAccumulator,
    NonBinarySamplesError,
    SequentialMonitor,
    StatsError,
    accumulate,
    normal_sf,
    sequential_monitor,
    student_t_sf,
    two_proportion_test,
    welch_t_test,
)

DATA = Path(__file__).parent / "data"


def acc_from(values, variant="A", metric="m"):
    acc = MetricAccumulator(variant, metric)
    for v in values:
        acc.add(v)
    return acc


# ---------------------------------------------------------------------------
# accumulator


def test_first_sample():
    acc = MetricAccumulator("A", "clicks")
    accumulate(acc, 5.0)
    assert (acc.n, acc.mean, acc.m2) == (1, 5.0, 0.0)


def test_two_pass_variance_agreement():
    acc = acc_from([0, 0, 1, 1])
    assert acc.n == 4
    assert acc.mean == pytest.approx(0.5)
    assert acc.variance == pytest.approx(1 / 3)


def test_merge_matches_concatenation():
    left = acc_from([0, 1])
    right = acc_from([1, 0])
    merged = left.merge(right)
    straight = acc_from([0, 1, 1, 0])
    assert merged.n == straight.n
    assert merged.mean == pytest.approx(straight.mean, rel=1e-12)
    assert merged.m2 == pytest.approx(straight.m2, rel=1e-12)


def test_rejects_non_finite():
    acc = MetricAccumulator("A", "m")
    with pytest.raises(StatsError):
        acc.add(float("nan"))
    with pytest.raises(StatsError):
        acc.add_many([1.0, float("inf")])


@given(
    st.lists(
        st.floats(min_value=-1e6, max_value=1e6, allow_nan=False),
        min_size=1,
        max_size=200,
    ),
    st.integers(min_value=0, max_value=200),
)
@settings(max_examples=150, deadline=None)
def test_merge_associativity_property(values, cut):
    cut = min(cut, len(values))
    merged = acc_from(values[:cut]).merge(acc_from(values[cut:]))
    straight = acc_from(values)
    assert merged.n == straight.n
    assert math.isclose(merged.mean, straight.mean, rel_tol=1e-9, abs_tol=1e-9)
    assert math.isclose(merged.m2, straight.m2, rel_tol=1e-9, abs_tol=1e-6)
    assert merged.m2 >= -1e-9


@given(
    st.lists(
        st.floats(min_value=-1e3, max_value=1e3, allow_nan=False),
        min_size=0,
        max_size=100,
    )
)
@settings(max_examples=100, deadline=None)
def test_bulk_equals_stream(values):
    bulk = MetricAccumulator("A", "m")
    bulk.add_many(values)
    stream = acc_from(values)
    assert bulk.n == stream.n
    assert math.isclose(bulk.mean, stream.mean, rel_tol=1e-9, abs_tol=1e-9)
    assert math.isclose(bulk.m2, stream.m2, rel_tol=1e-9, abs_tol=1e-6)


# ---------------------------------------------------------------------------
# welch


def test_identical_accumulators_p_one():
    a = acc_from([1.0, 2.0, 3.0], "A")
    b = acc_from([1.0, 2.0, 3.0], "B")
    result = welch_t_test(a, b, "B_not_equal")
    assert result.p_value == pytest.approx(1.0)
    assert not result.significant


def test_seeded_offset_matches_reference_package():
    scipy_stats = pytest.importorskip("scipy.stats")
    rng = np.random.default_rng(42)
    xa = rng.normal(0.0, 1.0, 50)
    xb = xa + 1.0
    a = acc_from(xa, "A")
    b = acc_from(xb, "B")
    result = welch_t_test(a, b, "B_not_equal")
    expected = scipy_stats.ttest_ind(xb, xa, equal_var=False).pvalue
    assert abs(result.p_value - expected) < 1e-9


def test_insufficient_samples():
    with pytest.raises(InsufficientSamplesError):
        welch_t_test(acc_from([1.0]), acc_from([0.0, 1.0, 2.0]), "B_greater")


def test_zero_variance_both_degenerate():
    same = welch_t_test(acc_from([2.0, 2.0]), acc_from([2.0, 2.0]), "B_not_equal")
    assert same.p_value == 1.0
    differ = welch_t_test(acc_from([1.0, 1.0]), acc_from([2.0, 2.0]), "B_not_equal")
    assert differ.p_value == 0.0


def test_frozen_oracle_table():
    """100 seeded cases against the pre-built independent p-value oracle."""
    table = json.loads((DATA / "welch_oracle.json").read_text())
    assert len(table["cases"]) == 100
    for case in table["cases"]:
        a = MetricAccumulator("A", "m", case["n_a"], case["mean_a"], case["m2_a"])
        b = MetricAccumulator("B", "m", case["n_b"], case["mean_b"], case["m2_b"])
        result = welch_t_test(a, b, case["direction"])
        assert abs(result.p_value - case["expected_p"]) < 1e-9, case["case"]


def test_welch_reduces_to_student_on_equal_variance_and_n():
    rng = np.random.default_rng(3)
    xa = rng.normal(0, 1, 30)
    xb = xa * -1.0 + 0.4  # same sample variance, same n
    a = acc_from(xa, "A")
    b = acc_from(xb, "B")
    assert a.variance == pytest.approx(b.variance, rel=1e-12)
    se2 = a.variance / a.n + b.variance / b.n
    df = se2**2 / (
        (a.variance / a.n) ** 2 / (a.n - 1) + (b.variance / b.n) ** 2 / (b.n - 1)
    )
    assert abs(df - (a.n + b.n - 2)) < 1e-9


@given(
    st.floats(min_value=0.01, max_value=5.0),
    st.floats(min_value=0.01, max_value=5.0),
)
@settings(max_examples=60, deadline=None)
def test_monotone_evidence(delta_small, extra):
    # fixed variances and counts: a larger |mean difference| cannot raise p
    base = MetricAccumulator("A", "m", 40, 0.0, 39.0)
    near = MetricAccumulator("B", "m", 40, delta_small, 39.0)
    far = MetricAccumulator("B", "m", 40, delta_small + extra, 39.0)
    p_near = welch_t_test(base, near, "B_not_equal").p_value
    p_far = welch_t_test(base, far, "B_not_equal").p_value
    assert p_far <= p_near + 1e-12


@given(
    st.integers(min_value=2, max_value=500),
    st.integers(min_value=2, max_value=500),
    st.floats(min_value=-10, max_value=10),
    st.floats(min_value=-10, max_value=10),
    st.floats(min_value=0, max_value=100),
    st.floats(min_value=0, max_value=100),
    st.sampled_from(["B_greater", "B_less", "B_not_equal"]),
)
@settings(max_examples=200, deadline=None)
def test_p_value_in_unit_interval(n_a, n_b, ma, mb, m2a, m2b, direction):
    a = MetricAccumulator("A", "m", n_a, ma, m2a)
    b = MetricAccumulator("B", "m", n_b, mb, m2b)
    p = welch_t_test(a, b, direction).p_value
    assert 0.0 <= p <= 1.0


def test_t_sf_against_reference():
    scipy_stats = pytest.importorskip("scipy.stats")
    for t in (-8.0, -2.5, -0.3, 0.0, 0.7, 1.645, 3.2, 12.0):
        for df in (1.0, 2.5, 7.0, 33.3, 500.0):
            assert abs(student_t_sf(t, df) - scipy_stats.t.sf(t, df)) < 1e-12


# ---------------------------------------------------------------------------
# two-proportion


def binary_acc(p, n, variant):
    acc = MetricAccumulator(variant, "m")
    ones = round(p * n)
    acc.add_many([1.0] * ones + [0.0] * (n - ones))
    return acc


def test_equal_proportions_p_one():
    a = binary_acc(0.3, 100, "A")
    b = binary_acc(0.3, 100, "B")
    result = two_proportion_test(a, b, "B_not_equal")
    assert result.p_value == pytest.approx(1.0)


def test_published_click_rates_significant():
    # z = (0.1617-0.1470)/sqrt(p(1-p)(2/10000)) ~= 2.88 -> p << 0.05
    a = binary_acc(0.1470, 10_000, "A")
    b = binary_acc(0.1617, 10_000, "B")
    result = two_proportion_test(a, b, "B_not_equal")
    assert result.p_value < 0.05
    pooled = (a.mean * a.n + b.mean * b.n) / (a.n + b.n)
    z = (b.mean - a.mean) / math.sqrt(pooled * (1 - pooled) * (2 / 10_000))
    assert z == pytest.approx(2.877, abs=0.01)
    assert result.p_value == pytest.approx(2.0 * normal_sf(z), abs=1e-12)


def test_degenerate_pooled_proportion():
    a = binary_acc(0.0, 50, "A")
    b = binary_acc(0.0, 50, "B")
    with pytest.raises(DegeneratePooledProportionError):
        two_proportion_test(a, b, "B_not_equal")


def test_non_binary_rejected():
    a = acc_from([0.0, 0.5, 1.0], "A")
    b = binary_acc(0.5, 10, "B")
    with pytest.raises(NonBinarySamplesError):
        two_proportion_test(a, b, "B_not_equal")


# ---------------------------------------------------------------------------
# sequential monitor


def make_spec(exp_length=5000, alpha=0.05, direction="B_greater"):
    return ABTestSpec(
        name="T",
        exp_length=exp_length,
        ab_assignment=(0.5, 0.5),
        hypothesis=Hypothesis("m", direction, alpha),
        ab_metrics=("m",),
        stat_test="welch_t",
        variant_a="va",
        variant_b="vb",
    )


def null_stream(n, seed=11):
    rng = np.random.default_rng(seed)
    for i in range(n):
        yield ("A" if i % 2 == 0 else "B", float(rng.random() < 0.5))


def test_null_effect_runs_to_cap():
    results = sequential_monitor(make_spec(5000), null_stream(5000), batch_size=1000)
    assert results[-1].requests_consumed == 5000
    assert not results[-1].significant
    assert len(results) == 5


def test_results_only_at_batch_boundaries():
    results = sequential_monitor(make_spec(5000), null_stream(5000), batch_size=1000)
    for k, result in enumerate(results, start=1):
        assert result.requests_consumed == k * 1000


def test_in_segment_recommendation_decides_within_first_batches():
    # purchaser-only purchase rates under the shipped 96/4 assignment
    rng = np.random.default_rng(5)

    def stream():
        while True:
            if rng.random() < 0.96:
                yield ("A", float(rng.random() < 0.30))
            else:
                yield ("B", float(rng.random() < 0.45))

    results = sequential_monitor(make_spec(150_000), stream(), batch_size=1000)
    assert results[-1].significant
    assert results[-1].requests_consumed <= 5000


def test_monitor_stops_at_first_significant():
    spec = make_spec(100_000)
    rng = np.random.default_rng(1)

    def strong_stream():
        while True:
            variant = "A" if rng.random() < 0.5 else "B"
            p = 0.2 if variant == "A" else 0.6
            yield (variant, float(rng.random() < p))

    results = sequential_monitor(spec, strong_stream(), batch_size=1000)
    assert results[-1].significant
    assert all(not r.significant for r in results[:-1])


def test_cap_not_on_boundary_still_checks_at_cap():
    spec = make_spec(exp_length=2500)
    results = sequential_monitor(spec, null_stream(2500, seed=3), batch_size=1000)
    assert [r.requests_consumed for r in results] == [1000, 2000, 2500]


def test_monitor_offer_many_respects_boundaries():
    monitor = SequentialMonitor(make_spec(3000), batch_size=1000)
    with pytest.raises(StatsError):
        monitor.offer_many([0.0] * 600, [1.0] * 600)


def test_bad_batch_size():
    with pytest.raises(StatsError):
        SequentialMonitor(make_spec(), batch_size=0)
