"""Streaming metric accumulation and sequential hypothesis evaluation.

Accumulators use Welford's single-pass update so a monitor can probe
running moments without storing samples. Hypothesis checks run at fixed
request-batch boundaries and stop at the first significant result or at
the experiment-length cap. Repeated looks are intentionally left
uncorrected; see README for the false-positive implications.

The Student-t tail is computed locally via the regularized incomplete
beta (continued fraction), so the runtime package has no dependency on
a stats library; the test suite cross-checks it against an independent
oracle.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

B_GREATER = "B_greater"
B_LESS = "B_less"
B_NOT_EQUAL = "B_not_equal"
DIRECTIONS = (B_GREATER, B_LESS, B_NOT_EQUAL)

WELCH_T = "welch_t"
TWO_PROPORTION = "two_proportion"
STAT_TESTS = (WELCH_T, TWO_PROPORTION)

DEFAULT_BATCH_SIZE = 1000


class StatsError(ValueError):
    """Base for statistics-engine errors."""


class InsufficientSamplesError(StatsError):
    pass


class NonBinarySamplesError(StatsError):
    pass


class DegeneratePooledProportionError(StatsError):
    pass


# ---------------------------------------------------------------------------
# accumulators


@dataclass
class MetricAccumulator:
    """Single-pass mean/variance accumulator for one (variant, metric).

    ``m2`` is the running sum of squared deviations from the mean, so
    ``variance == m2 / (n - 1)`` for ``n >= 2``.
    """

    variant: str
    metric: str
    n: int = 0
    mean: float = 0.0
    m2: float = 0.0
    binary: bool = True  # all samples observed so far were 0 or 1

    def add(self, sample: float) -> None:
        if not math.isfinite(sample):
            raise StatsError(f"non-finite sample {sample!r} rejected")
        if sample not in (0.0, 1.0):
            self.binary = False
        self.n += 1
        delta = sample - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (sample - self.mean)

    def add_many(self, samples) -> None:
        """Bulk update; equivalent to adding each sample in turn."""
        xs = np.asarray(samples, dtype=np.float64)
        if xs.size == 0:
            return
        if not np.all(np.isfinite(xs)):
            raise StatsError("non-finite sample rejected")
        chunk = MetricAccumulator(self.variant, self.metric)
        chunk.n = int(xs.size)
        chunk.mean = float(xs.mean())
        chunk.m2 = float(((xs - chunk.mean) ** 2).sum())
        chunk.binary = bool(np.all((xs == 0.0) | (xs == 1.0)))
        merged = self.merge(chunk)
        self.n, self.mean, self.m2, self.binary = (
            merged.n,
            merged.mean,
            merged.m2,
            merged.binary,
        )

    def merge(self, other: "MetricAccumulator") -> "MetricAccumulator":
        """Combine two accumulators as if their streams were concatenated."""
        if other.n == 0:
            return MetricAccumulator(
                self.variant, self.metric, self.n, self.mean, self.m2, self.binary
            )
        if self.n == 0:
            return MetricAccumulator(
                self.variant, self.metric, other.n, other.mean, other.m2, other.binary
            )
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * other.n / n
        m2 = self.m2 + other.m2 + delta * delta * self.n * other.n / n
        return MetricAccumulator(
            self.variant, self.metric, n, mean, m2, self.binary and other.binary
        )

    @property
    def variance(self) -> float:
        """Sample variance (n-1 denominator); 0 while n < 2."""
        if self.n < 2:
            return 0.0
        return self.m2 / (self.n - 1)

    def copy(self) -> "MetricAccumulator":
        return MetricAccumulator(
            self.variant, self.metric, self.n, self.mean, self.m2, self.binary
        )


def accumulate(acc: MetricAccumulator, sample: float) -> MetricAccumulator:
    """Add one sample to the accumulator (mutates and returns it)."""
    acc.add(sample)
    return acc


# ---------------------------------------------------------------------------
# distribution tails


def _betacf(a: float, b: float, x: float) -> float:
    # Lentz's continued fraction for the incomplete beta integral.
    max_iter = 300
    eps = 3e-16
    fpmin = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < fpmin:
        d = fpmin
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        de = d * c
        h *= de
        if abs(de - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_bt = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    bt = math.exp(ln_bt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _betacf(a, b, x) / a
    return 1.0 - bt * _betacf(b, a, 1.0 - x) / b


def student_t_sf(t: float, df: float) -> float:
    """P(T > t) for Student's t with (possibly fractional) df."""
    if df <= 0:
        raise StatsError(f"degrees of freedom must be positive, got {df}")
    x = df / (df + t * t)
    half_tail = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, x)
    return half_tail if t >= 0 else 1.0 - half_tail


def normal_sf(z: float) -> float:
    """P(Z > z) for the standard normal."""
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def _directional_p(stat: float, direction: str, tail) -> float:
    if direction == B_GREATER:
        p = tail(stat)
    elif direction == B_LESS:
        p = 1.0 - tail(stat)
    elif direction == B_NOT_EQUAL:
        p = 2.0 * tail(abs(stat))
    else:
        raise StatsError(f"unknown direction {direction!r}")
    return min(max(p, 0.0), 1.0)


# ---------------------------------------------------------------------------
# hypothesis tests


@dataclass(frozen=True)
class StatResult:
    """Outcome of one hypothesis evaluation."""

    test_name: str
    p_value: float
    mean_a: float
    mean_b: float
    n_a: int
    n_b: int
    significant: bool
    requests_consumed: int

    @property
    def effect(self) -> float:
        return self.mean_b - self.mean_a


def welch_t_test(
    a: MetricAccumulator,
    b: MetricAccumulator,
    direction: str = B_NOT_EQUAL,
    alpha: float = 0.05,
    test_name: str = "",
    requests_consumed: int | None = None,
) -> StatResult:
    """Welch's unequal-variance t-test on two accumulators.

    Degrees of freedom follow Welch-Satterthwaite and are used
    unrounded. When both variances are zero the p-value degenerates to
    1 for equal means and 0 otherwise.
    """
    if a.n < 2 or b.n < 2:
        raise InsufficientSamplesError(
            f"welch t-test needs n >= 2 per variant, got n_a={a.n}, n_b={b.n}"
        )
    va, vb = a.variance, b.variance
    if not (math.isfinite(va) and math.isfinite(vb)):
        raise StatsError("non-finite variance")
    ra, rb = va / a.n, vb / b.n
    se2 = ra + rb
    if se2 == 0.0:
        p = 1.0 if a.mean == b.mean else 0.0
    else:
        t = (b.mean - a.mean) / math.sqrt(se2)
        # Welch-Satterthwaite with weights normalized first so subnormal
        # variances cannot underflow the quotient
        wa = ra / se2
        wb = rb / se2
        df = 1.0 / (wa * wa / (a.n - 1) + wb * wb / (b.n - 1))
        p = _directional_p(t, direction, lambda s: student_t_sf(s, df))
    consumed = requests_consumed if requests_consumed is not None else a.n + b.n
    return StatResult(
        test_name=test_name,
        p_value=p,
        mean_a=a.mean,
        mean_b=b.mean,
        n_a=a.n,
        n_b=b.n,
        significant=p <= alpha,
        requests_consumed=consumed,
    )


def two_proportion_test(
    a: MetricAccumulator,
    b: MetricAccumulator,
    direction: str = B_NOT_EQUAL,
    alpha: float = 0.05,
    test_name: str = "",
    requests_consumed: int | None = None,
) -> StatResult:
    """Pooled two-proportion z-test on binary accumulators."""
    if not (a.binary and b.binary):
        raise NonBinarySamplesError("two-proportion test requires 0/1 samples")
    if a.n < 1 or b.n < 1:
        raise InsufficientSamplesError(
            f"two-proportion test needs n >= 1 per variant, got n_a={a.n}, n_b={b.n}"
        )
    pooled = (a.mean * a.n + b.mean * b.n) / (a.n + b.n)
    if pooled <= 0.0 or pooled >= 1.0:
        raise DegeneratePooledProportionError(
            f"pooled proportion {pooled} is degenerate"
        )
    se = math.sqrt(pooled * (1.0 - pooled) * (1.0 / a.n + 1.0 / b.n))
    z = (b.mean - a.mean) / se
    p = _directional_p(z, direction, normal_sf)
    consumed = requests_consumed if requests_consumed is not None else a.n + b.n
    return StatResult(
        test_name=test_name,
        p_value=p,
        mean_a=a.mean,
        mean_b=b.mean,
        n_a=a.n,
        n_b=b.n,
        significant=p <= alpha,
        requests_consumed=consumed,
    )


_TEST_FUNCS = {WELCH_T: welch_t_test, TWO_PROPORTION: two_proportion_test}


def run_stat_test(
    stat_test: str,
    a: MetricAccumulator,
    b: MetricAccumulator,
    direction: str,
    alpha: float,
    test_name: str = "",
    requests_consumed: int | None = None,
) -> StatResult:
    """Dispatch to the configured statistical procedure."""
    try:
        func = _TEST_FUNCS[stat_test]
    except KeyError:
        raise StatsError(f"unknown stat test {stat_test!r}") from None
    return func(
        a,
        b,
        direction=direction,
        alpha=alpha,
        test_name=test_name,
        requests_consumed=requests_consumed,
    )


# ---------------------------------------------------------------------------
# sequential monitoring


def check_boundaries(exp_length: int, batch_size: int) -> Iterator[int]:
    """Request counts at which the hypothesis is evaluated.

    Multiples of the batch size, with the experiment cap appended when
    it does not land on a boundary.
    """
    if batch_size < 1:
        raise StatsError(f"batch_size must be >= 1, got {batch_size}")
    at = 0
    while at < exp_length:
        at = min(at + batch_size, exp_length)
        yield at


class SequentialMonitor:
    """Batch-wise significance monitor for one A/B test.

    Feed per-request samples with :meth:`offer`; a :class:`StatResult`
    is produced whenever the routed-request count reaches a check
    boundary. The monitor is done at the first significant result or
    when the experiment length cap is reached.
    """

    def __init__(self, spec, batch_size: int = DEFAULT_BATCH_SIZE):
        if batch_size < 1:
            raise StatsError(f"batch_size must be >= 1, got {batch_size}")
        self.spec = spec
        self.batch_size = batch_size
        metric = spec.hypothesis.metric
        self.acc_a = MetricAccumulator("A", metric)
        self.acc_b = MetricAccumulator("B", metric)
        self.requests = 0
        self.results: list[StatResult] = []
        self.done = False
        self._boundaries = check_boundaries(spec.exp_length, batch_size)
        self._next_check = next(self._boundaries)

    @property
    def final_result(self) -> StatResult | None:
        return self.results[-1] if self.results else None

    def requests_until_check(self) -> int:
        return self._next_check - self.requests

    def offer(self, variant: str, value: float) -> StatResult | None:
        """Record one routed request; returns a result on a boundary."""
        if self.done:
            raise StatsError("monitor already terminated")
        (self.acc_a if variant == "A" else self.acc_b).add(value)
        self.requests += 1
        if self.requests < self._next_check:
            return None
        return self._evaluate()

    def offer_many(self, samples_a, samples_b) -> StatResult | None:
        """Record a pre-split bulk of requests; must not cross a boundary."""
        if self.done:
            raise StatsError("monitor already terminated")
        total = len(samples_a) + len(samples_b)
        if self.requests + total > self._next_check:
            raise StatsError("bulk offer would overshoot a check boundary")
        self.acc_a.add_many(samples_a)
        self.acc_b.add_many(samples_b)
        self.requests += total
        if self.requests < self._next_check:
            return None
        return self._evaluate()

    def _evaluate(self) -> StatResult:
        result = run_stat_test(
            self.spec.stat_test,
            self.acc_a,
            self.acc_b,
            direction=self.spec.hypothesis.direction,
            alpha=self.spec.hypothesis.alpha,
            test_name=self.spec.name,
            requests_consumed=self.requests,
        )
        self.results.append(result)
        if result.significant or self.requests >= self.spec.exp_length:
            self.done = True
        else:
            self._next_check = next(self._boundaries)
        return result


def sequential_monitor(
    spec,
    stream: Iterable[tuple[str, float]],
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> list[StatResult]:
    """Run the batch-wise monitor over a (variant, value) stream.

    Returns one result per evaluated batch; the last result is either
    the first significant one or the capped, inconclusive final check.
    """
    monitor = SequentialMonitor(spec, batch_size)
    for variant, value in stream:
        monitor.offer(variant, value)
        if monitor.done:
            break
    return monitor.results


# ---------------------------------------------------------------------------
# export

PVALUE_TRACE_HEADER = [
    "requests",
    "p_value",
    "mean_a",
    "mean_b",
    "n_a",
    "n_b",
    "significant",
]


def write_pvalue_trace(path, results: Sequence[StatResult]) -> None:
    """Write the per-batch p-value trace CSV used for progress plots."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(PVALUE_TRACE_HEADER)
        for r in results:
            writer.writerow(
                [
                    r.requests_consumed,
                    repr(r.p_value),
                    repr(r.mean_a),
                    repr(r.mean_b),
                    r.n_a,
                    r.n_b,
                    str(r.significant).lower(),
                ]
            )
