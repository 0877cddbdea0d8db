"""Streaming metric accumulation and batch-wise significance checking.

Walks through the statistics layer on its own: single-pass accumulators,
Welch's t-test on binary metric streams, and the sequential monitor that
checks the hypothesis every 1000 routed requests and stops at the first
p <= alpha.

Run from the repository root:  python demos/01_streaming_statistics.py
"""

import numpy as np

from abpipe.model import ABTestSpec, Hypothesis
from abpipe.stats import MetricAccumulator, sequential_monitor, welch_t_test

rng = np.random.default_rng(7)

# --- 1. accumulators: constant-memory running moments ----------------------

acc = MetricAccumulator("A", "clicks")
for sample in rng.random(10_000) < 0.15:
    acc.add(float(sample))
print(f"accumulated {acc.n} samples: mean={acc.mean:.4f} variance={acc.variance:.4f}")

# merging two accumulators is the same as one concatenated stream
left = MetricAccumulator("A", "clicks")
left.add_many([0, 1, 1, 0, 1])
right = MetricAccumulator("A", "clicks")
right.add_many([1, 0, 0])
merged = left.merge(right)
print(f"merge check: n={merged.n} mean={merged.mean:.4f} (expect 0.5)")

# --- 2. Welch's t-test on two variants --------------------------------------

def binary_accumulator(variant, rate, n):
    acc = MetricAccumulator(variant, "clicks")
    acc.add_many((rng.random(n) < rate).astype(float))
    return acc

a = binary_accumulator("A", 0.1470, 60_000)
b = binary_accumulator("B", 0.1617, 60_000)
result = welch_t_test(a, b, direction="B_greater", alpha=0.05)
print(
    f"\nWelch on click rates {a.mean:.4f} vs {b.mean:.4f}: "
    f"p={result.p_value:.2e} significant={result.significant}"
)

# --- 3. sequential monitoring: stop at the first significant batch ----------

spec = ABTestSpec(
    name="click-rate-test",
    exp_length=150_000,
    ab_assignment=(0.5, 0.5),
    hypothesis=Hypothesis("clicks", "B_greater", 0.05),
    ab_metrics=("clicks",),
    stat_test="welch_t",
    variant_a="v1",
    variant_b="v2",
)

def request_stream():
    while True:
        if rng.random() < 0.5:
            yield ("A", float(rng.random() < 0.1470))
        else:
            yield ("B", float(rng.random() < 0.1617))

results = sequential_monitor(spec, request_stream(), batch_size=1000)
print("\nper-batch p-value trace (first checks):")
for r in results[:5]:
    print(f"  requests={r.requests_consumed:>6} p={r.p_value:.4f}")
last = results[-1]
print(
    f"monitor stopped after {last.requests_consumed:,} requests "
    f"(significant={last.significant}); checked {len(results)} batches"
)
