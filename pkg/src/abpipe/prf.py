"""Counter-based pseudo-random draws for the simulator.

Every stochastic decision in the web-store (variant assignment, metric
draws) is a pure function of (scenario seed, stream label, counter).
This is what makes serialized and concurrent executions of parallel
sub-pipelines produce identical results: no draw depends on global RNG
state or on the interleaving of other streams.

The generator is splitmix64 applied to a keyed counter. Quality is more
than adequate for Bernoulli simulation; numpy's stateful generators are
still used where a plain seeded stream is fine (population generation,
arrival order).
"""

from __future__ import annotations

import hashlib

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_INV_2_53 = float(2.0 ** -53)


def stream_key(seed: int, *labels) -> int:
    """Derive a 64-bit stream key from the seed and a label tuple.

    Labels are joined textually, so distinct (test, metric, purpose)
    tuples get independent streams.
    """
    text = ":".join([str(int(seed))] + [str(p) for p in labels])
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def uniforms(key: int, counters) -> np.ndarray:
    """Map counters to floats in [0, 1) under the given stream key."""
    idx = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        state = np.uint64(key) + (idx + np.uint64(1)) * _GOLDEN
        z = _mix(state)
    return (z >> np.uint64(11)).astype(np.float64) * _INV_2_53


def uniform(key: int, counter: int) -> float:
    """Single-draw convenience wrapper around :func:`uniforms`."""
    return float(uniforms(key, np.asarray([counter], dtype=np.uint64))[0])
