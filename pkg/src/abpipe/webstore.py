"""Deterministic simulated web-store with deployable A/B variants.

The store plays the role of the "A/B-testing-enabled" managed system:
variants are deployed onto named components, a routing table sends users
to the active test, request counters and per-variant metric accumulators
are exposed through probes, and every behavioral draw is a counter-based
hash of (scenario seed, stream, counter) so reruns and any interleaving
of concurrent sub-pipelines produce identical numbers.

Users are synthetic: a latent purchaser/non-purchaser class drawn at the
configured prevalence, binary feature vectors correlated with the class
through per-feature flip noise, and per-metric behavior probabilities
("engagement" and "clicks" are class-independent, "purchases" depend on
the latent class).
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
import numpy as np

from . import prf
from .classifier import DEFAULT_FEATURES
from .model import ABTestSpec, PopulationSplitSpec
from .stats import MetricAccumulator

PURCHASER = "purchaser"
NON_PURCHASER = "non_purchaser"

METRIC_ENGAGEMENT = "engagement"
METRIC_CLICKS = "clicks"
METRIC_PURCHASES = "purchases"


class WebStoreError(ValueError):
    pass


class UnknownVariantError(WebStoreError):
    pass


class UnknownTestError(WebStoreError):
    pass


class UnknownMetricError(WebStoreError):
    pass


class DeploymentConflictError(WebStoreError):
    pass


class NoActiveTestError(WebStoreError):
    pass


# ---------------------------------------------------------------------------
# scenario configuration


@dataclass(frozen=True)
class ScenarioConfig:
    """Simulation parameters; the JSON scenario file mirrors these fields."""

    purchaser_prevalence: float = 0.042
    feature_noise: float = 0.10
    review_rates: dict = field(
        default_factory=lambda: {"A": 0.1470, "B": 0.1617}
    )
    recommendation_rates: dict = field(
        default_factory=lambda: {
            "purchaser": {"A": 0.30, "B": 0.45},
            "non_purchaser": {"A": 0.005, "B": 0.005},
        }
    )
    gui_rates: dict = field(default_factory=lambda: {"A": 0.50, "B": 0.56})
    seed: int = 1
    population_size: int = 100_000
    train_samples: int = 20_000
    deployment_latency_ms: float = 0.0
    n_features: int = DEFAULT_FEATURES

    def metric_known(self, metric: str) -> bool:
        return metric in (METRIC_ENGAGEMENT, METRIC_CLICKS, METRIC_PURCHASES)

    def rate(self, metric: str, variant: str, purchaser_mask: np.ndarray) -> np.ndarray:
        """Per-user behavior probability for a metric under a variant."""
        if metric == METRIC_ENGAGEMENT:
            return np.full(purchaser_mask.shape, float(self.gui_rates[variant]))
        if metric == METRIC_CLICKS:
            return np.full(purchaser_mask.shape, float(self.review_rates[variant]))
        if metric == METRIC_PURCHASES:
            return np.where(
                purchaser_mask,
                float(self.recommendation_rates["purchaser"][variant]),
                float(self.recommendation_rates["non_purchaser"][variant]),
            )
        raise UnknownMetricError(f"no behavior model for metric {metric!r}")


def load_scenario(path: str | Path) -> ScenarioConfig:
    record = json.loads(Path(path).read_text(encoding="utf-8"))
    known = set(ScenarioConfig.__dataclass_fields__)
    unknown = set(record) - known
    if unknown:
        raise WebStoreError(f"unknown scenario fields: {sorted(unknown)}")
    return ScenarioConfig(**record)


def save_scenario(config: ScenarioConfig, path: str | Path) -> None:
    record = {
        name: getattr(config, name)
        for name in ScenarioConfig.__dataclass_fields__
    }
    Path(path).write_text(json.dumps(record, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# population


@dataclass(frozen=True)
class UserProfile:
    user_id: int
    features: np.ndarray
    latent_class: str
    propensities: dict


class Population:
    """Column-oriented store of generated user profiles."""

    def __init__(self, features: np.ndarray, latent: np.ndarray, config: ScenarioConfig):
        self.features = features
        self.latent = latent
        self.config = config

    @property
    def size(self) -> int:
        return int(self.latent.shape[0])

    @property
    def purchaser_fraction(self) -> float:
        return float(self.latent.mean())

    def profile(self, user_id: int) -> UserProfile:
        mask = np.asarray([self.latent[user_id]])
        propensities = {
            metric: {
                variant: float(self.config.rate(metric, variant, mask)[0])
                for variant in ("A", "B")
            }
            for metric in (METRIC_ENGAGEMENT, METRIC_CLICKS, METRIC_PURCHASES)
        }
        return UserProfile(
            user_id=user_id,
            features=self.features[user_id].copy(),
            latent_class=PURCHASER if self.latent[user_id] else NON_PURCHASER,
            propensities=propensities,
        )


def _draw_users(config: ScenarioConfig, n: int, stream: str) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(prf.stream_key(config.seed, stream))
    latent = rng.random(n) < config.purchaser_prevalence
    flips = rng.random((n, config.n_features)) < config.feature_noise
    features = (latent[:, None] ^ flips).astype(np.uint8)
    return features, latent


def generate_population(config: ScenarioConfig, n: int) -> Population:
    """Draw n user profiles; deterministic for a given scenario seed."""
    if n < 1:
        raise WebStoreError(f"population size must be >= 1, got {n}")
    features, latent = _draw_users(config, n, "population")
    return Population(features, latent, config)


def generate_training_data(config: ScenarioConfig, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Labeled (features, purchase label) rows for classifier training.

    Drawn from the same generative process as the population but on an
    independent stream, standing in for the held-out labeled history.
    """
    if n < 2:
        raise WebStoreError(f"training data needs n >= 2, got {n}")
    features, latent = _draw_users(config, n, "training-data")
    return features, latent.astype(np.int64)


# ---------------------------------------------------------------------------
# variant catalog

DEFAULT_CATALOG = {
    "webstore-gui-v1": "webstore-gui",
    "webstore-gui-v2": "webstore-gui",
    "checkout-review-v1": "checkout-review",
    "checkout-review-v2": "checkout-review",
    "recommender-v1": "recommendation-engine",
    "recommender-v2": "recommendation-engine",
}


# ---------------------------------------------------------------------------
# deployment & serving


@dataclass
class ServeResult:
    variant: str
    samples: dict


@dataclass
class ProbeSnapshot:
    test_name: str
    requests: int
    accumulators: dict  # metric -> {"A": MetricAccumulator, "B": MetricAccumulator}

    def pair(self, metric: str) -> tuple[MetricAccumulator, MetricAccumulator]:
        return self.accumulators[metric]["A"], self.accumulators[metric]["B"]


class _ActiveTest:
    def __init__(self, spec: ABTestSpec, components: tuple[str, str], seed: int, epoch: int):
        self.spec = spec
        self.components = components
        self.requests = 0
        self.accumulators = {
            metric: {
                "A": MetricAccumulator("A", metric),
                "B": MetricAccumulator("B", metric),
            }
            for metric in spec.ab_metrics
        }
        self.assign_key = prf.stream_key(seed, "assign", spec.name, epoch)
        self.draw_keys = {
            metric: prf.stream_key(seed, "draw", spec.name, metric, epoch)
            for metric in spec.ab_metrics
        }


class ArrivalStream:
    """I.i.d. uniform arrivals over the population, with push-back.

    Push-back lets a consumer return arrivals it drew but did not serve
    (e.g. the tail of a chunk after a split completed), keeping the
    consumed prefix identical across chunk sizes and execution modes.
    """

    def __init__(self, config: ScenarioConfig, population_size: int):
        self._rng = np.random.default_rng(prf.stream_key(config.seed, "arrivals"))
        self._size = population_size
        self._buffer: list[np.ndarray] = []

    def next(self, n: int) -> np.ndarray:
        parts: list[np.ndarray] = []
        remaining = n
        while self._buffer and remaining > 0:
            head = self._buffer[0]
            if head.shape[0] <= remaining:
                parts.append(head)
                remaining -= head.shape[0]
                self._buffer.pop(0)
            else:
                parts.append(head[:remaining])
                self._buffer[0] = head[remaining:]
                remaining = 0
        if remaining > 0:
            parts.append(self._rng.integers(0, self._size, size=remaining))
        return np.concatenate(parts) if len(parts) > 1 else parts[0]

    def push_back(self, user_ids: np.ndarray) -> None:
        if user_ids.shape[0]:
            self._buffer.insert(0, user_ids)


class WebStore:
    """The managed system: deployments, routing, serving, probes."""

    def __init__(
        self,
        config: ScenarioConfig,
        catalog: dict[str, str] | None = None,
    ):
        self.config = config
        self.catalog = dict(DEFAULT_CATALOG if catalog is None else catalog)
        self.population = generate_population(config, config.population_size)
        self.arrivals = ArrivalStream(config, self.population.size)
        self._active: dict[str, _ActiveTest] = {}
        self._finished: dict[str, _ActiveTest] = {}
        self._active_components: dict[str, str] = {}
        self._epochs: dict[str, int] = {}
        self._split_services: set[str] = set()
        self.deployment_log: list[dict] = []
        self._lock = threading.Lock()

    # -- deployment ---------------------------------------------------------

    def component_of(self, variant: str) -> str:
        try:
            return self.catalog[variant]
        except KeyError:
            raise UnknownVariantError(
                f"variant {variant!r} not in the variant repository catalog"
            ) from None

    def deploy_ab_test(self, spec: ABTestSpec) -> None:
        with self._lock:
            comp_a = self.component_of(spec.variant_a)
            comp_b = self.component_of(spec.variant_b)
            for metric in spec.ab_metrics:
                if not self.config.metric_known(metric):
                    raise UnknownMetricError(
                        f"test {spec.name!r} collects unknown metric {metric!r}"
                    )
            if spec.name in self._active:
                return  # re-executing the same deployment action is a no-op
            for comp in {comp_a, comp_b}:
                holder = self._active_components.get(comp)
                if holder is not None:
                    raise DeploymentConflictError(
                        f"component {comp!r} already held by {holder!r}"
                    )
            epoch = self._epochs.get(spec.name, 0)
            self._epochs[spec.name] = epoch + 1
            record = _ActiveTest(spec, (comp_a, comp_b), self.config.seed, epoch)
            self._active[spec.name] = record
            self._finished.pop(spec.name, None)
            for comp in {comp_a, comp_b}:
                self._active_components[comp] = spec.name
            self.deployment_log.append(
                {
                    "kind": "deploy_variants",
                    "name": spec.name,
                    "latency_ms": self.config.deployment_latency_ms,
                }
            )

    def restore_initial(self, test_name: str) -> None:
        with self._lock:
            record = self._active.pop(test_name, None)
            if record is None:
                if test_name in self._finished:
                    return  # already restored; idempotent
                raise UnknownTestError(f"test {test_name!r} was never deployed")
            for comp in set(record.components):
                self._active_components.pop(comp, None)
            self._finished[test_name] = record
            self.deployment_log.append(
                {
                    "kind": "restore_initial",
                    "name": test_name,
                    "latency_ms": self.config.deployment_latency_ms,
                }
            )

    def deploy_split_component(self, split: PopulationSplitSpec) -> None:
        with self._lock:
            service = split.split_component.service_name
            if service in self._split_services:
                return  # idempotent re-execution
            self._split_services.add(service)
            self.deployment_log.append(
                {
                    "kind": "deploy_split_component",
                    "name": service,
                    "latency_ms": self.config.deployment_latency_ms,
                }
            )

    def undeploy_split_component(self, split: PopulationSplitSpec) -> None:
        with self._lock:
            self._split_services.discard(split.split_component.service_name)
            self.deployment_log.append(
                {
                    "kind": "undeploy_split_component",
                    "name": split.split_component.service_name,
                    "latency_ms": self.config.deployment_latency_ms,
                }
            )

    @property
    def active_tests(self) -> list[str]:
        return sorted(self._active)

    # -- serving ------------------------------------------------------------

    def serve_chunk(self, test_name: str, user_ids: np.ndarray) -> dict:
        """Serve a block of requests to the active test.

        Variant assignment is a sticky hash of (seed, test, user); each
        metric sample is one Bernoulli draw from the user's propensity
        under the assigned variant. Returns the variant mask and samples.
        """
        record = self._active.get(test_name)
        if record is None:
            raise NoActiveTestError(f"test {test_name!r} is not active")
        uids = np.asarray(user_ids)
        n = uids.shape[0]
        if n == 0:
            return {"is_a": np.zeros(0, dtype=bool), "samples": {}}
        frac_a = record.spec.ab_assignment[0]
        is_a = prf.uniforms(record.assign_key, uids) < frac_a
        purchaser = self.population.latent[uids]
        indices = record.requests + np.arange(n, dtype=np.uint64)
        samples: dict[str, np.ndarray] = {}
        for metric in record.spec.ab_metrics:
            p = np.where(
                is_a,
                self.config.rate(metric, "A", purchaser),
                self.config.rate(metric, "B", purchaser),
            )
            draws = prf.uniforms(record.draw_keys[metric], indices)
            values = (draws < p).astype(np.float64)
            samples[metric] = values
            record.accumulators[metric]["A"].add_many(values[is_a])
            record.accumulators[metric]["B"].add_many(values[~is_a])
        record.requests += n
        return {"is_a": is_a, "samples": samples}

    def serve_request(self, user_id: int, test_name: str) -> ServeResult:
        """Single-request form of :meth:`serve_chunk`."""
        out = self.serve_chunk(test_name, np.asarray([user_id]))
        variant = "A" if out["is_a"][0] else "B"
        return ServeResult(
            variant=variant,
            samples={m: float(v[0]) for m, v in out["samples"].items()},
        )

    def probe(self, test_name: str) -> ProbeSnapshot:
        """Consistent read-only snapshot of a test's metrics and counter."""
        record = self._active.get(test_name) or self._finished.get(test_name)
        if record is None:
            raise UnknownTestError(f"test {test_name!r} was never deployed")
        return ProbeSnapshot(
            test_name=test_name,
            requests=record.requests,
            accumulators={
                metric: {v: acc.copy() for v, acc in pair.items()}
                for metric, pair in record.accumulators.items()
            },
        )
