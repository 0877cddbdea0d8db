"""Population-split component: linear classifier plus population divider.

The classifier is a logistic model trained with plain per-sample SGD
(inverse-scaling learning rate, L2 penalty, seeded shuffle each epoch).
Class weights are balanced against label frequency because the shipped
scenario has ~4% positives and an unweighted fit can collapse to the
majority class. Training is single-threaded on purpose: identical
(data, seed, hyperparameters) must give bitwise-identical weights.

The divider maps a predicted class through a split's branch conditions
to exactly one sub-pipeline; users matching no branch are "unrouted"
and take part in no experiment.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import PopulationSplitSpec

DEFAULT_FEATURES = 23


class ClassifierError(ValueError):
    pass


class SingleClassError(ClassifierError):
    pass


class DimensionMismatchError(ClassifierError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    eta0: float = 0.5
    power_t: float = 0.25  # learning rate eta0 / t**power_t
    l2: float = 1e-4
    epochs: int = 5
    seed: int = 0


@dataclass
class LinearModel:
    weights: np.ndarray
    bias: float
    hyperparams: Hyperparams
    loss: str = "log"
    train_time_ms: float = 0.0

    @property
    def n_features(self) -> int:
        return int(self.weights.shape[0])

    def decision(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_features:
            raise DimensionMismatchError(
                f"expected {self.n_features} features, got {x.shape[-1]}"
            )
        return x @ self.weights + self.bias

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return _sigmoid(self.decision(x))

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Vectorized class prediction for a matrix of feature rows."""
        return (self.decision(x) >= 0.0).astype(np.int64)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def validate_features(x, n_features: int) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.shape[1] != n_features:
        raise DimensionMismatchError(
            f"expected {n_features} features, got {arr.shape[1]}"
        )
    if not np.all((arr == 0.0) | (arr == 1.0)):
        raise ClassifierError("feature values must be binary")
    return arr


def train(
    x,
    y,
    hyperparams: Hyperparams = Hyperparams(),
) -> LinearModel:
    """Fit a logistic model with per-sample SGD.

    Minimizes class-weighted log-loss with L2 regularization. The
    learning rate decays as eta0 / t**power_t over the global update
    counter t; samples are reshuffled each epoch with the model seed.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.ndim != 2:
        raise ClassifierError("training features must be a 2-D array")
    if x.shape[0] != y.shape[0]:
        raise DimensionMismatchError(
            f"{x.shape[0]} feature rows vs {y.shape[0]} labels"
        )
    if x.shape[0] < 2:
        raise ClassifierError("need at least two training samples")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ClassifierError("labels must be 0 or 1")
    n_pos = int(y.sum())
    n = y.shape[0]
    if n_pos == 0 or n_pos == n:
        raise SingleClassError("training set contains a single class")

    started = time.perf_counter()
    # balanced class weights: n / (2 * class count)
    w_pos = n / (2.0 * n_pos)
    w_neg = n / (2.0 * (n - n_pos))
    sample_weight = np.where(y == 1.0, w_pos, w_neg)

    hp = hyperparams
    rng = np.random.default_rng(hp.seed)
    weights = np.zeros(x.shape[1], dtype=np.float64)
    bias = 0.0
    t = 0
    for _ in range(hp.epochs):
        order = rng.permutation(n)
        for i in order:
            t += 1
            lr = hp.eta0 / (t ** hp.power_t)
            xi = x[i]
            margin = float(xi @ weights) + bias
            p = 1.0 / (1.0 + np.exp(-margin)) if margin >= 0 else (
                np.exp(margin) / (1.0 + np.exp(margin))
            )
            grad = sample_weight[i] * (p - y[i])
            weights *= 1.0 - lr * hp.l2
            weights -= lr * grad * xi
            bias -= lr * grad
    elapsed_ms = (time.perf_counter() - started) * 1000.0
    if not np.all(np.isfinite(weights)) or not np.isfinite(bias):
        raise ClassifierError("training diverged to non-finite weights")
    return LinearModel(
        weights=weights,
        bias=float(bias),
        hyperparams=hp,
        train_time_ms=elapsed_ms,
    )


def predict_class(model: LinearModel, x) -> int:
    """Class for a single feature vector; the 0.5 boundary maps to 1."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionMismatchError("predict_class takes a single vector")
    return int(model.predict(arr[None, :])[0])


# ---------------------------------------------------------------------------
# dispatch


@dataclass(frozen=True)
class SplitAssignment:
    user_id: int
    predicted_class: int
    target_subpipeline: str | None  # None = unrouted

    @property
    def unrouted(self) -> bool:
        return self.target_subpipeline is None


def dispatch(
    split: PopulationSplitSpec, model: LinearModel, user_id: int, features
) -> SplitAssignment:
    """Route one user to the sub-pipeline whose condition matches."""
    predicted = predict_class(model, np.asarray(features, dtype=np.float64))
    return SplitAssignment(
        user_id=user_id,
        predicted_class=predicted,
        target_subpipeline=route_class(split, predicted),
    )


def route_class(split: PopulationSplitSpec, predicted_class: int) -> str | None:
    """Sub-pipeline id for a predicted class, or None when unrouted."""
    for sub, cond in zip(split.sub_pipelines, split.cond_stats):
        if cond.matches(predicted_class):
            return sub.subpl_id
    return None


def measure_predict_latency_ms(
    model: LinearModel, features: np.ndarray, samples: int = 200
) -> float:
    """Median wall-time of single-vector predictions, in milliseconds."""
    rows = np.asarray(features, dtype=np.float64)
    timings = []
    for i in range(samples):
        row = rows[i % len(rows)]
        start = time.perf_counter_ns()
        predict_class(model, row)
        timings.append(time.perf_counter_ns() - start)
    return float(np.median(timings)) / 1e6


# ---------------------------------------------------------------------------
# persistence


def save_model(model: LinearModel, path: str | Path) -> None:
    record = {
        "features": model.n_features,
        "weights": [float(w) for w in model.weights],
        "bias": model.bias,
        "loss": model.loss,
        "seed": model.hyperparams.seed,
    }
    Path(path).write_text(json.dumps(record, indent=2) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> LinearModel:
    record = json.loads(Path(path).read_text(encoding="utf-8"))
    weights = np.asarray(record["weights"], dtype=np.float64)
    if int(record["features"]) != weights.shape[0]:
        raise ClassifierError(
            f"model file declares {record['features']} features but has"
            f" {weights.shape[0]} weights"
        )
    return LinearModel(
        weights=weights,
        bias=float(record["bias"]),
        hyperparams=Hyperparams(seed=int(record.get("seed", 0))),
        loss=str(record.get("loss", "log")),
    )


def load_training_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read a feature/label CSV (F binary feature columns + ``label``)."""
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ClassifierError(f"{path}: empty training file") from None
        if not header or header[-1] != "label":
            raise ClassifierError(f"{path}: last column must be 'label'")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ClassifierError(
                    f"{path}: line {lineno} has {len(row)} columns,"
                    f" expected {len(header)}"
                )
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ClassifierError(f"{path}: line {lineno}: {exc}") from None
    if not rows:
        raise ClassifierError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=np.float64)
    return data[:, :-1], data[:, -1]


def save_training_csv(path: str | Path, features: np.ndarray, labels: np.ndarray) -> None:
    features = np.asarray(features)
    labels = np.asarray(labels)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow([f"f{i}" for i in range(features.shape[1])] + ["label"])
        for row, label in zip(features, labels):
            writer.writerow([int(v) for v in row] + [int(label)])
