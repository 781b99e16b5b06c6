"""Seeded generators for networks, datasets, and a tiny trainer.

Everything here is deterministic in the seed so test fixtures and the
end-to-end demos are reproducible bit for bit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import relunet
from .relunet import Layer, Network

Array = np.ndarray


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during training."""


@dataclass(frozen=True)
class LabelRule:
    """Threshold rule on a linear or rectified score of the raw features.

    ``score = coeffs . x`` (linear) or ``sum_i coeffs[i] * max(x[i], 0)``
    (rectified); label 1 iff score > threshold.  A ``None`` threshold is
    calibrated to the median score of the generated sample, which balances
    the labels exactly.
    """

    coeffs: tuple[float, ...]
    threshold: float | None = None
    rectified: bool = False

    def score(self, x: Array) -> Array:
        c = np.asarray(self.coeffs, dtype=float)
        x = np.asarray(x, dtype=float)
        if self.rectified:
            return np.maximum(x, 0.0) @ c
        return x @ c


@dataclass(frozen=True)
class TaskSpec:
    """Shape and seed of a synthetic task; dims >= 1, sizes >= 1."""

    input_dim: int = 2
    hidden_sizes: tuple[int, ...] = (8,)
    seed: int = 0
    dataset_size: int = 1000
    ranges: tuple[tuple[float, float], ...] | None = None  # None -> [0,1]^d
    label_rule: LabelRule | None = None

    def __post_init__(self):
        if self.input_dim < 1 or self.dataset_size < 0:
            raise ValueError("input_dim must be >= 1 and dataset_size >= 0")
        if not self.hidden_sizes or any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden_sizes must be non-empty and >= 1")
        if self.ranges is not None and len(self.ranges) != self.input_dim:
            raise ValueError("ranges must list one (lo, hi) pair per feature")

    def feature_ranges(self) -> Array:
        if self.ranges is None:
            return np.array([[0.0, 1.0]] * self.input_dim)
        r = np.array(self.ranges, dtype=float)
        if np.any(r[:, 1] <= r[:, 0]):
            raise ValueError("feature ranges must have hi > lo")
        return r

    def rule(self) -> LabelRule:
        if self.label_rule is not None:
            return self.label_rule
        rng = np.random.default_rng(self.seed)
        coeffs = rng.uniform(-1.0, 1.0, self.input_dim)
        return LabelRule(tuple(coeffs))


def _init_layers(rng, dims: list[int]) -> list[tuple[Array, Array]]:
    # uniform(-1, 1) / sqrt(fan_in), the classic small-net recipe
    out = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = rng.uniform(-1.0, 1.0, (fan_out, fan_in)) / np.sqrt(fan_in)
        b = rng.uniform(-1.0, 1.0, fan_out) / np.sqrt(fan_in)
        out.append((w, b))
    return out


def gen_network(spec: TaskSpec) -> Network:
    """Random network of the spec'd shape, seeded, final layer 2 logits."""
    rng = np.random.default_rng(spec.seed)
    dims = [spec.input_dim, *spec.hidden_sizes, 2]
    params = _init_layers(rng, dims)
    layers = [Layer(w, b, "relu") for w, b in params[:-1]]
    w, b = params[-1]
    layers.append(Layer(w, b, "linear"))
    return Network(tuple(layers))


def gen_dataset(spec: TaskSpec) -> tuple[Array, Array]:
    """Uniform inputs in the declared ranges, labels from the rule.

    Returns ``(X, y)``; with the default median-calibrated threshold the
    labels are balanced.
    """
    rng = np.random.default_rng(spec.seed + 1)
    r = spec.feature_ranges()
    X = rng.uniform(r[:, 0], r[:, 1], (spec.dataset_size, spec.input_dim))
    rule = spec.rule()
    scores = rule.score(X)
    if rule.threshold is not None:
        threshold = rule.threshold
    else:
        # median of an empty sample is nan; any value labels nothing
        threshold = float(np.median(scores)) if scores.size else 0.0
    y = (scores > threshold).astype(int)
    return X, y


def write_dataset_csv(path, X: Array, y: Array) -> None:
    """``x1,...,xd,label`` with a header row."""
    X = np.asarray(X, dtype=float)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x%d" % (i + 1) for i in range(X.shape[1])] + ["label"])
        for row, label in zip(X, y):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def read_dataset_csv(path) -> tuple[Array, Array]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    body = rows[1:] if rows and not _is_number(rows[0][-1]) else rows
    data = np.array([[float(v) for v in row] for row in body])
    return data[:, :-1], data[:, -1].astype(int)


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def train_tiny(dataset: tuple[Array, Array], arch: tuple[int, ...],
               epochs: int = 200, lr: float = 0.5, seed: int = 0) -> Network:
    """Full-batch gradient descent on softmax cross-entropy.

    The backward pass uses the same rectifier convention as the rest of the
    library (subgradient 1 at zero).  ``epochs=0`` returns the seeded init
    unchanged, ``lr=0`` leaves the parameters where they started.
    """
    X, y = dataset
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    n, d = X.shape
    rng = np.random.default_rng(seed)
    dims = [d, *arch, 2]
    params = _init_layers(rng, dims)
    onehot = np.zeros((n, 2))
    onehot[np.arange(n), y] = 1.0

    for _ in range(epochs):
        # forward, keeping pre-activations for the backward pass
        hs = [X]
        zs = []
        h = X
        for i, (w, b) in enumerate(params):
            z = h @ w.T + b
            zs.append(z)
            h = np.maximum(z, 0.0) if i < len(params) - 1 else z
            hs.append(h)
        logits = hs[-1]
        shifted = logits - logits.max(axis=1, keepdims=True)
        expz = np.exp(shifted)
        probs = expz / expz.sum(axis=1, keepdims=True)
        loss = -np.mean(shifted[np.arange(n), y] - np.log(expz.sum(axis=1)))
        if not np.isfinite(loss):
            raise TrainingDiverged("loss is %r" % loss)

        delta = (probs - onehot) / n
        grads = []
        for i in range(len(params) - 1, -1, -1):
            w, b = params[i]
            grads.append((delta.T @ hs[i], delta.sum(axis=0)))
            if i > 0:
                delta = (delta @ w) * (zs[i - 1] >= 0.0)
        grads.reverse()
        params = [(w - lr * gw, b - lr * gb)
                  for (w, b), (gw, gb) in zip(params, grads)]

    layers = [Layer(w, b, "relu") for w, b in params[:-1]]
    w, b = params[-1]
    layers.append(Layer(w, b, "linear"))
    return Network(tuple(layers))


def accuracy(net: Network, dataset: tuple[Array, Array]) -> float:
    X, y = dataset
    return float(np.mean(relunet.classify(net, X) == np.asarray(y)))


def diag_reference_net() -> Network:
    """Hand net used all over the tests: logits = (0.5, relu(x1) + relu(x2)).

    Class 1 wins exactly when the rectified sum clears 0.5, so the accepting
    set and all three of its linear regions are known in closed form.
    """
    return Network((
        Layer(np.eye(2), np.zeros(2), "relu"),
        Layer(np.array([[0.0, 0.0], [1.0, 1.0]]), np.array([0.5, 0.0]), "linear"),
    ))


def stacked_reference_net() -> Network:
    """Two hidden layers with an identity first layer.

    Layer-2 pre-activations depend on the layer-1 pattern bits, which is
    what the deeper constraint-builder tests need to exercise.
    """
    return Network((
        Layer(np.eye(2), np.zeros(2), "relu"),
        Layer(np.array([[1.0, 1.0], [1.0, -1.0]]), np.array([-0.1, 0.05]), "relu"),
        Layer(np.array([[0.0, 0.0], [1.0, 1.0]]), np.array([0.3, 0.0]), "linear"),
    ))
