"""Models, losses, local training, aggregation, and constant estimation.

Two real model families are supported: L2-regularized softmax regression
(convex, the one the convergence analysis applies to) and a one-hidden-
layer ReLU perceptron.  A third kind, ``quadratic``, is a transparent
surrogate used by tests: its loss is half the mean squared distance from
the weight vector to the shard's feature rows, so every constant of the
loss landscape is known in closed form.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateProbe,
    EmptyModelList,
    EmptyShard,
    NonPositiveParameter,
    TopologyMismatch,
)

_KINDS = ("softmax", "mlp", "quadratic")
_WEIGHTS_MAGIC = b"FCWV"


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "softmax"
    hidden_units: int = 0
    l2_reg: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"kind must be one of {_KINDS}")
        if self.kind == "mlp" and self.hidden_units < 1:
            raise ValueError("mlp needs hidden_units >= 1")
        if self.kind != "mlp" and self.hidden_units:
            raise ValueError(f"{self.kind} takes no hidden units")
        if self.l2_reg < 0:
            raise ValueError("l2_reg must be >= 0")

    def topology(self, n_features: int, n_classes: int) -> tuple[int, int, int]:
        if self.kind == "quadratic":
            return (n_features, 0, 0)
        return (n_features, self.hidden_units, n_classes)

    def n_params(self, n_features: int, n_classes: int) -> int:
        if self.kind == "quadratic":
            return n_features
        if self.kind == "softmax":
            return (n_features + 1) * n_classes
        h = self.hidden_units
        return n_features * h + h + h * n_classes + n_classes

    def init_weights(self, n_features: int, n_classes: int) -> "WeightVector":
        return WeightVector(
            values=np.zeros(self.n_params(n_features, n_classes)),
            topology=self.topology(n_features, n_classes),
        )


@dataclass(frozen=True)
class WeightVector:
    """Flat float64 parameter vector plus its (inputs, hidden, classes) shape."""

    values: np.ndarray
    topology: tuple[int, int, int]

    def __post_init__(self) -> None:
        if self.values.ndim != 1:
            raise ValueError("weights must be a flat vector")
        if self.values.dtype != np.float64:
            object.__setattr__(self, "values", self.values.astype(np.float64))


def weights_to_bytes(w: WeightVector) -> bytes:
    """Little-endian serialization: magic, topology, length, raw float64."""
    head = struct.pack(
        "<4sIIIQ", _WEIGHTS_MAGIC, w.topology[0], w.topology[1], w.topology[2],
        len(w.values),
    )
    return head + w.values.tobytes()


def weights_from_bytes(blob: bytes) -> WeightVector:
    if len(blob) < 24 or blob[:4] != _WEIGHTS_MAGIC:
        raise ValueError("not a serialized weight vector")
    _, d, h, c, n = struct.unpack_from("<4sIIIQ", blob, 0)
    if len(blob) != 24 + 8 * n:
        raise ValueError("serialized weight vector has wrong length")
    values = np.frombuffer(blob, dtype="<f8", offset=24).copy()
    return WeightVector(values=values, topology=(d, h, c))


def _check_inputs(
    w: WeightVector, features: np.ndarray, labels: np.ndarray | None, spec: ModelSpec
) -> tuple[int, int]:
    if len(features) == 0:
        raise EmptyShard("no samples")
    d = features.shape[1]
    c = w.topology[2]
    if spec.kind == "quadratic":
        c = 0
    expected = spec.topology(d, c)
    if w.topology != expected or len(w.values) != spec.n_params(d, c):
        raise TopologyMismatch(f"weights {w.topology} do not fit data dim {d}")
    if spec.kind != "quadratic" and labels is not None and labels.max() >= c:
        raise ValueError(f"label {int(labels.max())} outside {c} classes")
    return d, c


def loss_and_grad(
    w: WeightVector,
    features: np.ndarray,
    labels: np.ndarray,
    spec: ModelSpec,
) -> tuple[float, np.ndarray]:
    """Mean loss over the shard and its exact gradient in ``w``.

    The L2 penalty ``l2_reg/2 * ||w||^2`` covers every parameter,
    intercepts included, so the regularized softmax objective is strictly
    convex in all coordinates.
    """
    d, c = _check_inputs(w, features, labels, spec)
    n = len(features)
    v = w.values

    if spec.kind == "quadratic":
        diff = v[None, :] - features
        loss = 0.5 * float(np.mean(np.sum(diff * diff, axis=1)))
        grad = v - features.mean(axis=0)
    elif spec.kind == "softmax":
        W = v[: d * c].reshape(d, c)
        b = v[d * c :]
        logits = features @ W + b
        loss, delta = _softmax_ce(logits, labels, n)
        grad = np.concatenate([(features.T @ delta).ravel(), delta.sum(axis=0)])
    else:
        h = spec.hidden_units
        W1 = v[: d * h].reshape(d, h)
        b1 = v[d * h : d * h + h]
        off = d * h + h
        W2 = v[off : off + h * c].reshape(h, c)
        b2 = v[off + h * c :]
        pre = features @ W1 + b1
        hid = np.maximum(pre, 0.0)
        logits = hid @ W2 + b2
        loss, delta = _softmax_ce(logits, labels, n)
        back = (delta @ W2.T) * (pre > 0.0)
        grad = np.concatenate([
            (features.T @ back).ravel(),
            back.sum(axis=0),
            (hid.T @ delta).ravel(),
            delta.sum(axis=0),
        ])

    if spec.l2_reg:
        loss += 0.5 * spec.l2_reg * float(v @ v)
        grad = grad + spec.l2_reg * v
    return loss, grad


def _softmax_ce(
    logits: np.ndarray, labels: np.ndarray, n: int
) -> tuple[float, np.ndarray]:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(total)
    loss = float(np.mean(-log_probs[np.arange(n), labels]))
    delta = exp / total
    delta[np.arange(n), labels] -= 1.0
    return loss, delta / n


def predict(w: WeightVector, features: np.ndarray, spec: ModelSpec) -> np.ndarray:
    if spec.kind == "quadratic":
        raise ValueError("the quadratic surrogate classifies nothing")
    d = features.shape[1]
    c = w.topology[2]
    v = w.values
    if spec.kind == "softmax":
        logits = features @ v[: d * c].reshape(d, c) + v[d * c :]
    else:
        h = spec.hidden_units
        hid = np.maximum(features @ v[: d * h].reshape(d, h) + v[d * h : d * h + h], 0.0)
        off = d * h + h
        logits = hid @ v[off : off + h * c].reshape(h, c) + v[off + h * c :]
    return np.argmax(logits, axis=1)


def accuracy(w: WeightVector, features: np.ndarray, labels: np.ndarray, spec: ModelSpec) -> float:
    return float(np.mean(predict(w, features, spec) == labels))


def local_train(
    w: WeightVector,
    features: np.ndarray,
    labels: np.ndarray,
    spec: ModelSpec,
    learning_rate: float,
    iters: int,
    batch_size: int | None = None,
    rng: np.random.Generator | None = None,
) -> WeightVector:
    """Plain gradient descent for ``iters`` steps; full batch by default."""
    if learning_rate <= 0:
        raise NonPositiveParameter("learning_rate must be > 0")
    if iters < 0:
        raise ValueError("iters must be >= 0")
    if batch_size is not None and batch_size < len(features) and rng is None:
        raise ValueError("minibatch training needs an rng")
    values = w.values.copy()
    current = WeightVector(values, w.topology)
    n = len(features)
    for _ in range(iters):
        if batch_size is not None and batch_size < n:
            pick = rng.choice(n, size=batch_size, replace=False)
            _, grad = loss_and_grad(current, features[pick], labels[pick], spec)
        else:
            _, grad = loss_and_grad(current, features, labels, spec)
        values = values - learning_rate * grad
        current = WeightVector(values, w.topology)
    return current


def aggregate(models: Sequence[WeightVector]) -> WeightVector:
    """Coordinate-wise mean of equally weighted models."""
    if len(models) == 0:
        raise EmptyModelList("nothing to aggregate")
    topo = models[0].topology
    for m in models[1:]:
        if m.topology != topo or len(m.values) != len(models[0].values):
            raise TopologyMismatch(f"{m.topology} != {topo}")
    stacked = np.stack([m.values for m in models])
    return WeightVector(values=stacked.mean(axis=0), topology=topo)


def centralized_fit(
    features: np.ndarray,
    labels: np.ndarray,
    spec: ModelSpec,
    learning_rate: float,
    iters: int,
) -> tuple[WeightVector, float]:
    """Full-batch descent on the pooled data from zero initialization."""
    w0 = spec.init_weights(features.shape[1], int(labels.max()) + 1 if spec.kind != "quadratic" else 0)
    w = local_train(w0, features, labels, spec, learning_rate, iters)
    loss, _ = loss_and_grad(w, features, labels, spec)
    return w, loss


def estimate_gradient_divergence(
    shards: Sequence[tuple[np.ndarray, np.ndarray]],
    probe_weights: Iterable[WeightVector],
    spec: ModelSpec,
) -> float:
    """Largest observed gap between client gradients and their mean.

    For each probe weight the cohort gradient is the equal-weight mean of
    the client gradients; each client's divergence is its worst gap over
    the probes, and the result averages those with shard-size weights.
    """
    probes = list(probe_weights)
    if not shards:
        raise ValueError("need at least one shard")
    if not probes:
        raise ValueError("need at least one probe weight")
    per_client = np.zeros(len(shards))
    sizes = np.array([len(X) for X, _ in shards], dtype=np.float64)
    for w in probes:
        grads = [loss_and_grad(w, X, y, spec)[1] for X, y in shards]
        center = np.mean(grads, axis=0)
        for i, g in enumerate(grads):
            per_client[i] = max(per_client[i], float(np.linalg.norm(g - center)))
    return float(np.sum(sizes * per_client) / np.sum(sizes))


@dataclass(frozen=True)
class ConstantEstimates:
    """Probe-based loss-landscape estimates plus the reference optimum."""

    lipschitz: float
    smoothness: float
    phi: float
    w_star: WeightVector
    loss_star: float
    w_init: WeightVector


def estimate_constants(
    features: np.ndarray,
    labels: np.ndarray,
    spec: ModelSpec,
    n_probes: int,
    rng: np.random.Generator,
    learning_rate: float,
    probe_scale: float = 1.0,
    opt_iters: int = 2000,
) -> ConstantEstimates:
    """Estimate loss Lipschitz and smoothness constants from probe pairs.

    Draws ``n_probes`` uniform points in ``[-probe_scale, probe_scale]^p``
    on top of two anchors (the zero initialization and a reference optimum
    fit at half the learning rate), then maximizes the loss- and
    gradient-difference ratios over all distinct pairs.  Estimates grow
    monotonically with ``n_probes`` for a fixed generator seed.  A
    coincident pair of drawn probes raises :class:`DegenerateProbe`;
    coincident anchors are skipped since they carry no ratio.
    """
    if n_probes < 2:
        raise ValueError("need at least two probes")
    n_classes = int(labels.max()) + 1 if spec.kind != "quadratic" else 0
    w_init = spec.init_weights(features.shape[1], n_classes)
    w_star, loss_star = centralized_fit(
        features, labels, spec, learning_rate / 2.0, opt_iters
    )
    p = len(w_init.values)
    drawn = rng.uniform(-probe_scale, probe_scale, size=(n_probes, p))
    points = [w_init.values, w_star.values] + [drawn[i] for i in range(n_probes)]

    evals = []
    for vals in points:
        w = WeightVector(np.asarray(vals, dtype=np.float64), w_init.topology)
        loss, grad = loss_and_grad(w, features, labels, spec)
        evals.append((w.values, loss, grad))

    lipschitz = 0.0
    smoothness = 0.0
    for i in range(len(evals)):
        for j in range(i + 1, len(evals)):
            dist = float(np.linalg.norm(evals[i][0] - evals[j][0]))
            if dist == 0.0:
                if i >= 2 and j >= 2:
                    raise DegenerateProbe("drawn probes coincide")
                continue
            lipschitz = max(lipschitz, abs(evals[i][1] - evals[j][1]) / dist)
            smoothness = max(
                smoothness, float(np.linalg.norm(evals[i][2] - evals[j][2])) / dist
            )
    if lipschitz == 0.0 or smoothness == 0.0:
        raise DegenerateProbe("loss surface looks flat across all probes")

    headroom = 1.0 - learning_rate * smoothness / 2.0
    if headroom <= 0:
        raise NonPositiveParameter(
            "learning rate too large for the estimated smoothness"
        )
    gap = float(np.linalg.norm(w_init.values - w_star.values))
    phi = headroom / gap if gap > 0 else math.inf
    return ConstantEstimates(
        lipschitz=lipschitz,
        smoothness=smoothness,
        phi=phi,
        w_star=w_star,
        loss_star=loss_star,
        w_init=w_init,
    )
