"""One-hidden-layer network as a finite-sum problem.

Architecture: fully connected hidden layer with a sigmoid (or tanh)
activation, fully connected output layer, softmax + cross-entropy loss, and
an L2 weight-decay term on the weights (biases excluded from decay).

Weights live in one flat vector with layout

    [W1 row-major | b1 | W2 row-major | b2]

where W1 has shape (n_hidden, d_in) — W1[h, i] connects input i to hidden
unit h — and W2 has shape (n_out, n_hidden).  Gradients are computed by
backpropagation; the softmax subtracts the row max before exponentiation for
overflow safety.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .problems import FiniteSumProblem
from .sampling import RngStream

Vector = np.ndarray

_ACTIVATIONS = ("sigmoid", "tanh")


@dataclass(frozen=True)
class MlpSpec:
    d_in: int
    n_hidden: int
    n_out: int
    lam: float = 0.0
    activation: str = "sigmoid"

    def __post_init__(self):
        if min(self.d_in, self.n_hidden, self.n_out) < 1:
            raise ValueError("layer sizes must be positive")
        if self.lam < 0.0:
            raise ValueError(f"weight decay must be nonnegative, got {self.lam}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {_ACTIVATIONS}, got {self.activation!r}")

    @property
    def n_params(self) -> int:
        return (self.d_in + 1) * self.n_hidden + (self.n_hidden + 1) * self.n_out


def unpack(spec: MlpSpec, w: Vector):
    """Views (W1, b1, W2, b2) into the flat parameter vector."""
    if w.shape != (spec.n_params,):
        raise ValueError(f"expected parameter vector of length {spec.n_params}, got shape {w.shape}")
    h, di, o = spec.n_hidden, spec.d_in, spec.n_out
    k0 = h * di
    k1 = k0 + h
    k2 = k1 + o * h
    return (
        w[:k0].reshape(h, di),
        w[k0:k1],
        w[k1:k2].reshape(o, h),
        w[k2:],
    )


def init_normalized(spec: MlpSpec, seed: int) -> Vector:
    """Normalized initialization: weights between layers of widths a and b
    drawn uniformly from [-sqrt(6/(a+b)), +sqrt(6/(a+b))]; biases zero.
    Deterministic given the seed."""
    w = np.zeros(spec.n_params)
    w1, _, w2, _ = unpack(spec, w)
    bound1 = np.sqrt(6.0 / (spec.d_in + spec.n_hidden))
    bound2 = np.sqrt(6.0 / (spec.n_hidden + spec.n_out))
    w1.ravel()[:] = RngStream(seed, "mlp-init", 1).uniform_array(-bound1, bound1, w1.size)
    w2.ravel()[:] = RngStream(seed, "mlp-init", 2).uniform_array(-bound2, bound2, w2.size)
    return w


def _activate(spec: MlpSpec, z: np.ndarray):
    if spec.activation == "sigmoid":
        a = np.empty_like(z)
        pos = z >= 0.0
        a[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        e = np.exp(z[~pos])
        a[~pos] = e / (1.0 + e)
        return a
    return np.tanh(z)


def _activate_grad(spec: MlpSpec, a: np.ndarray):
    if spec.activation == "sigmoid":
        return a * (1.0 - a)
    return 1.0 - a * a


def _forward_batch(spec: MlpSpec, w: Vector, X: np.ndarray):
    """Hidden activations, logits, and softmax probabilities for a batch."""
    w1, b1, w2, b2 = unpack(spec, w)
    a1 = _activate(spec, X @ w1.T + b1)
    logits = a1 @ w2.T + b2
    shifted = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    probs = expz / expz.sum(axis=1, keepdims=True)
    return a1, logits, probs


def _decay_term(spec: MlpSpec, w: Vector) -> float:
    w1, _, w2, _ = unpack(spec, w)
    return 0.5 * spec.lam * (float(np.dot(w1.ravel(), w1.ravel())) + float(np.dot(w2.ravel(), w2.ravel())))


def batch_mean_loss(spec: MlpSpec, w: Vector, X: np.ndarray, labels: np.ndarray) -> float:
    _, logits, _ = _forward_batch(spec, w, X)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(X.shape[0])
    ce = log_norm - shifted[rows, labels]
    return float(ce.mean()) + _decay_term(spec, w)


def batch_mean_gradient(spec: MlpSpec, w: Vector, X: np.ndarray, labels: np.ndarray) -> Vector:
    """Mean gradient of the per-example regularized loss over a batch."""
    k = X.shape[0]
    a1, _, probs = _forward_batch(spec, w, X)
    w1, _, w2, _ = unpack(spec, w)

    d2 = probs.copy()
    d2[np.arange(k), labels] -= 1.0
    d2 /= k
    d1 = (d2 @ w2) * _activate_grad(spec, a1)

    g = np.empty(spec.n_params)
    g1, gb1, g2, gb2 = unpack(spec, g)
    g1[:] = d1.T @ X + spec.lam * w1
    gb1[:] = d1.sum(axis=0)
    g2[:] = d2.T @ a1 + spec.lam * w2
    gb2[:] = d2.sum(axis=0)
    return g


def component_loss(spec: MlpSpec, w: Vector, x: Vector, label: int) -> float:
    if not 0 <= label < spec.n_out:
        raise ValueError(f"label {label} out of range for {spec.n_out} classes")
    return batch_mean_loss(spec, w, x[None, :], np.array([label]))


def component_gradient(spec: MlpSpec, w: Vector, x: Vector, label: int) -> Vector:
    if not 0 <= label < spec.n_out:
        raise ValueError(f"label {label} out of range for {spec.n_out} classes")
    return batch_mean_gradient(spec, w, x[None, :], np.array([label]))


def predict(spec: MlpSpec, w: Vector, X: np.ndarray) -> np.ndarray:
    """Most probable class per row; ties resolve to the lowest class index."""
    _, logits, _ = _forward_batch(spec, w, X)
    return logits.argmax(axis=1)


def test_error(spec: MlpSpec, w: Vector, dataset: Dataset) -> float:
    """Fraction of examples whose predicted class differs from the label."""
    if dataset.n == 0:
        raise ValueError("dataset is empty")
    return float(np.mean(predict(spec, w, dataset.features) != dataset.labels))


def softmax_probs(spec: MlpSpec, w: Vector, X: np.ndarray) -> np.ndarray:
    return _forward_batch(spec, w, X)[2]


def make_mlp_problem(spec: MlpSpec, dataset: Dataset) -> FiniteSumProblem:
    """Bind a network spec to a dataset as a FiniteSumProblem.

    Components are per-example regularized losses; the vectorized batch paths
    are provided so mini-batch optimizers avoid per-example Python loops.
    """
    if dataset.features.shape[1] != spec.d_in:
        raise ValueError(
            f"dataset dimension {dataset.features.shape[1]} does not match spec d_in {spec.d_in}"
        )
    if int(dataset.labels.max()) >= spec.n_out:
        raise ValueError("dataset contains labels outside the spec's class count")
    X, labels = dataset.features, dataset.labels

    return FiniteSumProblem(
        name=f"mlp-{dataset.name}",
        n=dataset.n,
        d=spec.n_params,
        component_loss=lambda i, w: component_loss(spec, w, X[i], int(labels[i])),
        component_gradient=lambda i, w: component_gradient(spec, w, X[i], int(labels[i])),
        batch_mean_loss=lambda idx, w: batch_mean_loss(spec, w, X[idx], labels[idx]),
        batch_mean_gradient=lambda idx, w: batch_mean_gradient(spec, w, X[idx], labels[idx]),
    )
