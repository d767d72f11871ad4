"""Finite-sum problem contract and built-in analytic test problems.

A finite-sum problem is an average of n component losses over d-dimensional
weights.  The built-in constructors produce instances with known constants
(smoothness L, gradient-domination tau, optimal value) so convergence bounds
can be verified numerically rather than taken on faith.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .sampling import RngStream

Vector = np.ndarray


@dataclass(frozen=True)
class FiniteSumProblem:
    """Oracle contract for (1/n) * sum_i f_i(w) over w in R^d.

    ``component_loss(i, w)`` and ``component_gradient(i, w)`` evaluate one
    component; the full objective and gradient are their arithmetic means.
    ``batch_mean_loss`` / ``batch_mean_gradient`` are optional vectorized
    fast paths taking an index array; when absent callers fall back to
    per-component loops.  Instances are immutable and safe to share across
    concurrent runs.
    """

    name: str
    n: int
    d: int
    component_loss: Callable[[int, Vector], float]
    component_gradient: Callable[[int, Vector], Vector]
    known_L: Optional[float] = None
    known_opt_value: Optional[float] = None
    known_tau: Optional[float] = None
    batch_mean_loss: Optional[Callable[[np.ndarray, Vector], float]] = None
    batch_mean_gradient: Optional[Callable[[np.ndarray, Vector], Vector]] = None

    def loss(self, w: Vector) -> float:
        """Full objective: mean of component losses, ascending index order."""
        acc = 0.0
        for i in range(self.n):
            acc += self.component_loss(i, w)
        return acc / self.n


def full_gradient(problem: FiniteSumProblem, w: Vector) -> Vector:
    """Mean of component gradients in fixed ascending-index order.

    The accumulation order is pinned (left to right over i = 0..n-1) so the
    result is bit-reproducible; raises on the first non-finite component.
    """
    acc = np.zeros(problem.d)
    for i in range(problem.n):
        g = problem.component_gradient(i, w)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite component gradient at index {i}")
        acc += g
    return acc / problem.n


def mean_loss(problem: FiniteSumProblem, indices: np.ndarray, w: Vector) -> float:
    if problem.batch_mean_loss is not None and len(indices) < problem.n:
        return problem.batch_mean_loss(indices, w)
    acc = 0.0
    for i in indices:
        acc += problem.component_loss(int(i), w)
    return acc / len(indices)


def mean_gradient(problem: FiniteSumProblem, indices: np.ndarray, w: Vector) -> Vector:
    """Mean of component gradients over an index array.

    A full-size index set is routed through :func:`full_gradient` so that
    b = n estimators telescope bit-exactly against gradient descent; smaller
    batches use the problem's vectorized path when it provides one.
    """
    if len(indices) == problem.n:
        return full_gradient(problem, w)
    if problem.batch_mean_gradient is not None:
        return problem.batch_mean_gradient(indices, w)
    acc = np.zeros(problem.d)
    for i in indices:
        acc += problem.component_gradient(int(i), w)
    return acc / len(indices)


def _as_vector(x, name: str) -> Vector:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


# Per-component linear perturbations are drawn as integer multiples of this
# quantum so their float sum cancels exactly and the averaged objective stays
# the unperturbed quadratic in exact arithmetic.
_PERTURB_QUANTUM = 2.0 ** -20


def make_quadratic(
    a_diag,
    c,
    n: int,
    perturb_scale: float = 1.0,
    seed: int = 0,
) -> FiniteSumProblem:
    """Diagonal quadratic P(w) = 0.5 w^T diag(a) w - c^T w split into n components.

    Each component is P plus a zero-mean linear perturbation p_i^T w (fixed
    seed), so the components differ — giving the estimators nonzero variance —
    while their average is exactly P.  A mu-strongly convex objective is
    1/(2 mu)-gradient dominated, hence known_tau = 1/(2 min(a)); the linear
    perturbations leave every component gradient's Lipschitz constant at
    max(a), which is recorded exactly as known_L.

    With ``perturb_scale=0`` every component equals P itself.
    """
    a = _as_vector(a_diag, "a_diag")
    cv = _as_vector(c, "c")
    if a.shape != cv.shape:
        raise ValueError(f"a_diag and c must have equal length, got {a.shape} and {cv.shape}")
    if np.any(a <= 0.0):
        raise ValueError("a_diag entries must be strictly positive")
    if n < 1:
        raise ValueError(f"component count must be >= 1, got {n}")
    d = a.size

    p = np.zeros((n, d))
    if perturb_scale > 0.0 and n > 1:
        k_max = int(round(perturb_scale / _PERTURB_QUANTUM))
        rng = RngStream(seed, "quadratic-perturb")
        for i in range(n - 1):
            ks = np.array([rng.randbelow(2 * k_max + 1) - k_max for _ in range(d)], dtype=np.float64)
            p[i] = ks * _PERTURB_QUANTUM
        # integer-quantum draws sum without rounding, so this cancels exactly
        acc = np.zeros(d)
        for i in range(n - 1):
            acc += p[i]
        p[n - 1] = -acc

    w_star = cv / a
    opt_value = -0.5 * float(np.dot(cv, w_star)) + 0.0  # normalize -0.0

    def comp_loss(i: int, w: Vector) -> float:
        return 0.5 * float(np.dot(w, a * w)) - float(np.dot(cv, w)) + float(np.dot(p[i], w))

    def comp_grad(i: int, w: Vector) -> Vector:
        return a * w - cv + p[i]

    return FiniteSumProblem(
        name="quadratic",
        n=n,
        d=d,
        component_loss=comp_loss,
        component_gradient=comp_grad,
        known_L=float(np.max(a)),
        known_opt_value=opt_value,
        known_tau=1.0 / (2.0 * float(np.min(a))),
    )


def _sigmoid(z):
    # evaluated piecewise to avoid overflow in exp for large |z|
    out = np.empty_like(z, dtype=np.float64) if isinstance(z, np.ndarray) else None
    if out is None:
        if z >= 0.0:
            return 1.0 / (1.0 + math.exp(-z))
        e = math.exp(z)
        return e / (1.0 + e)
    pos = z >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _log1pexp(z: float) -> float:
    # log(1 + exp(z)) without overflow
    if z > 0.0:
        return z + math.log1p(math.exp(-z))
    return math.log1p(math.exp(z))


def _check_design(X, y):
    Xm = np.asarray(X, dtype=np.float64)
    yv = np.asarray(y, dtype=np.float64)
    if Xm.ndim != 2:
        raise ValueError(f"X must be an n x d matrix, got shape {Xm.shape}")
    if not np.all(np.isfinite(Xm)):
        raise ValueError("X contains non-finite entries")
    if yv.shape != (Xm.shape[0],):
        raise ValueError(f"y must have length {Xm.shape[0]}, got shape {yv.shape}")
    if not np.all(np.isin(yv, (-1.0, 1.0))):
        raise ValueError("y entries must be -1 or +1")
    return Xm, yv


def make_logistic(X, y, lam: float = 0.0) -> FiniteSumProblem:
    """L2-regularized logistic loss: f_i(w) = log(1 + exp(-y_i x_i^T w)) + lam/2 ||w||^2.

    known_L uses the 1/4 bound on the sigmoid derivative: max_i ||x_i||^2 / 4 + lam.
    """
    Xm, yv = _check_design(X, y)
    if lam < 0.0:
        raise ValueError(f"lam must be nonnegative, got {lam}")
    n, d = Xm.shape

    def comp_loss(i: int, w: Vector) -> float:
        margin = yv[i] * float(np.dot(Xm[i], w))
        return _log1pexp(-margin) + 0.5 * lam * float(np.dot(w, w))

    def comp_grad(i: int, w: Vector) -> Vector:
        margin = yv[i] * float(np.dot(Xm[i], w))
        return (-yv[i] * _sigmoid(-margin)) * Xm[i] + lam * w

    row_norms_sq = np.einsum("ij,ij->i", Xm, Xm)
    return FiniteSumProblem(
        name="logistic",
        n=n,
        d=d,
        component_loss=comp_loss,
        component_gradient=comp_grad,
        known_L=float(np.max(row_norms_sq)) / 4.0 + lam,
    )


# max |sigma''| over R; attained where sigma = (3 +- sqrt(3))/6
_SIGMOID_CURVATURE_BOUND = math.sqrt(3.0) / 18.0


def make_sigmoid_nonconvex(X, y) -> FiniteSumProblem:
    """Smooth nonconvex sigmoid loss: f_i(w) = 1 / (1 + exp(y_i x_i^T w)).

    Bounded in (0, 1) for finite w; known_L from the curvature bound on the
    sigmoid times max_i ||x_i||^2.
    """
    Xm, yv = _check_design(X, y)
    n, d = Xm.shape

    def comp_loss(i: int, w: Vector) -> float:
        margin = yv[i] * float(np.dot(Xm[i], w))
        return float(_sigmoid(-margin))

    def comp_grad(i: int, w: Vector) -> Vector:
        margin = yv[i] * float(np.dot(Xm[i], w))
        s = _sigmoid(-margin)
        return (-yv[i] * s * (1.0 - s)) * Xm[i]

    row_norms_sq = np.einsum("ij,ij->i", Xm, Xm)
    return FiniteSumProblem(
        name="sigmoid",
        n=n,
        d=d,
        component_loss=comp_loss,
        component_gradient=comp_grad,
        known_L=float(np.max(row_norms_sq)) * _SIGMOID_CURVATURE_BOUND,
    )
