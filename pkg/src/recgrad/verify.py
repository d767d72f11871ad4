"""Brute-force enumeration oracles for the estimator's exact identities.

These checks certify, by full enumeration on tiny instances, the statistical
facts the convergence analysis rests on:

* the hypergeometric variance identity for without-replacement batch means
  of the gradient differences,
* the exact telescoping decomposition of E||grad P(w_t) - v_t||^2 into sums
  of E||v_j - v_{j-1}||^2 and E||grad P(w_j) - grad P(w_{j-1})||^2,
* the smoothness upper bound on E||grad P(w_t) - v_t||^2.

Every batch sequence is enumerated with its exact probability and the real
recursion is simulated along each path, so agreement is to floating-point
roundoff, not sampling error.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import combinations, product

import numpy as np

from .optim import OptimizerConfig, RecursiveState, recursive_update, sarah, step_size_bound
from .problems import FiniteSumProblem, full_gradient, make_logistic, make_quadratic, make_sigmoid_nonconvex
from .sampling import RngStream

MAX_ENUMERATION = 10**5


@dataclass(frozen=True)
class EnumerationReport:
    lhs: float
    rhs: float
    abs_err: float
    instance: str


def _refuse_if_large(count: int, what: str) -> None:
    if count > MAX_ENUMERATION:
        raise ValueError(f"{what} would enumerate {count} cases (limit {MAX_ENUMERATION})")


def check_batch_variance_identity(
    problem: FiniteSumProblem, w_prev: np.ndarray, w_curr: np.ndarray, b: int
) -> EnumerationReport:
    """Exact variance of the batch mean of xi_i = grad f_i(w_curr) - grad f_i(w_prev)
    over all C(n, b) without-replacement batches, against the closed form

        (1/(b n)) ((n-b)/(n-1)) [ sum_i ||xi_i||^2 - n ||mean xi||^2 ].
    """
    n = problem.n
    if n < 2:
        raise ValueError("variance identity requires n >= 2")
    if not 1 <= b <= n:
        raise ValueError(f"batch size must satisfy 1 <= b <= n, got {b}")
    _refuse_if_large(math.comb(n, b), "batch variance identity")

    xi = np.stack([problem.component_gradient(i, w_curr) - problem.component_gradient(i, w_prev) for i in range(n)])
    xi_mean = xi.mean(axis=0)
    mean_norm_sq = float(np.dot(xi_mean, xi_mean))

    count = 0
    acc = 0.0
    for batch in combinations(range(n), b):
        bm = xi[list(batch)].mean(axis=0)
        acc += float(np.dot(bm, bm)) - mean_norm_sq
        count += 1
    lhs = acc / count
    rhs = (1.0 / (b * n)) * ((n - b) / (n - 1.0)) * (float(np.einsum("ij,ij->", xi, xi)) - n * mean_norm_sq)
    return EnumerationReport(
        lhs=lhs, rhs=rhs, abs_err=abs(lhs - rhs), instance=f"{problem.name} n={n} b={b}"
    )


@dataclass
class PathExpectations:
    """Exact path-enumeration expectations for one inner loop of length m.

    Index j runs over the recursive updates 1 .. m-1; ``deviation_sq[t]`` is
    E||grad P(w_t) - v_t||^2 for t = 0 .. m-1.
    """

    deviation_sq: list
    v_diff_sq: list
    p_diff_sq: list
    v_sq: list
    prob_total: float


def enumerate_inner_paths(
    problem: FiniteSumProblem, w0: np.ndarray, eta: float, b: int, m: int
) -> PathExpectations:
    """Simulate the recursion along every batch sequence (I_1, .., I_{m-1})
    with its exact probability and accumulate the lemma-level expectations."""
    n = problem.n
    n_batches = math.comb(n, b)
    _refuse_if_large(n_batches ** max(m - 1, 0), "path enumeration")

    v0 = full_gradient(problem, w0)
    w1 = w0 - eta * v0
    base = RecursiveState(w_prev=w0, w_curr=w1, v=v0, t=0, v0_norm_sq=float(np.dot(v0, v0)))
    grad_w1 = full_gradient(problem, w1)

    dev0 = 0.0  # v_0 is the full gradient, exactly
    exp = PathExpectations(
        deviation_sq=[dev0] + [0.0] * (m - 1),
        v_diff_sq=[0.0] * m,
        p_diff_sq=[0.0] * m,
        v_sq=[float(np.dot(v0, v0))] + [0.0] * (m - 1),
        prob_total=0.0,
    )
    if m == 1:
        exp.prob_total = 1.0
        return exp

    batches = [np.asarray(batch, dtype=np.int64) for batch in combinations(range(n), b)]
    prob = (1.0 / n_batches) ** (m - 1)

    for path in product(batches, repeat=m - 1):
        state = base
        g_prev = v0       # grad P(w_{j-1}); v_0 is the full gradient, bit-exactly
        g_curr = grad_w1  # grad P(w_j)
        exp.prob_total += prob
        for j, batch in enumerate(path, start=1):
            prev_v = state.v
            state = recursive_update(state, batch, problem, eta)
            diff_v = state.v - prev_v
            diff_p = g_curr - g_prev
            dev = g_curr - state.v
            exp.v_diff_sq[j] += prob * float(np.dot(diff_v, diff_v))
            exp.p_diff_sq[j] += prob * float(np.dot(diff_p, diff_p))
            exp.deviation_sq[j] += prob * float(np.dot(dev, dev))
            exp.v_sq[j] += prob * float(np.dot(state.v, state.v))
            g_prev = g_curr
            g_curr = full_gradient(problem, state.w_curr)
    return exp


def check_lemma2_identity(
    problem: FiniteSumProblem, w0: np.ndarray, eta: float, b: int, m: int
) -> EnumerationReport:
    """Exact identity at t = m - 1:

        E||grad P(w_t) - v_t||^2
          = sum_j E||v_j - v_{j-1}||^2 - sum_j E||grad P(w_j) - grad P(w_{j-1})||^2
    """
    exp = enumerate_inner_paths(problem, w0, eta, b, m)
    t = m - 1
    lhs = exp.deviation_sq[t]
    rhs = sum(exp.v_diff_sq[1 : t + 1]) - sum(exp.p_diff_sq[1 : t + 1])
    return EnumerationReport(
        lhs=lhs, rhs=rhs, abs_err=abs(lhs - rhs),
        instance=f"{problem.name} n={problem.n} b={b} m={m}",
    )


def check_lemma3_bound(
    problem: FiniteSumProblem, w0: np.ndarray, eta: float, b: int, m: int
) -> EnumerationReport:
    """Exact E||grad P(w_t) - v_t||^2 against the smoothness bound

        (1/b) ((n-b)/(n-1)) L^2 eta^2 sum_{j=1}^{t} E||v_{j-1}||^2

    at t = m - 1.  Raises if the bound is violated beyond roundoff.
    """
    if problem.known_L is None:
        raise ValueError(f"problem {problem.name!r} has no known smoothness constant")
    n = problem.n
    exp = enumerate_inner_paths(problem, w0, eta, b, m)
    t = m - 1
    lhs = exp.deviation_sq[t]
    variance_factor = 0.0 if n == 1 else (1.0 / b) * ((n - b) / (n - 1.0))
    rhs = variance_factor * problem.known_L**2 * eta**2 * sum(exp.v_sq[0:t])
    if lhs > rhs * (1.0 + 1e-10):
        raise ValueError(
            f"smoothness bound violated: exact deviation {lhs!r} exceeds bound {rhs!r} "
            f"on {problem.name} n={n} b={b} m={m}"
        )
    return EnumerationReport(
        lhs=lhs, rhs=rhs, abs_err=abs(lhs - rhs),
        instance=f"{problem.name} n={n} b={b} m={m}",
    )


def lemma2_step_residuals(
    problem: FiniteSumProblem, w0: np.ndarray, eta: float, b: int, m: int
) -> list:
    """Per-step telescoping residuals

        E[ ||gP_j - v_j||^2 - ||gP_{j-1} - v_{j-1}||^2
           + ||gP_j - gP_{j-1}||^2 - ||v_j - v_{j-1}||^2 ]

    for j = 1 .. m-1; each is zero in exact arithmetic.
    """
    exp = enumerate_inner_paths(problem, w0, eta, b, m)
    return [
        exp.deviation_sq[j] - exp.deviation_sq[j - 1] + exp.p_diff_sq[j] - exp.v_diff_sq[j]
        for j in range(1, m)
    ]


# ---------------------------------------------------------------------------
# Prepackaged suites for the CLI


@dataclass(frozen=True)
class CheckResult:
    suite: str
    name: str
    lhs: float
    rhs: float
    abs_err: float
    tol: float
    passed: bool

    def to_json(self) -> str:
        return json.dumps(
            {
                "suite": self.suite,
                "check": self.name,
                "lhs": self.lhs,
                "rhs": self.rhs,
                "abs_err": self.abs_err,
                "tol": self.tol,
                "pass": self.passed,
            }
        )


def _tiny_problem(kind: str, n: int, d: int, seed: int = 7) -> FiniteSumProblem:
    X = RngStream(seed, "verify-design", kind).normal_array(n * d).reshape(n, d)
    y = np.where(RngStream(seed, "verify-signs", kind).double_array(n) < 0.5, -1.0, 1.0)
    return make_logistic(X, y, lam=0.1) if kind == "logistic" else make_sigmoid_nonconvex(X, y)


def _seeded_point(d: int, seed: int, tag: str) -> np.ndarray:
    return RngStream(seed, "verify-point", tag).normal_array(d)


def _suite_unbiasedness() -> list[CheckResult]:
    results = []
    for n, b in ((4, 1), (4, 2), (4, 3), (6, 2), (6, 3), (4, 4)):
        problem = _tiny_problem("sigmoid", n, 3)
        w_prev = _seeded_point(3, n * 10 + b, "prev")
        w_curr = _seeded_point(3, n * 10 + b, "curr")
        v = _seeded_point(3, n * 10 + b, "v")
        state = RecursiveState(w_prev=w_prev, w_curr=w_curr, v=v, t=0, v0_norm_sq=1.0)
        mean_v = np.zeros(3)
        batches = list(combinations(range(n), b))
        for batch in batches:
            mean_v += recursive_update(state, np.asarray(batch), problem, eta=0.1).v
        mean_v /= len(batches)
        expect = full_gradient(problem, w_curr) - full_gradient(problem, w_prev) + v
        err = float(np.max(np.abs(mean_v - expect)))
        results.append(
            CheckResult("unbiasedness", f"n={n} b={b}", float(np.linalg.norm(mean_v)),
                        float(np.linalg.norm(expect)), err, 1e-12, err <= 1e-12)
        )
    return results


def _suite_variance_identity() -> list[CheckResult]:
    results = []
    for kind in ("logistic", "sigmoid"):
        for n, b in ((4, 1), (4, 2), (4, 3), (6, 2), (6, 3)):
            problem = _tiny_problem(kind, n, 3)
            rep = check_batch_variance_identity(
                problem, _seeded_point(3, n, "a"), _seeded_point(3, n, "b"), b
            )
            results.append(
                CheckResult("variance-identity", rep.instance, rep.lhs, rep.rhs,
                            rep.abs_err, 1e-13, rep.abs_err < 1e-13)
            )
    return results


def _suite_lemma2() -> list[CheckResult]:
    results = []
    for kind in ("logistic", "sigmoid"):
        problem = _tiny_problem(kind, 3, 3)
        w0 = _seeded_point(3, 3, "w0")
        for m in (2, 3):
            rep = check_lemma2_identity(problem, w0, eta=0.2, b=1, m=m)
            results.append(
                CheckResult("lemma2", rep.instance, rep.lhs, rep.rhs, rep.abs_err,
                            1e-12, rep.abs_err < 1e-12)
            )
    return results


def _suite_lemma3() -> list[CheckResult]:
    results = []
    quad = make_quadratic(np.array([1.0, 2.0, 4.0]), np.zeros(3), 3, perturb_scale=1.0, seed=5)
    w0 = _seeded_point(3, 11, "w0")
    for b, m in ((1, 2), (1, 3), (3, 3), (1, 1)):
        try:
            rep = check_lemma3_bound(quad, w0, eta=0.1, b=b, m=m)
            ok = True
        except ValueError:
            rep = EnumerationReport(float("nan"), float("nan"), float("nan"), f"quadratic b={b} m={m}")
            ok = False
        results.append(
            CheckResult("lemma3", rep.instance, rep.lhs, rep.rhs, rep.abs_err, float("inf"), ok)
        )
    return results


def _suite_bounds(seeds: int = 200) -> list[CheckResult]:
    """Reduced-scale Monte-Carlo check of the inner-loop average bound and the
    outer-loop linear rate (the acceptance suite runs the full versions)."""
    d, n, m = 6, 20, 19
    quad = make_quadratic(np.linspace(1.0, 2.0, d), np.zeros(d), n, perturb_scale=1.0, seed=3)
    eta = step_size_bound(m, 1, n, quad.known_L)
    w0 = np.ones(d)

    def grad_norm_sq(w: np.ndarray) -> float:
        g = full_gradient(quad, w)
        return float(np.dot(g, g))

    sum_grad_sq = 0.0
    for seed in range(seeds):
        config = OptimizerConfig(algo="sarah", eta=eta, m=m, b=1, s=1, seed=seed)
        total = [grad_norm_sq(w0)]
        sarah(quad, w0, config, observer=lambda w, _ifo, _v: total.append(grad_norm_sq(w)))
        sum_grad_sq += sum(total) / (m + 1)
    lhs1 = sum_grad_sq / seeds
    rhs1 = 2.0 / (eta * (m + 1)) * (quad.loss(w0) - quad.known_opt_value)
    r1 = CheckResult("bounds", f"inner-average n={n} m={m} seeds={seeds}",
                     lhs1, rhs1, max(0.0, lhs1 - rhs1), rhs1 * 0.05, lhs1 <= rhs1 * 1.05)

    gamma_bar = 2.0 * quad.known_tau / (eta * (m + 1))
    s_stages = 3
    norms = np.zeros(s_stages + 1)
    g0 = full_gradient(quad, w0)
    norms[0] = float(np.dot(g0, g0)) * seeds

    def record_stage(stage: int, w: np.ndarray) -> None:
        g = full_gradient(quad, w)
        norms[stage] += float(np.dot(g, g))

    for seed in range(seeds):
        config = OptimizerConfig(algo="sarah", eta=eta, m=m, b=1, s=s_stages, seed=seed,
                                 output_mode="random-iterate")
        sarah(quad, w0, config, on_stage=record_stage)
    ratios = norms[1:] / norms[:-1]
    worst = float(np.max(ratios))
    r2 = CheckResult("bounds", f"stage-ratio gamma_bar={gamma_bar:.4f} seeds={seeds}",
                     worst, gamma_bar, max(0.0, worst - gamma_bar), gamma_bar * 0.05,
                     worst <= gamma_bar * 1.05)
    return [r1, r2]


SUITES = {
    "unbiasedness": _suite_unbiasedness,
    "variance-identity": _suite_variance_identity,
    "lemma2": _suite_lemma2,
    "lemma3": _suite_lemma3,
    "bounds": _suite_bounds,
}


def run_suite(name: str) -> list[CheckResult]:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}, expected one of {sorted(SUITES)}")
    return SUITES[name]()
