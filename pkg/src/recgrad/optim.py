"""Optimizers: recursive-gradient methods and single-loop baselines.

Two-loop methods evaluate a full gradient per outer iteration, then run
stochastic inner steps:

    sarah:  v_t = mean_{i in I_t}[grad f_i(w_t) - grad f_i(w_{t-1})] + v_{t-1}
    svrg:   v_t = mean_{i in I_t}[grad f_i(w_t) - grad f_i(w_0)]     + v_0

followed by w_{t+1} = w_t - eta * v_t.  The adaptive variant terminates the
inner loop once ||v_{t-1}||^2 drops to gamma * ||v_0||^2.  Single-loop
baselines (sgd, sgd-m, adagrad, gd) are provided for comparison runs.

IFO accounting: a full gradient costs n, each inner step costs 2b (two
gradient evaluations per sampled index), and a single-loop step costs b.

Batch index sets are drawn without replacement through per-step streams
labeled (seed, outer, step, purpose), so any step of any run can be replayed
in isolation.  The plain SGD family samples with replacement, as classic SGD
does.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .problems import FiniteSumProblem, full_gradient, mean_gradient
from .sampling import RngStream, sample_batch

Vector = np.ndarray

ALGORITHMS = ("sarah", "sarah+", "svrg", "sgd", "sgd-m", "adagrad", "gd")
OUTPUT_MODES = ("last-iterate", "random-iterate")

# any coordinate beyond this magnitude (or non-finite) aborts the run
DIVERGENCE_LIMIT = 1e100


class DivergenceError(RuntimeError):
    """Raised when an iterate leaves the representable region."""

    def __init__(self, t: int, v_norm_sq: float):
        self.t = t
        self.v_norm_sq = v_norm_sq
        super().__init__(f"iterate diverged at inner step t={t} (||v||^2={v_norm_sq:.3e})")


@dataclass(frozen=True)
class OptimizerConfig:
    """Hyperparameters for one run.

    ``gamma_plus`` is the adaptive stopping ratio of sarah+; ``beta_momentum``
    the sgd-m momentum coefficient; ``delta_adagrad`` the initial adagrad
    accumulator.  ``output_mode`` selects whether inner loops return their
    last iterate or one chosen uniformly at random from the computed ones.
    """

    algo: str
    eta: float
    m: int = 1
    b: int = 1
    s: int = 1
    gamma_plus: float = 0.7
    beta_momentum: float = 0.0
    delta_adagrad: float = 0.01
    seed: int = 0
    output_mode: str = "last-iterate"

    def __post_init__(self):
        if self.algo not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algo!r}, expected one of {ALGORITHMS}")
        if self.eta <= 0.0:
            raise ValueError(f"step size must be positive, got {self.eta}")
        if self.m < 1 or self.b < 1 or self.s < 1:
            raise ValueError("m, b and s must all be >= 1")
        if not 0.0 < self.gamma_plus <= 1.0:
            raise ValueError(f"gamma_plus must lie in (0, 1], got {self.gamma_plus}")
        if self.delta_adagrad <= 0.0:
            raise ValueError(f"delta_adagrad must be positive, got {self.delta_adagrad}")
        if self.output_mode not in OUTPUT_MODES:
            raise ValueError(f"output_mode must be one of {OUTPUT_MODES}, got {self.output_mode!r}")


@dataclass
class RecursiveState:
    """Inner-loop state: previous/current iterate, latest estimator, step count.

    After initialization ``v`` is the full gradient at the loop's start and
    ``t`` counts recursive updates performed so far (t <= m - 1).
    """

    w_prev: Vector
    w_curr: Vector
    v: Vector
    t: int
    v0_norm_sq: float


@dataclass(frozen=True)
class RateReport:
    """Advisory check of the linear-rate condition for gradient-dominated runs."""

    eta_max: float
    gamma_bar: float
    tau_condition_met: bool


@dataclass
class InnerTrace:
    """Bookkeeping for one inner loop: estimator norms, steps, IFO cost."""

    v_norms_sq: list = field(default_factory=list)
    steps: int = 0
    ifo: int = 0
    selected_t: int = -1


Observer = Callable[[Vector, int, Optional[Vector]], None]


def step_size_bound(m: int, b: int, n: int, L: float) -> float:
    """Largest admissible constant step size for the inner loop:

        2 / (L * (sqrt(1 + (4m/b) * (n-b)/(n-1)) + 1))

    Nonincreasing in m, nondecreasing in b; equals 1/L at b = n.  For n = 1
    the only batch is the full set, the variance factor vanishes, and the
    bound is 1/L.
    """
    if L <= 0.0:
        raise ValueError(f"L must be positive, got {L}")
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if not 1 <= b <= n:
        raise ValueError(f"batch size must satisfy 1 <= b <= n, got b={b}, n={n}")
    if n == 1:
        return 1.0 / L
    factor = (4.0 * m / b) * ((n - b) / (n - 1.0))
    return 2.0 / (L * (math.sqrt(1.0 + factor) + 1.0))


def _check_finite(w: Vector, t: int, v_norm_sq: float) -> None:
    mx = float(np.max(np.abs(w)))
    if not mx <= DIVERGENCE_LIMIT:
        raise DivergenceError(t, v_norm_sq)


def recursive_update(
    state: RecursiveState,
    batch: np.ndarray,
    problem: FiniteSumProblem,
    eta: float,
) -> RecursiveState:
    """One recursive-gradient step: fold the batch's gradient difference into
    the running estimator, take the step, and shift the state.

    The estimator is grouped as ``g_curr + (v - g_prev)`` so that with a
    full-size batch the correction cancels bit-exactly and the method
    telescopes to gradient descent.
    """
    g_curr = mean_gradient(problem, batch, state.w_curr)
    g_prev = mean_gradient(problem, batch, state.w_prev)
    v_new = g_curr + (state.v - g_prev)
    w_next = state.w_curr - eta * v_new
    v_norm_sq = float(np.dot(v_new, v_new))
    _check_finite(w_next, state.t + 1, v_norm_sq)
    return RecursiveState(
        w_prev=state.w_curr,
        w_curr=w_next,
        v=v_new,
        t=state.t + 1,
        v0_norm_sq=state.v0_norm_sq,
    )


def _init_inner(problem: FiniteSumProblem, w0: Vector, config: OptimizerConfig):
    if config.b > problem.n:
        raise ValueError(f"batch size {config.b} exceeds component count {problem.n}")
    v0 = full_gradient(problem, w0)
    v0_norm_sq = float(np.dot(v0, v0))
    w1 = w0 - config.eta * v0
    _check_finite(w1, 0, v0_norm_sq)
    return v0, v0_norm_sq, w1


def _batch_stream(config: OptimizerConfig, outer_index: int, t: int) -> RngStream:
    return RngStream(config.seed, outer_index, t, "batch")


def sarah_in(
    problem: FiniteSumProblem,
    w0: Vector,
    config: OptimizerConfig,
    *,
    outer_index: int = 1,
    observer: Optional[Observer] = None,
) -> tuple[Vector, InnerTrace]:
    """One inner loop of the recursive-gradient method.

    Evaluates the full gradient v_0 (n IFOs), takes the step to w_1, then
    performs m - 1 recursive updates, producing iterates w_0 .. w_m.  In
    random-iterate mode the returned point is w_t with t drawn uniformly from
    {0, .., m}; otherwise w_m.
    """
    m = config.m
    v0, v0_norm_sq, w1 = _init_inner(problem, w0, config)
    trace = InnerTrace(v_norms_sq=[v0_norm_sq], ifo=problem.n)
    if observer is not None:
        observer(w1, problem.n, v0)

    if config.output_mode == "random-iterate":
        t_star = RngStream(config.seed, outer_index, "select").randbelow(m + 1)
    else:
        t_star = m
    trace.selected_t = t_star

    w_tilde = w0 if t_star == 0 else w1
    state = RecursiveState(w_prev=w0, w_curr=w1, v=v0, t=0, v0_norm_sq=v0_norm_sq)
    for t in range(1, m):
        batch = sample_batch(_batch_stream(config, outer_index, t), problem.n, config.b)
        state = recursive_update(state, batch, problem, config.eta)
        trace.v_norms_sq.append(float(np.dot(state.v, state.v)))
        trace.steps += 1
        trace.ifo += 2 * config.b
        if observer is not None:
            observer(state.w_curr, 2 * config.b, state.v)
        if t + 1 <= t_star:
            w_tilde = state.w_curr
    return w_tilde.copy(), trace


def sarah_plus_in(
    problem: FiniteSumProblem,
    w0: Vector,
    config: OptimizerConfig,
    *,
    outer_index: int = 1,
    observer: Optional[Observer] = None,
) -> tuple[Vector, InnerTrace]:
    """Adaptive inner loop: runs like sarah_in but exits once
    ||v_{t-1}||^2 <= gamma * ||v_0||^2, with m as the maximum loop size.

    The stopping test uses a strict inequality, so gamma = 1 exits right
    after the full-gradient step.  In random-iterate mode the output is drawn
    uniformly from the iterates actually computed (reservoir selection, one
    draw per iterate).
    """
    m = config.m
    gamma = config.gamma_plus
    v0, v0_norm_sq, w1 = _init_inner(problem, w0, config)
    trace = InnerTrace(v_norms_sq=[v0_norm_sq], ifo=problem.n)
    if observer is not None:
        observer(w1, problem.n, v0)

    random_mode = config.output_mode == "random-iterate"
    sel = RngStream(config.seed, outer_index, "select") if random_mode else None
    w_tilde, selected = w0, 0

    def consider(w: Vector, idx: int):
        nonlocal w_tilde, selected
        if random_mode:
            if sel.randbelow(idx + 1) == 0:
                w_tilde, selected = w, idx
        else:
            w_tilde, selected = w, idx

    consider(w1, 1)
    state = RecursiveState(w_prev=w0, w_curr=w1, v=v0, t=0, v0_norm_sq=v0_norm_sq)
    t = 1
    while float(np.dot(state.v, state.v)) > gamma * v0_norm_sq and t < m:
        batch = sample_batch(_batch_stream(config, outer_index, t), problem.n, config.b)
        state = recursive_update(state, batch, problem, config.eta)
        trace.v_norms_sq.append(float(np.dot(state.v, state.v)))
        trace.steps += 1
        trace.ifo += 2 * config.b
        if observer is not None:
            observer(state.w_curr, 2 * config.b, state.v)
        t += 1
        consider(state.w_curr, t)
    trace.selected_t = selected
    return w_tilde.copy(), trace


def svrg_in(
    problem: FiniteSumProblem,
    w0: Vector,
    config: OptimizerConfig,
    *,
    outer_index: int = 1,
    observer: Optional[Observer] = None,
) -> tuple[Vector, InnerTrace]:
    """Anchor-corrected inner loop: the estimator re-centers every batch
    gradient at the loop's starting point instead of the previous iterate."""
    m = config.m
    v0, v0_norm_sq, w1 = _init_inner(problem, w0, config)
    trace = InnerTrace(v_norms_sq=[v0_norm_sq], ifo=problem.n)
    if observer is not None:
        observer(w1, problem.n, v0)

    if config.output_mode == "random-iterate":
        t_star = RngStream(config.seed, outer_index, "select").randbelow(m + 1)
    else:
        t_star = m
    trace.selected_t = t_star

    w_tilde = w0 if t_star == 0 else w1
    w = w1
    for t in range(1, m):
        batch = sample_batch(_batch_stream(config, outer_index, t), problem.n, config.b)
        g_w = mean_gradient(problem, batch, w)
        g_anchor = mean_gradient(problem, batch, w0)
        v = g_w + (v0 - g_anchor)
        w = w - config.eta * v
        v_norm_sq = float(np.dot(v, v))
        _check_finite(w, t, v_norm_sq)
        trace.v_norms_sq.append(v_norm_sq)
        trace.steps += 1
        trace.ifo += 2 * config.b
        if observer is not None:
            observer(w, 2 * config.b, v)
        if t + 1 <= t_star:
            w_tilde = w
    return w_tilde.copy(), trace


_INNER_LOOPS = {"sarah": sarah_in, "sarah+": sarah_plus_in, "svrg": svrg_in}


def sarah(
    problem: FiniteSumProblem,
    w0: Vector,
    config: OptimizerConfig,
    *,
    observer: Optional[Observer] = None,
    on_stage: Optional[Callable[[int, Vector], None]] = None,
    stop_after_ifo: Optional[int] = None,
) -> tuple[Vector, list[InnerTrace]]:
    """Chain config.s inner loops, feeding each output into the next.

    ``config.algo`` selects the inner routine (sarah, sarah+ or svrg).  When
    ``stop_after_ifo`` is given, no new stage starts once the cumulative IFO
    count reaches it.
    """
    inner = _INNER_LOOPS.get(config.algo)
    if inner is None:
        raise ValueError(f"{config.algo!r} is not a two-loop algorithm")
    w = w0
    stages: list[InnerTrace] = []
    total_ifo = 0
    for stage in range(1, config.s + 1):
        if stop_after_ifo is not None and total_ifo >= stop_after_ifo:
            break
        w, trace = inner(problem, w, config, outer_index=stage, observer=observer)
        total_ifo += trace.ifo
        stages.append(trace)
        if on_stage is not None:
            on_stage(stage, w)
    return w, stages


# ---------------------------------------------------------------------------
# Single-loop baselines.  State is passed explicitly; each step derives its
# sampling stream from (seed, step index), so runs replay exactly.

@dataclass
class PointState:
    w: Vector
    step: int = 0


@dataclass
class MomentumState:
    w: Vector
    u: Vector
    step: int = 0


@dataclass
class AdagradState:
    w: Vector
    acc: Vector
    step: int = 0


def _replacement_gradient(problem: FiniteSumProblem, w: Vector, config: OptimizerConfig, step: int, purpose: str) -> Vector:
    """Mean gradient over b indices drawn uniformly with replacement."""
    rng = RngStream(config.seed, 0, step, purpose)
    idx = np.array([rng.randbelow(problem.n) for _ in range(config.b)], dtype=np.int64)
    if problem.batch_mean_gradient is not None:
        return problem.batch_mean_gradient(idx, w)
    acc = np.zeros(problem.d)
    for i in idx:
        acc += problem.component_gradient(int(i), w)
    return acc / len(idx)


def sgd_step(problem: FiniteSumProblem, state: PointState, config: OptimizerConfig) -> PointState:
    g = _replacement_gradient(problem, state.w, config, state.step, "sgd")
    w = state.w - config.eta * g
    _check_finite(w, state.step, float(np.dot(g, g)))
    return PointState(w=w, step=state.step + 1)


def sgdm_step(problem: FiniteSumProblem, state: MomentumState, config: OptimizerConfig) -> MomentumState:
    """Momentum step: u <- beta * u + g, then w <- w - eta * u."""
    g = _replacement_gradient(problem, state.w, config, state.step, "sgd")
    u = config.beta_momentum * state.u + g
    w = state.w - config.eta * u
    _check_finite(w, state.step, float(np.dot(u, u)))
    return MomentumState(w=w, u=u, step=state.step + 1)


def adagrad_step(problem: FiniteSumProblem, state: AdagradState, config: OptimizerConfig) -> AdagradState:
    """Coordinatewise adaptive step: the accumulator starts at delta, grows by
    g^2 each step, and scales the update by 1/sqrt(accumulator)."""
    g = _replacement_gradient(problem, state.w, config, state.step, "sgd")
    acc = state.acc + g * g
    w = state.w - config.eta * g / np.sqrt(acc)
    _check_finite(w, state.step, float(np.dot(g, g)))
    return AdagradState(w=w, acc=acc, step=state.step + 1)


def gd_step(problem: FiniteSumProblem, state: PointState, config: OptimizerConfig) -> PointState:
    g = full_gradient(problem, state.w)
    w = state.w - config.eta * g
    _check_finite(w, state.step, float(np.dot(g, g)))
    return PointState(w=w, step=state.step + 1)


def init_state(problem: FiniteSumProblem, w0: Vector, config: OptimizerConfig):
    """Fresh single-loop state for config.algo."""
    if config.algo == "sgd-m":
        return MomentumState(w=w0.copy(), u=np.zeros(problem.d))
    if config.algo == "adagrad":
        return AdagradState(w=w0.copy(), acc=np.full(problem.d, config.delta_adagrad))
    if config.algo in ("sgd", "gd"):
        return PointState(w=w0.copy())
    raise ValueError(f"{config.algo!r} is not a single-loop algorithm")


SINGLE_LOOP_STEPS = {"sgd": sgd_step, "sgd-m": sgdm_step, "adagrad": adagrad_step, "gd": gd_step}


def rate_report(problem: FiniteSumProblem, config: OptimizerConfig) -> RateReport:
    """Advisory linear-rate report: the contraction factor
    gamma_bar = 2 tau / (eta (m + 1)) and whether it is strictly below 1.

    eta_max is the step-size bound for the problem's known L, or NaN when L
    is unknown.  The report never gates a run.
    """
    if problem.known_tau is None:
        raise ValueError(f"problem {problem.name!r} has no known gradient-domination constant")
    gamma_bar = 2.0 * problem.known_tau / (config.eta * (config.m + 1))
    eta_max = (
        step_size_bound(config.m, config.b, problem.n, problem.known_L)
        if problem.known_L is not None
        else float("nan")
    )
    return RateReport(eta_max=eta_max, gamma_bar=gamma_bar, tau_condition_met=gamma_bar < 1.0)
