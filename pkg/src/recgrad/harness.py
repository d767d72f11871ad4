"""Experiment runner: config parsing, run orchestration, metric traces, CSV.

Config files are flat ``key = value`` text with one ``[experiment]`` section
(problem, dataset and protocol settings) and any number of ``[run NAME]``
sections, one per algorithm cell.  A cell runs once per seed listed in its
``seed`` key.  Unknown keys are rejected by name.

Every run produces a trace of records at effective-pass checkpoints
(ifo / n crossing the checkpoint grid), written as one CSV per cell plus a
merged CSV, with the fixed column order

    algo,seed,checkpoint,ifo,effective_passes,train_loss,grad_norm_sq,test_error,diverged

Wall-clock time is kept in memory only and excluded from determinism
guarantees; identical config + seed yields byte-identical CSV files.
"""

from __future__ import annotations

import hashlib
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import mlp as mlp_mod
from .data import load_idx, make_class_images, subset
from .optim import (
    SINGLE_LOOP_STEPS,
    DivergenceError,
    OptimizerConfig,
    init_state,
    sarah,
)
from .problems import FiniteSumProblem, full_gradient, make_logistic, make_quadratic, make_sigmoid_nonconvex
from .sampling import RngStream

CSV_COLUMNS = "algo,seed,checkpoint,ifo,effective_passes,train_loss,grad_norm_sq,test_error,diverged"

DATA_DIR_ENV = "RECGRAD_DATA"

TWO_LOOP = ("sarah", "sarah+", "svrg")


class ConfigError(ValueError):
    """Raised for malformed experiment configs."""


# ---------------------------------------------------------------------------
# Config parsing


def parse_config(path) -> dict[str, dict[str, str]]:
    """Parse sectioned key = value text into {section: {key: value}}."""
    sections: dict[str, dict[str, str]] = {}
    current: Optional[dict[str, str]] = None
    current_name = ""
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current_name = line[1:-1].strip()
            if not current_name:
                raise ConfigError(f"{path}:{lineno}: empty section name")
            if current_name in sections:
                raise ConfigError(f"{path}:{lineno}: duplicate section [{current_name}]")
            current = sections.setdefault(current_name, {})
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        if current is None:
            raise ConfigError(f"{path}:{lineno}: key outside any section")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        if key in current:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r} in [{current_name}]")
        current[key] = value
    if "experiment" not in sections:
        raise ConfigError(f"{path}: missing [experiment] section")
    return sections


_EXPERIMENT_KEYS = {
    "problem", "passes", "checkpoint_passes", "epsilon", "grid_budget",
    # quadratic
    "d", "n", "a_min", "a_max", "perturb", "problem_seed", "w0",
    # logistic / sigmoid
    "lam",
    # mlp
    "source", "images", "labels", "test_images", "test_labels",
    "subset", "subset_seed", "hidden", "classes", "rows", "cols",
    "activation", "init_seed", "test_n",
}

_RUN_KEYS = {"algo", "eta", "m", "b", "s", "gamma", "beta", "delta", "seed", "output_mode"}


def _check_keys(section: str, kv: dict[str, str], allowed: set) -> None:
    for key in kv:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")


def _get(kv: dict[str, str], key: str, default=None, cast=str):
    if key not in kv:
        if default is None and cast is not str:
            raise ConfigError(f"missing required key {key!r}")
        return default
    try:
        return cast(kv[key])
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: cannot parse {kv[key]!r}") from exc


def _parse_m(text: str, n: int) -> int:
    """Inner loop sizes may be absolute ('500') or fractions of n ('0.1n')."""
    text = text.strip()
    if text.endswith("n"):
        return max(1, int(round(float(text[:-1]) * n)))
    return int(text)


# ---------------------------------------------------------------------------
# Problem construction


@dataclass
class Workload:
    problem: FiniteSumProblem
    w0: np.ndarray
    test_eval: Optional[object] = None  # callable w -> test error, when a test set exists


def _initial_point(kv: dict[str, str], d: int) -> np.ndarray:
    mode = _get(kv, "w0", "ones")
    if mode == "zeros":
        return np.zeros(d)
    if mode == "ones":
        return np.ones(d)
    if mode == "normal":
        return RngStream(_get(kv, "problem_seed", 0, int), "w0").normal_array(d)
    raise ConfigError(f"key 'w0': expected zeros|ones|normal, got {mode!r}")


def build_workload(exp: dict[str, str], data_dir: Optional[str] = None) -> Workload:
    """Materialize the problem (and optional test metric) named by [experiment]."""
    _check_keys("experiment", exp, _EXPERIMENT_KEYS)
    kind = _get(exp, "problem")
    if kind is None:
        raise ConfigError("missing required key 'problem'")

    if kind == "quadratic":
        d = _get(exp, "d", 10, int)
        n = _get(exp, "n", 50, int)
        a = np.linspace(_get(exp, "a_min", 1.0, float), _get(exp, "a_max", 2.0, float), d)
        problem = make_quadratic(
            a, np.zeros(d), n,
            perturb_scale=_get(exp, "perturb", 1.0, float),
            seed=_get(exp, "problem_seed", 0, int),
        )
        return Workload(problem=problem, w0=_initial_point(exp, d))

    if kind in ("logistic", "sigmoid"):
        n = _get(exp, "n", 100, int)
        d = _get(exp, "d", 5, int)
        seed = _get(exp, "problem_seed", 0, int)
        X = RngStream(seed, "design").normal_array(n * d).reshape(n, d)
        y = np.where(RngStream(seed, "signs").double_array(n) < 0.5, -1.0, 1.0)
        if kind == "logistic":
            problem = make_logistic(X, y, lam=_get(exp, "lam", 0.0, float))
        else:
            problem = make_sigmoid_nonconvex(X, y)
        return Workload(problem=problem, w0=_initial_point(exp, d))

    if kind == "mlp":
        return _build_mlp_workload(exp, data_dir)

    raise ConfigError(f"unknown problem {kind!r}")


def _resolve_path(name: str, data_dir: Optional[str]) -> Path:
    p = Path(name)
    if p.is_absolute():
        return p
    base = Path(data_dir) if data_dir else Path(os.environ.get(DATA_DIR_ENV, "data"))
    return base / p


def _build_mlp_workload(exp: dict[str, str], data_dir: Optional[str]) -> Workload:
    source = _get(exp, "source", "idx")
    if source == "idx":
        train = load_idx(
            _resolve_path(_get(exp, "images", "train-images-idx3-ubyte"), data_dir),
            _resolve_path(_get(exp, "labels", "train-labels-idx1-ubyte"), data_dir),
            name="train",
        )
        test = None
        if "test_images" in exp:
            test = load_idx(
                _resolve_path(exp["test_images"], data_dir),
                _resolve_path(_get(exp, "test_labels", "t10k-labels-idx1-ubyte"), data_dir),
                name="test",
            )
    elif source == "synthetic":
        seed = _get(exp, "problem_seed", 0, int)
        rows = _get(exp, "rows", 28, int)
        cols = _get(exp, "cols", 28, int)
        classes = _get(exp, "classes", 10, int)
        train = make_class_images(_get(exp, "n", 5000, int), rows, cols, classes, seed)
        test_n = _get(exp, "test_n", 0, int)
        test = make_class_images(test_n, rows, cols, classes, seed + 1) if test_n else None
    else:
        raise ConfigError(f"key 'source': expected idx|synthetic, got {source!r}")

    k = _get(exp, "subset", 0, int)
    if k:
        train = subset(train, k, _get(exp, "subset_seed", 0, int))

    spec = mlp_mod.MlpSpec(
        d_in=train.d,
        n_hidden=_get(exp, "hidden", 300, int),
        n_out=_get(exp, "classes", int(train.labels.max()) + 1, int),
        lam=_get(exp, "lam", 0.0, float),
        activation=_get(exp, "activation", "sigmoid"),
    )
    problem = mlp_mod.make_mlp_problem(spec, train)
    w0 = mlp_mod.init_normalized(spec, _get(exp, "init_seed", 0, int))
    test_eval = (lambda w: mlp_mod.test_error(spec, w, test)) if test is not None else None
    return Workload(problem=problem, w0=w0, test_eval=test_eval)


# ---------------------------------------------------------------------------
# Traces and checkpointing


@dataclass
class TraceRecord:
    checkpoint: int
    ifo: int
    effective_passes: float
    train_loss: float
    grad_norm_sq: float
    test_error: Optional[float]
    wall_ms: int


@dataclass
class RunTrace:
    algo: str
    config_hash: str
    seed: int
    diverged: bool = False
    records: list = field(default_factory=list)
    outer_count: int = 0
    total_steps: int = 0

    @property
    def final(self) -> TraceRecord:
        return self.records[-1]


def metric_loss(problem: FiniteSumProblem, w: np.ndarray) -> float:
    if problem.batch_mean_loss is not None:
        return problem.batch_mean_loss(np.arange(problem.n), w)
    return problem.loss(w)


def metric_gradient(problem: FiniteSumProblem, w: np.ndarray) -> np.ndarray:
    if problem.batch_mean_gradient is not None:
        return problem.batch_mean_gradient(np.arange(problem.n), w)
    return full_gradient(problem, w)


class Checkpointer:
    """Records metrics whenever the cumulative IFO count crosses the
    effective-pass grid, so every algorithm in a comparison checkpoints on
    the same grid regardless of its loop structure."""

    def __init__(self, workload: Workload, grid_passes: float, t0: float):
        self.workload = workload
        self.n = workload.problem.n
        self.grid = grid_passes
        self.t0 = t0
        self.ifo = 0
        self.next_k = 0
        self.records: list[TraceRecord] = []
        self.last_w = workload.w0

    def _threshold(self) -> int:
        return int(math.ceil(self.next_k * self.grid * self.n))

    def _emit(self, w: np.ndarray) -> None:
        problem = self.workload.problem
        g = metric_gradient(problem, w)
        self.records.append(
            TraceRecord(
                checkpoint=len(self.records),
                ifo=self.ifo,
                effective_passes=self.ifo / self.n,
                train_loss=metric_loss(problem, w),
                grad_norm_sq=float(np.dot(g, g)),
                test_error=self.workload.test_eval(w) if self.workload.test_eval else None,
                wall_ms=int((time.perf_counter() - self.t0) * 1000.0),
            )
        )

    def record(self, w: np.ndarray) -> None:
        self._emit(w)
        self.next_k += 1

    def bump(self, w: np.ndarray, ifo_delta: int, _v=None) -> None:
        """Advance the IFO count; record once when the grid is crossed.

        A single step may jump several grid points (a full-gradient
        evaluation on a fine grid); only one record is written so that ifo
        stays strictly increasing across records.
        """
        self.ifo += ifo_delta
        self.last_w = w
        if self.ifo >= self._threshold():
            self.record(w)
            while self.ifo >= self._threshold():
                self.next_k += 1

    def mark(self, w: np.ndarray) -> None:
        """Record off-grid (outer-iteration boundaries) if ifo has advanced."""
        if not self.records or self.ifo > self.records[-1].ifo:
            self._emit(w)


# ---------------------------------------------------------------------------
# Cell execution


def _config_hash(exp: dict[str, str], run_kv: dict[str, str]) -> str:
    payload = "\n".join(
        f"{k}={v}" for k, v in sorted(exp.items()) + sorted((k, v) for k, v in run_kv.items() if k != "seed")
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


def make_optimizer_config(run_kv: dict[str, str], n: int, seed: int, s_for_budget: Optional[int] = None) -> OptimizerConfig:
    algo = _get(run_kv, "algo")
    if algo is None:
        raise ConfigError("run section missing required key 'algo'")
    kwargs = dict(
        algo=algo,
        eta=_get(run_kv, "eta", None, float),
        b=_get(run_kv, "b", 1, int),
        gamma_plus=_get(run_kv, "gamma", 0.7, float),
        beta_momentum=_get(run_kv, "beta", 0.0, float),
        delta_adagrad=_get(run_kv, "delta", 0.01, float),
        seed=seed,
        output_mode=_get(run_kv, "output_mode", "last-iterate"),
    )
    if "m" in run_kv:
        kwargs["m"] = _parse_m(run_kv["m"], n)
    if "s" in run_kv:
        kwargs["s"] = _get(run_kv, "s", 1, int)
    elif s_for_budget is not None:
        kwargs["s"] = s_for_budget
    try:
        return OptimizerConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def run_cell(workload: Workload, exp: dict[str, str], run_kv: dict[str, str], seed: int) -> RunTrace:
    """Execute one (algorithm, seed) cell and return its trace.

    Two-loop methods run whole outer iterations until the pass target is
    reached (or exactly s of them when 's' is set); single-loop methods step
    until the target.  Divergence flags the trace and stops the cell.
    """
    _check_keys("run", run_kv, _RUN_KEYS)
    problem = workload.problem
    n = problem.n
    passes = _get(exp, "passes", 10.0, float)
    target_ifo = int(round(passes * n))

    algo = _get(run_kv, "algo")
    explicit_s = "s" in run_kv
    if explicit_s and algo not in TWO_LOOP:
        raise ConfigError("key 's' applies to two-loop algorithms; single-loop runs use the pass target")
    # ceiling on stages when only a pass budget is given; sarah+ may exit
    # inner loops early, so the budget check inside the chain is what stops it
    budget_s = max(1, int(math.ceil(target_ifo / n)))
    config = make_optimizer_config(run_kv, n, seed, s_for_budget=None if explicit_s else budget_s)

    trace = RunTrace(algo=config.algo, config_hash=_config_hash(exp, run_kv), seed=seed)
    cp = Checkpointer(workload, _get(exp, "checkpoint_passes", 1.0, float), time.perf_counter())
    cp.record(workload.w0)

    try:
        if config.algo in TWO_LOOP:
            _, stages = sarah(
                problem,
                workload.w0,
                config,
                observer=cp.bump,
                on_stage=lambda _stage, w: cp.mark(w),
                stop_after_ifo=None if explicit_s else target_ifo,
            )
            trace.outer_count = len(stages)
            trace.total_steps = sum(st.steps for st in stages)
        else:
            step_fn = SINGLE_LOOP_STEPS[config.algo]
            state = init_state(problem, workload.w0, config)
            cost = n if config.algo == "gd" else config.b
            while cp.ifo < target_ifo:
                state = step_fn(problem, state, config)
                cp.bump(state.w, cost)
            trace.total_steps = state.step
        if cp.ifo > cp.records[-1].ifo:
            cp.record(cp.last_w)
    except DivergenceError:
        trace.diverged = True
    trace.records = cp.records
    return trace


def epsilon_checkpoint(trace: RunTrace, epsilon: float) -> Optional[TraceRecord]:
    """First checkpoint whose squared gradient norm is at most epsilon."""
    for rec in trace.records:
        if rec.grad_norm_sq <= epsilon:
            return rec
    return None


# ---------------------------------------------------------------------------
# CSV emission


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def trace_rows(trace: RunTrace) -> list[str]:
    rows = []
    for rec in trace.records:
        rows.append(
            ",".join(
                _fmt(v)
                for v in (
                    trace.algo,
                    trace.seed,
                    rec.checkpoint,
                    rec.ifo,
                    rec.effective_passes,
                    rec.train_loss,
                    rec.grad_norm_sq,
                    rec.test_error,
                    trace.diverged,
                )
            )
        )
    return rows


def write_trace_csv(trace: RunTrace, path) -> None:
    _atomic_write(path, "\n".join([CSV_COLUMNS] + trace_rows(trace)) + "\n")


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Experiment and grid drivers


def _cell_list(sections: dict[str, dict[str, str]]) -> list[tuple[str, dict[str, str], int]]:
    cells = []
    for name, kv in sections.items():
        if not name.startswith("run"):
            continue
        seeds = [int(tok) for tok in kv.get("seed", "0").split()]
        for seed in seeds:
            cells.append((name, kv, seed))
    if not cells:
        raise ConfigError("config defines no [run ...] sections")
    return cells


def _cell_name(section: str, seed: int) -> str:
    slug = section.replace("run", "", 1).strip().replace(" ", "-") or "run"
    return f"{slug}_seed{seed}"


def _run_cell_job(config_path: str, data_dir: Optional[str], section: str, seed: int, out_dir: Optional[str]) -> RunTrace:
    sections = parse_config(config_path)
    workload = build_workload(sections["experiment"], data_dir)
    run_kv = sections[section]
    trace = run_cell(workload, sections["experiment"], run_kv, seed)
    if out_dir is not None:
        write_trace_csv(trace, Path(out_dir) / f"{_cell_name(section, seed)}.csv")
    return trace


def run_experiment(
    config_path,
    out_dir=None,
    workers: int = 1,
    data_dir: Optional[str] = None,
) -> list[RunTrace]:
    """Run every (run section, seed) cell; emit per-cell CSVs plus merged.csv.

    Cells are independent and may execute in parallel; outputs are written
    atomically and merged in deterministic (section, seed) order.
    """
    sections = parse_config(config_path)
    cells = _cell_list(sections)
    args = [(str(config_path), data_dir, section, seed, str(out_dir) if out_dir else None) for section, kv, seed in cells]

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(_run_cell_job, *zip(*args)))
    else:
        traces = [_run_cell_job(*a) for a in args]

    if out_dir is not None:
        merged = [CSV_COLUMNS]
        for trace in traces:
            merged.extend(trace_rows(trace))
        _atomic_write(Path(out_dir) / "merged.csv", "\n".join(merged) + "\n")
    return traces


@dataclass(frozen=True)
class GridCandidate:
    section: str
    params: tuple
    mean_final_loss: float
    diverged_runs: int


@dataclass(frozen=True)
class GridReport:
    best: GridCandidate
    candidates: list


_GRID_KEYS = ("eta", "m", "b", "s", "gamma", "beta", "delta", "output_mode")


def grid_search(config_path, data_dir: Optional[str] = None) -> GridReport:
    """Cross-product scan over list-valued run keys; pick the candidate with
    the lowest final training loss averaged over seeds (diverged runs rank
    last; ties break by lexicographic parameter order)."""
    sections = parse_config(config_path)
    exp = sections["experiment"]
    budget = _get(exp, "grid_budget", 64, int)
    workload = build_workload(exp, data_dir)

    candidates: list[GridCandidate] = []
    total = 0
    for name, kv in sections.items():
        if not name.startswith("run"):
            continue
        _check_keys("run", kv, _RUN_KEYS)
        lists = {k: kv[k].split() for k in _GRID_KEYS if k in kv}
        combos = [{}]
        for key, values in lists.items():
            combos = [dict(c, **{key: v}) for c in combos for v in values]
        total += len(combos)
        if total > budget:
            raise ConfigError(f"grid size exceeds budget {budget} (at least {total} cells)")
        seeds = [int(tok) for tok in kv.get("seed", "0").split()]
        for combo in combos:
            run_kv = dict(kv)
            run_kv.update(combo)
            finals, diverged = [], 0
            for seed in seeds:
                trace = run_cell(workload, exp, run_kv, seed)
                if trace.diverged:
                    diverged += 1
                    finals.append(float("inf"))
                else:
                    finals.append(trace.final.train_loss)
            params = tuple(sorted(combo.items()))
            candidates.append(
                GridCandidate(
                    section=name,
                    params=params,
                    mean_final_loss=float(np.mean(finals)),
                    diverged_runs=diverged,
                )
            )
    if not candidates:
        raise ConfigError("config defines no [run ...] sections")
    best = min(candidates, key=lambda c: (c.mean_final_loss, c.section, c.params))
    return GridReport(best=best, candidates=candidates)
