"""Command-line entry points: run experiments, grid scans, verification suites.

    recgrad run    --config exp.cfg [--out results/] [--workers 4]
    recgrad grid   --config grid.cfg
    recgrad verify --suite lemma2 [--all]

The data directory for relative dataset paths defaults to ./data and can be
overridden with --data or the RECGRAD_DATA environment variable.
"""

from __future__ import annotations

import argparse
import sys

from .harness import epsilon_checkpoint, grid_search, parse_config, run_experiment
from .verify import SUITES, run_suite


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="experiment config file")
    parser.add_argument("--data", default=None, help="data directory for relative dataset paths")


def _cmd_run(args) -> int:
    traces = run_experiment(args.config, out_dir=args.out, workers=args.workers, data_dir=args.data)
    sections = parse_config(args.config)
    epsilon = sections["experiment"].get("epsilon")
    for trace in traces:
        final = trace.records[-1]
        line = (
            f"{trace.algo} seed={trace.seed} cfg={trace.config_hash}"
            f" passes={final.effective_passes:g} loss={final.train_loss:.6g}"
            f" grad_sq={final.grad_norm_sq:.3e} diverged={str(trace.diverged).lower()}"
        )
        if epsilon is not None:
            hit = epsilon_checkpoint(trace, float(epsilon))
            line += f" eps_checkpoint={hit.checkpoint if hit else 'none'}"
        print(line)
    if args.out:
        print(f"wrote {len(traces)} cell CSVs and merged.csv to {args.out}")
    return 0


def _cmd_grid(args) -> int:
    report = grid_search(args.config, data_dir=args.data)
    for cand in report.candidates:
        params = " ".join(f"{k}={v}" for k, v in cand.params) or "(fixed)"
        print(f"{cand.section}: {params} -> mean_final_loss={cand.mean_final_loss:.6g}"
              f" diverged={cand.diverged_runs}")
    best_params = " ".join(f"{k}={v}" for k, v in report.best.params) or "(fixed)"
    print(f"best: {report.best.section} {best_params} loss={report.best.mean_final_loss:.6g}")
    return 0


def _cmd_verify(args) -> int:
    names = sorted(SUITES) if args.all else [args.suite]
    if not args.all and args.suite is None:
        print("verify: provide --suite NAME or --all", file=sys.stderr)
        return 2
    failed = 0
    for name in names:
        for result in run_suite(name):
            print(result.to_json())
            failed += 0 if result.passed else 1
    print(f'{{"failed": {failed}}}')
    return 0 if failed == 0 else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="recgrad", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run every cell of an experiment config")
    _add_common(p_run)
    p_run.add_argument("--out", default=None, help="output directory for CSV traces")
    p_run.add_argument("--workers", type=int, default=1, help="concurrent cell workers")
    p_run.set_defaults(func=_cmd_run)

    p_grid = sub.add_parser("grid", help="cross-product parameter scan")
    _add_common(p_grid)
    p_grid.set_defaults(func=_cmd_grid)

    p_verify = sub.add_parser("verify", help="numerical identity/bound suites")
    p_verify.add_argument("--suite", choices=sorted(SUITES), default=None)
    p_verify.add_argument("--all", action="store_true", help="run every suite")
    p_verify.set_defaults(func=_cmd_verify)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
