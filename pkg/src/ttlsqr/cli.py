"""Command-line entry point: ``ttlsqr {solve,bench-pde,classify}``.

Every command writes a ``manifest.json`` holding the resolved configuration,
library versions and seeds next to its CSV/JSON outputs.  Exit status is 0 on
success, 2 for usage errors, 3 for missing input files and 1 otherwise.
"""
from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from .fileio import load_matrix_market, load_operator_manifest, read_tt_json, write_trace_csv, write_tt_json

__all__ = ["main", "run_command", "write_trace_csv"]

log = logging.getLogger("ttlsqr")

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_MISSING = 0, 1, 2, 3

CLASSIFY_DEFAULTS = {
    "dataset": "synthetic",
    "labels": None,
    "d": 3,
    "m_bar": 36,
    "ell": 6,
    "test_count": 20,
    "criteria": ["C1", "C2", "C3", "C4"],
    "seed": 0,
    "solver": {"round_tol": 1e-4, "max_iters": 10, "ne_resid_tol": 1e-300, "max_rank": None},
    "sketch": None,
    "synthetic": {"n": 600, "leakage": 0.0, "noise": 0.0, "topics": 5, "background": 0.3},
    "c4_rank": 10,
    "c2_orthonormalize": True,
}


class UsageError(Exception):
    pass


def _versions() -> dict:
    from . import __version__

    return {
        "ttlsqr": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def _write_manifest(out: Path, doc: dict) -> None:
    doc = dict(doc, versions=_versions())
    tmp = out / "manifest.json.tmp"
    tmp.write_text(json.dumps(doc, indent=2, default=str), encoding="utf-8")
    tmp.replace(out / "manifest.json")


def _float_list(text: str) -> list:
    try:
        return [float(t) for t in text.split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _rank_list(text: str) -> list:
    out = []
    for t in text.split(","):
        if t.lower() in ("none", "inf", ""):
            out.append(None)
        else:
            try:
                out.append(int(t))
            except ValueError:
                raise argparse.ArgumentTypeError(f"bad rank {t!r}") from None
    return out


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("solver")
    g.add_argument("--round-tol", type=float)
    g.add_argument("--max-rank", type=int)
    g.add_argument("--max-iters", type=int)
    g.add_argument("--ne-tol", type=float, dest="ne_resid_tol")


def _add_sketch_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("sketching")
    g.add_argument("--sketch", action="store_true", default=None, help="solve the sketched problem")
    g.add_argument("--sketch-size", type=int)
    g.add_argument("--sketch-seed", type=int)
    g.add_argument("--two-pass", action="store_true", default=None)
    g.add_argument("--sketch-iters", type=int)
    g.add_argument("--refine-iters", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ttlsqr", description="Truncated TT-LSQR toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="{solve,bench-pde,classify}")

    p = sub.add_parser("solve", help="solve one Kronecker-sum least squares problem")
    p.add_argument("--operator", required=True, help="operator manifest JSON")
    p.add_argument("--rhs", required=True, help="right-hand side as TT JSON")
    p.add_argument("--x0", help="initial guess as TT JSON")
    p.add_argument("--precondition", action="store_true")
    p.add_argument("--true-residual-every", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_solver_flags(p)
    _add_sketch_flags(p)

    p = sub.add_parser("bench-pde", help="truncation study on the 3-D finite-difference problems")
    p.add_argument("--problem", type=int, choices=(1, 2), default=1)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--tols", type=_float_list, default=[1e-4, 1e-6, 1e-8])
    p.add_argument("--ranks", type=_rank_list, default=[50])
    p.add_argument("--max-iters", type=int, default=3000)
    p.add_argument("--true-residual-every", type=int, default=10)
    p.add_argument("--stall-window", type=int, default=0,
                   help="stop a run once the explicit residual has not improved for this many iterations")
    p.add_argument("--no-precondition", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("classify", help="allocate held-out queries to groups")
    p.add_argument("--config", help="JSON run configuration; flags override it")
    p.add_argument("--dataset", help="Matrix Market term-document file, or 'synthetic'")
    p.add_argument("--labels", help="text file with one cluster label per column (default: k-means)")
    p.add_argument("--d", type=int)
    p.add_argument("--m-bar", type=int)
    p.add_argument("--ell", type=int)
    p.add_argument("--test-count", type=int)
    p.add_argument("--criteria")
    p.add_argument("--seed", type=int)
    p.add_argument("--synthetic-n", type=int)
    p.add_argument("--leakage", type=float)
    p.add_argument("--noise", type=float)
    p.add_argument("--out", required=True)
    _add_solver_flags(p)
    _add_sketch_flags(p)
    return parser


def _solver_options(cfg: dict):
    from .solver import SolveOptions

    return SolveOptions(**{k: v for k, v in cfg.items() if v is not None})


def _sketch_overrides(args) -> dict:
    keys = {"sketch_size": "size", "sketch_seed": "seed", "two_pass": "two_pass",
            "sketch_iters": "sketch_iters", "refine_iters": "refine_iters"}
    return {dst: getattr(args, src) for src, dst in keys.items() if getattr(args, src) is not None}


def _require(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(str(p))
    return p


def _cmd_solve(args) -> dict:
    from .solver import SolveStatus, tt_lsqr
    from .sketch import two_pass_solve

    op = load_operator_manifest(_require(args.operator))
    f = read_tt_json(_require(args.rhs))
    x0 = read_tt_json(_require(args.x0)) if args.x0 else None
    solver_cfg = {"round_tol": args.round_tol, "max_rank": args.max_rank, "max_iters": args.max_iters,
                  "ne_resid_tol": args.ne_resid_tol, "use_preconditioner": args.precondition,
                  "true_residual_every": args.true_residual_every}
    opts = _solver_options(solver_cfg)
    sketch = _sketch_overrides(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.sketch or sketch:
        seed = sketch.get("seed", 0)
        x, traces = two_pass_solve(
            op, f, opts,
            sketch_iters=sketch.get("sketch_iters", 30),
            refine_iters=sketch.get("refine_iters", 2) if sketch.get("two_pass") else 0,
            seed=seed, sketch_size=sketch.get("size"),
        )
        write_trace_csv(traces[0], out / "trace_sketch.csv")
        write_trace_csv(traces[1], out / "trace_refine.csv")
        outputs, status = ["trace_sketch.csv", "trace_refine.csv"], None
    else:
        seed = None
        x, trace, status = tt_lsqr(op, f, opts, x0=x0)
        if status is SolveStatus.BREAKDOWN:
            log.warning("solver broke down after %d iterations; returning the current iterate", len(trace))
        write_trace_csv(trace, out / "trace.csv")
        outputs = ["trace.csv"]
    write_tt_json(x, out / "solution.json")
    return {
        "config": {"operator": str(args.operator), "rhs": str(args.rhs), "x0": args.x0,
                   "solver": solver_cfg, "sketch": sketch or None},
        "seeds": {"sketch": seed},
        "status": status.value if status is not None else "sketched",
        "outputs": outputs + ["solution.json"],
    }


def _cmd_bench(args) -> dict:
    from .pde import build_convection_problem, build_variable_coefficient_problem, run_convergence_study

    build = build_convection_problem if args.problem == 1 else build_variable_coefficient_problem
    problem = build(args.n)
    run_convergence_study(
        problem, args.tols, args.ranks, args.max_iters, out_dir=args.out,
        precondition=not args.no_precondition, true_residual_every=args.true_residual_every,
        stall_window=args.stall_window,
    )
    study = json.loads((Path(args.out) / "manifest.json").read_text(encoding="utf-8"))
    study["config"] = {k: v for k, v in vars(args).items() if k not in ("verbose",)}
    study["seeds"] = {}
    return study


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def resolve_classify_config(args) -> dict:
    cfg = dict(CLASSIFY_DEFAULTS)
    if args.config:
        doc = json.loads(_require(args.config).read_text(encoding="utf-8"))
        unknown = set(doc) - set(CLASSIFY_DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg = _merge(cfg, doc)
    flags = {k: getattr(args, k) for k in ("dataset", "labels", "d", "m_bar", "ell", "test_count", "seed")}
    cfg = _merge(cfg, {k: v for k, v in flags.items() if v is not None})
    if args.criteria:
        cfg["criteria"] = [c.strip().upper() for c in args.criteria.split(",") if c.strip()]
    solver = {k: getattr(args, k) for k in ("round_tol", "max_rank", "max_iters", "ne_resid_tol")}
    cfg["solver"] = _merge(cfg["solver"], {k: v for k, v in solver.items() if v is not None})
    synth = {"n": args.synthetic_n, "leakage": args.leakage, "noise": args.noise}
    cfg["synthetic"] = _merge(cfg["synthetic"], {k: v for k, v in synth.items() if v is not None})
    sketch = _sketch_overrides(args)
    if args.sketch or sketch:
        cfg["sketch"] = _merge(cfg["sketch"] or {}, sketch)
    return cfg


def _cmd_classify(args) -> dict:
    from .classify import build_corpus, evaluate_harness, kmeans_cluster, synthetic_corpus
    from .sketch import SketchOptions

    cfg = resolve_classify_config(args)
    if cfg["dataset"] == "synthetic":
        s = cfg["synthetic"]
        corpus = synthetic_corpus(
            s["n"], cfg["d"], cfg["m_bar"], cfg["ell"], cfg["test_count"],
            s["leakage"], s["noise"], cfg["seed"], s["topics"], s["background"],
        )
    else:
        x = load_matrix_market(_require(cfg["dataset"]))
        if cfg["labels"]:
            labels = np.loadtxt(_require(cfg["labels"]), dtype=np.int64, ndmin=1)
        else:
            labels = kmeans_cluster(x, cfg["d"], cfg["seed"])
        corpus = build_corpus(x, labels, cfg["m_bar"], cfg["ell"], cfg["test_count"], cfg["d"])
    sketch = SketchOptions(**cfg["sketch"]) if cfg["sketch"] else None
    report = evaluate_harness(
        corpus, cfg["criteria"], _solver_options(cfg["solver"]), sketch,
        c4_rank=cfg["c4_rank"], c2_orthonormalize=cfg["c2_orthonormalize"],
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "report.csv")
    report.write_decisions_csv(out / "decisions.csv")
    for c in report.criteria:
        log.info("%s: %.1f%% overall", c, report.percent(None, c))
    seeds = {"corpus": cfg["seed"], "sketch": sketch.seed if sketch else None}
    return {"config": cfg, "seeds": seeds, "outputs": ["report.csv", "decisions.csv"]}


COMMANDS = {"solve": _cmd_solve, "bench-pde": _cmd_bench, "classify": _cmd_classify}


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        doc = COMMANDS[args.command](args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_manifest(out, dict(doc, command=args.command))
    except UsageError as exc:
        print(f"ttlsqr: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"ttlsqr: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_MISSING
    except Exception as exc:  # categorized above; everything else is a run failure
        print(f"ttlsqr: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


def main() -> None:
    sys.exit(run_command())
