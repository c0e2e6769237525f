"""``netcca`` command line: fit, cross-validate and simulate.

Exit codes: 0 success, 1 usage or validation error, 2 degenerate result
(trivial solution, every CV point trivial), 3 fewer than 80% of the
simulation replicates completed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import warnings
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .exceptions import AllDegenerate, NetccaError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DEGENERATE = 2
EXIT_PARTIAL = 3
MIN_COMPLETED = 0.8

log = logging.getLogger("netcca")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _tau_list(text):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number list: {text!r}") from None
    if not vals or any(v < 0 for v in vals):
        raise argparse.ArgumentTypeError("taus must be nonnegative numbers")
    return vals


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def _model_options(p):
    p.add_argument("--penalty", choices=("grouped", "fused"), default="fused")
    p.add_argument("--constraint", choices=("A", "B"), default="B")
    p.add_argument("--eta", type=float, default=0.5, help="l1 weight on unconnected features, in [0, 1)")
    p.add_argument("--gamma", type=float, default=2.0, help="grouped penalty exponent, > 1")
    p.add_argument("--components", type=_positive_int, default=1)
    p.add_argument("--update", choices=("jacobi", "gauss-seidel"), default="jacobi")


def _data_options(p):
    p.add_argument("--x", required=True, help="CSV of X (samples by features)")
    p.add_argument("--y", required=True, help="CSV of Y (samples by features)")
    p.add_argument("--graph-x", help="edge list over the columns of X")
    p.add_argument("--graph-y", help="edge list over the columns of Y")
    p.add_argument("--log10", action="store_true", help="log10-transform both inputs before standardizing")


def _cv_options(p, grid_size=8, grid_low=0.01):
    p.add_argument("--folds", type=_positive_int, default=5)
    p.add_argument("--tau-grid-size", type=_positive_int, default=grid_size)
    p.add_argument("--grid-low", type=float, default=grid_low, help="smallest grid tau as a fraction of tau_max")
    p.add_argument("--tuning-mode", choices=("once", "per-iteration"), default="once")
    p.add_argument("--seed", type=int, default=0)


def build_parser():
    parser = _Parser(prog="netcca", description="Network-structured sparse canonical correlation analysis.")
    parser.add_argument("--version", action="version", version=f"netcca {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fit", help="fit at fixed taus")
    _data_options(f)
    _model_options(f)
    f.add_argument("--tau-x", type=float, required=True)
    f.add_argument("--tau-y", type=float, required=True)
    f.add_argument("--out", required=True, help="model JSON path")

    c = sub.add_parser("cv", help="choose taus by cross validation, then fit")
    _data_options(c)
    _model_options(c)
    _cv_options(c)
    c.add_argument("--tau-x", type=_tau_list, help="comma-separated tau_x grid (default: geometric grid)")
    c.add_argument("--tau-y", type=_tau_list, help="comma-separated tau_y grid (default: geometric grid)")
    c.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("simulate", help="Monte-Carlo study on a simulated scenario")
    s.add_argument("--scenario", type=int, choices=(1, 2, 3, 4), required=True)
    s.add_argument("--reps", type=_positive_int, default=25)
    s.add_argument("--p", type=_positive_int, default=100)
    s.add_argument("--q", type=_positive_int, default=100)
    s.add_argument("--n", type=_positive_int, default=80)
    _model_options(s)
    _cv_options(s, grid_size=6, grid_low=0.2)
    s.add_argument("--ablation", action=argparse.BooleanOptionalAction, default=True,
                   help="also run the empty-graph l1 baseline")
    s.add_argument("--out", required=True, help="output directory")
    return parser


def _penalty(args):
    from .penalty import PenaltyConfig

    try:
        return PenaltyConfig(args.penalty, args.constraint, args.eta, args.gamma)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _inputs_manifest(args):
    out = {}
    for key in ("x", "y", "graph_x", "graph_y"):
        path = getattr(args, key, None)
        if path:
            out[key] = {"path": str(path), "sha256": _file_digest(path)}
    return out


def _manifest(args, **extra):
    from .io import environment

    opts = {k: v for k, v in vars(args).items() if k not in ("func",)}
    return {"command": args.command, "options": opts, "inputs": _inputs_manifest(args), "environment": environment(), **extra}


def _load(args):
    from .graph import load_edge_list
    from .io import read_data_csv

    for path in (args.x, args.y, args.graph_x, args.graph_y):
        if path and not Path(path).is_file():
            raise UsageError(f"no such file: {path}")
    X, ids_x, names_x = read_data_csv(args.x, args.log10)
    Y, ids_y, names_y = read_data_csv(args.y, args.log10)
    if X.shape[0] != Y.shape[0]:
        raise UsageError(f"row count mismatch: {X.shape[0]} vs {Y.shape[0]}")
    if ids_x != ids_y:
        log.warning("sample ids of X and Y differ; rows are paired by position")
    gx = load_edge_list(args.graph_x, names_x) if args.graph_x else None
    gy = load_edge_list(args.graph_y, names_y) if args.graph_y else None
    return X, Y, names_x, names_y, gx, gy


def _config(args, tau_x=0.0, tau_y=0.0):
    from .scca import FitConfig

    try:
        return FitConfig(_penalty(args), tau_x, tau_y, n_components=args.components, update=args.update)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _fit_model(X, Y, gx, gy, cfg, selector=None):
    from .scca import fit

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return fit(X, Y, gx, gy, cfg, tau_selector=selector)


def _report_model(model):
    for k, c in enumerate(model.components, start=1):
        print(
            f"component {k}: rho={c.rho:.6g} |selectedX|={c.selected_x().size} "
            f"|selectedY|={c.selected_y().size} iterations={c.iterations} converged={c.converged}"
        )
    for note in model.warnings:
        print(f"netcca: warning: {note}", file=sys.stderr)


def _trivial_exit(model):
    if model.components and model.components[0].trivial:
        print("netcca: warning: trivial solution (every coefficient is zero); lower tau", file=sys.stderr)
        return EXIT_DEGENERATE
    return EXIT_OK


def cmd_fit(args):
    from .io import model_to_dict, write_json

    X, Y, nx, ny, gx, gy = _load(args)
    if args.tau_x < 0 or args.tau_y < 0:
        raise UsageError("taus must be nonnegative")
    model = _fit_model(X, Y, gx, gy, _config(args, args.tau_x, args.tau_y))
    write_json(args.out, model_to_dict(model, nx, ny, _manifest(args)))
    _report_model(model)
    return _trivial_exit(model)


def cmd_cv(args):
    from .io import model_to_dict, write_json, write_rows_csv
    from .linalg import standardize
    from .tuning import cross_search, geometric_grid, make_cv_plan, n_jobs_from_env, per_iteration_selector, tau_max

    X, Y, nx, ny, gx, gy = _load(args)
    gridx, gridy = args.tau_x, args.tau_y
    if gridx is None or gridy is None:
        tx, ty = tau_max(standardize(X), standardize(Y), constraint=args.constraint)
        gridx = gridx or list(geometric_grid(tx, args.tau_grid_size, args.grid_low))
        gridy = gridy or list(geometric_grid(ty, args.tau_grid_size, args.grid_low))
    try:
        plan = make_cv_plan(X.shape[0], args.folds, gridx, gridy, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cfg = _config(args)
    n_jobs = n_jobs_from_env()
    out = Path(args.out)
    if args.tuning_mode == "once":
        res = cross_search(X, Y, gx, gy, cfg, plan, n_jobs)
        results, tau = [res], res.tau_opt
        model = _fit_model(standardize(X), standardize(Y), gx, gy, cfg.with_taus(*tau))
    else:
        results = []
        selector = per_iteration_selector(X, Y, gx, gy, cfg, plan, n_jobs, results)
        model = _fit_model(standardize(X), standardize(Y), gx, gy, cfg, selector)
        last = next((r for r in reversed(results) if r is not None), None)
        if last is None:
            raise AllDegenerate("every grid point was trivial at every outer step")
        tau = last.tau_opt
    rows = []
    for step, res in enumerate(results, start=1):
        for row in (res.table() if res is not None else []):
            rows.append({"step": step, **row})
    columns = list(rows[0]) if rows else ["step"]
    write_rows_csv(out / "cv_scores.csv", rows, columns)
    manifest = _manifest(args, tauOpt=list(tau), tauGridX=list(map(float, gridx)), tauGridY=list(map(float, gridy)),
                         foldAssignment=plan.assignment.tolist())
    write_json(out / "model.json", model_to_dict(model, nx, ny, manifest))
    write_json(out / "manifest.json", manifest)
    print(f"tau_opt: tau_x={tau[0]:.6g} tau_y={tau[1]:.6g}")
    _report_model(model)
    return _trivial_exit(model)


def _study_key(spec, methods, seed):
    blob = json.dumps({"spec": asdict(spec), "methods": [asdict(m) for m in methods], "seed": seed, "v": __version__},
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def cmd_simulate(args):
    from .io import write_json, write_rows_csv
    from .simulation import ROW_COLUMNS, SUMMARY_COLUMNS, ScenarioSpec, default_methods, run_study, study_manifest
    from .tuning import n_jobs_from_env

    _penalty(args)
    try:
        spec = ScenarioSpec(args.scenario, args.p, args.q, args.n, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.n // args.folds < 2 or args.folds < 2:
        raise UsageError(f"folds={args.folds} does not fit n={args.n}")
    methods = default_methods(
        args.penalty, args.constraint, args.eta, args.gamma, args.ablation,
        folds=args.folds, grid_size=args.tau_grid_size, grid_low=args.grid_low,
        tuning_mode=args.tuning_mode, update=args.update,
    )
    out = Path(args.out)
    ckpt = out / ".checkpoints" / _study_key(spec, methods, args.seed)
    result = run_study(spec, methods, args.reps, args.seed, n_jobs_from_env(), ckpt)
    write_rows_csv(out / "replicates.csv", result.rows, ROW_COLUMNS)
    write_rows_csv(out / "summary.csv", result.summary(), SUMMARY_COLUMNS)
    timings = [{"replicate": r["replicate"], "method": r["method"], "runtimeSeconds": r["runtimeSeconds"]}
               for r in result.records]
    write_json(out / "manifest.json", study_manifest(result, {"options": {k: v for k, v in vars(args).items()},
                                                               "timings": timings}))
    for rec in result.failures:
        print(f"netcca: warning: replicate {rec['replicate']} of {rec['method']} failed: {rec['error']}",
              file=sys.stderr)
    for row in result.summary():
        print(
            f"{row['method']} {row['side']}{row['component']}: sens={row['sensitivity_mean']:.3f} "
            f"spec={row['specificity_mean']:.3f} mcc={row['mcc_mean']:.3f}"
        )
    return EXIT_OK if result.completed_fraction >= MIN_COMPLETED else EXIT_PARTIAL


COMMANDS = {"fit": cmd_fit, "cv": cmd_cv, "simulate": cmd_simulate}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="netcca: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except AllDegenerate as exc:
        print(f"netcca: degenerate: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (UsageError, NetccaError, ValueError, OSError) as exc:
        print(f"netcca: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
