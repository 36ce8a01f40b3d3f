"""``dagfit`` command-line driver.

Exit codes: 0 success, 2 configuration or usage error, 3 fit did not converge.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from pathlib import Path

import numpy as np

from .bundles import load_counts
from .config import BuiltModel, load_and_build
from .errors import ConfigError, DagfitError, MaxEvaluations, SingularHessian
from .expressions import dump_tree, parse
from .fitter import estimate_errors, minimize_nelder_mead, profile_scan

EXIT_OK, EXIT_CONFIG, EXIT_NOCONVERGE = 0, 2, 3


class _Usage(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dagfit", description="Build and fit dataflow models.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="build the graph and report its size")
    p.add_argument("--config", required=True)
    p.add_argument("--dot", help="write the graph in DOT format")
    p.add_argument("--dump", help="write the text graph dump")
    p.add_argument("--params", help="write the parameter table")

    p = sub.add_parser("fit", help="minimize the statistic and estimate errors")
    p.add_argument("--config", required=True)
    p.add_argument("--output", required=True, help="FitResult JSON path")
    p.add_argument("--data", help="replace observed counts with this file")

    p = sub.add_parser("scan", help="profile the statistic along one parameter")
    p.add_argument("--config", required=True)
    p.add_argument("--output", required=True, help="CSV path")
    p.add_argument("--param", required=True)
    p.add_argument("--lo", type=float, required=True)
    p.add_argument("--hi", type=float, required=True)
    p.add_argument("--points", "--n", dest="points", type=int, required=True)
    p.add_argument("--data", help="replace observed counts with this file")

    p = sub.add_parser("mc", help="write Poisson pseudo-datasets from the prediction")
    p.add_argument("--config", required=True)
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--asimov", action="store_true", help="write the unfluctuated prediction instead")

    p = sub.add_parser("expr", help="inspect an expression")
    p.add_argument("source")
    p.add_argument("--dump-ast", action="store_true", help="print the AST as an indented tree")
    return parser


def _replace_data(built: BuiltModel, path: str) -> None:
    node = built.statistic.data.node
    if not hasattr(node, "set"):
        raise ConfigError("observed data is not a plain histogram and cannot be replaced", key="--data")
    try:
        counts = load_counts(path)
    except OSError as exc:
        raise ConfigError(f"cannot read data: {exc.strerror}", key="--data") from None
    try:
        node.set(counts)
    except DagfitError as exc:
        raise ConfigError(str(exc), key="--data") from None


def cmd_build(args, out) -> int:
    built = load_and_build(args.config)
    graph = built.graph
    graph.propagate_types([built.statistic.node])
    params = built.model.params
    print(f"nodes: {len(graph)}", file=out)
    print(f"parameters: {len(params)} (free {len(params.free())}, "
          f"constrained {len(params.constrained())})", file=out)
    print(f"outputs: {len(built.model.outputs)}", file=out)
    print(f"bins: {built.prediction.dtype.size}", file=out)
    print(f"statistic: {built.statistic.kind}", file=out)
    if args.dot:
        Path(args.dot).write_text(graph.to_dot())
    if args.dump:
        Path(args.dump).write_text(graph.dump())
    if args.params:
        Path(args.params).write_text(params.table())
    return EXIT_OK


def cmd_fit(args, out) -> int:
    built = load_and_build(args.config)
    if args.data:
        _replace_data(built, args.data)
    problem = built.problem
    code = EXIT_OK
    try:
        result = minimize_nelder_mead(problem)
        try:
            errors, cov = estimate_errors(problem, result)
            result.errors, result.covariance = errors, cov.tolist()
        except SingularHessian as exc:
            result.converged = False
            result.message = f"minimum found but errors failed: {exc}"
            code = EXIT_NOCONVERGE
    except MaxEvaluations as exc:
        result = exc.result
        code = EXIT_NOCONVERGE
    Path(args.output).write_text(result.to_json())
    for name, value in result.values.items():
        err = result.errors.get(name)
        print(f"{name} = {value:.6g} ± {err:.3g}" if err is not None else f"{name} = {value:.6g}", file=out)
    print(f"fun = {result.fun:.10g}  nfev = {result.nfev}  {result.message}", file=out)
    return code


def cmd_scan(args, out) -> int:
    built = load_and_build(args.config)
    if args.data:
        _replace_data(built, args.data)
    problem = built.problem
    try:
        target = built.model.params[args.param]
    except DagfitError:
        raise ConfigError(f"unknown parameter '{args.param}'", key="--param") from None
    if target not in problem.free:
        raise ConfigError(f"parameter '{args.param}' is not free", key="--param")
    if args.points < 1:
        raise _Usage("--points must be at least 1")
    grid = np.linspace(args.lo, args.hi, args.points) if args.points > 1 else np.array([args.lo])
    try:
        minimize_nelder_mead(problem)
    except MaxEvaluations:
        pass
    points = profile_scan(problem, target, grid)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["value", "fun_min", "converged"])
    for pt in points:
        w.writerow([repr(float(pt.value)), repr(float(pt.fun_min)), int(pt.converged)])
    Path(args.output).write_text(buf.getvalue())
    best = min(points, key=lambda p: p.fun_min if np.isfinite(p.fun_min) else np.inf)
    print(f"{len(points)} points; minimum {best.fun_min:.10g} at {args.param} = {best.value:.6g}", file=out)
    return EXIT_OK


def pseudo_dataset(prediction: np.ndarray, seed: int, k: int) -> np.ndarray:
    """Poisson fluctuation of ``prediction``; depends only on ``(seed, k)``."""
    rng = np.random.default_rng([seed, k])
    return rng.poisson(prediction)


def cmd_mc(args, out) -> int:
    if args.n < 0:
        raise _Usage("--n must be non-negative")
    built = load_and_build(args.config)
    pred = np.ravel(built.prediction()).copy()
    outdir = Path(args.output)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        if not os.access(outdir, os.W_OK):
            raise PermissionError(f"directory {outdir} is not writable")
        if args.asimov:
            (outdir / "asimov.txt").write_text("".join(f"{float(v)!r}\n" for v in pred))
            print(f"wrote {outdir / 'asimov.txt'}", file=out)
            return EXIT_OK
        for k in range(args.n):
            counts = pseudo_dataset(pred, args.seed, k)
            (outdir / f"mc_{k:05d}.txt").write_text("".join(f"{int(c)}\n" for c in counts))
    except OSError as exc:
        raise _Usage(f"cannot write to {outdir}: {exc}") from None
    print(f"wrote {args.n} pseudo-datasets to {outdir}", file=out)
    return EXIT_OK


def cmd_expr(args, out) -> int:
    ast = parse(args.source)
    if args.dump_ast:
        out.write(dump_tree(ast))
    else:
        from .expressions import pretty

        print(pretty(ast), file=out)
    return EXIT_OK


COMMANDS = {"build": cmd_build, "fit": cmd_fit, "scan": cmd_scan, "mc": cmd_mc, "expr": cmd_expr}


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return COMMANDS[args.command](args, out)
    except ConfigError as exc:
        print(f"dagfit: config error: {exc}", file=err)
    except _Usage as exc:
        print(f"dagfit: {exc}", file=err)
    except DagfitError as exc:
        print(f"dagfit: {type(exc).__name__}: {exc}", file=err)
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
