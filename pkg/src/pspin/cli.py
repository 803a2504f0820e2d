"""Command-line entry point: ``pspin <subcommand> [options]``.

Exit status 0 on success, 2 on invalid input, 3 on numerical failure.
Every stochastic subcommand requires ``--seed``; ``PSPIN_THREADS``
overrides ``--threads``. Reports do not depend on the worker count.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path

from . import __version__
from .constants import ModelParams, solve_constants
from .report import dumps, to_csv

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(ValueError):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _pair(text: str) -> tuple[float, float]:
    v = _floats(text)
    if len(v) != 2 or not v[0] < v[1]:
        raise argparse.ArgumentTypeError(f"expected lo,hi with lo < hi, got {text!r}")
    return v[0], v[1]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pspin", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="subcommand", required=True)

    def common(p, stochastic: bool):
        p.add_argument("--out", type=Path, help="report path (default: stdout)")
        p.add_argument("--format", choices=["json", "csv"], default="json")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--no-timing", action="store_true", help="omit wall time so reruns are byte-identical")
        if stochastic:
            p.add_argument("--seed", type=int, required=True)

    def model(p, required=True):
        p.add_argument("--p", type=int, required=required)
        p.add_argument("--N", type=int, required=required)

    p = sub.add_parser("constants", help="limiting constants for (p, N)")
    model(p)
    common(p, stochastic=False)

    p = sub.add_parser("rmt", help="GOE determinant moments")
    p.add_argument("--dim", type=_ints, required=True, help="comma-separated dimensions n")
    p.add_argument("--shift", type=_floats, required=True, help="comma-separated shifts v")
    p.add_argument("--samples", type=int, default=100_000)
    common(p, stochastic=True)

    p = sub.add_parser("kacrice", help="Kac-Rice density and centered intensity")
    model(p)
    p.add_argument("--window", type=_pair, default=(-2.0, 2.0), help="lo,hi in centered units")
    p.add_argument("--grid", type=int, default=9)
    p.add_argument("--samples", type=int, default=20_000)
    p.add_argument("--method", choices=["hermite", "mc", "both"], default="hermite")
    p.add_argument("--out", type=Path)
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--no-timing", action="store_true")
    p.add_argument("--seed", type=int, default=None, help="required with --method mc or both")

    p = sub.add_parser("enumerate", help="critical points of one instance")
    model(p, required=False)
    p.add_argument("--restarts", type=int, default=20_000)
    p.add_argument("--disorder-seed", type=int, default=None, help="defaults to --seed")
    p.add_argument("--disorder-file", type=Path, default=None)
    p.add_argument("--save-disorder", type=Path, default=None)
    p.add_argument("--L", type=float, default=None, help="keep values within L of m_N")
    p.add_argument("--locations", action="store_true", help="include coordinates")
    common(p, stochastic=True)

    for name in ("extremal", "perturb"):
        p = sub.add_parser(name, help="extremal-process statistics" if name == "extremal" else "perturbation experiment")
        model(p)
        p.add_argument("--samples", type=int, default=100)
        p.add_argument("--L", type=float, default=3.0)
        p.add_argument("--restarts", type=int, default=200)
        if name == "perturb":
            p.add_argument("--alpha", type=float, default=0.45)
        common(p, stochastic=True)

    p = sub.add_parser("report", help="merge report files or convert them to CSV")
    p.add_argument("inputs", type=Path, nargs="+")
    p.add_argument("--out", type=Path)
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--no-timing", action="store_true")
    return ap


def _threads(args) -> int:
    env = os.environ.get("PSPIN_THREADS")
    n = int(env) if env else args.threads
    if n < 1:
        raise UsageError("thread count must be >= 1")
    return n


def _params(args) -> ModelParams:
    try:
        return ModelParams(args.p, args.N)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _positive(name: str, value, minimum=1):
    if value < minimum:
        raise UsageError(f"--{name} must be >= {minimum}")


def cmd_constants(args, workers):
    c = solve_constants(args.p, _params(args).N)
    return {"constants": c.as_dict()}


def cmd_rmt(args, workers):
    from .random_matrix import expected_abs_det_mc, expected_det_hermite, log_expected_abs_det_exact

    _positive("samples", args.samples, 1000)
    for n in args.dim:
        _positive("dim", n)
    rows = []
    for n in args.dim:
        for v in args.shift:
            s, la = expected_det_hermite(n, v)
            est, se, lm, lse = expected_abs_det_mc(n, v, args.samples, args.seed)
            rows.append(
                {
                    "n": n,
                    "v": v,
                    "e_det_hermite": s * math.exp(la) if la < 709 else s * math.inf,
                    "log_abs_e_det_hermite": la,
                    "e_absdet_exact": math.exp(float(log_expected_abs_det_exact(n, v))),
                    "e_absdet_mc": est,
                    "mc_se": se,
                    "log_e_absdet_mc": lm,
                    "ratio": math.exp(lm - la) if s != 0 else math.inf,
                }
            )
    return {"rmt": {"samples": args.samples, "seed": args.seed, "rows": rows}}


def cmd_kacrice(args, workers):
    import numpy as np

    from .kac_rice import KacRiceDensity, Method, intensity_nu, rho_n

    params = _params(args)
    _positive("grid", args.grid, 2)
    methods = {"hermite": [Method.HERMITE_EXACT], "mc": [Method.GOE_MONTE_CARLO],
               "both": [Method.HERMITE_EXACT, Method.GOE_MONTE_CARLO]}[args.method]
    if Method.GOE_MONTE_CARLO in methods:
        if args.seed is None:
            raise UsageError("--seed is required with --method mc or both")
        _positive("samples", args.samples, 1000)
    lo, hi = args.window
    if max(abs(lo), abs(hi)) > math.sqrt(params.N):
        raise UsageError(f"window must lie within +-sqrt(N) = {math.sqrt(params.N):.4g}")
    c = solve_constants(params.p, params.N)
    points = []
    for m in methods:
        d = KacRiceDensity(params, c, m, samples=args.samples, seed=args.seed or 0)
        for x in np.linspace(lo, hi, args.grid):
            u = float(x) + c.m_N
            lr, se = rho_n(u, d)
            nu, nu_se = intensity_nu(float(x), d)
            points.append({"method": m.value, "x": float(x), "u": u, "log_rho": lr, "nu": nu,
                           "nu_over_limit": nu / math.exp(c.c_p * float(x)), "se": nu_se})
    return {"kacrice": {"p": params.p, "N": params.N, "samples": args.samples, "seed": args.seed,
                        "constants": c.as_dict(), "points": points}}


def cmd_enumerate(args, workers):
    from .critical_points import find_all, window_select
    from .hamiltonian import read_disorder, sample_disorder, write_disorder

    _positive("restarts", args.restarts)
    if args.disorder_file is not None:
        J = read_disorder(args.disorder_file)
        if args.p is not None and args.p != J.p or args.N is not None and args.N != J.N:
            raise UsageError("--p/--N disagree with the disorder file")
    else:
        if args.p is None or args.N is None:
            raise UsageError("--p and --N are required without --disorder-file")
        dseed = args.seed if args.disorder_seed is None else args.disorder_seed
        J = sample_disorder(_params(args), dseed)
    if args.save_disorder is not None:
        write_disorder(J, args.save_disorder)
    cs = find_all(J, args.restarts, args.seed)
    c = solve_constants(J.p, J.N)
    if args.L is not None:
        cs = window_select(cs, args.L, c)
    return {
        "critical_points": {
            "p": J.p,
            "N": J.N,
            "disorder_seed": J.seed,
            "restarts": args.restarts,
            "seed": args.seed,
            "converged_runs": cs.converged_runs,
            "residual_tol": cs.residual_tol * math.sqrt(J.N),
            "window": list(cs.window) if cs.window else None,
            "count": len(cs),
            "points": [pt.as_dict(args.locations) for pt in cs.points],
        }
    }


def cmd_extremal(args, workers):
    from .kac_rice import KacRiceDensity
    from .perturbation import run_extremal

    params = _params(args)
    _positive("samples", args.samples)
    _positive("restarts", args.restarts)
    if not args.L > 0:
        raise UsageError("--L must be positive")
    res = run_extremal(params, args.samples, args.L, args.restarts, args.seed, workers, KacRiceDensity(params))
    return {"extremal": res}


def cmd_perturb(args, workers):
    from .perturbation import run_perturb

    params = _params(args)
    _positive("samples", args.samples)
    _positive("restarts", args.restarts)
    if not (1.0 / 3.0 < args.alpha < 0.5):
        raise UsageError("--alpha must lie in (1/3, 1/2)")
    return {"perturb": run_perturb(params, args.samples, args.L, args.alpha, args.restarts, args.seed, workers)}


def cmd_report(args, workers):
    merged = {}
    for path in args.inputs:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read report {path}: {exc}") from exc
        for k, v in data.items():
            if k != "meta":
                merged[k] = v
    return merged


COMMANDS = {
    "constants": cmd_constants,
    "rmt": cmd_rmt,
    "kacrice": cmd_kacrice,
    "enumerate": cmd_enumerate,
    "extremal": cmd_extremal,
    "perturb": cmd_perturb,
    "report": cmd_report,
}

_EXECUTION_ONLY = {"threads", "out", "format", "no_timing"}


def _plain(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def run(argv=None) -> int:
    from .critical_points import EnumerationError
    from .hamiltonian import BudgetExceededError
    from .random_matrix import NumericalError

    parser = build_parser()
    args = parser.parse_args(argv)
    t0 = time.perf_counter()
    try:
        workers = _threads(args)
        body = COMMANDS[args.subcommand](args, workers)
    except (UsageError, BudgetExceededError, ValueError) as exc:
        print(f"pspin {args.subcommand}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, EnumerationError, ArithmeticError, FloatingPointError) as exc:
        print(f"pspin {args.subcommand}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    config = {k: _plain(v) for k, v in sorted(vars(args).items()) if k not in _EXECUTION_ONLY}
    meta = {
        "version": __version__,
        "config": config,
        "seed": getattr(args, "seed", None),
        "wall_time": None if args.no_timing else time.perf_counter() - t0,
    }
    report = {"meta": meta, **body}
    text = to_csv(report) if args.format == "csv" else dumps(report)
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.write_text(text)
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
