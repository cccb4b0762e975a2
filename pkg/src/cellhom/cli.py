"""Command-line interface: homogenize | sweep | reference."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .errors import CellHomError, ConfigError
from .harness import (
    RunConfig,
    SweepConfig,
    emit_results,
    preset_r_values,
    reference_tensor,
    run_once,
    run_sweep,
)
from .methods import METHODS


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--field", default="paper-2d",
                   help="coefficient spec: constant:<v> | paper-2d | checkerboard:<a1>:<a2>")
    p.add_argument("--dim", type=int, default=2, choices=(1, 2, 3))
    p.add_argument("--h", type=float, default=1.0 / 32.0,
                   help="target mesh size per unit period (default 1/32)")
    p.add_argument("--nq", type=int, default=2, help="Gauss points per axis (>= 2)")
    p.add_argument("--cg-tol", type=float, default=1e-12)
    p.add_argument("--eig-tol", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--cache-dir", default=None,
                   help="reference cache directory (default: $CELLHOM_CACHE_DIR)")
    p.add_argument("--ref-h", type=float, default=None,
                   help="mesh size for the reference (default: same as --h)")


def _add_method(p: argparse.ArgumentParser):
    p.add_argument("--method", default="parabolic", choices=METHODS)
    p.add_argument("--q", "--filter-q", dest="q", type=int, default=1,
                   help="averaging filter order")
    p.add_argument("--k-o", type=float, default=0.5,
                   help="oversampling fraction; L = (1 - k_o) R")
    p.add_argument("--T", type=float, default=None, help="override the time horizon")
    p.add_argument("--L", type=float, default=None, help="override the averaging box side")
    p.add_argument("--N", type=int, default=None, help="retained mode count (modified elliptic)")
    p.add_argument("--bc", default="dirichlet", choices=("dirichlet", "periodic"))
    p.add_argument("--tol-time", type=float, default=1e-5,
                   help="relative tolerance of the adaptive time integrator")
    p.add_argument("--symmetrize", action="store_true",
                   help="average away the modified-elliptic asymmetry")
    p.add_argument("--solver", default="direct", choices=("direct", "cg"))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="cellhom",
        description="Effective tensors of oscillatory coefficients via periodic, "
                    "truncated elliptic, filtered parabolic, and spectrally "
                    "corrected elliptic cell problems.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    one = sub.add_parser("homogenize", help="run one method at one R")
    _add_common(one)
    _add_method(one)
    one.add_argument("--R", type=float, default=4.0, help="side of the sampling box K_R")
    one.add_argument("--format", default="json", choices=("json", "csv"))
    one.add_argument("--output", default=None, help="write the record to this file")

    sw = sub.add_parser("sweep", help="run a method across many R values")
    _add_common(sw)
    _add_method(sw)
    grid = sw.add_mutually_exclusive_group()
    grid.add_argument("--R-list", default=None,
                      help="comma-separated R values, e.g. 2.5,3.5,4.5")
    grid.add_argument("--preset", default=None, choices=("ci", "full"),
                      help="named R grid (default: ci)")
    sw.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    sw.add_argument("--strict", action="store_true",
                    help="exit 2 when any sweep point fails")
    sw.add_argument("--reproducible", action="store_true",
                    help="serial execution and zeroed wall_ms for bitwise-stable output")
    sw.add_argument("--error-floor", type=float, default=None,
                    help="exclude points at/below this error from the slope fit")
    sw.add_argument("--output-dir", default="sweep-out")
    sw.add_argument("--no-plot", action="store_true", help="skip the figure")

    ref = sub.add_parser("reference", help="compute/cache the periodic reference")
    _add_common(ref)
    ref.add_argument("--refresh", action="store_true", help="recompute even if cached")

    return ap


def _print_tensor(values: np.ndarray, stream=sys.stdout):
    for row in values:
        print("  [" + "  ".join(f"{v: .12e}" for v in row) + "]", file=stream)


def _cmd_homogenize(args) -> int:
    config = RunConfig(
        field_spec=args.field, method=args.method, R=args.R, h=args.h, q=args.q,
        k_o=args.k_o, T=args.T, L=args.L, N=args.N, dim=args.dim, bc=args.bc,
        nq=args.nq, tol_time=args.tol_time, cg_tol=args.cg_tol, eig_tol=args.eig_tol,
        seed=args.seed, symmetrize=args.symmetrize, solver=args.solver,
        ref_h=args.ref_h, cache_dir=args.cache_dir,
    )
    record = run_once(config)
    print(f"method={record.config.method} field={record.config.field_spec} "
          f"R={record.config.R:g}")
    _print_tensor(record.values)
    print(f"err_frobenius={record.err_frobenius:.6e} asymmetry={record.asymmetry:.3e} "
          f"wall_ms={record.wall_ms:.1f}")
    if args.output:
        emit_results([record], fmt=args.format, path=args.output)
        print(f"wrote {args.output}")
    return 0


def _cmd_sweep(args) -> int:
    if args.R_list:
        try:
            r_values = tuple(float(tok) for tok in args.R_list.split(",") if tok.strip())
        except ValueError:
            raise ConfigError(f"bad --R-list {args.R_list!r}") from None
    else:
        r_values = preset_r_values(args.preset or "ci")
    sweep = SweepConfig(
        field_spec=args.field, method=args.method, R_values=r_values, h=args.h,
        q=args.q, k_o=args.k_o, N=args.N, dim=args.dim, bc=args.bc, nq=args.nq,
        tol_time=args.tol_time, cg_tol=args.cg_tol, eig_tol=args.eig_tol,
        seed=args.seed, symmetrize=args.symmetrize, solver=args.solver,
        ref_h=args.ref_h, cache_dir=args.cache_dir, jobs=args.jobs,
        strict=args.strict, reproducible=args.reproducible,
        error_floor=args.error_floor,
    )
    result = run_sweep(sweep)
    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    stem = f"sweep-{args.method}-q{args.q}"
    result.csv_path = outdir / f"{stem}.csv"
    result.json_path = outdir / f"{stem}.json"
    emit_results(result.records, fmt="csv", path=result.csv_path)
    emit_results(result.records, fmt="json", path=result.json_path)
    if not args.no_plot:
        from .plotting import render_sweep_figure

        result.figure_path = render_sweep_figure(
            result.records,
            outdir / f"{stem}.png",
            slope=result.slope,
            guide_order=args.q + 1,
            title=f"{args.method}, q={args.q}, {args.field}",
        )
    print(f"{len(result.records)} points, {result.n_failed} failed, "
          f"slope={result.slope:.3f}")
    print(f"wrote {result.csv_path} and {result.json_path}"
          + (f" and {result.figure_path}" if result.figure_path else ""))
    if args.strict and result.n_failed:
        return 2
    return 0


def _cmd_reference(args) -> int:
    values = reference_tensor(
        args.field, dim=args.dim, h=args.h, nq=args.nq,
        cache_dir=args.cache_dir, cg_tol=args.cg_tol, refresh=args.refresh,
    )
    print(f"periodic reference for {args.field} at h={args.h:g}:")
    _print_tensor(values)
    return 0


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        if args.command == "homogenize":
            return _cmd_homogenize(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        return _cmd_reference(args)
    except CellHomError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
