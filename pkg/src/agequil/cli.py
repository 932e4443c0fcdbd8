"""Command line interface.

Four subcommands cover the library's entry points:

    normalize   rescale the fertility normalization so r(Q0) = 1
    trace       trace the nontrivial branch, write a CSV plus profiles
    fixedpoint  damped fixed-point run with shell-condition checks
    verify      recheck a written branch against its model

The branch CSV has one row per branch point with columns index, n, eps,
r_Qu, identity_residual, residual_direct, reform_residual, min_u.  Next
to it, one profile CSV per point (suffix _profile_NNN.csv) stores the
field on the grid: first line "a," followed by the x coordinates, then
one row per age with the age in the first column.  All floats are
written with repr-faithful precision, so repeated runs with the same
seed and flags produce byte-identical files.

Exit codes: 0 on success, 1 when a computation fails or a verified
invariant is violated, 2 for unreadable inputs or malformed files.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .continuation import (
    ContinuationError,
    branch_stats,
    first_step,
    trace_branch,
)
from .discretize import AssemblyError, SpatialMesh
from .evolution import AgeGrid, DensityField, EvolutionError, build_evolution
from .fixedpoint import FixedPointError, check_shell_conditions, multistart_fixedpoint
from .linearized import LinearizedError, build_linearized, reformulation_residual
from .model import ModelError, ModelSpec, parse_grid, parse_model, serialize_model
from .reproduction import (
    PowerIterationError,
    ReproductionError,
    assemble_Q,
    normalize,
    spectral_radius,
)

BRANCH_COLUMNS = (
    "index", "n", "eps", "r_Qu",
    "identity_residual", "residual_direct", "reform_residual", "min_u",
)

_COMPUTE_ERRORS = (
    ContinuationError, FixedPointError, ReproductionError, PowerIterationError,
    LinearizedError, EvolutionError, AssemblyError,
)


@dataclass(frozen=True)
class Problem:
    model: ModelSpec
    mesh: SpatialMesh
    grid: AgeGrid


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _load_problem(path: str, nx: int | None, na: int | None) -> Problem:
    text = Path(path).read_text()
    model = parse_model(text)
    cfg_nx, cfg_na = parse_grid(text)
    nx = nx if nx is not None else cfg_nx
    na = na if na is not None else cfg_na
    if nx is None or na is None:
        raise ModelError("grid is incomplete: supply nx and na in the config or as flags")
    return Problem(model=model, mesh=SpatialMesh(nx=nx), grid=AgeGrid(na=na, a_max=model.a_max))


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as handle:
        handle.write(text)


def _branch_rows(branch) -> str:
    lines = [",".join(BRANCH_COLUMNS)]
    for idx, p in enumerate(branch.points):
        lines.append(",".join((
            str(idx), _fmt(p.n), _fmt(p.eps), _fmt(p.r_Qu),
            _fmt(p.identity_residual), _fmt(p.residual_direct),
            _fmt(p.reform_residual), _fmt(p.min_u),
        )))
    return "\n".join(lines) + "\n"


def _field_csv(field: DensityField, mesh: SpatialMesh) -> str:
    lines = ["a," + ",".join(_fmt(x) for x in mesh.nodes)]
    for k, age in enumerate(field.grid.ages):
        lines.append(_fmt(age) + "," + ",".join(_fmt(v) for v in field.values[k]))
    return "\n".join(lines) + "\n"


def _read_field_csv(path: Path, a_max: float) -> tuple[DensityField, SpatialMesh]:
    with open(path, newline="") as handle:
        rows = list(csv.reader(handle))
    if not rows or rows[0][0] != "a" or len(rows) < 3:
        raise ValueError(f"{path} is not a profile file")
    xs = np.array([float(v) for v in rows[0][1:]])
    nx = xs.shape[0]
    mesh = SpatialMesh(nx=nx)
    if not np.allclose(xs, mesh.nodes, rtol=0, atol=1e-12):
        raise ValueError(f"{path} has an unexpected x grid")
    body = np.array([[float(v) for v in row] for row in rows[1:]])
    if body.shape[1] != nx + 1:
        raise ValueError(f"{path} has ragged rows")
    grid = AgeGrid(na=body.shape[0] - 1, a_max=a_max)
    if not np.allclose(body[:, 0], grid.ages, rtol=0, atol=1e-10 * max(1.0, a_max)):
        raise ValueError(f"{path} has an unexpected age grid")
    values = np.ascontiguousarray(body[:, 1:])
    return DensityField(values=values, grid=grid, nonnegative=bool(np.all(values >= 0))), mesh


def _stem(out: str) -> Path:
    path = Path(out)
    return path.with_suffix("") if path.suffix == ".csv" else path


def _cmd_normalize(args: argparse.Namespace) -> int:
    problem = _load_problem(args.model, args.nx, args.na)
    model, r_before = normalize(problem.model, problem.mesh, problem.grid)
    print(f"r(Q0) before: {_fmt(r_before)}")
    print(f"cb after: {_fmt(model.cb)}")
    text = serialize_model(model, nx=problem.mesh.nx, na=problem.grid.na)
    if args.out:
        _write_text(Path(args.out), text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_trace(args: argparse.Namespace) -> int:
    problem = _load_problem(args.model, args.nx, args.na)
    model, r_before = normalize(problem.model, problem.mesh, problem.grid)
    print(f"r(Q0) before normalization: {_fmt(r_before)}")
    branch = trace_branch(
        model, problem.mesh, problem.grid,
        eps0=args.eps0, step=args.step, max_points=args.max_points,
        n_cap=args.n_cap, norm_cap=args.norm_cap, tol=args.tol,
    )
    out = Path(args.out)
    _write_text(out, _branch_rows(branch))
    stem = _stem(args.out)
    for idx, point in enumerate(branch.points):
        _write_text(Path(f"{stem}_profile_{idx:03d}.csv"), _field_csv(point.u, problem.mesh))
    stats = branch_stats(branch)
    print(f"traced {len(branch.points)} points ({len(branch.nontrivial())} nontrivial)")
    print(f"terminated: {branch.terminated}")
    print(f"n range: [{_fmt(stats.sigma_i)}, {_fmt(stats.sigma_s)}]")
    print(f"r(Q_u) range: [{_fmt(stats.N_i)}, {_fmt(stats.N_s)}]")
    print(f"max |n r(Q_u) - 1|: {_fmt(stats.max_identity_residual)}")
    print(f"wrote {out} and {len(branch.points)} profiles")
    return 0


def _cmd_fixedpoint(args: argparse.Namespace) -> int:
    problem = _load_problem(args.model, args.nx, args.na)
    result = multistart_fixedpoint(
        problem.model, problem.mesh, problem.grid,
        damping=args.damping, tol=args.tol, max_iter=args.max_iter,
        starts=args.starts, seed=args.seed,
    )
    shell = check_shell_conditions(
        problem.model, problem.mesh, problem.grid, args.tau0, args.tau1, seed=args.seed,
    )
    stem = _stem(args.out)
    _write_text(Path(f"{stem}_u.csv"), _field_csv(result.u, problem.mesh))
    b_lines = ["x,B"] + [
        f"{_fmt(x)},{_fmt(b)}" for x, b in zip(problem.mesh.nodes, result.B)
    ]
    _write_text(Path(f"{stem}_B.csv"), "\n".join(b_lines) + "\n")
    report = "\n".join((
        f"converged: {result.converged}",
        f"collapsed: {result.collapsed}",
        f"iterations: {result.iterations}",
        f"residual: {_fmt(result.residual)}",
        f"r_Qu: {_fmt(result.r_Qu)}",
        f"amplitude: {_fmt(result.u.norm())}",
        f"shell tau0: {_fmt(shell.tau0)}",
        f"shell tau1: {_fmt(shell.tau1)}",
        f"verdict_small_densities: {shell.verdict_small_densities}",
        f"verdict_large_densities: {shell.verdict_large_densities}",
        f"min_small_excess: {_fmt(shell.min_small_excess)}",
        f"max_large_radius: {_fmt(shell.max_large_radius)}",
    )) + "\n"
    _write_text(Path(f"{stem}_report.txt"), report)
    sys.stdout.write(report)
    print(f"wrote {stem}_u.csv, {stem}_B.csv, {stem}_report.txt")
    return 0


def _check(label: str, ok: bool, detail: str, failures: list[str]) -> None:
    if ok:
        print(f"ok   {label}")
    else:
        print(f"FAIL {label}: {detail}")
        failures.append(label)


def _cmd_verify(args: argparse.Namespace) -> int:
    problem = _load_problem(args.model, args.nx, args.na)
    branch_path = Path(args.branch)
    with open(branch_path, newline="") as handle:
        rows = list(csv.reader(handle))
    if not rows or tuple(rows[0]) != BRANCH_COLUMNS:
        raise ValueError(f"{branch_path} does not have the branch column header")
    try:
        table = [
            {col: float(val) for col, val in zip(BRANCH_COLUMNS, row)} for row in rows[1:]
        ]
    except ValueError as exc:
        raise ValueError(f"{branch_path} has a non-numeric cell: {exc}") from exc
    if not table:
        raise ValueError(f"{branch_path} has no rows")

    failures: list[str] = []
    _check(
        "row 0 is the trivial point",
        abs(table[0]["n"] - 1.0) <= 1e-9 and abs(table[0]["eps"]) <= 1e-12,
        f"n={table[0]['n']!r}, eps={table[0]['eps']!r}",
        failures,
    )
    worst = max(abs(r["n"] * r["r_Qu"] - 1.0) for r in table)
    _check("columns satisfy n r(Q_u) = 1", worst <= 1e-6, f"max residual {worst:.3e}", failures)
    worst = max(r["reform_residual"] for r in table)
    _check("reformulation residuals", worst <= 1e-5, f"max {worst:.3e}", failures)
    worst = min(r["min_u"] for r in table)
    _check("nonnegative densities", worst >= -1e-10, f"min {worst:.3e}", failures)

    nontrivial = [r for r in table if r["eps"] > 1e-12]
    if nontrivial:
        ns = [r["n"] for r in nontrivial]
        rs = [r["r_Qu"] for r in nontrivial]
        cross = max(abs(max(ns) * min(rs) - 1.0), abs(min(ns) * max(rs) - 1.0))
        _check("branch extreme identities", cross <= 1e-6, f"residual {cross:.3e}", failures)

    # profile replay: rebuild the reproduction operator from each stored
    # field and recheck the identity and the reformulation residual
    model, _ = normalize(problem.model, problem.mesh, problem.grid)
    stem = _stem(args.branch)
    lin = None
    recompute_worst = 0.0
    reform_worst = 0.0
    for idx, row in enumerate(table):
        if row["eps"] <= 1e-12:
            continue
        field, mesh = _read_field_csv(Path(f"{stem}_profile_{idx:03d}.csv"), model.a_max)
        if mesh.nx != problem.mesh.nx or field.grid.na != problem.grid.na:
            raise ValueError(f"profile {idx:03d} grid does not match the model grid")
        if lin is None:
            lin = build_linearized(model, mesh, field.grid)
        ev = build_evolution(model, mesh, field.grid, field)
        rep = assemble_Q(model, ev, field)
        r, _vec = spectral_radius(rep)
        recompute_worst = max(recompute_worst, abs(row["n"] * r - 1.0))
        reform_worst = max(reform_worst, reformulation_residual(lin, row["n"], field))
    if nontrivial:
        _check(
            "profiles satisfy n r(Q_u) = 1",
            recompute_worst <= 1e-6, f"max residual {recompute_worst:.3e}", failures,
        )
        _check(
            "profiles satisfy the reformulation",
            reform_worst <= 1e-5, f"max residual {reform_worst:.3e}", failures,
        )

    # local expansion replay: the offset n - 1 must shrink in proportion
    # to the first-step amplitude (degenerate branches excepted)
    lin = lin or build_linearized(model, problem.mesh, problem.grid)
    d1 = first_step(model, problem.mesh, problem.grid, 1e-2, lin=lin).n - 1.0
    d2 = first_step(model, problem.mesh, problem.grid, 5e-3, lin=lin).n - 1.0
    if abs(d1) < 1e-8 and abs(d2) < 1e-8:
        _check("local expansion order", True, "", failures)
    else:
        ratio = d1 / d2 if d2 != 0.0 else np.inf
        _check(
            "local expansion order", ratio >= 1.5,
            f"offset ratio {ratio:.3f} (offsets {d1:.3e}, {d2:.3e})", failures,
        )

    if failures:
        print(f"{len(failures)} check(s) failed")
        return 1
    print("all checks passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="agequil",
        description="Equilibria and bifurcation branches of age- and space-structured "
        "population models with nonlinear diffusion",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--model", required=True, help="model config file")
        p.add_argument("--nx", type=int, default=None, help="override spatial intervals")
        p.add_argument("--na", type=int, default=None, help="override age steps")

    p = sub.add_parser("normalize", help="rescale cb so r(Q0) = 1")
    add_common(p)
    p.add_argument("--out", default=None, help="write the normalized config here")
    p.set_defaults(func=_cmd_normalize)

    p = sub.add_parser("trace", help="trace the nontrivial branch")
    add_common(p)
    p.add_argument("--out", required=True, help="branch CSV path")
    p.add_argument("--eps0", type=float, default=1e-2, help="first-step amplitude")
    p.add_argument("--step", type=float, default=0.05, help="initial arclength step")
    p.add_argument("--max-points", type=int, default=20, help="nontrivial points to trace")
    p.add_argument("--n-cap", type=float, default=4.0, help="stop beyond this n")
    p.add_argument("--norm-cap", type=float, default=2.0, help="stop beyond this amplitude")
    p.add_argument("--tol", type=float, default=1e-9, help="corrector tolerance")
    p.add_argument("--format", choices=["csv"], default="csv")
    p.set_defaults(func=_cmd_trace)

    p = sub.add_parser("fixedpoint", help="damped fixed-point run with shell checks")
    add_common(p)
    p.add_argument("--out", required=True, help="output stem or CSV path")
    p.add_argument("--damping", type=float, default=0.5)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=2000)
    p.add_argument("--starts", type=int, default=3)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--tau0", type=float, default=1e-2, help="small-amplitude shell")
    p.add_argument("--tau1", type=float, default=5.0, help="large-amplitude shell")
    p.set_defaults(func=_cmd_fixedpoint)

    p = sub.add_parser("verify", help="recheck a written branch")
    add_common(p)
    p.add_argument("--branch", required=True, help="branch CSV written by trace")
    p.set_defaults(func=_cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _COMPUTE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ModelError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
