"""Continuation of the nontrivial equilibrium branch in the fertility
intensity n.

The branch lives in (n, B) space: a corrected point solves the birth
fixed-point system

    G(B, n) = B - n * l(u(B)) = 0

where u(B) is the field propagated from B with coefficients made
self-consistent by an inner Picard loop.  The trivial solution exists for
every n; the nontrivial branch leaves it at n = 1 (after normalization)
along the Perron direction of Q0.  The first step pins the amplitude
along that direction and frees n; subsequent steps are classic
pseudo-arclength: secant predictor, Newton corrector on (B, n) augmented
with the plane through the predictor.  Correction at fixed n and at fixed
amplitude reuse the same Newton core.

Tolerances are relative to the birth vector scale, so points early on the
branch (amplitudes around 1e-3) are resolved as sharply as later ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .discretize import AssemblyError, SpatialMesh
from .evolution import AgeGrid, DensityField, EvolutionError, build_evolution, propagate
from .linearized import LinearizedOperators, build_linearized, reformulation_residual
from .model import ModelSpec
from .reproduction import assemble_Q, birth_functional, spectral_radius

TOL_IDENTITY = 1e-6
TOL_POSITIVITY = 1e-10
TRIVIAL_THRESHOLD = 1e-12
FD_STEP = 1e-6


class ContinuationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Plane:
    """Pseudo-arclength plane through an anchor with a tangent normal."""

    normal_B: np.ndarray
    normal_n: float
    anchor_B: np.ndarray
    anchor_n: float

    def value(self, B: np.ndarray, n: float, u: DensityField) -> float:
        return float(self.normal_B @ (B - self.anchor_B) + self.normal_n * (n - self.anchor_n))


@dataclass(frozen=True)
class NormTarget:
    """Constraint pinning the field amplitude; n stays free.

    The amplitude takes a max across space, so the corrector's per-column
    finite differences are only reliable when the maximizing column is
    unique.  Under ties (spatially constant problems) use solve_at_norm,
    which drives the same residual with an outer scalar iteration.
    """

    target: float

    def value(self, B: np.ndarray, n: float, u: DensityField) -> float:
        return u.norm() - self.target


@dataclass
class BranchPoint:
    """One corrected equilibrium with its diagnostics.

    identity_residual is |n * r(Q_u) - 1|, the along-branch identity.
    residual_direct is the birth/field fixed-point residual relative to
    the birth scale; reform_residual is the absolute field norm of
    u - lam L u - H(lam, u) at lam = n - 1/2.
    """

    n: float
    u: DensityField
    B: np.ndarray
    eps: float
    r_Qu: float
    identity_residual: float
    residual_direct: float
    reform_residual: float
    min_u: float
    trivial: bool = False
    newton_iters: int = 0


@dataclass
class Branch:
    points: list[BranchPoint] = field(default_factory=list)
    terminated: str = ""

    def nontrivial(self) -> list[BranchPoint]:
        return [p for p in self.points if not p.trivial]


@dataclass(frozen=True)
class BranchStats:
    sigma_i: float
    sigma_s: float
    N_i: float
    N_s: float
    max_identity_residual: float
    cross_si_Ni: float
    cross_ss_Ns: float


def _picard_field(
    model: ModelSpec,
    mesh: SpatialMesh,
    grid: AgeGrid,
    B: np.ndarray,
    u_start: DensityField | None,
    tol: float,
    max_sweeps: int = 200,
) -> DensityField:
    """Self-consistent field for a fixed birth vector (frozen-coefficient sweeps)."""
    u = u_start
    diff = np.inf
    for _ in range(max_sweeps):
        ev = build_evolution(model, mesh, grid, u)
        u_new = propagate(ev, B)
        if u is not None:
            diff = float(np.max(np.abs(u_new.values - u.values)))
        u = u_new
        if diff <= tol:
            return u
    raise ContinuationError(f"inner Picard stagnation (last change {diff:.3e}, tol {tol:.3e})")


def _scaled_tol(tol: float, B: np.ndarray) -> float:
    return tol * max(float(np.max(np.abs(B))), 1e-12)


def correct(
    model: ModelSpec,
    mesh: SpatialMesh,
    grid: AgeGrid,
    n: float,
    u_guess: DensityField,
    mode="fixed-n",
    *,
    tol: float = 1e-9,
    max_iter: int = 30,
    lin: LinearizedOperators | None = None,
) -> BranchPoint:
    """Newton corrector from a predictor field.

    mode is either the string "fixed-n" (solve for B at the given n) or a
    constraint object with a value(B, n, u) method (solve for (B, n) with
    that scalar equation appended; pseudo-arclength passes a Plane).  The
    constraint must respond smoothly to single-column changes of B; see
    NormTarget for the caveat on max-based constraints.  The
    finite-difference Jacobian uses step 1e-6 * (1 + |B|_inf) per
    column.  Raises ContinuationError on divergence, a singular Jacobian,
    Picard stagnation, or a converged point with negative density.
    """
    nx = mesh.nx
    free_n = not (isinstance(mode, str) and mode == "fixed-n")
    constraint = mode if free_n else None
    tol_picard_factor = 0.1  # one order tighter than the Newton tolerance

    B = np.asarray(u_guess.birth, dtype=float).copy()
    n_cur = float(n)
    u_warm = u_guess

    def evaluate(Bv: np.ndarray, nv: float, warm: DensityField):
        u_f = _picard_field(model, mesh, grid, Bv, warm, _scaled_tol(tol * tol_picard_factor, Bv))
        res = Bv - nv * birth_functional(model, grid, u_f.values)
        if free_n:
            res = np.append(res, constraint.value(Bv, nv, u_f))
        return res, u_f

    res_vec, u_warm = evaluate(B, n_cur, u_warm)
    iters = 0
    for iters in range(1, max_iter + 1):
        res_norm = float(np.max(np.abs(res_vec)))
        if res_norm <= _scaled_tol(tol, B):
            break
        if not np.isfinite(res_norm) or float(np.max(np.abs(B))) > 1e8:
            raise ContinuationError("corrector diverged")

        hb = FD_STEP * (1.0 + float(np.max(np.abs(B))))
        ncols = nx + 1 if free_n else nx
        jac = np.empty((res_vec.shape[0], ncols))
        for j in range(nx):
            Bp = B.copy()
            Bp[j] += hb
            rp, _ = evaluate(Bp, n_cur, u_warm)
            jac[:, j] = (rp - res_vec) / hb
        if free_n:
            hn = FD_STEP * (1.0 + abs(n_cur))
            rp, _ = evaluate(B, n_cur + hn, u_warm)
            jac[:, nx] = (rp - res_vec) / hn

        try:
            delta = np.linalg.solve(jac, -res_vec)
        except np.linalg.LinAlgError as exc:
            raise ContinuationError("singular corrector Jacobian") from exc

        accepted = False
        for scale in (1.0, 0.5, 0.25, 0.125):
            B_try = B + scale * delta[:nx]
            n_try = n_cur + scale * delta[nx] if free_n else n_cur
            try:
                res_try, u_try = evaluate(B_try, n_try, u_warm)
            except (ContinuationError, AssemblyError, EvolutionError):
                continue
            if float(np.max(np.abs(res_try))) < res_norm or float(np.max(np.abs(res_try))) <= _scaled_tol(tol, B_try):
                B, n_cur, res_vec, u_warm = B_try, n_try, res_try, u_try
                accepted = True
                break
        if not accepted:
            raise ContinuationError(f"corrector stalled at residual {res_norm:.3e}")
    else:
        raise ContinuationError(f"corrector did not converge within {max_iter} iterations")

    if lin is None:
        lin = build_linearized(model, mesh, grid)
    return _finalize(model, mesh, grid, n_cur, B, u_warm, lin, tol, iters)


def _finalize(
    model: ModelSpec,
    mesh: SpatialMesh,
    grid: AgeGrid,
    n: float,
    B: np.ndarray,
    u_last: DensityField | None,
    lin: LinearizedOperators,
    tol: float,
    iters: int,
) -> BranchPoint:
    if float(np.max(np.abs(B))) < TRIVIAL_THRESHOLD:
        r0, _ = spectral_radius(lin.rep0)
        zero = DensityField.zeros(grid, mesh.nx)
        return BranchPoint(
            n=n, u=zero, B=np.zeros(mesh.nx), eps=0.0, r_Qu=r0,
            identity_residual=abs(n * r0 - 1.0), residual_direct=0.0,
            reform_residual=0.0, min_u=0.0, trivial=True, newton_iters=iters,
        )
    # polish the self-consistency one order beyond the corrector, then
    # store the field as the exact propagation of its own evolution
    u = _picard_field(model, mesh, grid, B, u_last, _scaled_tol(tol * 0.01, B))
    ev = build_evolution(model, mesh, grid, u)
    u = propagate(ev, B)
    ev = build_evolution(model, mesh, grid, u)
    u_check = propagate(ev, B)
    scale = max(float(np.max(np.abs(B))), 1e-300)
    field_res = float(np.max(np.abs(u_check.values - u.values))) / scale
    birth_res = float(np.max(np.abs(B - n * birth_functional(model, grid, u.values)))) / scale
    rep = assemble_Q(model, ev, u)
    r, _ = spectral_radius(rep)
    point = BranchPoint(
        n=n,
        u=u,
        B=B,
        eps=u.norm(),
        r_Qu=r,
        identity_residual=abs(n * r - 1.0),
        residual_direct=max(field_res, birth_res),
        reform_residual=reformulation_residual(lin, n, u),
        min_u=float(np.min(u.values)),
        trivial=False,
        newton_iters=iters,
    )
    if point.min_u < -TOL_POSITIVITY:
        raise ContinuationError(f"corrected point has negative density (min {point.min_u:.3e})")
    return point


def first_step(
    model: ModelSpec,
    mesh: SpatialMesh,
    grid: AgeGrid,
    eps0: float,
    *,
    tol: float = 1e-9,
    lin: LinearizedOperators | None = None,
) -> BranchPoint:
    """Leave the trivial solution along the Perron direction.

    The predictor is eps0 times the linear evolution of the Perron birth
    vector; the corrector frees n and pins the component of B along that
    direction, which is the local expansion's parameterization.  eps0 = 0
    returns the trivial point at n = 1.
    """
    if eps0 < 0:
        raise ContinuationError("eps0 must be nonnegative")
    if lin is None:
        lin = build_linearized(model, mesh, grid)
    r0, perron = spectral_radius(lin.rep0)
    if abs(r0 - 1.0) > 1e-3:
        raise ContinuationError(f"model is not normalized: r(Q0) = {r0!r}")
    if eps0 == 0.0:
        return _finalize(model, mesh, grid, 1.0, np.zeros(mesh.nx), None, lin, tol, 0)
    B0 = eps0 * perron
    u_pred = propagate(lin.ev0, B0)
    plane = Plane(
        normal_B=perron / float(np.linalg.norm(perron)),
        normal_n=0.0,
        anchor_B=B0,
        anchor_n=1.0,
    )
    point = correct(model, mesh, grid, 1.0, u_pred, plane, tol=tol, lin=lin)
    if point.trivial:
        raise ContinuationError("first step collapsed to the trivial solution; reduce eps0")
    return point


def trace_branch(
    model: ModelSpec,
    mesh: SpatialMesh,
    grid: AgeGrid,
    *,
    eps0: float = 1e-2,
    step: float = 0.05,
    max_points: int = 20,
    n_cap: float = 4.0,
    norm_cap: float = 2.0,
    tol: float = 1e-9,
    lin: LinearizedOperators | None = None,
) -> Branch:
    """Trace the branch from (1, 0) until a cap or max_points nontrivial points.

    Secant predictor and plane corrector; the step is halved on a
    corrector failure (two consecutive failures at the minimal step
    abort) and grown gently after easy corrections.  A corrector collapse
    onto the trivial solution away from n = 1 terminates the trace: the
    branch ran into another characteristic value.
    """
    if lin is None:
        lin = build_linearized(model, mesh, grid)
    branch = Branch()
    branch.points.append(first_step(model, mesh, grid, 0.0, tol=tol, lin=lin))
    p1 = first_step(model, mesh, grid, eps0, tol=tol, lin=lin)
    _require_invariants(p1)
    branch.points.append(p1)

    z_prev = (np.zeros(mesh.nx), 1.0)
    z_cur = (p1.B, p1.n)
    step_cur = float(step)
    step_min = step / 256.0
    fails_at_min = 0
    branch.terminated = "max_points reached"
    while len(branch.nontrivial()) < max_points:
        last = branch.points[-1]
        if last.n > n_cap:
            branch.terminated = f"n cap {n_cap} exceeded"
            break
        if last.eps > norm_cap:
            branch.terminated = f"amplitude cap {norm_cap} exceeded"
            break
        tangent = np.append(z_cur[0] - z_prev[0], z_cur[1] - z_prev[1])
        tangent /= float(np.linalg.norm(tangent))
        pred_B = z_cur[0] + step_cur * tangent[:-1]
        pred_n = z_cur[1] + step_cur * float(tangent[-1])
        plane = Plane(tangent[:-1], float(tangent[-1]), pred_B, pred_n)
        u_pred = propagate(build_evolution(model, mesh, grid, last.u), pred_B)
        try:
            point = correct(model, mesh, grid, pred_n, u_pred, plane, tol=tol, lin=lin)
            if not point.trivial:
                _require_invariants(point)
        except (ContinuationError, AssemblyError, EvolutionError):
            if step_cur <= step_min:
                fails_at_min += 1
                if fails_at_min >= 2:
                    raise ContinuationError(
                        "two consecutive corrector failures at the minimal step"
                    ) from None
            step_cur = max(step_cur / 2.0, step_min)
            continue
        if point.trivial:
            branch.terminated = (
                f"collapsed to the trivial solution near n = {last.n:.6g} "
                "(another characteristic value)"
            )
            break
        branch.points.append(point)
        z_prev, z_cur = z_cur, (point.B, point.n)
        fails_at_min = 0
        if point.newton_iters <= 4:
            step_cur = min(step_cur * 1.4, step * 8.0)
    return branch


def _require_invariants(point: BranchPoint) -> None:
    if point.identity_residual > TOL_IDENTITY:
        raise ContinuationError(
            f"branch identity violated: |n r(Q_u) - 1| = {point.identity_residual:.3e}"
        )
    if point.min_u < -TOL_POSITIVITY:
        raise ContinuationError(f"negative density on accepted point (min {point.min_u:.3e})")


def branch_stats(branch: Branch) -> BranchStats:
    """Extremes of n and r(Q_u) over the nontrivial points and their cross products.

    Along the branch n * r(Q_u) = 1, so sigma_s * N_i and sigma_i * N_s
    both equal one on the visited set.
    """
    pts = branch.nontrivial()
    if not pts:
        raise ContinuationError("branch has no nontrivial points")
    ns = np.array([p.n for p in pts])
    rs = np.array([p.r_Qu for p in pts])
    return BranchStats(
        sigma_i=float(ns.min()),
        sigma_s=float(ns.max()),
        N_i=float(rs.min()),
        N_s=float(rs.max()),
        max_identity_residual=float(max(p.identity_residual for p in pts)),
        cross_si_Ni=float(abs(ns.max() * rs.min() - 1.0)),
        cross_ss_Ns=float(abs(ns.min() * rs.max() - 1.0)),
    )


def solve_at_norm(
    model: ModelSpec,
    mesh: SpatialMesh,
    grid: AgeGrid,
    target: float,
    *,
    eps0: float = 1e-3,
    step: float = 0.05,
    tol: float = 1e-9,
    max_points: int = 200,
    lin: LinearizedOperators | None = None,
) -> BranchPoint:
    """Branch point whose field amplitude equals target, with n free.

    Traces the branch until the amplitude brackets the target, then
    solves the scalar equation amplitude(n) = target with a safeguarded
    secant over fixed-n corrections.  The scalar outer loop only compares
    realized amplitudes, so it is insensitive to the nonsmoothness that
    breaks per-column differencing of the max-based norm.
    """
    if target <= 0:
        raise ContinuationError("target amplitude must be positive")
    if lin is None:
        lin = build_linearized(model, mesh, grid)
    branch = trace_branch(
        model, mesh, grid, eps0=eps0, step=step, max_points=max_points,
        n_cap=np.inf, norm_cap=target, tol=tol, lin=lin,
    )
    last = branch.points[-1]
    if last.eps < target:
        raise ContinuationError(
            f"branch terminated ({branch.terminated}) before amplitude {target}"
        )
    prev = branch.points[-2]
    n_lo, e_lo = prev.n, prev.eps
    n_hi, e_hi = last.n, last.eps
    point = last
    # the corrector resolves B to tol * |B|, so the amplitude cannot be
    # pinned more sharply than that
    amp_tol = tol * max(1.0, target)
    for _ in range(60):
        if not point.trivial and abs(point.eps - target) <= amp_tol:
            return point
        if e_hi != e_lo:
            n_try = n_hi + (target - e_hi) * (n_hi - n_lo) / (e_hi - e_lo)
        else:
            n_try = 0.5 * (n_lo + n_hi)
        lo, hi = min(n_lo, n_hi), max(n_lo, n_hi)
        if not (lo < n_try < hi):
            n_try = 0.5 * (lo + hi)
        warm = point.u if not point.trivial else last.u
        point = correct(model, mesh, grid, n_try, warm, tol=tol, lin=lin)
        eps_try = point.eps
        if eps_try < target:
            n_lo, e_lo = n_try, eps_try
        else:
            n_hi, e_hi = n_try, eps_try
    raise ContinuationError(
        f"amplitude solve did not reach target {target} (best {point.eps!r})"
    )
