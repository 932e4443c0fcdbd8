"""Linear solves against the zero-density evolution and the branch
reformulation built on them.

The central solve: given a source field f and birth data c, find the field
v with

    step residual   (v_{k+1} - v_k)/da + A0(a_{k+1}) v_{k+1} = f_k
    birth condition  v_0 - (1/2) l0(v) = c

realized as  v = Pi_0(.,0) w + K0 f  with  w = (I - Q0/2)^{-1} (l0(K0 f)/2 + c).
The factor I - Q0/2 is invertible for a normalized model because the
reproduction number 1 stays below 2.  Both building blocks reuse the
discrete steps of the evolution module, so solutions of the stepped
equilibrium equations satisfy the reformulated identity

    u = lam * L u + H(lam, u),        lam = n - 1/2,

with L u the solve fed by l0(u) alone and H collecting the nonlinear
remainders, to solver precision rather than up to a second
discretization error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .discretize import OperatorMatrix, SpatialMesh, assemble
from .evolution import AgeGrid, DensityField, EvolutionOperator, apply_K0, build_evolution, propagate
from .model import ModelSpec
from .reproduction import ReproductionOperator, assemble_Q, birth_linear, birth_star, spectral_radius
from .tridiag import tridiag_matvec


class LinearizedError(ValueError):
    pass


@dataclass
class LinearizedOperators:
    """Cached zero-density machinery shared by the linearized solves."""

    model: ModelSpec
    mesh: SpatialMesh
    grid: AgeGrid
    ev0: EvolutionOperator
    rep0: ReproductionOperator
    lu: tuple
    a0_parts: list[OperatorMatrix]

    @property
    def r0(self) -> float:
        r, _ = spectral_radius(self.rep0)
        return r


def build_linearized(model: ModelSpec, mesh: SpatialMesh, grid: AgeGrid) -> LinearizedOperators:
    ev0 = build_evolution(model, mesh, grid)
    rep0 = assemble_Q(model, ev0)
    shifted = np.eye(mesh.nx) - 0.5 * rep0.matrix
    try:
        lu = scipy.linalg.lu_factor(shifted)
    except scipy.linalg.LinAlgError as exc:
        raise LinearizedError(
            "I - Q0/2 is singular; the model does not look normalized"
        ) from exc
    a0_parts = [assemble(model, mesh, float(grid.ages[k + 1])) for k in range(grid.na)]
    return LinearizedOperators(model, mesh, grid, ev0, rep0, lu, a0_parts)


def _ell0(lin: LinearizedOperators, values: np.ndarray) -> np.ndarray:
    return birth_linear(lin.model, lin.grid, values)


def solve_linear(
    lin: LinearizedOperators, birth_data: np.ndarray, source: DensityField | None = None
) -> DensityField:
    """Unique solution of the stepped linear problem described above."""
    birth_data = np.asarray(birth_data, dtype=float)
    if birth_data.shape != (lin.mesh.nx,):
        raise LinearizedError(f"birth data has shape {birth_data.shape}, expected ({lin.mesh.nx},)")
    if source is not None:
        kf = apply_K0(lin.ev0, source)
        rhs = birth_data + 0.5 * _ell0(lin, kf.values)
    else:
        kf = None
        rhs = birth_data
    w = scipy.linalg.lu_solve(lin.lu, rhs)
    out = propagate(lin.ev0, w)
    if kf is not None:
        out = out + kf
    return out


def apply_birth_feedback(lin: LinearizedOperators, u: DensityField) -> DensityField:
    """The compact linear map L: feed l0(u) through the linear solve."""
    return solve_linear(lin, _ell0(lin, u.values))


def perturbation_source(lin: LinearizedOperators, u: DensityField) -> DensityField:
    """Source rows f_k = -(A(u_k, a_{k+1}) - A0(a_{k+1})) u_{k+1}.

    Row indexing matches the stepping convention: row k feeds the step
    from a_k to a_{k+1}, with coefficients frozen on the slice at a_k, so
    a field propagated by its own evolution satisfies the stepped linear
    equations with exactly this source.  Row na is unused and stays zero.
    """
    values = np.zeros_like(u.values)
    for k in range(lin.grid.na):
        a_next = float(lin.grid.ages[k + 1])
        au = assemble(lin.model, lin.mesh, a_next, u.values[k])
        a0 = lin.a0_parts[k]
        values[k] = -tridiag_matvec(
            au.lower - a0.lower, au.diag - a0.diag, au.upper - a0.upper, u.values[k + 1]
        )
    return DensityField(values, u.grid)


def apply_perturbation(lin: LinearizedOperators, lam: float, u: DensityField) -> DensityField:
    """The remainder map H(lam, u); identically zero on linear models."""
    ell_star = birth_star(lin.model, lin.grid, u.values)
    source = perturbation_source(lin, u)
    if not np.any(source.values) and not np.any(ell_star):
        return DensityField.zeros(lin.grid, lin.mesh.nx)
    return solve_linear(lin, (lam + 0.5) * ell_star, source)


def reformulation_residual(lin: LinearizedOperators, n: float, u: DensityField) -> float:
    """Field norm of  u - lam L u - H(lam, u)  at lam = n - 1/2."""
    lam = n - 0.5
    lu_field = apply_birth_feedback(lin, u)
    h_field = apply_perturbation(lin, lam, u)
    res = u.values - lam * lu_field.values - h_field.values
    return DensityField(res, u.grid).norm()


def linear_residuals(
    lin: LinearizedOperators,
    sol: DensityField,
    birth_data: np.ndarray,
    source: DensityField | None = None,
) -> tuple[float, float]:
    """Max-norm residuals of the two stepped equations for a solve output."""
    da = lin.grid.da
    res_step = 0.0
    for k in range(lin.grid.na):
        a0 = lin.a0_parts[k]
        lhs = (sol.values[k + 1] - sol.values[k]) / da + a0.matvec(sol.values[k + 1])
        f_k = source.values[k] if source is not None else 0.0
        res_step = max(res_step, float(np.max(np.abs(lhs - f_k))))
    res_birth = float(
        np.max(np.abs(sol.values[0] - 0.5 * _ell0(lin, sol.values) - np.asarray(birth_data, dtype=float)))
    )
    return res_step, res_birth


def birth_feedback_eigenvalue(
    lin: LinearizedOperators, tol: float = 1e-10, max_iter: int = 5000
) -> float:
    """Dominant eigenvalue of L by power iteration on fields.

    For a normalized model this equals 2: mu is a characteristic value of
    L exactly when mu + 1/2 is one of Q0, and the leading characteristic
    value of Q0 is 1.
    """
    start = np.ones((lin.grid.na + 1, lin.mesh.nx))
    v = DensityField(start / np.linalg.norm(start), lin.grid)
    lam = 0.0
    for _ in range(max_iter):
        w = apply_birth_feedback(lin, v)
        norm_w = float(np.linalg.norm(w.values))
        if norm_w == 0.0:
            return 0.0
        lam = float(np.sum(w.values * v.values))
        if float(np.linalg.norm(w.values - lam * v.values)) <= tol * abs(lam):
            return lam
        v = DensityField(w.values / norm_w, lin.grid)
    raise LinearizedError(f"power iteration on L did not converge within {max_iter} iterations")
