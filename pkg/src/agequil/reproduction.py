"""Net reproduction operator Q(u) and the fertility normalization.

Q(u) w = integral of  cb * b(u(a)) * (Pi_u(a,0) w)  over age, assembled
column by column from the factored evolution steps with trapezoid
quadrature.  The production eigensolver is plain power iteration from the
all-ones vector; dense eigendecompositions appear only as test oracles.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .discretize import SpatialMesh
from .evolution import AgeGrid, DensityField, EvolutionOperator, build_evolution
from .expr import evaluate, evaluate_on
from .model import ModelSpec, with_cb


class ReproductionError(ValueError):
    pass


class PowerIterationError(RuntimeError):
    pass


@dataclass
class ReproductionOperator:
    """Dense nonnegative matrix of Q(u) with cached dominant pair."""

    matrix: np.ndarray
    from_zero: bool
    _radius: float | None = field(default=None, repr=False)
    _perron: np.ndarray | None = field(default=None, repr=False)

    @property
    def nx(self) -> int:
        return self.matrix.shape[0]


def birth_density(model: ModelSpec, values: np.ndarray) -> np.ndarray:
    """Pointwise fertility weights cb * b(u) on a field's values."""
    out = np.asarray(evaluate(model.b, {"u": values}), dtype=float)
    return model.cb * np.broadcast_to(out, values.shape)


def birth_functional(model: ModelSpec, grid: AgeGrid, values: np.ndarray) -> np.ndarray:
    """Full birth integral  l(u) = integral cb * b(u(a)) u(a) da."""
    return grid.weights @ (birth_density(model, values) * values)


def birth_linear(model: ModelSpec, grid: AgeGrid, values: np.ndarray) -> np.ndarray:
    """Linear part  l0(u) = cb * b(0) * integral u(a) da."""
    b0 = float(evaluate(model.b, {"u": 0.0}))
    return model.cb * b0 * (grid.weights @ values)


def birth_star(model: ModelSpec, grid: AgeGrid, values: np.ndarray) -> np.ndarray:
    """Remainder  l*(u) = integral cb * (b(u(a)) - b(0)) u(a) da."""
    b0 = float(evaluate(model.b, {"u": 0.0}))
    dens = birth_density(model, values) - model.cb * b0
    return grid.weights @ (dens * values)


def assemble_Q(
    model: ModelSpec, ev: EvolutionOperator, u: DensityField | None = None
) -> ReproductionOperator:
    """Assemble Q(u) from an evolution built on the same frozen field.

    The age propagation of every unit basis vector is accumulated in one
    pass; fertility weights are evaluated on the same field the evolution
    was frozen at (u may restate it, but must match ev.source).
    """
    if u is None:
        u = ev.source
    if (u is None) != ev.from_zero:
        raise ReproductionError("fertility field does not match the evolution's frozen field")
    if u is not None and u.values.shape != (ev.grid.na + 1, ev.mesh.nx):
        raise ReproductionError("fertility field does not match the grids")
    nx = ev.mesh.nx
    w = ev.grid.weights
    if u is None:
        b0 = float(evaluate(model.b, {"u": 0.0}))
        bvals = np.full((ev.grid.na + 1, nx), model.cb * b0)
    else:
        bvals = birth_density(model, u.values)
    basis = np.eye(nx)
    q = w[0] * (bvals[0][:, None] * basis)
    for k in range(ev.grid.na):
        basis = ev.steps[k].solve(basis)
        q += w[k + 1] * (bvals[k + 1][:, None] * basis)
    return ReproductionOperator(matrix=q, from_zero=u is None)


def _power_iteration(matrix: np.ndarray, tol: float, max_iter: int) -> tuple[bool, float, np.ndarray]:
    # for a nonnegative matrix and a positive iterate the radius sits in
    # the bracket of extreme ratios (Mv)_i / v_i; a dominant cluster that
    # is numerically tied keeps that bracket pinned at the tie spread, so
    # a stagnant-but-tight bracket falls back to a dense solve checked
    # against the rigorous bracket instead of grinding ~1/gap iterations
    nonneg = bool(np.all(matrix >= 0.0))
    v = np.ones(matrix.shape[0])
    lam = 0.0
    width_prev = np.inf
    for it in range(max_iter):
        w = matrix @ v
        lam = float(np.max(np.abs(w)))
        if lam == 0.0:
            return True, 0.0, v
        if nonneg and np.all(v > 0.0):
            ratios = w / v
            lo, hi = float(np.min(ratios)), float(np.max(ratios))
            width = hi - lo
            if width <= tol * hi:
                return True, hi, w / lam
            if it % 50 == 49:
                if width > 0.5 * width_prev and width <= 1e-6 * hi:
                    r = float(np.max(np.abs(np.linalg.eigvals(matrix))))
                    if lo - width <= r <= hi + width:
                        return True, r, w / lam
                width_prev = width
        if float(np.max(np.abs(w - lam * v))) <= tol * lam:
            return True, lam, w / lam
        v = w / lam
    return False, lam, v


def spectral_radius(
    rep: ReproductionOperator, tol: float = 1e-13, max_iter: int = 100000
) -> tuple[float, np.ndarray]:
    """Dominant eigenvalue and normalized eigenvector by power iteration.

    For the nonnegative irreducible matrices assembled here the limit is
    the spectral radius with the positive eigenvector (max-norm 1).
    """
    if rep._radius is not None:
        return rep._radius, rep._perron
    if not np.all(np.isfinite(rep.matrix)):
        raise ReproductionError("reproduction matrix has non-finite entries")
    ok, lam, v = _power_iteration(rep.matrix, tol, max_iter)
    if not ok:
        raise PowerIterationError(
            f"power iteration did not converge within {max_iter} iterations"
        )
    rep._radius, rep._perron = lam, v
    return lam, v


def normalize(
    model: ModelSpec,
    mesh: SpatialMesh,
    grid: AgeGrid,
    tol: float = 1e-10,
    max_passes: int = 3,
) -> tuple[ModelSpec, float]:
    """Rescale cb so the linear problem has reproduction number one.

    Returns (rescaled model, spectral radius before rescaling).  The
    radius is exactly linear in cb, so one pass suffices; the loop is a
    guard that re-measures and refuses to return an unnormalized model.
    """
    ev0 = build_evolution(model, mesh, grid)
    rep = assemble_Q(model, ev0)
    r_before, _ = spectral_radius(rep)
    if not (np.isfinite(r_before) and r_before > 0):
        raise ReproductionError(f"spectral radius {r_before!r} cannot be normalized away")
    current = model
    r = r_before
    for _ in range(max_passes):
        current = with_cb(current, current.cb / r)
        rep = assemble_Q(current, ev0)
        r, _ = spectral_radius(rep)
        if abs(r - 1.0) <= tol:
            return current, r_before
    raise ReproductionError(f"normalization stalled at r = {r!r}")


def characteristic_values(rep: ReproductionOperator, k: int, tol: float = 1e-11, max_iter: int = 50000) -> list[float]:
    """Reciprocals of the k leading real eigenvalues, deflating one by one.

    Hotelling deflation with left/right dominant pairs from power
    iteration.  A dominant complex pair shows up as non-convergence; the
    sweep stops there with a warning and returns the values found.
    """
    if not 1 <= k <= rep.nx:
        raise ReproductionError(f"k = {k} outside 1..{rep.nx}")
    work = rep.matrix.copy()
    out: list[float] = []
    for _ in range(k):
        ok_r, lam, v = _power_iteration(work, tol, max_iter)
        ok_l, lam_l, w = _power_iteration(work.T, tol, max_iter)
        if not (ok_r and ok_l) or abs(lam) < 1e-14:
            warnings.warn(
                "deflation stopped early: dominant pair did not converge "
                "(likely a complex pair or a zero block)",
                RuntimeWarning,
                stacklevel=2,
            )
            break
        denom = float(w @ v)
        if abs(denom) < 1e-12 * np.linalg.norm(v) * np.linalg.norm(w):
            warnings.warn("deflation breakdown: left/right vectors nearly orthogonal", RuntimeWarning, stacklevel=2)
            break
        # two-sided Rayleigh quotient sharpens the power-iteration estimate
        lam_acc = float(w @ (work @ v)) / denom
        if abs(lam_acc) < 1e-14:
            break
        out.append(1.0 / lam_acc)
        work = work - lam_acc * np.outer(v, w) / denom
    if not out:
        raise ReproductionError("no real leading eigenvalue could be extracted")
    return out
