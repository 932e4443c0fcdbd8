"""Parameter-free equilibria by damped fixed-point iteration.

This is the second, independent route to an equilibrium: no continuation,
no Newton, no linearization.  The map sends (B, u) to the propagated
field and its birth functional,

    u  <-  propagate(evolution(u), B)
    B  <-  l(u)

and the damped update mixes the image with the current iterate.  When the
model satisfies the shell conditions (the reproduction operator exceeds
the identity at small amplitudes and has spectral radius below one at
large amplitudes), the iteration is pushed away from zero and pulled back
from infinity, and a nontrivial fixed point exists between the shells.
check_shell_conditions probes both shells on sampled fields.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .discretize import SpatialMesh
from .evolution import AgeGrid, DensityField, build_evolution, propagate
from .model import ModelSpec
from .reproduction import assemble_Q, birth_functional, spectral_radius

COLLAPSE_THRESHOLD = 1e-12


class FixedPointError(RuntimeError):
    pass


@dataclass
class FixedPointResult:
    """Outcome of one damped run.

    converged marks a nontrivial fixed point; collapsed marks attraction
    to the trivial equilibrium (the two are mutually exclusive).
    residual is the undamped self-consistency defect of the final pair.
    """

    u: DensityField
    B: np.ndarray
    converged: bool
    collapsed: bool
    iterations: int
    residual: float
    r_Qu: float
    last_change: float


def solve_fixedpoint(
    model: ModelSpec,
    mesh: SpatialMesh,
    grid: AgeGrid,
    *,
    damping: float = 0.5,
    tol: float = 1e-10,
    max_iter: int = 2000,
    B_init: np.ndarray | None = None,
) -> FixedPointResult:
    """Damped iteration from B_init (all ones by default).

    Stops when the update change drops below tol, or when the birth
    vector collapses below 1e-12 (the trivial equilibrium attracted the
    iterate; returned with collapsed=True).  Raises FixedPointError for
    damping outside (0, 1], a negative or misshapen B_init, or an
    unconverged iteration at max_iter.
    """
    if not 0.0 < damping <= 1.0:
        raise FixedPointError(f"damping must lie in (0, 1], got {damping!r}")
    if B_init is None:
        B = np.ones(mesh.nx)
    else:
        B = np.asarray(B_init, dtype=float).copy()
        if B.shape != (mesh.nx,):
            raise FixedPointError(f"B_init must have shape ({mesh.nx},)")
        if not np.all(np.isfinite(B)) or np.any(B < 0):
            raise FixedPointError("B_init must be finite and nonnegative")

    u = propagate(build_evolution(model, mesh, grid, None), B)
    change = np.inf
    for it in range(1, max_iter + 1):
        ev = build_evolution(model, mesh, grid, u)
        u_prop = propagate(ev, B)
        B_new = birth_functional(model, grid, u_prop.values)
        u_next = (1.0 - damping) * u + damping * u_prop
        B_next = (1.0 - damping) * B + damping * B_new
        change = max(
            float(np.max(np.abs(B_next - B))),
            float(np.max(np.abs(u_next.values - u.values))),
        )
        u, B = u_next, B_next
        if float(np.max(np.abs(B))) < COLLAPSE_THRESHOLD:
            return _diagnose(model, mesh, grid, np.zeros(mesh.nx), None, False, True, it, change)
        if change <= tol:
            return _diagnose(model, mesh, grid, B, u, True, False, it, change)
    raise FixedPointError(f"no convergence in {max_iter} iterations (last change {change:.3e})")


def _diagnose(
    model: ModelSpec,
    mesh: SpatialMesh,
    grid: AgeGrid,
    B: np.ndarray,
    u: DensityField | None,
    converged: bool,
    collapsed: bool,
    iterations: int,
    change: float,
) -> FixedPointResult:
    # a few undamped sweeps tighten the pair to self-consistency before
    # the residual and the reproduction radius are measured
    if not collapsed:
        for _ in range(200):
            ev = build_evolution(model, mesh, grid, u)
            u_prop = propagate(ev, B)
            B_prop = birth_functional(model, grid, u_prop.values)
            delta = max(
                float(np.max(np.abs(B_prop - B))),
                float(np.max(np.abs(u_prop.values - u.values))),
            )
            u, B = u_prop, B_prop
            if delta <= 1e-13 * max(1.0, float(np.max(np.abs(B)))):
                break
        # a slow slide toward zero can pass the change test well above
        # the collapse threshold; the polish exposes it
        if float(np.max(np.abs(B))) < COLLAPSE_THRESHOLD:
            converged, collapsed = False, True
    if collapsed:
        B = np.zeros(mesh.nx)
        u = DensityField.zeros(grid, mesh.nx)
    ev = build_evolution(model, mesh, grid, u)
    u_check = propagate(ev, B)
    residual = max(
        float(np.max(np.abs(B - birth_functional(model, grid, u_check.values)))),
        float(np.max(np.abs(u_check.values - u.values))),
    )
    rep = assemble_Q(model, ev, u)
    r, _ = spectral_radius(rep)
    return FixedPointResult(
        u=u, B=B, converged=converged, collapsed=collapsed,
        iterations=iterations, residual=residual, r_Qu=r, last_change=change,
    )


def multistart_fixedpoint(
    model: ModelSpec,
    mesh: SpatialMesh,
    grid: AgeGrid,
    *,
    damping: float = 0.5,
    tol: float = 1e-10,
    max_iter: int = 2000,
    starts: int = 3,
    seed: int = 42,
) -> FixedPointResult:
    """First nontrivial fixed point over several starts.

    Start 0 is the all-ones birth vector; later starts draw uniformly
    from [0.5, 1.5).  A collapsed run triggers the next start; if every
    start collapses, the last collapsed result is returned, since the
    trivial equilibrium is then the honest answer.
    """
    if starts < 1:
        raise FixedPointError("starts must be at least 1")
    rng = np.random.default_rng(seed)
    result = None
    for k in range(starts):
        B0 = np.ones(mesh.nx) if k == 0 else rng.uniform(0.5, 1.5, mesh.nx)
        result = solve_fixedpoint(
            model, mesh, grid, damping=damping, tol=tol, max_iter=max_iter, B_init=B0,
        )
        if not result.collapsed:
            return result
    return result


@dataclass(frozen=True)
class ShellReport:
    tau0: float
    tau1: float
    verdict_small_densities: bool
    verdict_large_densities: bool
    min_small_excess: float
    max_large_radius: float
    n_small_fields: int
    n_large_fields: int


def _sample_fields(mesh: SpatialMesh, grid: AgeGrid, rng: np.random.Generator) -> list[np.ndarray]:
    shape = (grid.na + 1, mesh.nx)
    flat = np.ones(shape)
    decaying = np.exp(-grid.ages)[:, None] * np.ones((1, mesh.nx))
    ramp = np.ones((grid.na + 1, 1)) * mesh.nodes[None, :]
    return [flat, decaying, ramp, rng.uniform(0.0, 1.0, shape),
            rng.uniform(0.0, 1.0, shape), rng.uniform(0.0, 1.0, shape)]


def check_shell_conditions(
    model: ModelSpec,
    mesh: SpatialMesh,
    grid: AgeGrid,
    tau0: float,
    tau1: float,
    *,
    seed: int = 42,
) -> ShellReport:
    """Probe the two shells on structured and random nonnegative fields.

    Small-amplitude fields (norms tau0, tau0/2, tau0/10) must give
    reproduction matrices entrywise at or above the identity; large ones
    (norms tau1, 2 tau1, 4 tau1) must have spectral radius at most one.
    Both verdicts carry a roundoff allowance.  tau0 must be below tau1.
    """
    if not (0.0 < tau0 < tau1):
        raise FixedPointError(f"need 0 < tau0 < tau1, got tau0={tau0!r}, tau1={tau1!r}")
    rng = np.random.default_rng(seed)
    fields = _sample_fields(mesh, grid, rng)
    small_norms = [tau0, tau0 / 2.0, tau0 / 10.0]
    large_norms = [tau1, 2.0 * tau1, 4.0 * tau1]

    min_excess = np.inf
    max_radius = -np.inf
    n_small = n_large = 0
    eye = np.eye(mesh.nx)
    for i, raw in enumerate(fields):
        base = DensityField(values=raw, grid=grid, nonnegative=True)
        scale_small = small_norms[i % len(small_norms)] / base.norm()
        scale_large = large_norms[i % len(large_norms)] / base.norm()
        for scale, band in ((scale_small, "small"), (scale_large, "large")):
            u = DensityField(values=raw * scale, grid=grid, nonnegative=True)
            ev = build_evolution(model, mesh, grid, u)
            rep = assemble_Q(model, ev, u)
            if band == "small":
                min_excess = min(min_excess, float(np.min(rep.matrix - eye)))
                n_small += 1
            else:
                r, _ = spectral_radius(rep)
                max_radius = max(max_radius, r)
                n_large += 1
    return ShellReport(
        tau0=tau0,
        tau1=tau1,
        verdict_small_densities=bool(min_excess >= -1e-12),
        verdict_large_densities=bool(max_radius <= 1.0 + 1e-9),
        min_small_excess=float(min_excess),
        max_large_radius=float(max_radius),
        n_small_fields=n_small,
        n_large_fields=n_large,
    )
