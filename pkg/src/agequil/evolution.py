"""Age stepping: the discrete evolution family Pi(a, 0) and its Duhamel sum.

One implicit Euler step from age a_k to a_{k+1} solves

    (I + da * A_h(u_k, a_{k+1})) v_{k+1} = v_k

with the density slice frozen at age a_k (Picard linearization of the
quasilinear coefficients).  Implicit stepping keeps positivity without a
step-size restriction: each factor is an M-matrix, so each inverse maps
the nonnegative orthant into itself exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .discretize import SpatialMesh, assemble
from .model import ModelSpec
from .tridiag import FactoredTridiag, SingularTridiagError, factor_tridiag


class EvolutionError(ValueError):
    pass


@dataclass(frozen=True)
class AgeGrid:
    """Uniform age grid 0 = a_0 < ... < a_na = a_max."""

    na: int
    a_max: float

    def __post_init__(self):
        if self.na < 2:
            raise EvolutionError("na must be at least 2")
        if not self.a_max > 0:
            raise EvolutionError("a_max must be positive")

    @cached_property
    def da(self) -> float:
        return self.a_max / self.na

    @cached_property
    def ages(self) -> np.ndarray:
        return np.linspace(0.0, self.a_max, self.na + 1)

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weights over age."""
        w = np.full(self.na + 1, self.da)
        w[0] = 0.5 * self.da
        w[-1] = 0.5 * self.da
        return w


@dataclass
class DensityField:
    """Density on the age-space grid; row k is the slice at age a_k.

    nonnegative is a certificate set by the propagation routines, not a
    request: fields built from arbitrary arrays leave it False.
    """

    values: np.ndarray
    grid: AgeGrid
    nonnegative: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] != self.grid.na + 1:
            raise EvolutionError(
                f"field shape {self.values.shape} does not match na = {self.grid.na}"
            )

    @property
    def nx(self) -> int:
        return self.values.shape[1]

    @property
    def birth(self) -> np.ndarray:
        return self.values[0]

    def norm(self) -> float:
        """L1 in age of the spatial max; the branch amplitude measure."""
        return float(self.grid.weights @ np.max(np.abs(self.values), axis=1))

    def copy(self) -> "DensityField":
        return DensityField(self.values.copy(), self.grid, self.nonnegative)

    @classmethod
    def zeros(cls, grid: AgeGrid, nx: int) -> "DensityField":
        return cls(np.zeros((grid.na + 1, nx)), grid, nonnegative=True)

    def __add__(self, other: "DensityField") -> "DensityField":
        return DensityField(self.values + other.values, self.grid)

    def __sub__(self, other: "DensityField") -> "DensityField":
        return DensityField(self.values - other.values, self.grid)

    def __rmul__(self, scalar: float) -> "DensityField":
        return DensityField(float(scalar) * self.values, self.grid)


@dataclass
class EvolutionOperator:
    """Factored one-step solves for k = 0..na-1, frozen at one density field.

    source is the field the quasilinear coefficients were evaluated on;
    None means the zero field, i.e. the linear evolution Pi_0.
    """

    steps: list[FactoredTridiag]
    grid: AgeGrid
    mesh: SpatialMesh
    source: DensityField | None = field(default=None, repr=False)

    @property
    def from_zero(self) -> bool:
        return self.source is None


def build_evolution(
    model: ModelSpec, mesh: SpatialMesh, grid: AgeGrid, u: DensityField | None = None
) -> EvolutionOperator:
    """Assemble and factor the implicit Euler steps for one frozen field."""
    if u is not None and u.values.shape != (grid.na + 1, mesh.nx):
        raise EvolutionError("frozen field does not match the grids")
    da = grid.da
    steps: list[FactoredTridiag] = []
    for k in range(grid.na):
        a_next = float(grid.ages[k + 1])
        u_slice = u.values[k] if u is not None else None
        mat = assemble(model, mesh, a_next, u_slice)
        try:
            steps.append(
                factor_tridiag(da * mat.lower, 1.0 + da * mat.diag, da * mat.upper)
            )
        except SingularTridiagError as exc:
            raise EvolutionError(f"singular one-step matrix at age index {k + 1}: {exc}") from exc
    return EvolutionOperator(steps=steps, grid=grid, mesh=mesh, source=u)


def propagate(ev: EvolutionOperator, B: np.ndarray) -> DensityField:
    """Field with rows Pi(a_k, 0) B; exactly nonnegative when B is."""
    B = np.asarray(B, dtype=float)
    if B.shape != (ev.mesh.nx,):
        raise EvolutionError(f"birth vector has shape {B.shape}, expected ({ev.mesh.nx},)")
    if not np.all(np.isfinite(B)):
        raise EvolutionError("birth vector has non-finite entries")
    values = np.empty((ev.grid.na + 1, ev.mesh.nx))
    values[0] = B
    for k, step in enumerate(ev.steps):
        values[k + 1] = step.solve(values[k])
    return DensityField(values, ev.grid, nonnegative=bool(np.all(B >= 0)))


def apply_K0(ev: EvolutionOperator, f: DensityField) -> DensityField:
    """Discrete Duhamel sum K0 f for the linear evolution.

    Left-endpoint source composed with the implicit step:
    w_0 = 0,  w_{k+1} = step_k(w_k + da * f_k).  Each step uses row k of
    f, matching the stepping convention of propagate, so a solution of
    the stepped equations is reproduced without quadrature drift.
    """
    if not ev.from_zero:
        raise EvolutionError("apply_K0 requires the linear evolution (zero frozen field)")
    if f.values.shape != (ev.grid.na + 1, ev.mesh.nx):
        raise EvolutionError("source field does not match the grids")
    da = ev.grid.da
    values = np.zeros((ev.grid.na + 1, ev.mesh.nx))
    for k, step in enumerate(ev.steps):
        values[k + 1] = step.solve(values[k] + da * f.values[k])
    return DensityField(values, ev.grid)
