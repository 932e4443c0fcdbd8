"""Finite-difference discretization of the per-age spatial operator.

Unknowns live at x_i = i/nx for i = 1..nx.  The Dirichlet value at x = 0
is eliminated; the Robin condition  w' + nu0 w = 0  at x = 1 is closed
with a ghost node and a centered difference, which keeps second-order
accuracy and the M-matrix sign pattern.  Diffusion uses conservative
fluxes with arithmetic-mean coefficients at half nodes; the drift term is
upwinded per node by the sign of g, which is what makes the one-step
inverses of the age stepping entrywise nonnegative.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .expr import evaluate_on
from .model import ModelSpec
from .tridiag import factor_tridiag, tridiag_matvec


class AssemblyError(ValueError):
    """Raised for shape mismatches or a broken M-matrix sign pattern."""


@dataclass(frozen=True)
class SpatialMesh:
    """Uniform mesh on (0, 1] with nx unknowns (interior plus Robin end)."""

    nx: int

    def __post_init__(self):
        if self.nx < 2:
            raise AssemblyError("nx must be at least 2")

    @cached_property
    def dx(self) -> float:
        return 1.0 / self.nx

    @cached_property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.dx, 1.0, self.nx)

    @cached_property
    def nodes_with_origin(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.nx + 1)


@dataclass(frozen=True)
class OperatorMatrix:
    """Tridiagonal A(u, a) after boundary elimination.

    linear_part is True when the matrix was assembled without a density
    slice, i.e. it is the u-independent part A0(a) of the operator.
    """

    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray
    age: float
    linear_part: bool

    @property
    def nx(self) -> int:
        return self.diag.shape[0]

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return tridiag_matvec(self.lower, self.diag, self.upper, np.asarray(v, dtype=float))

    def to_dense(self) -> np.ndarray:
        out = np.diag(self.diag)
        out += np.diag(self.lower[1:], k=-1)
        out += np.diag(self.upper[:-1], k=1)
        return out


def gradient_of_slice(u: np.ndarray, dx: float) -> np.ndarray:
    """Centered differences, one-sided at the ends of the supplied slice."""
    return np.gradient(u, dx)


def assemble(model: ModelSpec, mesh: SpatialMesh, a: float, u_slice: np.ndarray | None = None) -> OperatorMatrix:
    """Assemble A(u, a) + mu(u, a) as a tridiagonal matrix.

    With u_slice absent the result is the linear part, whose zero-order
    term is theta(a); supplying an explicit zero slice gives the same
    matrix entry for entry.
    """
    nx, dx = mesh.nx, mesh.dx
    if u_slice is None:
        u = np.zeros(nx)
        p = np.zeros(nx)
    else:
        u = np.asarray(u_slice, dtype=float)
        if u.shape != (nx,):
            raise AssemblyError(f"u_slice has shape {u.shape}, expected ({nx},)")
        p = gradient_of_slice(u, dx)

    lower = np.zeros(nx)
    diag = np.zeros(nx)
    upper = np.zeros(nx)

    if not model.pure_decay:
        # conservative diffusion flux, D averaged to half nodes; the value
        # beyond x = 1 is clamped to D(a, 1)
        d_nodes = evaluate_on(model.D, nx + 1, a=float(a), x=mesh.nodes_with_origin)
        d_west = 0.5 * (d_nodes[:-1] + d_nodes[1:])
        d_east = np.empty(nx)
        d_east[:-1] = d_west[1:]
        d_east[-1] = d_nodes[-1]
        inv_dx2 = 1.0 / (dx * dx)
        diag += (d_west + d_east) * inv_dx2
        lower[1:] -= d_west[1:] * inv_dx2
        upper[:-1] -= d_east[:-1] * inv_dx2

        # drift, upwinded per node by the sign of g
        g_vals = evaluate_on(model.g, nx, u=u, p=p)
        g_pos = np.maximum(g_vals, 0.0)
        g_neg = np.minimum(g_vals, 0.0)
        diag += (g_pos - g_neg) / dx
        lower[1:] -= g_pos[1:] / dx
        upper[:-1] += g_neg[:-1] / dx

        # ghost-node closure of the Robin end: w_ghost = w_west - 2 dx nu0 w_end
        east_end = -d_east[-1] * inv_dx2 + g_neg[-1] / dx
        lower[-1] += east_end
        diag[-1] -= 2.0 * dx * model.nu0 * east_end

    h_vals = evaluate_on(model.h, nx, u=u, p=p)
    mu_vals = evaluate_on(model.mu, nx, u=u, a=float(a))
    diag += h_vals + mu_vals

    if np.any(lower[1:] > 0) or np.any(upper[:-1] > 0):
        bad = int(np.argmax(np.concatenate([lower, upper])))
        raise AssemblyError(f"M-matrix sign pattern violated near row {bad % nx}")
    return OperatorMatrix(lower=lower, diag=diag, upper=upper, age=float(a), linear_part=u_slice is None)


def smallest_eigenvalue(matrix: OperatorMatrix, tol: float = 1e-12, max_iter: int = 50000) -> float:
    """Smallest real eigenvalue by inverse power iteration with shift 0.

    A test oracle helper: convergence checks of the spatial operator use
    it against closed-form eigenvalues.
    """
    fac = factor_tridiag(matrix.lower, matrix.diag, matrix.upper)
    v = np.ones(matrix.nx)
    v /= np.linalg.norm(v)
    lam = float("nan")
    for _ in range(max_iter):
        w = fac.solve(v)
        w /= np.linalg.norm(w)
        aw = matrix.matvec(w)
        lam = float(w @ aw)
        if np.linalg.norm(aw - lam * w) <= tol * max(abs(lam), 1e-30):
            return lam
        v = w
    raise RuntimeError(f"inverse power iteration did not converge within {max_iter} iterations")
