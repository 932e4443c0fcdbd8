"""Tridiagonal factor/solve kernels (Thomas algorithm, no pivoting).

Row i couples lower[i] * v[i-1] + diag[i] * v[i] + upper[i] * v[i+1];
lower[0] and upper[-1] are ignored.  No pivoting is deliberate: for
matrices with nonpositive off-diagonals and positive pivots every
elimination step adds nonnegative multiples, so nonnegative right-hand
sides produce nonnegative solutions exactly, not just up to roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a hard dependency, kept soft for portability
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


class SingularTridiagError(ArithmeticError):
    """A pivot came out nonpositive or non-finite during factorization."""


@njit(cache=True)
def _factor(lower, diag, upper):
    n = diag.shape[0]
    mult = np.zeros(n)
    piv = np.empty(n)
    piv[0] = diag[0]
    for i in range(1, n):
        m = lower[i] / piv[i - 1]
        mult[i] = m
        piv[i] = diag[i] - m * upper[i - 1]
    return mult, piv


@njit(cache=True)
def _solve_one(mult, piv, upper, rhs, out):
    n = piv.shape[0]
    out[0] = rhs[0]
    for i in range(1, n):
        out[i] = rhs[i] - mult[i] * out[i - 1]
    out[n - 1] = out[n - 1] / piv[n - 1]
    for i in range(n - 2, -1, -1):
        out[i] = (out[i] - upper[i] * out[i + 1]) / piv[i]


@njit(cache=True)
def _solve_many(mult, piv, upper, rhs, out):
    n = piv.shape[0]
    m = rhs.shape[1]
    for j in range(m):
        out[0, j] = rhs[0, j]
    for i in range(1, n):
        for j in range(m):
            out[i, j] = rhs[i, j] - mult[i] * out[i - 1, j]
    for j in range(m):
        out[n - 1, j] = out[n - 1, j] / piv[n - 1]
    for i in range(n - 2, -1, -1):
        for j in range(m):
            out[i, j] = (out[i, j] - upper[i] * out[i + 1, j]) / piv[i]


@dataclass(frozen=True)
class FactoredTridiag:
    """LU factors of a tridiagonal matrix, reusable across solves."""

    mult: np.ndarray
    piv: np.ndarray
    upper: np.ndarray

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        out = np.empty_like(rhs)
        if rhs.ndim == 1:
            _solve_one(self.mult, self.piv, self.upper, rhs, out)
        elif rhs.ndim == 2:
            _solve_many(self.mult, self.piv, self.upper, rhs, out)
        else:
            raise ValueError("rhs must be one- or two-dimensional")
        return out


def factor_tridiag(lower: np.ndarray, diag: np.ndarray, upper: np.ndarray) -> FactoredTridiag:
    """Factor once; raises SingularTridiagError on a bad pivot."""
    lower = np.ascontiguousarray(lower, dtype=float)
    diag = np.ascontiguousarray(diag, dtype=float)
    upper = np.ascontiguousarray(upper, dtype=float)
    mult, piv = _factor(lower, diag, upper)
    if not np.all(np.isfinite(piv)) or np.any(piv <= 0):
        bad = int(np.argmin(np.where(np.isfinite(piv), piv, -np.inf)))
        raise SingularTridiagError(f"nonpositive pivot {piv[bad]!r} at row {bad}")
    return FactoredTridiag(mult, piv, upper)


def tridiag_matvec(lower: np.ndarray, diag: np.ndarray, upper: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = diag * v
    out[1:] += lower[1:] * v[:-1]
    out[:-1] += upper[:-1] * v[1:]
    return out
