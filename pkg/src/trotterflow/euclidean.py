"""Convex quadratic functionals on R^n with closed-form resolvents and flows."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .scheme import Functional, InvalidInput, ResolventResult, SchemeError, SplitProblem

__all__ = [
    "DimensionMismatch",
    "SingularSystem",
    "QuadraticFunctional",
    "prox_quadratic",
    "exact_flow",
    "euclidean_distance",
    "build_euclidean_problem",
]


class DimensionMismatch(InvalidInput):
    pass


class SingularSystem(SchemeError):
    pass


@dataclass(frozen=True)
class QuadraticFunctional:
    """``f(x) = x^T A x / 2 + b^T x + c0`` with ``A`` symmetric positive semidefinite."""

    A: np.ndarray
    b: np.ndarray
    c0: float = 0.0

    def __init__(self, A, b=None, c0: float = 0.0):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionMismatch(f"A must be square, got shape {A.shape}")
        if not np.array_equal(A, A.T):
            raise InvalidInput("A must be exactly symmetric")
        if not np.all(np.isfinite(A)):
            raise InvalidInput("A must be finite")
        if n and np.linalg.eigvalsh(A).min() < -1e-12:
            raise InvalidInput("A must be positive semidefinite")
        b = np.zeros(n) if b is None else np.atleast_1d(np.asarray(b, dtype=float))
        if b.shape != (n,):
            raise DimensionMismatch(f"b must have shape ({n},), got {b.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c0", float(c0))

    @classmethod
    def scalar(cls, a: float, center: float = 0.0) -> QuadraticFunctional:
        """``a (x - center)^2 / 2`` in one dimension."""
        return cls([[a]], [-a * center], 0.5 * a * center * center)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.A @ x + self.b @ x + self.c0)

    def gradient(self, x) -> np.ndarray:
        return self.A @ np.asarray(x, dtype=float) + self.b


def prox_quadratic(f: QuadraticFunctional, h: float, x) -> np.ndarray:
    """Resolvent of ``f``: the solution of ``(I + hA) y = x - hb``."""
    if not h > 0:
        raise InvalidInput("h must be positive")
    x = np.asarray(x, dtype=float)
    if x.shape != (f.dim,):
        raise DimensionMismatch(f"point has shape {x.shape}, expected ({f.dim},)")
    M = np.eye(f.dim) + h * f.A
    try:
        factor = linalg.cho_factor(M)
    except linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    return linalg.cho_solve(factor, x - h * f.b)


def exact_flow(A1, A2, b1, b2, x0, t: float) -> np.ndarray:
    """Gradient flow of ``f1 + f2`` from ``x0`` at flow time ``t``.

    ``u(t) = exp(-tM)(x0 - x*) + x*`` with ``M = A1 + A2`` and ``x*`` the
    least-squares solution of ``M x* = -(b1 + b2)``.  On ``ker M`` the
    linear drift is integrated exactly instead, so a nonzero ``b`` component
    there grows linearly in time.
    """
    M = np.atleast_2d(np.asarray(A1, dtype=float)) + np.atleast_2d(np.asarray(A2, dtype=float))
    b = np.atleast_1d(np.asarray(b1, dtype=float)) + np.atleast_1d(np.asarray(b2, dtype=float))
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if t < 0:
        raise InvalidInput("t must be nonnegative")
    w, Q = np.linalg.eigh(0.5 * (M + M.T))
    z0 = Q.T @ x0
    c = Q.T @ b
    scale = max(1.0, np.abs(w).max(initial=0.0))
    z = np.empty_like(z0)
    for i, lam in enumerate(w):
        if lam > 1e-14 * scale:
            zstar = -c[i] / lam
            z[i] = np.exp(-t * lam) * (z0[i] - zstar) + zstar
        else:
            z[i] = z0[i] - t * c[i]
    return Q @ z


def euclidean_distance(x, y) -> float:
    return float(np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float)))


def _as_functional(f: QuadraticFunctional, name: str) -> Functional:
    return Functional(
        name=name,
        value=f,
        resolvent=lambda h, x: ResolventResult(prox_quadratic(f, h, x)),
    )


def build_euclidean_problem(f1: QuadraticFunctional, f2: QuadraticFunctional) -> SplitProblem:
    if f1.dim != f2.dim:
        raise DimensionMismatch(f"dimensions differ: {f1.dim} vs {f2.dim}")
    return SplitProblem(
        metric=euclidean_distance,
        phi1=_as_functional(f1, "f1"),
        phi2=_as_functional(f2, "f2"),
        name="euclidean",
    )
