"""Probability measures on the line as quantile vectors, with the L2-Wasserstein metric.

A measure is stored as ``N`` cell-centre quantiles ``x_i ~ X((2i - 1) / 2N)``,
each carrying mass ``1/N``. In this representation the Wasserstein distance is
a weighted Euclidean distance and the three functionals below (potential
energy, Boltzmann entropy, Renyi entropy) are convex functions of the vector,
so their resolvents are smooth convex minimisations.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import linalg, special

from .scheme import Functional, InvalidInput, ResolventResult, SolverError, SplitProblem

__all__ = [
    "GAP_FLOOR",
    "TAU_SOLVER",
    "NonMonotone",
    "SizeMismatch",
    "NewtonFailure",
    "QuantileDensity",
    "PotentialSpec",
    "EntropyKind",
    "Ordering",
    "w2_distance",
    "potential_energy",
    "entropy",
    "resolvent_potential",
    "resolvent_entropy",
    "entropy_objective",
    "check_optimality_tudorascu",
    "CompatibilityEntry",
    "check_compatibility",
    "splitting_case",
    "build_wasserstein_problem",
    "norm_ppf",
    "quantile_of_gaussian",
    "quantile_of_mixture",
    "quantile_of_cdf",
]

GAP_FLOOR = 1e-300
TAU_SOLVER = 1e-10
MAX_NEWTON = 200
FRACTION_TO_BOUNDARY = 0.99


class NonMonotone(InvalidInput):
    pass


class SizeMismatch(InvalidInput):
    pass


class NewtonFailure(SolverError):
    def __init__(self, msg: str, index: int | None = None):
        self.index = index
        super().__init__(msg)


# ---------------------------------------------------------------- types


@dataclass(frozen=True, eq=False)
class QuantileDensity:
    """Uniform-mass quantile vector of a measure in P2(R)."""

    q: np.ndarray

    def __init__(self, q):
        arr = np.array(q, dtype=float)
        if arr.ndim != 1 or arr.size < 4:
            raise InvalidInput("a quantile vector needs N >= 4 entries")
        if not np.all(np.isfinite(arr)):
            raise InvalidInput("quantiles must be finite")
        if np.any(np.diff(arr) <= GAP_FLOOR):
            raise NonMonotone("quantiles must be strictly increasing")
        arr.setflags(write=False)
        object.__setattr__(self, "q", arr)

    @property
    def N(self) -> int:
        return self.q.size

    @property
    def levels(self) -> np.ndarray:
        """Cell-centre mass levels ``s_i = (2i - 1) / 2N``."""
        N = self.N
        return (2.0 * np.arange(1, N + 1) - 1.0) / (2.0 * N)

    @property
    def gaps(self) -> np.ndarray:
        return np.diff(self.q)

    def mean(self) -> float:
        return float(self.q.mean())

    def variance(self) -> float:
        return float(np.mean((self.q - self.q.mean()) ** 2))

    def __eq__(self, other) -> bool:
        return isinstance(other, QuantileDensity) and np.array_equal(self.q, other.q)

    def __hash__(self) -> int:
        return hash(self.q.tobytes())


@dataclass(frozen=True)
class PotentialSpec:
    """Convex ``C^2`` potential with ``0 <= V'' <= c``.

    The callables must accept numpy arrays.
    """

    V: Callable[[np.ndarray], np.ndarray]
    dV: Callable[[np.ndarray], np.ndarray]
    d2V: Callable[[np.ndarray], np.ndarray]
    c: float
    name: str = "V"

    @classmethod
    def quadratic(cls, lam: float, center: float = 0.0) -> PotentialSpec:
        if lam < 0:
            raise InvalidInput("curvature must be nonnegative for a convex potential")
        return cls(
            V=lambda x: 0.5 * lam * (np.asarray(x) - center) ** 2,
            dV=lambda x: lam * (np.asarray(x) - center),
            d2V=lambda x: np.full_like(np.asarray(x, dtype=float), lam),
            c=float(lam),
            name=f"quadratic(lam={lam:g})",
        )

    @classmethod
    def zero(cls) -> PotentialSpec:
        return cls.quadratic(0.0)._replace_name("zero")

    @classmethod
    def log_cosh(cls, a: float = 1.0) -> PotentialSpec:
        """``log cosh(a x) / a``, with curvature ``a sech^2(a x) <= a``."""
        def V(x):
            z = a * np.asarray(x, dtype=float)
            return (np.logaddexp(z, -z) - math.log(2.0)) / a

        return cls(
            V=V,
            dV=lambda x: np.tanh(a * np.asarray(x, dtype=float)),
            d2V=lambda x: a / np.cosh(a * np.asarray(x, dtype=float)) ** 2,
            c=float(a),
            name=f"log_cosh(a={a:g})",
        )

    def _replace_name(self, name: str) -> PotentialSpec:
        return PotentialSpec(self.V, self.dV, self.d2V, self.c, name)

    def validate(self, probes: np.ndarray | None = None, eps: float = 1e-5) -> None:
        """Sample the convexity/curvature bound and the derivative consistency."""
        x = np.linspace(-50.0, 50.0, 2001) if probes is None else np.asarray(probes, dtype=float)
        curv = np.asarray(self.d2V(x), dtype=float)
        if curv.min() < -1e-12 or curv.max() > self.c + 1e-12:
            raise InvalidInput(f"V'' leaves [0, c={self.c}] on the probe grid")
        fd = (np.asarray(self.V(x + eps)) - np.asarray(self.V(x - eps))) / (2 * eps)
        d1 = np.asarray(self.dV(x), dtype=float)
        tol = 1e-6 * (1.0 + np.abs(d1)) + eps**2 * self.c
        if np.any(np.abs(d1 - fd) > tol):
            raise InvalidInput("V' is inconsistent with finite differences of V")


@dataclass(frozen=True)
class EntropyKind:
    """Boltzmann entropy (``m is None``) or Renyi entropy of order ``m`` in ``(1, 4]``."""

    m: float | None = None

    def __post_init__(self):
        if self.m is not None and not (1.0 < self.m <= 4.0):
            raise InvalidInput(f"Renyi order must lie in (1, 4], got {self.m}")

    @classmethod
    def boltzmann(cls) -> EntropyKind:
        return cls(None)

    @classmethod
    def renyi(cls, m: float) -> EntropyKind:
        return cls(float(m))

    @property
    def is_boltzmann(self) -> bool:
        return self.m is None

    @property
    def exponent(self) -> float:
        """Power of the density in the optimality relation: 1 for Boltzmann, ``m`` for Renyi."""
        return 1.0 if self.m is None else self.m

    def __str__(self) -> str:
        return "boltzmann" if self.m is None else f"renyi(m={self.m:g})"


class Ordering(enum.Enum):
    ENTROPY_FIRST = "entropy-first"
    POTENTIAL_FIRST = "potential-first"


# ---------------------------------------------------------------- metric and energies


def w2_distance(mu: QuantileDensity, nu: QuantileDensity) -> float:
    if mu.N != nu.N:
        raise SizeMismatch(f"cell counts differ: {mu.N} vs {nu.N}")
    return float(np.sqrt(np.mean((mu.q - nu.q) ** 2)))


def potential_energy(mu: QuantileDensity, pot: PotentialSpec) -> float:
    return float(np.mean(pot.V(mu.q)))


def _gap_terms(g: np.ndarray, N: int, kind: EntropyKind):
    """Per-gap entropy density ``e(g)`` and its first two derivatives."""
    if kind.m is None:
        e = -np.log(N * g) / (N - 1)
        d1 = -1.0 / ((N - 1) * g)
        d2 = 1.0 / ((N - 1) * g * g)
    else:
        m = kind.m
        r = (N * g) ** (-m)
        e = (N * g) * r / ((m - 1.0) * (N - 1))
        d1 = -N * r / (N - 1)
        d2 = m * N * N * r / ((N - 1) * N * g)
    return e, d1, d2


def _entropy_of_gaps(g: np.ndarray, N: int, kind: EntropyKind) -> float:
    return float(np.sum(_gap_terms(g, N, kind)[0]))


def entropy(mu: QuantileDensity, kind: EntropyKind) -> float:
    """Discrete Boltzmann or Renyi entropy from consecutive quantile gaps.

    With ``rho_i = 1 / (N g_i)`` the density between neighbouring cell centres:
    Boltzmann ``mean(log rho_i)``, Renyi ``mean(rho_i^(m-1)) / (m - 1)``, the
    means taken over the ``N - 1`` gaps.
    """
    g = mu.gaps
    if np.any(g <= GAP_FLOOR):
        raise NonMonotone("quantiles must be strictly increasing")
    return _entropy_of_gaps(g, mu.N, kind)


# ---------------------------------------------------------------- resolvents


def resolvent_potential(mu: QuantileDensity, pot: PotentialSpec, h: float) -> ResolventResult:
    """Push every quantile through ``(I + h V')^{-1}``.

    Safeguarded Newton on ``y + h V'(y) = x`` inside the bracket spanned by
    ``x`` and ``x - h V'(x)``.
    """
    if not h > 0:
        raise InvalidInput("h must be positive")
    x = mu.q
    y = x.copy()
    lo = np.minimum(x, x - h * pot.dV(x))
    hi = np.maximum(x, x - h * pot.dV(x))
    tol = 4.0 * np.finfo(float).eps * (1.0 + np.abs(x))
    F = y + h * pot.dV(y) - x
    it = 0
    for it in range(1, MAX_NEWTON + 1):
        done = np.abs(F) <= tol
        if done.all():
            break
        lo = np.where(F < 0, np.maximum(lo, y), lo)
        hi = np.where(F > 0, np.minimum(hi, y), hi)
        step = y - F / (1.0 + h * pot.d2V(y))
        inside = (step >= lo) & (step <= hi)
        y = np.where(done, y, np.where(inside, step, 0.5 * (lo + hi)))
        F = y + h * pot.dV(y) - x
    else:
        bad = int(np.argmax(np.abs(F) - tol))
        raise NewtonFailure(f"potential resolvent did not converge at cell {bad}", bad)
    return ResolventResult(QuantileDensity(y), float(np.max(np.abs(F))), it)


def entropy_objective(x: np.ndarray, y: np.ndarray, kind: EntropyKind, h: float) -> float:
    """``entropy(x) + W2^2(x, y) / 2h`` for raw quantile vectors."""
    N = x.size
    return _entropy_of_gaps(np.diff(x), N, kind) + float(np.mean((x - y) ** 2)) / (2.0 * h)


def _scaled_gradient(x, y, kind, h):
    """Gradient of ``h N entropy(x) + |x - y|^2 / 2``, plus the tridiagonal Hessian."""
    N = x.size
    g = np.diff(x)
    _, d1, d2 = _gap_terms(g, N, kind)
    grad = x - y
    grad[:-1] -= h * N * d1
    grad[1:] += h * N * d1
    diag = np.ones(N)
    diag[:-1] += h * N * d2
    diag[1:] += h * N * d2
    off = -h * N * d2
    return grad, diag, off


def resolvent_entropy(
    mu: QuantileDensity, kind: EntropyKind, h: float, tol: float = TAU_SOLVER
) -> ResolventResult:
    """Minimise ``entropy(nu) + W2^2(nu, mu) / 2h`` over quantile vectors ``nu``.

    Damped Newton with a tridiagonal Hessian. The stopping test uses the
    gradient of ``h N`` times the objective, which is the displacement
    residual checked by :func:`check_optimality_tudorascu`. Steps are cut so
    that no gap loses more than 99% of its length, then backtracked until the
    objective decreases.
    """
    if not h > 0:
        raise InvalidInput("h must be positive")
    y = mu.q
    x = y.copy()
    N = x.size
    scale = h * N

    def f(v):
        return scale * entropy_objective(v, y, kind, h)

    fx = f(x)
    gnorm = math.inf
    for it in range(MAX_NEWTON + 1):
        grad, diag, off = _scaled_gradient(x, y, kind, h)
        gnorm = float(np.max(np.abs(grad)))
        if gnorm <= tol:
            return ResolventResult(QuantileDensity(x), gnorm, it)
        if it == MAX_NEWTON:
            break
        ab = np.zeros((2, N))
        ab[0, 1:] = off
        ab[1] = diag
        try:
            dx = linalg.solveh_banded(ab, -grad)
        except linalg.LinAlgError as exc:
            raise NewtonFailure(f"Hessian factorisation failed: {exc}") from exc
        g = np.diff(x)
        dg = np.diff(dx)
        shrinking = dg < 0
        alpha = 1.0
        if shrinking.any():
            alpha = min(1.0, FRACTION_TO_BOUNDARY * float(np.min(g[shrinking] / -dg[shrinking])))
        slope = float(grad @ dx)
        for _ in range(60):
            xn = x + alpha * dx
            if np.all(np.diff(xn) > GAP_FLOOR):
                fn = f(xn)
                if fn <= fx + 1e-4 * alpha * slope + 1e-13 * abs(fx):
                    break
            alpha *= 0.5
        else:
            raise NewtonFailure(f"line search failed at iteration {it} (gradient {gnorm:.3e})")
        x, fx = xn, fn
    raise NewtonFailure(f"entropy resolvent did not converge in {MAX_NEWTON} iterations (gradient {gnorm:.3e})")


def check_optimality_tudorascu(
    mu_out: QuantileDensity, mu_in: QuantileDensity, kind: EntropyKind, h: float
) -> float:
    """Largest residual of the discrete optimality relation over interior cells.

    With the gap densities ``rho_i = 1 / (N g_i)`` and ``p`` equal to 1
    (Boltzmann) or ``m`` (Renyi), the minimiser satisfies::

        h N^2 / (N - 1) * (rho_j^p - rho_{j-1}^p) = y_j - x_j

    where ``x`` is the output, ``y`` the input and ``y_j - x_j`` is the
    displacement of the monotone coupling pushing the output to the input.
    """
    if not h > 0:
        raise InvalidInput("h must be positive")
    if mu_out.N != mu_in.N:
        raise SizeMismatch("cell counts differ")
    N = mu_out.N
    rho = 1.0 / (N * mu_out.gaps)
    p = kind.exponent
    flux = h * N * N / (N - 1) * np.diff(rho**p)
    displacement = (mu_in.q - mu_out.q)[1:-1]
    return float(np.max(np.abs(flux - displacement)))


# ---------------------------------------------------------------- compatibility


@dataclass(frozen=True)
class CompatibilityEntry:
    name: str
    lhs: float
    rhs: float
    tolerance: float

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs + self.tolerance


def check_compatibility(
    mu: QuantileDensity,
    pot: PotentialSpec,
    kind: EntropyKind,
    h: float,
    tol: float = TAU_SOLVER,
) -> list[CompatibilityEntry]:
    """Evaluate the four energy estimates across the other functional's resolvent.

    1. ``H(J^V mu) <= H(mu) + c h``
    2. ``V(J^H mu) <= V(mu) + c h``
    3. ``F(J^V mu) <= exp((m-1) c h) F(mu)``
    4. ``V(J^F mu) <= V(mu) + c (m-1) h F(J^F mu)``

    ``H`` is the Boltzmann entropy; ``F`` the Renyi entropy of ``kind``, so
    items 3 and 4 are only produced for a Renyi ``kind``.
    """
    if not h > 0:
        raise InvalidInput("h must be positive")
    c = pot.c
    boltz = EntropyKind.boltzmann()

    def entry(name, lhs, rhs):
        t = 10.0 * (tol + 1.0 / mu.N) * (1.0 + max(abs(lhs), abs(rhs)))
        return CompatibilityEntry(name, float(lhs), float(rhs), float(t))

    mu_v = resolvent_potential(mu, pot, h).point
    mu_h = resolvent_entropy(mu, boltz, h, tol).point
    out = [
        entry("H-est", entropy(mu_v, boltz), entropy(mu, boltz) + c * h),
        entry("V-est", potential_energy(mu_h, pot), potential_energy(mu, pot) + c * h),
    ]
    if not kind.is_boltzmann:
        m = kind.m
        mu_f = resolvent_entropy(mu, kind, h, tol).point
        out.append(entry("F-est", entropy(mu_v, kind), math.exp((m - 1) * c * h) * entropy(mu, kind)))
        out.append(
            entry(
                "VF-est",
                potential_energy(mu_f, pot),
                potential_energy(mu, pot) + c * (m - 1) * h * entropy(mu_f, kind),
            )
        )
    return out


# ---------------------------------------------------------------- problems


def splitting_case(kind: EntropyKind, order: Ordering) -> int:
    """Case number of the pairing: 1 (H,V), 2 (V,H), 3 (F,V), 4 (V,F)."""
    first = order is Ordering.ENTROPY_FIRST
    if kind.is_boltzmann:
        return 1 if first else 2
    return 3 if first else 4


def _potential_functional(pot: PotentialSpec) -> Functional:
    return Functional(
        name=pot.name,
        value=lambda mu: potential_energy(mu, pot),
        resolvent=lambda h, mu: resolvent_potential(mu, pot, h),
    )


def _entropy_functional(kind: EntropyKind, tol: float) -> Functional:
    return Functional(
        name=str(kind),
        value=lambda mu: entropy(mu, kind),
        resolvent=lambda h, mu: resolvent_entropy(mu, kind, h, tol),
    )


def build_wasserstein_problem(
    pot: PotentialSpec, kind: EntropyKind, order: Ordering, tol: float = TAU_SOLVER
) -> SplitProblem:
    ent = _entropy_functional(kind, tol)
    potf = _potential_functional(pot)
    phi1, phi2 = (ent, potf) if order is Ordering.ENTROPY_FIRST else (potf, ent)
    case = splitting_case(kind, order)
    return SplitProblem(metric=w2_distance, phi1=phi1, phi2=phi2, name=f"wass1d case {case}")


# ---------------------------------------------------------------- initial data

# Rational approximation of the standard normal quantile (P. J. Acklam),
# relative error ~1.15e-9 before refinement.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def norm_ppf(p) -> np.ndarray:
    """Standard normal quantile: rational approximation plus one Halley step."""
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)):
        raise InvalidInput("probabilities must lie in (0, 1)")
    x = np.empty_like(p)
    low = p < _P_LOW
    high = p > 1 - _P_LOW
    mid = ~(low | high)

    q = np.sqrt(-2 * np.log(p[low]))
    x[low] = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
        (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1
    )
    q = np.sqrt(-2 * np.log1p(-p[high]))
    x[high] = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
        (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1
    )
    q = p[mid] - 0.5
    r = q * q
    x[mid] = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / (
        ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1
    )

    # Halley refinement of Phi(x) = p; the upper half evaluates Phi(x) - p as
    # (1 - p) - Phi(-x) to avoid cancellation.
    err = np.where(p > 0.5, (1 - p) - special.ndtr(-x), special.ndtr(x) - p)
    u = err * math.sqrt(2 * math.pi) * np.exp(0.5 * x * x)
    return x - u / (1 + 0.5 * x * u)


def quantile_of_gaussian(mean: float, sigma: float, N: int) -> QuantileDensity:
    if not sigma > 0:
        raise InvalidInput("sigma must be positive")
    if N < 4:
        raise InvalidInput("N must be at least 4")
    s = (2.0 * np.arange(1, N + 1) - 1.0) / (2.0 * N)
    z = norm_ppf(s)
    # exact antisymmetry of the standard quantiles
    z = 0.5 * (z - z[::-1])
    return QuantileDensity(mean + sigma * z)


def quantile_of_cdf(cdf: Callable[[np.ndarray], np.ndarray], N: int, lo: float, hi: float,
                    xtol: float = 1e-13) -> QuantileDensity:
    """Invert a continuous increasing CDF at the cell-centre levels by bisection."""
    s = (2.0 * np.arange(1, N + 1) - 1.0) / (2.0 * N)
    a = np.full(N, float(lo))
    b = np.full(N, float(hi))
    if np.any(cdf(a) > s) or np.any(cdf(b) < s):
        raise InvalidInput("bracket [lo, hi] does not contain every quantile")
    while np.max(b - a) > xtol * max(1.0, abs(lo), abs(hi)):
        mid = 0.5 * (a + b)
        below = cdf(mid) < s
        a = np.where(below, mid, a)
        b = np.where(below, b, mid)
        if np.all(mid == a) and np.all(mid == b):
            break
    return QuantileDensity(0.5 * (a + b))


def quantile_of_mixture(weights, means, sigmas, N: int) -> QuantileDensity:
    """Cell-centre quantiles of a Gaussian mixture."""
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    mu = np.asarray(means, dtype=float)
    sd = np.asarray(sigmas, dtype=float)

    def cdf(x):
        return np.sum(w[:, None] * special.ndtr((x[None, :] - mu[:, None]) / sd[:, None]), axis=0)

    spread = 40.0 * sd.max()
    return quantile_of_cdf(cdf, N, mu.min() - spread, mu.max() + spread)
