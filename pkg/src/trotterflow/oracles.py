"""Reference solutions: Ornstein-Uhlenbeck Gaussians, Barenblatt profiles, fine-step runs.

All times here are flow times of the continuous gradient flow. A scheme run
reaches flow time ``s`` at scheme time ``t = 2 s``. Barenblatt profiles use
the absolute self-similar time, so a run started from the profile at ``t0``
is compared with the profile at ``t0 + s``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy import special

from .scheme import Discretisation, InvalidInput, SchemeError, SplitProblem, run_scheme
from .wass1d import QuantileDensity

__all__ = [
    "OUParams",
    "BarenblattParams",
    "InversionFailure",
    "ou_exact",
    "ou_moments_rk4",
    "barenblatt_constants",
    "barenblatt_density",
    "barenblatt_cdf",
    "barenblatt_quantiles",
    "barenblatt_support",
    "barenblatt_pde_residual",
    "SampledPath",
    "fine_step_reference",
]


class InversionFailure(SchemeError):
    pass


@dataclass(frozen=True)
class OUParams:
    """Gaussian start ``N(m0, sigma0^2)`` under the potential ``lam x^2 / 2``."""

    lam: float
    m0: float
    sigma0: float

    def __post_init__(self):
        if not (self.lam > 0 and self.sigma0 > 0):
            raise InvalidInput("need lam > 0 and sigma0 > 0")


def ou_exact(params: OUParams, t: float) -> tuple[float, float]:
    """Mean and standard deviation of the Fokker-Planck solution at flow time ``t``.

    The mean decays like ``exp(-lam t)``; the variance relaxes to ``1 / lam``
    at rate ``2 lam``.
    """
    if t < 0:
        raise InvalidInput("t must be nonnegative")
    lam = params.lam
    mean = params.m0 * math.exp(-lam * t)
    var = 1.0 / lam + (params.sigma0**2 - 1.0 / lam) * math.exp(-2.0 * lam * t)
    return mean, math.sqrt(var)


def ou_moments_rk4(params: OUParams, t: float, steps: int = 2000) -> tuple[float, float]:
    """Integrate ``m' = -lam m``, ``v' = 2 - 2 lam v`` with classical RK4."""
    lam = params.lam

    def rhs(y):
        return np.array([-lam * y[0], 2.0 - 2.0 * lam * y[1]])

    y = np.array([params.m0, params.sigma0**2])
    if t == 0:
        return float(y[0]), math.sqrt(y[1])
    dt = t / steps
    for _ in range(steps):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * dt * k1)
        k3 = rhs(y + 0.5 * dt * k2)
        k4 = rhs(y + dt * k3)
        y = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return float(y[0]), math.sqrt(y[1])


@dataclass(frozen=True)
class BarenblattParams:
    """Unit-mass Barenblatt solution of ``rho_t = (rho^m)''`` started at time ``t0``."""

    m: float
    t0: float

    def __post_init__(self):
        if not (1.0 < self.m <= 4.0):
            raise InvalidInput("m must lie in (1, 4]")
        if not self.t0 > 0:
            raise InvalidInput("t0 must be positive")


def barenblatt_constants(m: float) -> tuple[float, float, float]:
    """``(k, kappa, C)`` of ``rho = t^-k (C - kappa x^2 t^-2k)_+^(1/(m-1))`` with unit mass."""
    k = 1.0 / (m + 1.0)
    kappa = k * (m - 1.0) / (2.0 * m)
    p = 1.0 / (m - 1.0)
    # mass = C^(p + 1/2) kappa^(-1/2) B(1/2, p + 1)
    C = (math.sqrt(kappa) / special.beta(0.5, p + 1.0)) ** (1.0 / (p + 0.5))
    return k, kappa, C


def barenblatt_support(params: BarenblattParams, t: float) -> float:
    """Radius of the support at time ``t``."""
    k, kappa, C = barenblatt_constants(params.m)
    return math.sqrt(C / kappa) * t**k


def barenblatt_density(params: BarenblattParams, t: float, x) -> np.ndarray:
    k, kappa, C = barenblatt_constants(params.m)
    x = np.asarray(x, dtype=float)
    base = np.maximum(C - kappa * x * x * t ** (-2.0 * k), 0.0)
    return t ** (-k) * base ** (1.0 / (params.m - 1.0))


def barenblatt_cdf(params: BarenblattParams, t: float, x) -> np.ndarray:
    """CDF at time ``t``, through the regularised incomplete beta function."""
    p = 1.0 / (params.m - 1.0)
    R = barenblatt_support(params, t)
    u = np.clip(np.asarray(x, dtype=float) / R, -1.0, 1.0)
    return 0.5 + 0.5 * np.sign(u) * special.betainc(0.5, p + 1.0, u * u)


def barenblatt_quantiles(params: BarenblattParams, t: float, N: int) -> QuantileDensity:
    """Cell-centre quantiles of the profile at time ``t >= t0``, by bisection to 1e-12."""
    if t < params.t0:
        raise InvalidInput("t must not precede t0")
    R = barenblatt_support(params, t)
    s = (2.0 * np.arange(1, N + 1) - 1.0) / (2.0 * N)
    lo = np.full(N, -R)
    hi = np.full(N, R)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        below = barenblatt_cdf(params, t, mid) < s
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.max(hi - lo) <= 1e-12 * max(1.0, R):
            break
    else:
        raise InversionFailure("bisection did not reach 1e-12")
    x = 0.5 * (lo + hi)
    x = 0.5 * (x - x[::-1])
    return QuantileDensity(x)


def barenblatt_pde_residual(
    params: BarenblattParams, times, n_space: int = 41, margin: float = 0.05
) -> float:
    """Max of ``|rho_t - (rho^m)''|`` on a probe grid inside the support.

    Derivatives are fourth-order central differences; the outer ``margin``
    fraction of the support, where the profile is not smooth, is skipped.
    """
    m = params.m
    k, kappa, C = barenblatt_constants(m)
    worst = 0.0
    for tau in np.atleast_1d(times):
        R = math.sqrt(C / kappa) * tau**k
        xs = np.linspace(-(1 - margin) * R, (1 - margin) * R, n_space)
        dt = 1e-3 * tau
        dx = 2e-3 * R

        def rho(t, x):
            return barenblatt_density(params, t, x)

        rho_t = (-rho(tau + 2 * dt, xs) + 8 * rho(tau + dt, xs) - 8 * rho(tau - dt, xs)
                 + rho(tau - 2 * dt, xs)) / (12 * dt)
        P = [rho(tau, xs + j * dx) ** m for j in (-2, -1, 0, 1, 2)]
        lap = (-P[0] + 16 * P[1] - 30 * P[2] + 16 * P[3] - P[4]) / (12 * dx * dx)
        worst = max(worst, float(np.max(np.abs(rho_t - lap))))
    return worst


@dataclass(frozen=True)
class SampledPath:
    """Left-continuous step path sampled at scheme times; ``points[k]`` holds on ``(times[k-1], times[k]]``."""

    times: np.ndarray
    points: list

    def at(self, t: float):
        k = int(np.searchsorted(self.times, t, side="left"))
        if k >= len(self.points) or t < 0:
            raise InvalidInput(f"t={t} outside the sampled range")
        return self.points[k]


def fine_step_reference(problem: SplitProblem, x0: Any, T: float, n_ref: int) -> SampledPath:
    """Uniform ``n_ref``-step run up to scheme time ``T`` as a step path."""
    disc = Discretisation.uniform(T, n_ref)
    rec = run_scheme(problem, x0, disc)
    return SampledPath(disc.times, rec.points)
