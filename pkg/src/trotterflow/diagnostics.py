"""Numerical checks of the discrete inequalities satisfied by the scheme.

Every checker returns an :class:`InequalityCheck` holding both sides of an
inequality ``lhs <= rhs`` together with the slack it is allowed. The
inequalities are exact for exact resolvents; iterative resolvents get the
slack of :func:`trotterflow.scheme.check_tolerance`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .scheme import (
    POS_INF,
    Discretisation,
    InvalidInput,
    OutOfRange,
    SchemeError,
    SplitProblem,
    TrajectoryRecord,
    check_tolerance,
)

__all__ = [
    "InequalityCheck",
    "verify_devi",
    "moreau_yosida_value",
    "ell",
    "piecewise_paths",
    "interpolants",
    "r_function",
    "r_cell_integrals",
    "check_record_consistency",
    "check_discrete_evi",
    "check_apriori",
    "check_r_integral",
    "gronwall_bound",
    "gronwall_oracle",
    "GridTooCoarse",
    "EviEntry",
    "EviReport",
    "flow_samples",
    "check_evi_integral",
    "ChiMode",
    "A3Report",
    "check_a3",
]


@dataclass(frozen=True)
class InequalityCheck:
    """``lhs[i] <= rhs[i] + tolerance`` for every entry."""

    name: str
    lhs: np.ndarray
    rhs: np.ndarray
    tolerance: float

    @property
    def residual(self) -> np.ndarray:
        return np.asarray(self.lhs, dtype=float) - np.asarray(self.rhs, dtype=float)

    @property
    def worst(self) -> float:
        r = self.residual
        return float(r.max()) if r.size else -math.inf

    @property
    def holds(self) -> bool:
        return bool(self.worst <= self.tolerance)

    def summary(self) -> str:
        verdict = "PASS" if self.holds else "FAIL"
        return f"{verdict} {self.name}: worst residual {self.worst:.3e} (tol {self.tolerance:.3e})"


# ---------------------------------------------------------------- resolvents


def moreau_yosida_value(problem: SplitProblem, i: int, h: float, x, y):
    """``phi_i(y) + d^2(x, y) / (2h)``, or ``POS_INF`` when ``y`` is outside ``D(phi_i)``."""
    if not h > 0:
        raise InvalidInput("h must be positive")
    f = problem.component(i)
    value = f(y)
    if value is POS_INF:
        return POS_INF
    return float(value) + problem.dist2(x, y) / (2.0 * h)


def verify_devi(problem: SplitProblem, i: int, h: float, x, y, probes: Sequence) -> float:
    """Largest violation of the resolvent variational inequality over ``probes``.

    For each probe ``z`` evaluates::

        (d^2(y,z) - d^2(x,z)) / 2h + d^2(y,x) / 2h + phi_i(y) - phi_i(z)

    A nonpositive result (up to solver tolerance) certifies that ``y`` acts as
    the resolvent of ``phi_i`` at ``x`` against every probe.
    """
    if not h > 0:
        raise InvalidInput("h must be positive")
    if len(probes) == 0:
        raise InvalidInput("at least one probe is required")
    f = problem.component(i)
    fy = f(y)
    if fy is POS_INF:
        return math.inf
    dyx = problem.dist2(y, x)
    worst = -math.inf
    for z in probes:
        fz = f(z)
        if fz is POS_INF:
            continue
        v = (problem.dist2(y, z) - problem.dist2(x, z) + dyx) / (2.0 * h) + fy - float(fz)
        worst = max(worst, v)
    return worst


# ---------------------------------------------------------------- interpolants


def ell(disc: Discretisation, t: float) -> float:
    """Piecewise affine clock: 0 at every ``t_k``, tending to 1 as ``t`` increases to ``t_k``."""
    k = disc.cell_of(t)
    times = disc.times
    if t >= times[-1]:
        return 0.0
    return (t - times[k - 1]) / (2.0 * disc.steps[k - 1])


def piecewise_paths(traj: TrajectoryRecord, t: float):
    """Right- and left-continuous step paths through ``(t_k, x_k)``.

    Returns ``(lower, upper)``: on ``(t_{k-1}, t_k)`` the right-continuous path
    sits at ``x_{k-1}`` and the left-continuous one at ``x_k``; both equal
    ``x_k`` at ``t_k``.
    """
    disc = traj.disc
    k = disc.cell_of(t)
    times = disc.times
    if t >= times[-1]:
        p = traj.point(len(disc))
        return p, p
    if t == times[k - 1]:
        p = traj.point(k - 1)
        return p, p
    return traj.point(k - 1), traj.point(k)


def _cell_terms(traj: TrajectoryRecord, k: int) -> tuple[float, float]:
    """Values of R at the left end (l=0) and the left limit at the right end (l->1) of cell k."""
    phi = traj.phi
    h = traj.disc.steps[k - 1]
    q = traj.step_dist_sq[k - 1] / (4.0 * h)
    d = traj.delta[k - 1]
    a = phi[k - 1] - phi[k] + d - q
    b = d - q
    return float(a), float(b)


def r_function(traj: TrajectoryRecord, t: float) -> float:
    disc = traj.disc
    if t >= disc.horizon:
        if t > disc.horizon:
            raise OutOfRange(f"t={t} outside [0, {disc.horizon}]")
        return 0.0
    k = disc.cell_of(t)
    a, b = _cell_terms(traj, k)
    lam = ell(disc, t)
    return (1.0 - lam) * a + lam * b


def interpolants(traj: TrajectoryRecord, problem: SplitProblem, t: float, y):
    """Continuous interpolants of ``d^2(x_k, y)`` and ``phi(x_k)`` together with ``R(t)``.

    Returns ``(d2, phi, R)`` evaluated at scheme time ``t``.
    """
    lower, upper = piecewise_paths(traj, t)
    lam = ell(traj.disc, t)
    d2 = (1.0 - lam) * problem.dist2(lower, y) + lam * problem.dist2(upper, y)
    phi_l = problem.phi(lower)
    phi_u = problem.phi(upper)
    if phi_l is POS_INF or phi_u is POS_INF:
        raise SchemeError("trajectory point outside D(phi)")
    phi_t = (1.0 - lam) * phi_l + lam * phi_u
    return d2, phi_t, r_function(traj, t)


def r_cell_integrals(traj: TrajectoryRecord) -> np.ndarray:
    """Exact ``int [R]^+ dt`` over each cell ``[t_{k-1}, t_k)``.

    ``R`` is affine on a cell of length ``2 h_k``, so the positive part
    integrates to a trapezoid or a triangle.
    """
    out = np.empty(len(traj.disc))
    for k in range(1, len(traj.disc) + 1):
        a, b = _cell_terms(traj, k)
        h = traj.disc.steps[k - 1]
        if a >= 0.0 and b >= 0.0:
            out[k - 1] = h * (a + b)
        elif a <= 0.0 and b <= 0.0:
            out[k - 1] = 0.0
        elif a > 0.0:
            out[k - 1] = h * a * a / (a - b)
        else:
            out[k - 1] = h * b * b / (b - a)
    return out


# ---------------------------------------------------------------- trajectory checks


def check_record_consistency(traj: TrajectoryRecord) -> list[InequalityCheck]:
    """Bookkeeping identities of a record: ``delta_k = [phi1(x_k) - phi1(xhat_k)]^+``,
    ``Delta_k = Delta_{k-1} + delta_k``, ``delta_k >= 0``."""
    n = len(traj.disc)
    expected_delta = np.maximum(traj.phi1 - traj.phi1_hat, 0.0)
    running = np.concatenate(([0.0], traj.Delta[:-1])) + traj.delta
    scale = 1e-12 * (1.0 + np.abs(traj.Delta).max(initial=0.0))
    return [
        InequalityCheck("delta definition", np.abs(traj.delta - expected_delta), np.zeros(n), 0.0),
        InequalityCheck("Delta running sum", np.abs(traj.Delta - running), np.zeros(n), scale),
        InequalityCheck("delta nonnegative", -traj.delta, np.zeros(n), 0.0),
    ]


def check_discrete_evi(
    traj: TrajectoryRecord, problem: SplitProblem, w, tolerance: float | None = None
) -> tuple[InequalityCheck, InequalityCheck]:
    """Per-step discrete EVI at the comparison point ``w`` and its ``w = x_{k-1}`` special case.

    Returns ``(general, special)``::

        general: (d^2(x_k,w) - d^2(x_{k-1},w)) / 2h_k
                   <= phi(w) - phi(x_k) - d^2(x_k,x_{k-1}) / 4h_k + delta_k
        special: 3 d^2(x_k,x_{k-1}) / 4h_k <= phi(x_{k-1}) - phi(x_k) + delta_k
    """
    tol = check_tolerance(traj) if tolerance is None else tolerance
    phi_w = problem.phi(w)
    if phi_w is POS_INF:
        raise InvalidInput("comparison point w must lie in D(phi)")
    h = traj.disc.h
    phi = traj.phi
    d2w = np.array([problem.dist2(p, w) for p in traj.points])
    dsq = traj.step_dist_sq
    general = InequalityCheck(
        "discrete EVI",
        (d2w[1:] - d2w[:-1]) / (2.0 * h),
        phi_w - phi[1:] - dsq / (4.0 * h) + traj.delta,
        tol,
    )
    special = InequalityCheck(
        "discrete EVI, w = x_(k-1)",
        3.0 * dsq / (4.0 * h),
        phi[:-1] - phi[1:] + traj.delta,
        tol,
    )
    return general, special


def check_apriori(
    traj: TrajectoryRecord, tolerance: float | None = None
) -> tuple[InequalityCheck, InequalityCheck]:
    """Summed dissipation bound and the running energy bound.

    ``(3/4) sum_k d^2(x_k, x_{k-1}) / h_k <= phi(x_0) - phi(x_n) + Delta_n`` and
    ``phi(x_k) <= phi(x_0) + Delta_k`` for every ``k``.
    """
    tol = check_tolerance(traj) if tolerance is None else tolerance
    n = len(traj.disc)
    phi = traj.phi
    dissipation = InequalityCheck(
        "a-priori dissipation",
        np.array([0.75 * np.sum(traj.step_dist_sq / traj.disc.h)]),
        np.array([phi[0] - phi[-1] + traj.Delta[-1]]),
        tol * n,
    )
    energy = InequalityCheck("energy bound", phi[1:], phi[0] + traj.Delta, tol * n)
    return dissipation, energy


def check_r_integral(traj: TrajectoryRecord, tolerance: float | None = None) -> InequalityCheck:
    """``int_0^{t_k} [R]^+ <= mesh * (phi(x_0) - phi(x_k) + 2 Delta_k)`` for each ``k``."""
    tol = check_tolerance(traj) if tolerance is None else tolerance
    lhs = np.cumsum(r_cell_integrals(traj))
    phi = traj.phi
    rhs = traj.disc.mesh * (phi[0] - phi[1:] + 2.0 * traj.Delta)
    return InequalityCheck("R integral bound", lhs, rhs, tol * traj.disc.mesh * len(traj.disc))


# ---------------------------------------------------------------- Gronwall


def _check_taus(taus: Sequence[float]) -> np.ndarray:
    t = np.asarray(taus, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise InvalidInput("taus must be a nonempty sequence")
    if np.any(~np.isfinite(t)) or np.any(t <= 0):
        raise InvalidInput("taus must be positive")
    if t.max() >= 1.0:
        raise InvalidInput("max tau must be < 1")
    return t


def gronwall_bound(A: float, taus: Sequence[float]) -> np.ndarray:
    """Bounds ``A * beta * exp(beta * t_{n-1})`` with ``beta = 1 / (1 - max tau)``.

    Entry ``n - 1`` bounds every ``a_n`` obeying ``a_n <= A + sum_{k<=n} tau_k a_k``.
    """
    if A < 0:
        raise InvalidInput("A must be nonnegative")
    t = _check_taus(taus)
    beta = 1.0 / (1.0 - t.max())
    t_prev = np.concatenate(([0.0], np.cumsum(t)[:-1]))
    return A * beta * np.exp(beta * t_prev)


def gronwall_oracle(A: float, taus: Sequence[float]) -> np.ndarray:
    """Extremal sequence of the recursion: equality solved by forward substitution,
    ``a_n = (A + sum_{k<n} tau_k a_k) / (1 - tau_n)``."""
    t = _check_taus(taus)
    a = np.empty_like(t)
    acc = 0.0
    for i, tau in enumerate(t):
        a[i] = (A + acc) / (1.0 - tau)
        acc += tau * a[i]
    return a


# ---------------------------------------------------------------- limit EVI


class GridTooCoarse(SchemeError, ValueError):
    pass


@dataclass(frozen=True)
class EviEntry:
    a: float
    b: float
    y_id: Any
    lhs: float
    rhs: float

    @property
    def residual(self) -> float:
        return self.lhs - self.rhs


@dataclass(frozen=True)
class EviReport:
    entries: list[EviEntry]
    dt: float
    tolerance: float
    quadrature_error: float = 0.0
    path_error: float = 0.0

    @property
    def worst(self) -> float:
        return max((e.residual for e in self.entries), default=-math.inf)

    @property
    def holds(self) -> bool:
        return bool(self.worst <= self.tolerance)


def flow_samples(traj: TrajectoryRecord) -> tuple[np.ndarray, list]:
    """Trajectory nodes on the flow-time axis ``s_k = t_k / 2``."""
    return traj.disc.flow_times, traj.points


def check_evi_integral(
    times: Sequence[float],
    points: Sequence,
    problem: SplitProblem,
    ys: Sequence,
    pairs: Sequence[tuple[float, float]],
    path_error: float = 0.0,
    y_ids: Sequence | None = None,
) -> EviReport:
    """Integrated EVI ``d^2(u(b),y)/2 - d^2(u(a),y)/2 <= (b-a) phi(y) - int_a^b phi(u)``.

    ``times`` must be a uniform grid; ``a`` and ``b`` are snapped to the nearest
    grid nodes and the time integral uses the trapezoid rule. The tolerance is
    a trapezoid error estimate from second differences of ``phi(u)`` plus
    ``2 * path_error``, the caller's bound on how far the sampled curve may be
    from satisfying the inequality exactly.
    """
    t = np.asarray(times, dtype=float)
    if t.size < 3 or len(points) != t.size:
        raise GridTooCoarse("need at least three samples, one point per time")
    dt = (t[-1] - t[0]) / (t.size - 1)
    if not np.allclose(np.diff(t), dt, rtol=1e-9, atol=1e-12 * max(1.0, abs(t[-1]))):
        raise InvalidInput("sample times must form a uniform grid")
    values = [problem.phi(p) for p in points]
    if any(v is POS_INF for v in values):
        raise InvalidInput("sampled curve leaves D(phi)")
    f = np.array(values, dtype=float)
    ids = list(range(len(ys))) if y_ids is None else list(y_ids)

    entries: list[EviEntry] = []
    quad_err = 0.0
    for a, b in pairs:
        if not (0.0 < a < b):
            raise InvalidInput(f"need 0 < a < b, got ({a}, {b})")
        ia = int(round((a - t[0]) / dt))
        ib = int(round((b - t[0]) / dt))
        if ia < 0 or ib >= t.size or ib - ia < 2:
            raise GridTooCoarse(f"grid does not resolve ({a}, {b})")
        seg = f[ia : ib + 1]
        integral = float(np.trapezoid(seg, dx=dt))
        if seg.size >= 3:
            curv = np.abs(np.diff(seg, 2)).max() / dt**2
            quad_err = max(quad_err, (t[ib] - t[ia]) * dt**2 * curv / 12.0)
        for y, yid in zip(ys, ids):
            phi_y = problem.phi(y)
            if phi_y is POS_INF:
                raise InvalidInput("probe y must lie in D(phi)")
            lhs = 0.5 * problem.dist2(points[ib], y) - 0.5 * problem.dist2(points[ia], y)
            rhs = (t[ib] - t[ia]) * phi_y - integral
            entries.append(EviEntry(float(t[ia]), float(t[ib]), yid, float(lhs), float(rhs)))
    tol = quad_err + 2.0 * path_error + 1e-12
    return EviReport(entries, float(dt), float(tol), float(quad_err), float(path_error))


# ---------------------------------------------------------------- growth conditions bounding Delta


class ChiMode(enum.Enum):
    """Which sufficient condition bounds the accumulated ``Delta_n``."""

    CONSTANT = "constant"  # phi1(J2 x) <= phi1(x) + c h
    PHI1 = "phi1"  # phi1(J2 x) <= exp(alpha h) phi1(x), phi1 >= 0
    PHI2 = "phi2"  # phi1(J2 x) <= phi1(x) + c h phi2(J2 x) and phi2(J1 x) <= exp(alpha h) phi2(x), phi2 >= 0


@dataclass(frozen=True)
class A3Report:
    mode: ChiMode
    checks: list[InequalityCheck] = field(default_factory=list)
    Delta_n: float = 0.0
    Delta_bound: float = 0.0

    @property
    def holds(self) -> bool:
        return all(c.holds for c in self.checks)


def check_a3(
    traj: TrajectoryRecord,
    mode: ChiMode,
    c: float = 0.0,
    alpha: float = 0.0,
    tolerance: float | None = None,
) -> A3Report:
    """Check the per-step hypothesis of ``mode`` along ``traj`` and the bound on ``Delta_n`` it yields.

    Bounds: ``c T / 2`` (CONSTANT), ``(exp(alpha T / 2) - 1) phi1(x_0)`` (PHI1),
    ``c phi2(x_0) int_0^T exp(alpha s) ds`` (PHI2), with ``T = t_n``.
    """
    if c < 0 or alpha < 0:
        raise InvalidInput("constants must be nonnegative")
    tol = check_tolerance(traj) if tolerance is None else tolerance
    h = traj.disc.h
    T = traj.disc.horizon
    n = len(traj.disc)
    checks: list[InequalityCheck] = []
    if mode is ChiMode.CONSTANT:
        checks.append(InequalityCheck("phi1 growth under J2", traj.phi1, traj.phi1_hat + c * h, tol))
        bound = 0.5 * c * T
    elif mode is ChiMode.PHI1:
        phi1_all = np.concatenate(([traj.phi0[0]], traj.phi1_hat, traj.phi1))
        checks.append(InequalityCheck("phi1 nonnegative", -phi1_all, np.zeros(phi1_all.size), tol))
        checks.append(
            InequalityCheck("phi1 growth under J2", traj.phi1, np.exp(alpha * h) * traj.phi1_hat, tol)
        )
        bound = (math.exp(0.5 * alpha * T) - 1.0) * traj.phi0[0]
    elif mode is ChiMode.PHI2:
        phi2_prev = np.concatenate(([traj.phi0[1]], traj.phi2[:-1]))
        phi2_all = np.concatenate(([traj.phi0[1]], traj.phi2_hat, traj.phi2))
        checks.append(InequalityCheck("phi2 nonnegative", -phi2_all, np.zeros(phi2_all.size), tol))
        checks.append(
            InequalityCheck("phi1 growth under J2", traj.phi1, traj.phi1_hat + c * h * traj.phi2, tol)
        )
        checks.append(
            InequalityCheck("phi2 growth under J1", traj.phi2_hat, np.exp(alpha * h) * phi2_prev, tol)
        )
        integral = T if alpha == 0 else math.expm1(alpha * T) / alpha
        bound = c * traj.phi0[1] * integral
    else:
        raise InvalidInput(f"unknown mode {mode!r}")
    checks.append(InequalityCheck("Delta_n bound", np.array([traj.Delta_n]), np.array([bound]), tol * n))
    return A3Report(mode, checks, traj.Delta_n, float(bound))
