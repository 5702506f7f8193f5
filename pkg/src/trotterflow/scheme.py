"""Splitting scheme for a sum of two functionals on a metric space.

A step of size ``h`` applies the resolvent of the first functional and then
the resolvent of the second one, ``x_k = J2_h(J1_h(x_{k-1}))``. Scheme times
follow the convention ``t_k = 2 * (h_1 + ... + h_k)``; the limit curve at
scheme time ``t`` is the gradient flow of ``phi1 + phi2`` at flow time
``t / 2`` (see :attr:`Discretisation.flow_times`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Sequence

import numpy as np

__all__ = [
    "POS_INF",
    "PositiveInfinity",
    "is_finite",
    "energy_sum",
    "SchemeError",
    "ResolventFailure",
    "DomainViolation",
    "OutOfRange",
    "InvalidInput",
    "SolverError",
    "ResolventResult",
    "Functional",
    "SplitProblem",
    "Discretisation",
    "TrajectoryRecord",
    "run_scheme",
    "check_tolerance",
]


class PositiveInfinity:
    """Energy value of a point outside the domain of a functional."""

    _instance: PositiveInfinity | None = None

    def __new__(cls) -> PositiveInfinity:
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "POS_INF"

    def __reduce__(self):
        return (PositiveInfinity, ())


POS_INF = PositiveInfinity()


def is_finite(value: Any) -> bool:
    return value is not POS_INF


def energy_sum(a, b):
    """Sum of two energies; the sentinel absorbs everything."""
    if a is POS_INF or b is POS_INF:
        return POS_INF
    return float(a) + float(b)


class SchemeError(Exception):
    pass


class InvalidInput(SchemeError, ValueError):
    pass


class OutOfRange(SchemeError, ValueError):
    pass


class DomainViolation(SchemeError):
    pass


class SolverError(SchemeError):
    """Raised by an iterative resolvent that fails to converge."""


class ResolventFailure(SchemeError):
    def __init__(self, k: int, which: int, cause: Exception | None = None):
        self.k = k
        self.which = which
        self.cause = cause
        msg = f"resolvent {which} failed at step {k}"
        if cause is not None:
            msg += f": {cause}"
        super().__init__(msg)


@dataclass(frozen=True)
class ResolventResult:
    """Output of a resolvent: the point plus the solver residual it reached.

    ``certificate`` is 0 for closed-form resolvents.
    """

    point: Any
    certificate: float = 0.0
    iterations: int = 0


@dataclass(frozen=True)
class Functional:
    """A functional ``X -> R u {+inf}`` together with its resolvent map."""

    name: str
    value: Callable[[Any], Any]
    resolvent: Callable[[float, Any], ResolventResult]
    contains: Callable[[Any], bool] = field(default=lambda x: True)

    def __call__(self, x):
        if not self.contains(x):
            return POS_INF
        return self.value(x)


@dataclass(frozen=True)
class SplitProblem:
    metric: Callable[[Any, Any], float]
    phi1: Functional
    phi2: Functional
    name: str = ""

    def component(self, i: int) -> Functional:
        if i == 1:
            return self.phi1
        if i == 2:
            return self.phi2
        raise InvalidInput(f"functional index must be 1 or 2, got {i}")

    def phi(self, x):
        return energy_sum(self.phi1(x), self.phi2(x))

    def in_domain(self, x) -> bool:
        return self.phi1.contains(x) and self.phi2.contains(x)

    def dist2(self, x, y) -> float:
        return self.metric(x, y) ** 2


@dataclass(frozen=True)
class Discretisation:
    """Finite sequence of positive step sizes."""

    steps: tuple[float, ...]

    def __init__(self, steps: Sequence[float]):
        arr = tuple(float(h) for h in steps)
        if not arr:
            raise InvalidInput("discretisation must contain at least one step")
        for h in arr:
            if not (math.isfinite(h) and h > 0.0):
                raise InvalidInput(f"step sizes must be positive and finite, got {h!r}")
        object.__setattr__(self, "steps", arr)

    @classmethod
    def uniform(cls, T: float, n: int) -> Discretisation:
        """``n`` equal steps with ``t_n = T``, i.e. ``h = T / (2n)``."""
        if n < 1:
            raise InvalidInput("n must be >= 1")
        return cls([T / (2 * n)] * n)

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def h(self) -> np.ndarray:
        return np.asarray(self.steps)

    @property
    def mesh(self) -> float:
        return max(self.steps)

    @cached_property
    def times(self) -> np.ndarray:
        """Scheme times ``t_0 = 0, t_k = 2 * sum_{j<=k} h_j`` (read-only)."""
        t = np.concatenate(([0.0], 2.0 * np.cumsum(self.steps)))
        t.setflags(write=False)
        return t

    @property
    def flow_times(self) -> np.ndarray:
        return 0.5 * self.times

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def cell_of(self, t: float) -> int:
        """Index ``k`` (1-based) with ``t`` in ``[t_{k-1}, t_k)``; ``n`` at ``t = t_n``."""
        times = self.times
        if not (0.0 <= t <= times[-1]):
            raise OutOfRange(f"t={t} outside [0, {times[-1]}]")
        k = int(np.searchsorted(times, t, side="right"))
        return min(k, len(self.steps))


@dataclass(frozen=True)
class TrajectoryRecord:
    """Bookkeeping of one scheme run. Index ``k`` runs over ``1..n``; the
    arrays are 0-based so entry ``k - 1`` belongs to step ``k``."""

    disc: Discretisation
    x0: Any
    xhat: tuple
    x: tuple
    phi0: tuple[float, float]
    phi1_hat: np.ndarray
    phi2_hat: np.ndarray
    phi1: np.ndarray
    phi2: np.ndarray
    delta: np.ndarray
    Delta: np.ndarray
    step_dist_sq: np.ndarray
    certificate: float = 0.0

    def __len__(self) -> int:
        return len(self.x)

    def point(self, k: int):
        """``x_h^k`` for ``k = 0..n``."""
        return self.x0 if k == 0 else self.x[k - 1]

    @property
    def points(self) -> list:
        return [self.x0, *self.x]

    @cached_property
    def phi(self) -> np.ndarray:
        """``phi(x_h^k)`` for ``k = 0..n`` (read-only)."""
        head = [self.phi0[0] + self.phi0[1]]
        out = np.concatenate((head, self.phi1 + self.phi2))
        out.setflags(write=False)
        return out

    @property
    def Delta_n(self) -> float:
        return float(self.Delta[-1])


def check_tolerance(record: TrajectoryRecord) -> float:
    """Slack granted to the exact inequalities when checked on ``record``."""
    scale = 1.0 + abs(float(record.phi[0])) + 1.0 / min(record.disc.steps)
    return max(1e-10, 10.0 * record.certificate) * scale


def _finite_energy(value, k: int, label: str) -> float:
    if value is POS_INF:
        raise DomainViolation(f"{label} left the domain at step {k}")
    return float(value)


def run_scheme(problem: SplitProblem, x0, disc: Discretisation) -> TrajectoryRecord:
    """Run the splitting scheme ``x_k = J2_{h_k} J1_{h_k} x_{k-1}``."""
    if not problem.in_domain(x0):
        raise DomainViolation("initial point is not in D(phi1) n D(phi2)")
    n = len(disc)
    xhat, xs = [], []
    e = np.empty((4, n))
    cert = 0.0
    x = x0
    for k, h in enumerate(disc.steps, start=1):
        try:
            r1 = problem.phi1.resolvent(h, x)
        except SolverError as exc:
            raise ResolventFailure(k, 1, exc) from exc
        try:
            r2 = problem.phi2.resolvent(h, r1.point)
        except SolverError as exc:
            raise ResolventFailure(k, 2, exc) from exc
        cert = max(cert, r1.certificate, r2.certificate)
        e[0, k - 1] = _finite_energy(problem.phi1(r1.point), k, "phi1 at half step")
        e[1, k - 1] = _finite_energy(problem.phi2(r1.point), k, "phi2 at half step")
        e[2, k - 1] = _finite_energy(problem.phi1(r2.point), k, "phi1")
        e[3, k - 1] = _finite_energy(problem.phi2(r2.point), k, "phi2")
        xhat.append(r1.point)
        xs.append(r2.point)
        x = r2.point

    points = [x0, *xs]
    dist_sq = np.array([problem.dist2(points[k], points[k - 1]) for k in range(1, n + 1)])
    delta = np.maximum(e[2] - e[0], 0.0)
    phi0 = (
        _finite_energy(problem.phi1(x0), 0, "phi1"),
        _finite_energy(problem.phi2(x0), 0, "phi2"),
    )
    return TrajectoryRecord(
        disc=disc,
        x0=x0,
        xhat=tuple(xhat),
        x=tuple(xs),
        phi0=phi0,
        phi1_hat=e[0],
        phi2_hat=e[1],
        phi1=e[2],
        phi2=e[3],
        delta=delta,
        Delta=np.cumsum(delta),
        step_dist_sq=dist_sq,
        certificate=cert,
    )
