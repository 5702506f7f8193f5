"""Convergence of the splitting scheme as the mesh is refined."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from .scheme import Discretisation, InvalidInput, SplitProblem, TrajectoryRecord, run_scheme

__all__ = ["ConvergenceRow", "ConvergenceTable", "upper_path", "sup_distance", "trotter_convergence_study"]


@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    mesh: float
    error: float


@dataclass(frozen=True)
class ConvergenceTable:
    rows: list[ConvergenceRow]
    slope: float
    reference: str

    @property
    def errors(self) -> np.ndarray:
        return np.array([r.error for r in self.rows])

    @property
    def meshes(self) -> np.ndarray:
        return np.array([r.mesh for r in self.rows])

    def monotone(self, slack: float = 0.1) -> bool:
        e = self.errors
        return bool(np.all(e[1:] <= (1.0 + slack) * e[:-1]))


def upper_path(traj: TrajectoryRecord, t: float):
    """Left-continuous step path: ``x_k`` on ``(t_{k-1}, t_k]``, ``x_0`` at 0."""
    times = traj.disc.times
    k = int(np.searchsorted(times, t, side="left"))
    return traj.point(min(k, len(traj.disc)))


def fit_slope(meshes, errors) -> float:
    """Least-squares slope of ``log error`` against ``log mesh``; NaN with < 2 positive errors."""
    m = np.asarray(meshes, dtype=float)
    e = np.asarray(errors, dtype=float)
    keep = e > 0
    if keep.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(m[keep]), np.log(e[keep]), 1)[0])


def sup_distance(
    traj: TrajectoryRecord,
    problem: SplitProblem,
    reference: TrajectoryRecord | Callable[[float], Any],
    T: float,
) -> float:
    """``sup_{t <= T}`` distance between the upper step path of ``traj`` and ``reference``.

    Against another record the sup is exact: both paths are constant between
    merged breakpoints, so one sample per merged interval suffices. Against a
    continuous oracle ``reference(t)`` (scheme time) each cell is sampled at
    both ends and the midpoint.
    """
    times = traj.disc.times
    if times[-1] < T * (1 - 1e-12):
        raise InvalidInput("trajectory does not reach T")
    cache: dict[float, Any] = {}

    if isinstance(reference, TrajectoryRecord):
        if reference.disc.times[-1] < T * (1 - 1e-12):
            raise InvalidInput("reference does not reach T")
        grid = np.union1d(times[times <= T], reference.disc.times[reference.disc.times <= T])
        grid = grid[np.concatenate(([True], np.diff(grid) > 1e-12 * max(1.0, T)))]
        probes = 0.5 * (grid[1:] + grid[:-1])
        worst = problem.metric(traj.x0, reference.x0)
        for t in probes:
            worst = max(worst, problem.metric(upper_path(traj, t), upper_path(reference, t)))
        return float(worst)

    def oracle(t):
        if t not in cache:
            cache[t] = reference(t)
        return cache[t]

    worst = problem.metric(traj.x0, oracle(0.0))
    for k in range(1, len(traj.disc) + 1):
        a, b = times[k - 1], times[k]
        if a >= T:
            break
        b = min(b, T)
        xk = traj.point(k)
        for t in (a, 0.5 * (a + b), b):
            worst = max(worst, problem.metric(xk, oracle(float(t))))
    return float(worst)


def trotter_convergence_study(
    problem: SplitProblem,
    x0,
    T: float,
    step_counts: Sequence[int],
    oracle: Callable[[float], Any] | None = None,
) -> ConvergenceTable:
    """Sup-distance of uniform ``n``-step runs to a reference, and the fitted rate.

    ``T`` is the scheme horizon (``t_n = T``). Without ``oracle`` the run with
    the largest ``n`` is the reference and is left out of the table.
    ``oracle(t)`` must return the limit point at scheme time ``t``.
    """
    counts = list(step_counts)
    if len(counts) < 2 or any(b <= a for a, b in zip(counts, counts[1:])):
        raise InvalidInput("step counts must be strictly increasing, at least two")
    runs = {n: run_scheme(problem, x0, Discretisation.uniform(T, n)) for n in counts}
    if oracle is None:
        ref: Any = runs[counts[-1]]
        counts = counts[:-1]
        label = f"fine run n={ref.disc.__len__()}"
    else:
        ref = oracle
        label = "oracle"
    rows = [ConvergenceRow(n, runs[n].disc.mesh, sup_distance(runs[n], problem, ref, T)) for n in counts]
    slope = fit_slope([r.mesh for r in rows], [r.error for r in rows])
    return ConvergenceTable(rows, slope, label)
