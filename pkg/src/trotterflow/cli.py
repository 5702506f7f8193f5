"""Command-line front end.

Usage::

    trotterflow run <config> [--output-dir DIR] [--seed S] [--verbose]
    trotterflow convergence <config> ...
    trotterflow check <config> ...

Exit codes: 0 success, 1 a check failed, 2 configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import diagnostics as dg
from .euclidean import QuadraticFunctional, build_euclidean_problem, exact_flow
from .oracles import BarenblattParams, OUParams, barenblatt_quantiles, ou_exact
from .scheme import (
    Discretisation,
    InvalidInput,
    ResolventFailure,
    SchemeError,
    SolverError,
    SplitProblem,
    TrajectoryRecord,
    check_tolerance,
    run_scheme,
)
from .study import trotter_convergence_study
from .wass1d import (
    TAU_SOLVER,
    EntropyKind,
    Ordering,
    PotentialSpec,
    QuantileDensity,
    build_wasserstein_problem,
    check_compatibility,
    quantile_of_gaussian,
    splitting_case,
)

log = logging.getLogger("trotterflow")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3

PROBLEMS = ("euclidean", "fokker-planck", "porous-medium")

TRAJECTORY_COLUMNS = [
    "k", "t_k", "delta_k", "Delta_k", "step_dist_sq", "phi1", "phi2", "phi", "phi1_hat", "phi2_hat",
]


class ConfigError(ValueError):
    pass


def fmt(x: float) -> str:
    return format(float(x), ".17g")


# ---------------------------------------------------------------- configuration


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def _matrix(text: str) -> np.ndarray:
    rows = [_floats(r) for r in text.split(";") if r.strip()]
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise ConfigError(f"malformed matrix {text!r}")
    return np.array(rows)


@dataclass
class RunConfig:
    problem: str
    T: float = 1.0
    n: int | None = None
    steps: list[float] | None = None
    step_counts: list[int] = field(default_factory=list)
    seed: int = 0
    output: str | None = None
    # euclidean
    A1: np.ndarray | None = None
    A2: np.ndarray | None = None
    b1: np.ndarray | None = None
    b2: np.ndarray | None = None
    x0: np.ndarray | None = None
    # wasserstein
    potential: str = "quadratic"
    lam: float = 1.0
    entropy: str = "boltzmann"
    m: float = 2.0
    ordering: str = "entropy-first"
    N: int = 256
    initial: str = "gaussian"
    mean: float = 0.0
    sigma: float = 1.0
    t0: float = 1.0
    tol: float = TAU_SOLVER
    snapshots: list[int] = field(default_factory=list)
    reference: str = "oracle"
    trajectory: str | None = None

    @classmethod
    def parse(cls, text: str) -> RunConfig:
        parser = configparser.ConfigParser(
            inline_comment_prefixes=("#",), comment_prefixes=("#",), interpolation=None
        )
        parser.optionxform = str
        try:
            parser.read_string("[config]\n" + text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        raw = dict(parser["config"])
        try:
            return cls._from_mapping(raw)
        except (KeyError, ValueError, InvalidInput) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid config: {exc}") from exc

    @classmethod
    def _from_mapping(cls, raw: dict[str, str]) -> RunConfig:
        known = {
            "problem", "T", "n", "steps", "step_counts", "seed", "output", "A1", "A2", "b1", "b2",
            "x0", "potential", "lambda", "entropy", "m", "ordering", "N", "initial", "mean", "sigma",
            "t0", "tol", "snapshots", "reference", "trajectory",
        }
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown keys: {', '.join(sorted(unknown))}")
        if "problem" not in raw:
            raise ConfigError("missing required key 'problem'")
        problem = raw["problem"].strip()
        if problem not in PROBLEMS:
            raise ConfigError(f"problem must be one of {PROBLEMS}, got {problem!r}")
        cfg = cls(problem=problem)
        if problem == "porous-medium":
            cfg.potential, cfg.entropy, cfg.initial = "zero", "renyi", "barenblatt"
        if "T" in raw:
            cfg.T = float(raw["T"])
        if "n" in raw:
            cfg.n = int(raw["n"])
        if "steps" in raw:
            cfg.steps = _floats(raw["steps"])
        if "step_counts" in raw:
            cfg.step_counts = [int(v) for v in _floats(raw["step_counts"])]
        if "seed" in raw:
            cfg.seed = int(raw["seed"])
        cfg.output = raw.get("output")
        for key in ("A1", "A2"):
            if key in raw:
                setattr(cfg, key, _matrix(raw[key]))
        for key in ("b1", "b2", "x0"):
            if key in raw:
                setattr(cfg, key, np.array(_floats(raw[key])))
        for key in ("potential", "entropy", "ordering", "initial", "reference"):
            if key in raw:
                setattr(cfg, key, raw[key].strip())
        if "lambda" in raw:
            cfg.lam = float(raw["lambda"])
        for key in ("m", "mean", "sigma", "t0", "tol"):
            if key in raw:
                setattr(cfg, key, float(raw[key]))
        if "N" in raw:
            cfg.N = int(raw["N"])
        if "snapshots" in raw:
            cfg.snapshots = [int(v) for v in _floats(raw["snapshots"])]
        cfg.trajectory = raw.get("trajectory")
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if not (math.isfinite(self.T) and self.T > 0):
            raise ConfigError("T must be positive")
        if self.n is not None and self.steps is not None:
            raise ConfigError("give either n or steps, not both")
        if self.n is not None and self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.steps is not None:
            if not self.steps or any(not (h > 0 and math.isfinite(h)) for h in self.steps):
                raise ConfigError("steps must be positive")
            if not math.isclose(2.0 * sum(self.steps), self.T, rel_tol=1e-9):
                raise ConfigError("explicit steps must satisfy 2 * sum(steps) = T")
        if any(b <= a for a, b in zip(self.step_counts, self.step_counts[1:])):
            raise ConfigError("step_counts must be strictly increasing")
        if self.reference not in ("oracle", "fine"):
            raise ConfigError("reference must be 'oracle' or 'fine'")
        if self.problem == "euclidean":
            if self.A1 is None or self.A2 is None or self.x0 is None:
                raise ConfigError("euclidean problems need A1, A2 and x0")
            dim = self.x0.size
            for M in (self.A1, self.A2):
                if M.shape != (dim, dim):
                    raise ConfigError("matrix dimensions must match x0")
            for key in ("b1", "b2"):
                v = getattr(self, key)
                if v is None:
                    setattr(self, key, np.zeros(dim))
                elif v.size != dim:
                    raise ConfigError(f"{key} must have the dimension of x0")
            return
        if self.potential not in ("quadratic", "zero", "log-cosh"):
            raise ConfigError("potential must be quadratic, zero or log-cosh")
        if self.lam < 0:
            raise ConfigError("lambda must be nonnegative")
        if self.entropy not in ("boltzmann", "renyi"):
            raise ConfigError("entropy must be boltzmann or renyi")
        if self.entropy == "renyi" and not (1.0 < self.m <= 4.0):
            raise ConfigError("m must lie in (1, 4]")
        if self.ordering not in ("entropy-first", "potential-first"):
            raise ConfigError("ordering must be entropy-first or potential-first")
        if not (4 <= self.N <= 1_000_000):
            raise ConfigError("N must be at least 4")
        if self.initial not in ("gaussian", "barenblatt"):
            raise ConfigError("initial must be gaussian or barenblatt")
        if self.initial == "gaussian" and not self.sigma > 0:
            raise ConfigError("sigma must be positive")
        if self.initial == "barenblatt":
            if self.entropy != "renyi":
                raise ConfigError("a Barenblatt start needs a renyi entropy")
            if not self.t0 > 0:
                raise ConfigError("t0 must be positive")
        if not (0 < self.tol < 1e-3):
            raise ConfigError("tol must lie in (0, 1e-3)")

    def discretisation(self, n: int | None = None) -> Discretisation:
        if n is not None:
            return Discretisation.uniform(self.T, n)
        if self.steps is not None:
            return Discretisation(self.steps)
        if self.n is None:
            raise ConfigError("config needs n or steps")
        return Discretisation.uniform(self.T, self.n)


# ---------------------------------------------------------------- problem assembly


@dataclass
class Setup:
    problem: SplitProblem
    x0: Any
    oracle: Callable[[float], Any] | None
    pot: PotentialSpec | None = None
    kind: EntropyKind | None = None
    order: Ordering | None = None


def _potential(cfg: RunConfig) -> PotentialSpec:
    if cfg.potential == "zero":
        return PotentialSpec.zero()
    if cfg.potential == "log-cosh":
        return PotentialSpec.log_cosh(cfg.lam if cfg.lam > 0 else 1.0)
    return PotentialSpec.quadratic(cfg.lam)


def build_setup(cfg: RunConfig) -> Setup:
    if cfg.problem == "euclidean":
        f1 = QuadraticFunctional(cfg.A1, cfg.b1)
        f2 = QuadraticFunctional(cfg.A2, cfg.b2)
        x0 = cfg.x0

        def oracle(t):
            return exact_flow(f1.A, f2.A, f1.b, f2.b, x0, 0.5 * t)

        return Setup(build_euclidean_problem(f1, f2), x0, oracle)

    pot = _potential(cfg)
    kind = EntropyKind.boltzmann() if cfg.entropy == "boltzmann" else EntropyKind.renyi(cfg.m)
    order = Ordering(cfg.ordering)
    problem = build_wasserstein_problem(pot, kind, order, cfg.tol)
    oracle = None
    if cfg.initial == "gaussian":
        x0 = quantile_of_gaussian(cfg.mean, cfg.sigma, cfg.N)
        if kind.is_boltzmann and cfg.potential == "quadratic" and cfg.lam > 0:
            params = OUParams(cfg.lam, cfg.mean, cfg.sigma)

            def oracle(t):
                return quantile_of_gaussian(*ou_exact(params, 0.5 * t), cfg.N)
    else:
        params_b = BarenblattParams(cfg.m, cfg.t0)
        x0 = barenblatt_quantiles(params_b, cfg.t0, cfg.N)
        if cfg.potential == "zero" or cfg.lam == 0:

            def oracle(t):
                return barenblatt_quantiles(params_b, cfg.t0 + 0.5 * t, cfg.N)

    return Setup(problem, x0, oracle, pot, kind, order)


# ---------------------------------------------------------------- commands


def _write_rows(path: Path, header: list[str], rows: list[list[str]]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def trajectory_rows(rec: TrajectoryRecord) -> list[list[str]]:
    times = rec.disc.times
    phi = rec.phi
    rows = []
    for k in range(1, len(rec.disc) + 1):
        i = k - 1
        rows.append([
            str(k), fmt(times[k]), fmt(rec.delta[i]), fmt(rec.Delta[i]), fmt(rec.step_dist_sq[i]),
            fmt(rec.phi1[i]), fmt(rec.phi2[i]), fmt(phi[k]), fmt(rec.phi1_hat[i]), fmt(rec.phi2_hat[i]),
        ])
    return rows


def cmd_run(cfg: RunConfig, out_dir: Path) -> int:
    setup = build_setup(cfg)
    disc = cfg.discretisation()
    for k in cfg.snapshots:
        if not 0 <= k <= len(disc):
            raise ConfigError(f"snapshot index {k} outside 0..{len(disc)}")
    start = time.perf_counter()
    rec = run_scheme(setup.problem, setup.x0, disc)
    wall = time.perf_counter() - start
    rows = trajectory_rows(rec)
    snaps = []
    for k in cfg.snapshots:
        p = rec.point(k)
        if isinstance(p, QuantileDensity):
            snaps.append((k, [[str(i + 1), fmt(s), fmt(x)] for i, (s, x) in enumerate(zip(p.levels, p.q))]))
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_rows(out_dir / "trajectory.csv", TRAJECTORY_COLUMNS, rows)
    for k, srows in snaps:
        _write_rows(out_dir / f"snapshot_k{k}.csv", ["i", "s_i", "x_i"], srows)
    summary = {
        "problem": setup.problem.name,
        "n": len(disc),
        "T": disc.horizon,
        "phi0": rec.phi0[0] + rec.phi0[1],
        "final_phi1": float(rec.phi1[-1]),
        "final_phi2": float(rec.phi2[-1]),
        "final_phi": float(rec.phi[-1]),
        "Delta_n": rec.Delta_n,
        "solver_certificate": rec.certificate,
        "wall_time_s": wall,
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    log.info("run finished: Delta_n=%.3e final phi=%.6g", rec.Delta_n, rec.phi[-1])
    return EXIT_OK


def cmd_convergence(cfg: RunConfig, out_dir: Path) -> int:
    if len(cfg.step_counts) < 3:
        raise ConfigError("convergence needs at least three step_counts")
    setup = build_setup(cfg)
    counts = list(cfg.step_counts)
    oracle = setup.oracle if cfg.reference == "oracle" else None
    if oracle is None:
        counts.append(4 * counts[-1])
    table = trotter_convergence_study(setup.problem, setup.x0, cfg.T, counts, oracle)
    rows = [[str(r.n), fmt(r.mesh), fmt(r.error)] for r in table.rows]
    rows.append(["slope", "", fmt(table.slope)])
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_rows(out_dir / "convergence.csv", ["n", "mesh", "sup_error_vs_reference"], rows)
    log.info("fitted slope %.4f against %s", table.slope, table.reference)
    return EXIT_OK


def _probe_points(rec: TrajectoryRecord, setup: Setup, rng: np.random.Generator, count: int = 4) -> list:
    """Comparison points for the discrete EVI: trajectory points and seeded perturbations."""
    pts = rec.points
    picks = rng.choice(len(pts), size=min(count, len(pts)), replace=False)
    out = [pts[int(i)] for i in sorted(picks)]
    base = pts[-1]
    if isinstance(base, QuantileDensity):
        for _ in range(count):
            shift, stretch = rng.normal(0, 0.5), math.exp(rng.normal(0, 0.2))
            out.append(QuantileDensity(shift + stretch * (base.q - base.mean()) + base.mean()))
    else:
        for _ in range(count):
            out.append(np.asarray(base) + rng.normal(size=np.asarray(base).shape))
    return out


def record_checks(rec: TrajectoryRecord, setup: Setup, rng: np.random.Generator) -> list[dg.InequalityCheck]:
    checks = list(dg.check_record_consistency(rec))
    general = []
    for w in _probe_points(rec, setup, rng):
        g, special = dg.check_discrete_evi(rec, setup.problem, w)
        general.append(g)
    worst = max(general, key=lambda c: c.worst)
    checks.append(worst)
    checks.append(special)
    checks.extend(dg.check_apriori(rec))
    checks.append(dg.check_r_integral(rec))
    if setup.kind is not None:
        checks.extend(a3_report(rec, setup).checks)
    return checks


def a3_report(rec: TrajectoryRecord, setup: Setup) -> dg.A3Report:
    case = splitting_case(setup.kind, setup.order)
    c = setup.pot.c
    m = setup.kind.m or 1.0
    if case in (1, 2):
        return dg.check_a3(rec, dg.ChiMode.CONSTANT, c=c)
    if case == 3:
        return dg.check_a3(rec, dg.ChiMode.PHI1, alpha=(m - 1) * c)
    return dg.check_a3(rec, dg.ChiMode.PHI2, c=(m - 1) * c, alpha=(m - 1) * c)


def compatibility_checks(rec: TrajectoryRecord, setup: Setup, tol: float) -> list[dg.InequalityCheck]:
    h = rec.disc.mesh
    entries: dict[str, list] = {}
    for k in sorted({0, len(rec) // 2, len(rec)}):
        for e in check_compatibility(rec.point(k), setup.pot, setup.kind, h, tol):
            entries.setdefault(e.name, []).append(e)
    out = []
    for name, es in entries.items():
        # each entry carries its own tolerance, so fold it into the right-hand side
        out.append(dg.InequalityCheck(
            f"compatibility {name}",
            np.array([e.lhs for e in es]),
            np.array([e.rhs + e.tolerance for e in es]),
            0.0,
        ))
    return out


def devi_checks(rec: TrajectoryRecord, setup: Setup, rng: np.random.Generator) -> list[dg.InequalityCheck]:
    """Resolvent inequality at the first step of each functional, against seeded probes."""
    h = rec.disc.steps[0]
    probes = _probe_points(rec, setup, rng)
    out = []
    for i, (x, y) in ((1, (rec.x0, rec.xhat[0])), (2, (rec.xhat[0], rec.x[0]))):
        v = dg.verify_devi(setup.problem, i, h, x, y, probes)
        out.append(dg.InequalityCheck(f"resolvent inequality phi{i}", np.array([v]), np.array([0.0]),
                                      check_tolerance(rec)))
    return out


def audit_checks(path: Path) -> list[dg.InequalityCheck]:
    """Bookkeeping checks on a previously written trajectory CSV."""
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigError(f"{path} holds no rows")
    try:
        col = {c: np.array([float(r[c]) for r in rows]) for c in TRAJECTORY_COLUMNS}
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path} is not a trajectory file: {exc}") from exc
    n = len(rows)
    delta, Delta = col["delta_k"], col["Delta_k"]
    running = np.concatenate(([0.0], Delta[:-1])) + delta
    tol = 1e-12 * (1.0 + np.abs(Delta).max())
    phi = col["phi"]
    h = np.diff(np.concatenate(([0.0], col["t_k"]))) / 2.0
    checks = [
        dg.InequalityCheck("delta definition", np.abs(delta - np.maximum(col["phi1"] - col["phi1_hat"], 0.0)),
                           np.zeros(n), tol),
        dg.InequalityCheck("Delta running sum", np.abs(Delta - running), np.zeros(n), tol),
        dg.InequalityCheck("Delta nondecreasing", -np.diff(Delta), np.zeros(n - 1), 0.0),
        dg.InequalityCheck("delta nonnegative", -delta, np.zeros(n), 0.0),
    ]
    if n > 1:
        checks.append(dg.InequalityCheck(
            "discrete EVI, w = x_(k-1)",
            3.0 * col["step_dist_sq"][1:] / (4.0 * h[1:]),
            phi[:-1] - phi[1:] + delta[1:],
            1e-8 * (1.0 + np.abs(phi).max()) / h.min(),
        ))
    return checks


def cmd_check(cfg: RunConfig, out_dir: Path, seed: int) -> int:
    rng = np.random.default_rng(seed)
    if cfg.trajectory is not None:
        checks = audit_checks(Path(cfg.trajectory))
    else:
        setup = build_setup(cfg)
        rec = run_scheme(setup.problem, setup.x0, cfg.discretisation())
        checks = record_checks(rec, setup, rng)
        checks.extend(devi_checks(rec, setup, rng))
        if setup.kind is not None:
            checks.extend(compatibility_checks(rec, setup, cfg.tol))
    lines = [c.summary() for c in checks]
    for line in lines:
        print(line)
    ok = all(c.holds for c in checks)
    out_dir.mkdir(parents=True, exist_ok=True)
    verdict = {
        "pass": ok,
        "checks": [
            {"name": c.name, "pass": c.holds, "worst_residual": c.worst, "tolerance": c.tolerance}
            for c in checks
        ],
    }
    (out_dir / "verdict.json").write_text(json.dumps(verdict, indent=2) + "\n")
    return EXIT_OK if ok else EXIT_CHECK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trotterflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("run", "run the splitting scheme and write the trajectory"),
        ("convergence", "measure convergence against a reference"),
        ("check", "verify the discrete inequalities along a run"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("config", type=Path)
        p.add_argument("--output-dir", type=Path, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = RunConfig.parse(args.config.read_text(encoding="utf-8"))
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    seed = args.seed if args.seed is not None else cfg.seed
    out_dir = args.output_dir or Path(cfg.output or ".")
    try:
        if args.command == "run":
            return cmd_run(cfg, out_dir)
        if args.command == "convergence":
            return cmd_convergence(cfg, out_dir)
        return cmd_check(cfg, out_dir, seed)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResolventFailure as exc:
        print(f"solver failure at step {exc.k}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (InvalidInput, SchemeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
