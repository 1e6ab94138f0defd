"""Runtime-vs-length benchmark and log-log slope fitting."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .active_set import solve
from .operator import lambda_max
from .simulate import simulate

log = logging.getLogger(__name__)

DEFAULT_N = [10_000, 30_000, 100_000, 300_000, 1_000_000]


@dataclass
class BenchPlan:
    solvers: list = field(default_factory=lambda: ["as-window", "as-group"])
    n_values: list = field(default_factory=lambda: list(DEFAULT_N))
    reps: int = 5
    k: int = 5
    d: int = 4
    t: int = 30
    rate_hz: float = 10.0
    sample_rate_hz: float = 30_000.0
    snr_db: Optional[float] = None
    seed: int = 0
    lam: str = "rel:0.1"
    window: Optional[int] = None
    time_limit: Optional[float] = 120.0
    max_n: dict = field(default_factory=lambda: {"as-group": 100_000, "as-naive": 10_000, "fista-full": 30_000})

    def __post_init__(self):
        self.n_values = [int(v) for v in self.n_values]
        if any(b <= a for a, b in zip(self.n_values, self.n_values[1:])):
            raise ValueError("n values must be strictly increasing")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "BenchPlan":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown bench plan keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BenchResult:
    rows: list
    cells: list
    slopes: dict

    def summary(self) -> dict:
        return {"cells": self.cells, "slopes": self.slopes}


def parse_lambda(spec, y_lmax: Optional[float] = None, shapes=None, y=None) -> float:
    """``"rel:x"`` means ``x * lambda_max(y)``; anything else is absolute."""
    s = str(spec)
    if s.startswith("rel:"):
        if y_lmax is None:
            y_lmax = lambda_max(shapes, y)
        return float(s[4:]) * y_lmax
    return float(s)


def run_seed(root: int, n: int, rep: int) -> int:
    return int(np.random.SeedSequence([int(root), int(n), int(rep)]).generate_state(1)[0])


def fit_loglog_slope(pairs):
    """Least-squares line through ``(log n, log time)``; returns (slope, intercept, r2)."""
    pairs = list(pairs)
    if len(pairs) < 2:
        raise ValueError("need at least two points")
    n = np.array([p[0] for p in pairs], dtype=float)
    sec = np.array([p[1] for p in pairs], dtype=float)
    if not (np.all(n > 0) and np.all(sec > 0)):
        raise ValueError("n and times must be positive")
    x, y = np.log(n), np.log(sec)
    if np.ptp(x) == 0:
        raise ValueError("all n values are equal")
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def run_bench(plan: BenchPlan, progress=None) -> BenchResult:
    """Time every (solver, n, rep) on a freshly simulated noiseless dataset.

    Simulation happens before the clock starts. A solver stops at the first
    n where every repetition timed out.
    """
    rows = []
    dead = set()
    for n in plan.n_values:
        for rep in range(plan.reps):
            active = [s for s in plan.solvers if s not in dead and n <= plan.max_n.get(s, math.inf)]
            if not active:
                continue
            seed = run_seed(plan.seed, n, rep)
            ds = simulate(plan.k, plan.d, plan.t, n, plan.rate_hz, plan.sample_rate_hz,
                          snr_db=plan.snr_db, seed=seed, shape_seed=plan.seed)
            lam = parse_lambda(plan.lam, shapes=ds.shapes, y=ds.observed)
            for solver in active:
                t0 = time.perf_counter()
                acts, report = solve(ds.shapes, ds.observed, lam, solver, window=plan.window,
                                     time_limit=plan.time_limit)
                seconds = time.perf_counter() - t0
                row = {
                    "solver": solver, "n": n, "rep": rep, "seconds": seconds,
                    "iterations": report.iterations, "certified": bool(report.certified),
                    "timed_out": bool(report.timed_out), "nnz": len(acts),
                    "objective": report.objective, "seed": seed,
                }
                rows.append(row)
                if progress:
                    progress(row)
        for solver in plan.solvers:
            cell = [r for r in rows if r["solver"] == solver and r["n"] == n]
            if cell and all(r["timed_out"] for r in cell):
                dead.add(solver)
    cells = []
    slopes = {}
    for solver in plan.solvers:
        pts = []
        for n in plan.n_values:
            cell = [r for r in rows if r["solver"] == solver and r["n"] == n]
            if not cell:
                continue
            ok = [r["seconds"] for r in cell if r["certified"] and not r["timed_out"]]
            times = [r["seconds"] for r in cell]
            cells.append({
                "solver": solver, "n": n, "runs": len(cell),
                "mean_seconds": float(np.mean(times)), "std_seconds": float(np.std(times)),
                "mean_iterations": float(np.mean([r["iterations"] for r in cell])),
                "certified": len(ok), "timeouts": sum(r["timed_out"] for r in cell),
            })
            if len(ok) == len(cell):
                pts.append((n, float(np.mean(ok))))
        if len(pts) >= 3:
            s, c, r2 = fit_loglog_slope(pts)
            slopes[solver] = {"slope": s, "intercept": c, "r2": r2, "points": len(pts)}
        else:
            slopes[solver] = None
    return BenchResult(rows, cells, slopes)
