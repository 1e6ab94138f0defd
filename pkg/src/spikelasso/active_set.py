"""Active-set Lasso on the convolutional dictionary.

Three drivers share one state machine:

* ``naive``: full-signal correlation each iteration, re-solve on all of J.
* ``group``: full-signal correlation, re-solve only the overlap group that
  received the new coordinate.
* ``windowed``: correlation restricted to a sliding window, groups re-solved
  locally; cost per iteration does not depend on the signal length.

Every driver ends with a full-signal optimality check, so all returned
solutions carry the same certificate.
"""

from __future__ import annotations

import bisect
import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .operator import (
    ActivationSet,
    MultiSignal,
    ShapeBank,
    correlate_padded,
    gram_matrix,
    pad_right,
    render,
    render_into,
)
from .subproblem import (
    AMPLITUDE_FLOOR,
    DEFAULT_KKT_RTOL,
    EXACT_RTOL,
    LassoConfig,
    QuadraticSubproblem,
    SolveReport,
    fista_full,
    fista_sub,
    lasso_objective,
)

log = logging.getLogger(__name__)

MODES = ("naive", "group", "windowed")
SOLVER_NAMES = {
    "as-naive": "naive",
    "as-group": "group",
    "as-window": "windowed",
}
MAX_REENTRIES = 1000


@dataclass
class SolverSettings:
    lasso: LassoConfig
    mode: str = "windowed"
    window: Optional[int] = None
    kkt_tol: Optional[float] = None
    max_iter: Optional[int] = None
    sub_max_iter: int = 1000
    time_limit: Optional[float] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.kkt_tol is None:
            self.kkt_tol = DEFAULT_KKT_RTOL * self.lasso.lam
        if not self.kkt_tol > 0:
            raise ValueError("kkt_tol must be > 0")

    def window_for(self, t: int) -> int:
        w = 10 * t if self.window is None else int(self.window)
        if self.mode == "windowed" and w <= t:
            raise ValueError(f"window size {w} must exceed shape length t={t}")
        return w


@dataclass
class OverlapGroup:
    """Chain of active coordinates whose consecutive samples are at most t apart.

    ``members`` holds ``(neuron, sample)`` pairs sorted by sample, then neuron.
    """

    members: list

    @property
    def span(self) -> tuple:
        return self.members[0][1], self.members[-1][1]

    def flat(self, n: int) -> list:
        return [r * n + j for r, j in self.members]

    def __len__(self):
        return len(self.members)


class ActiveSetState:
    """Working memory of one solve: J, coefficients, residual, groups, window."""

    def __init__(self, shapes: ShapeBank, y: np.ndarray, settings: SolverSettings):
        self.shapes = shapes
        self.y = y
        self.settings = settings
        self.n = y.shape[1]
        self.t = shapes.t
        self.coeffs = {}
        self.in_J = np.zeros((shapes.k, self.n), dtype=bool)
        self.residual = pad_right(y, self.t)
        self.groups = []
        self._starts = []
        self.window = (0, min(self.n, settings.window_for(self.t)))
        self.closed_frontier = 0

    @property
    def J(self) -> set:
        return set(self.coeffs)

    @property
    def threshold(self) -> float:
        """Certificate level: the solve is accepted once nothing outside J exceeds it."""
        return self.settings.lasso.lam + self.settings.kkt_tol

    @property
    def insert_threshold(self) -> float:
        """Level above which a coordinate enters J.

        Tighter than the certificate so the sweep stops at the exact Lasso
        support rather than anywhere inside the tolerance band.
        """
        lam = self.settings.lasso.lam
        return min(lam * (1.0 + EXACT_RTOL), self.threshold)

    def activations(self, floor: float = AMPLITUDE_FLOOR) -> ActivationSet:
        keep = [(r, j, a) for (r, j), a in self.coeffs.items() if abs(a) > floor]
        return ActivationSet.from_entries(keep, self.n, self.shapes.k)

    def recompute_residual(self) -> np.ndarray:
        acts = self.activations(floor=0.0)
        hx = render(self.shapes.waveforms, acts.neurons, acts.samples, acts.amplitudes, self.n)
        return pad_right(self.y - hx, self.t)

    def residual_error(self) -> float:
        """Max deviation of the incremental residual from a fresh recomputation."""
        return float(np.abs(self.recompute_residual() - self.residual).max(initial=0.0))

    def apply_delta(self, members, delta):
        moved = np.flatnonzero(delta != 0.0)
        if moved.size == 0:
            return
        r = np.array([members[i][0] for i in moved])
        j = np.array([members[i][1] for i in moved])
        render_into(self.residual[:, : self.n], self.shapes.waveforms, r, j, delta[moved], scale=-1.0)


def argmax_violation(abs_corr: np.ndarray, excluded: np.ndarray, threshold: float):
    """Worst violator in a k x L block of ``|correlation|``.

    Returns ``(neuron, offset, value)`` or None when every admissible value is
    below ``threshold``. Ties go to the smallest offset, then smallest neuron.
    """
    vals = np.where(excluded, -np.inf, abs_corr)
    flat = vals.T.ravel()
    if flat.size == 0:
        return None
    i = int(np.argmax(flat))
    best = float(flat[i])
    if not best >= threshold:
        return None
    offset, r = divmod(i, abs_corr.shape[0])
    return r, offset, best


def kkt_max_violation(shapes: ShapeBank, state: ActiveSetState, window: tuple):
    """Largest optimality violation outside J within ``[start, stop)``.

    Returns ``((neuron, sample), value)`` or None.
    """
    start, stop = window
    corr = np.abs(correlate_padded(shapes.waveforms, state.residual, start, stop))
    hit = argmax_violation(corr, state.in_J[:, start:stop], state.insert_threshold)
    if hit is None:
        return None
    r, off, val = hit
    return (r, start + off), val


def insert_and_merge(state: ActiveSetState, new_index: tuple, t: int) -> OverlapGroup:
    """Add ``(neuron, sample)`` to J and merge every group within ``t`` samples of it."""
    r, j = new_index
    if new_index in state.coeffs:
        raise ValueError(f"coordinate {new_index} is already active")
    state.coeffs[new_index] = 0.0
    state.in_J[r, j] = True
    # groups are separated by gaps > t, so the ones to merge are contiguous
    lo = bisect.bisect_left(state._starts, j - t)
    while lo > 0 and state.groups[lo - 1].span[1] >= j - t:
        lo -= 1
    hi = bisect.bisect_right(state._starts, j + t)
    merged = [new_index]
    for g in state.groups[lo:hi]:
        merged.extend(g.members)
    merged.sort(key=lambda m: (m[1], m[0]))
    group = OverlapGroup(merged)
    state.groups[lo:hi] = [group]
    state._starts[lo:hi] = [group.span[0]]
    return group


def _solve_group(state: ActiveSetState, members: list, report: SolveReport):
    shapes = state.shapes
    r = np.fromiter((m[0] for m in members), dtype=np.int64, count=len(members))
    j = np.fromiter((m[1] for m in members), dtype=np.int64, count=len(members))
    old = np.array([state.coeffs[m] for m in members])
    gram = gram_matrix(shapes, r, j, state.n)
    idx = j[:, None] + np.arange(state.t)
    seg = state.residual[:, idx].transpose(1, 0, 2)
    linear = np.einsum("ipt,ipt->i", shapes.waveforms[r], seg) + gram @ old
    sub = QuadraticSubproblem(gram, linear, members)
    cfg = LassoConfig(state.settings.lasso.lam, state.settings.lasso.fista_tol, state.settings.sub_max_iter)
    stats = {}
    new = fista_sub(sub, cfg, warm_start=old, stats=stats)
    report.fista_iterations += stats.get("fista_iterations", 0)
    report.subproblems += 1
    report.max_subproblem_size = max(report.max_subproblem_size, len(members))
    state.apply_delta(members, new - old)
    for m, v in zip(members, new):
        state.coeffs[m] = float(v)


def _solve_all(state: ActiveSetState, report: SolveReport):
    """Naive re-solve on the whole active set from ``H_J^T y``."""
    shapes = state.shapes
    members = sorted(state.coeffs, key=lambda m: (m[1], m[0]))
    r = np.array([m[0] for m in members], dtype=np.int64)
    j = np.array([m[1] for m in members], dtype=np.int64)
    old = np.array([state.coeffs[m] for m in members])
    gram = gram_matrix(shapes, r, j, state.n)
    ypad = pad_right(state.y, state.t)
    idx = j[:, None] + np.arange(state.t)
    linear = np.einsum("ipt,ipt->i", shapes.waveforms[r], ypad[:, idx].transpose(1, 0, 2))
    sub = QuadraticSubproblem(gram, linear, members)
    cfg = LassoConfig(state.settings.lasso.lam, state.settings.lasso.fista_tol, state.settings.sub_max_iter)
    stats = {}
    new = fista_sub(sub, cfg, warm_start=old, stats=stats)
    report.fista_iterations += stats.get("fista_iterations", 0)
    report.subproblems += 1
    report.max_subproblem_size = max(report.max_subproblem_size, len(members))
    for m, v in zip(members, new):
        state.coeffs[m] = float(v)
    state.residual = state.recompute_residual()


def _finish(state: ActiveSetState, report: SolveReport, t0: float):
    acts = state.activations()
    shapes, n = state.shapes, state.n
    hx = render(shapes.waveforms, acts.neurons, acts.samples, acts.amplitudes, n)
    corr = np.abs(correlate_padded(shapes.waveforms, pad_right(state.y - hx, state.t), 0, n))
    corr[acts.neurons, acts.samples] = 0.0
    report.kkt_value = float(corr.max(initial=0.0))
    report.certified = (
        report.kkt_value <= state.threshold and not report.timed_out and not report.hit_iteration_cap
    )
    report.objective = lasso_objective(shapes, state.y, acts, state.settings.lasso.lam)
    report.seconds = time.perf_counter() - t0
    return acts, report


def _prepare(shapes, y, settings, mode):
    ys = y.samples if isinstance(y, MultiSignal) else np.atleast_2d(np.asarray(y, dtype=float))
    if ys.shape[0] != shapes.d:
        raise ValueError(f"signal has {ys.shape[0]} electrodes, shape bank has {shapes.d}")
    if settings.mode != mode:
        raise ValueError(f"settings.mode is {settings.mode!r}, expected {mode!r}")
    state = ActiveSetState(shapes, ys, settings)
    name = {"naive": "as-naive", "group": "as-group", "windowed": "as-window"}[mode]
    report = SolveReport(name, settings.lasso.lam, settings.kkt_tol)
    cap = settings.max_iter if settings.max_iter is not None else shapes.k * state.n
    return state, report, cap


def _out_of_budget(report, cap, settings, t0):
    if report.iterations >= cap:
        report.hit_iteration_cap = True
        return True
    if settings.time_limit is not None and time.perf_counter() - t0 > settings.time_limit:
        report.timed_out = True
        return True
    return False


def _full_signal_loop(shapes, y, settings, mode):
    t0 = time.perf_counter()
    state, report, cap = _prepare(shapes, y, settings, mode)
    full = (0, state.n)
    while not _out_of_budget(report, cap, settings, t0):
        hit = kkt_max_violation(shapes, state, full)
        if hit is None:
            break
        idx, _ = hit
        group = insert_and_merge(state, idx, state.t)
        report.iterations += 1
        if mode == "naive":
            _solve_all(state, report)
        else:
            _solve_group(state, group.members, report)
    return _finish(state, report, t0)


def naive_active_set(shapes: ShapeBank, y, settings: SolverSettings):
    """Active set with full-signal scans and re-solves over all of J."""
    return _full_signal_loop(shapes, y, settings, "naive")


def group_active_set(shapes: ShapeBank, y, settings: SolverSettings):
    """Active set with full-signal scans; only the touched overlap group is re-solved."""
    return _full_signal_loop(shapes, y, settings, "group")


def windowed_active_set(shapes: ShapeBank, y, settings: SolverSettings):
    """Sliding-window active set.

    The window sweeps left to right. While it holds a violation, the worst
    one is inserted and its group re-solved. A violation-free window is
    extended by ``w`` if its rightmost group reaches the last ``t`` samples,
    otherwise it advances so that consecutive windows share ``t`` samples.
    A full-signal pass at the end either certifies the solution or restarts
    the sweep at the earliest violation.
    """
    t0 = time.perf_counter()
    state, report, cap = _prepare(shapes, y, settings, "windowed")
    n, t = state.n, state.t
    w = settings.window_for(t)
    wf = shapes.waveforms
    start, stop = state.window
    while True:
        if _out_of_budget(report, cap, settings, t0):
            break
        hit = kkt_max_violation(shapes, state, (start, stop))
        if hit is not None:
            idx, _ = hit
            if idx[1] <= state.closed_frontier - t:
                report.frontier_breaches += 1
                log.debug("insertion at %d behind frozen frontier %d", idx[1], state.closed_frontier)
            group = insert_and_merge(state, idx, t)
            report.iterations += 1
            _solve_group(state, group.members, report)
            continue
        if stop < n:
            gi = bisect.bisect_left(state._starts, stop) - 1
            if gi >= 0 and state.groups[gi].span[1] >= stop - t:
                stop = min(n, stop + w)
                report.window_extensions += 1
            else:
                start = stop - t
                stop = min(n, start + w)
                state.closed_frontier = start
                report.window_advances += 1
            state.window = (start, stop)
            continue
        # certification pass over the whole signal
        corr = np.abs(correlate_padded(wf, state.residual, 0, n))
        corr[state.in_J] = -np.inf
        bad = np.flatnonzero((corr >= state.insert_threshold).any(axis=0))
        if bad.size == 0:
            break
        if report.reentries >= MAX_REENTRIES:
            report.hit_iteration_cap = True
            break
        report.reentries += 1
        start = int(bad[0])
        stop = min(n, start + w)
        state.closed_frontier = start
        state.window = (start, stop)
        log.debug("certification failed at sample %d; re-entering sweep", start)
    return _finish(state, report, t0)


def solve(shapes: ShapeBank, y, lam: float, solver: str = "as-window", window: Optional[int] = None,
          kkt_tol: Optional[float] = None, time_limit: Optional[float] = None,
          fista_max_iter: int = 10000):
    """Dispatch to one of ``fista-full``, ``as-naive``, ``as-group``, ``as-window``."""
    if solver == "fista-full":
        cfg = LassoConfig(lam, max_iter=fista_max_iter)
        return fista_full(shapes, y, cfg, kkt_tol=kkt_tol, time_limit=time_limit)
    if solver not in SOLVER_NAMES:
        raise ValueError(f"unknown solver {solver!r}")
    settings = SolverSettings(LassoConfig(lam), mode=SOLVER_NAMES[solver], window=window,
                              kkt_tol=kkt_tol, time_limit=time_limit)
    driver = {"naive": naive_active_set, "group": group_active_set, "windowed": windowed_active_set}
    return driver[settings.mode](shapes, y, settings)
