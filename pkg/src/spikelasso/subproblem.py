"""Lasso solvers: matrix-free FISTA on the whole signal, dense FISTA on small
active-set subproblems.

Both variants use function-value restart and a support refit: once the
iterate's support looks settled, the equality-constrained least-squares
problem on that support is solved exactly and accepted only if its signs
match and every off-support coordinate satisfies the optimality condition.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .operator import (
    ActivationSet,
    MultiSignal,
    ShapeBank,
    correlate_padded,
    forward_dense,
    gram_matrix,
    lipschitz_bound,
    pad_right,
    render,
)

AMPLITUDE_FLOOR = 1e-10
CHECKPOINT = 10
DEFAULT_KKT_RTOL = 1e-6
# coordinates enter the model once |corr| exceeds lam by more than roundoff
EXACT_RTOL = 1e-9


@dataclass
class LassoConfig:
    lam: float
    fista_tol: float = 1e-10
    max_iter: int = 10000

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be > 0, got {self.lam}")
        if not self.fista_tol > 0:
            raise ValueError("fista_tol must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class QuadraticSubproblem:
    """``min 0.5 x'Gx - b'x + lam |x|_1`` over the columns of an active set."""

    gram: np.ndarray
    linear: np.ndarray
    columns: list

    def __post_init__(self):
        self.gram = np.atleast_2d(np.asarray(self.gram, dtype=np.float64))
        self.linear = np.asarray(self.linear, dtype=np.float64).ravel()
        m = self.linear.size
        if self.gram.shape != (m, m) or len(self.columns) != m:
            raise ValueError("gram, linear and columns sizes disagree")
        scale = max(1.0, float(np.abs(self.gram).max(initial=0.0)))
        if np.abs(self.gram - self.gram.T).max(initial=0.0) > 1e-10 * scale:
            raise ValueError("gram matrix is not symmetric")

    def objective(self, x, lam):
        return 0.5 * x @ (self.gram @ x) - self.linear @ x + lam * np.abs(x).sum()


@dataclass
class SolveReport:
    """Outcome and counters of one solve."""

    solver: str
    lam: float
    kkt_tol: float
    certified: bool = False
    kkt_value: float = 0.0
    objective: float = 0.0
    iterations: int = 0
    subproblems: int = 0
    max_subproblem_size: int = 0
    fista_iterations: int = 0
    window_extensions: int = 0
    window_advances: int = 0
    reentries: int = 0
    frontier_breaches: int = 0
    timed_out: bool = False
    hit_iteration_cap: bool = False
    seconds: float = 0.0
    objective_trace: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out.pop("objective_trace")
        return out


def soft_threshold(v, tau):
    """Proximal operator of ``tau * |.|``."""
    if np.any(np.asarray(tau) < 0):
        raise ValueError("threshold must be nonnegative")
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


def _power_lipschitz(gram, iters=100, tol=1e-7):
    m = gram.shape[0]
    if m == 1:
        return float(gram[0, 0])
    v = np.random.default_rng(0).standard_normal(m)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        u = gram @ v
        new = float(v @ u)
        nu = np.linalg.norm(u)
        if nu == 0:
            return 0.0
        v = u / nu
        if est > 0 and abs(new - est) <= tol * abs(new):
            return new * 1.02
        est = new
    return est * 1.5


def refit_support(gram_ss, linear_s, lam, signs, rounds=5):
    """Solve ``G_SS z = b_S - lam * s`` and prune sign flips.

    Returns ``(keep, z)`` with ``keep`` a boolean mask over S, or None when
    the restricted Gram matrix is singular or the signs never settle.
    """
    keep = np.ones(signs.size, dtype=bool)
    for _ in range(rounds):
        if not keep.any():
            return keep, np.zeros(0)
        g = gram_ss[np.ix_(keep, keep)]
        rhs = linear_s[keep] - lam * signs[keep]
        try:
            z = np.linalg.solve(g, rhs)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(z)):
            return None
        bad = np.sign(z) != signs[keep]
        if not bad.any():
            return keep, z
        idx = np.flatnonzero(keep)
        keep[idx[bad]] = False
    return None


def _polish_sub(sub, lam, x, tol):
    """Exact subproblem solution on the support of ``x`` or None."""
    support = np.abs(x) > AMPLITUDE_FLOOR
    return _polish_on(sub, lam, support, np.sign(x), tol)


def _polish_on(sub, lam, support, signs, tol, rounds=1):
    """Refit on ``support``; optionally grow it by the worst violators and retry."""
    m = sub.linear.size
    support = support.copy()
    signs = signs.copy()
    for _ in range(rounds):
        idx = np.flatnonzero(support)
        x = np.zeros(m)
        if idx.size:
            res = refit_support(sub.gram[np.ix_(idx, idx)], sub.linear[idx], lam, signs[idx])
            if res is None:
                return None
            keep, z = res
            x[idx[keep]] = z
        corr = sub.linear - sub.gram @ x
        off = x == 0
        viol = off & (np.abs(corr) > lam + tol)
        if not viol.any():
            if np.abs(np.abs(corr[~off]) - lam).max(initial=0.0) > tol + 1e-9 * lam:
                return None
            return x
        support = ~off | viol
        signs = np.where(off, np.sign(corr), np.sign(x))
    return None


def fista_sub(sub: QuadraticSubproblem, cfg: LassoConfig, warm_start=None, kkt_tol=None, stats=None):
    """Solve a dense Lasso subproblem; returns coefficients aligned with ``sub.columns``."""
    m = sub.linear.size
    lam = cfg.lam
    tol = EXACT_RTOL * lam if kkt_tol is None else kkt_tol
    x = np.zeros(m) if warm_start is None else np.array(warm_start, dtype=np.float64)
    if x.size != m:
        raise ValueError(f"warm start has length {x.size}, expected {m}")
    if m == 0:
        return x

    # Guess: keep the warm support and add coordinates that currently violate.
    grad0 = sub.linear - sub.gram @ x
    guess = (np.abs(x) > AMPLITUDE_FLOOR) | (np.abs(grad0) > lam)
    signs = np.where(np.abs(x) > AMPLITUDE_FLOOR, np.sign(x), np.sign(grad0))
    polished = _polish_on(sub, lam, guess, signs, tol, rounds=10)
    if polished is not None:
        return polished

    L = _power_lipschitz(sub.gram)
    if L <= 0:
        return np.zeros(m)
    G, b = sub.gram, sub.linear
    F = sub.objective(x, lam)
    y, tk = x.copy(), 1.0
    last_check = F
    tried = None
    for it in range(1, cfg.max_iter + 1):
        x_new = soft_threshold(y - (G @ y - b) / L, lam / L)
        F_new = sub.objective(x_new, lam)
        if F_new > F:
            y, tk = x.copy(), 1.0
            x_new = soft_threshold(x - (G @ x - b) / L, lam / L)
            F_new = sub.objective(x_new, lam)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
        y = x_new + ((tk - 1.0) / t_new) * (x_new - x)
        x, F, tk = x_new, F_new, t_new
        if it % CHECKPOINT == 0:
            key = tuple(np.sign(x) * (np.abs(x) > AMPLITUDE_FLOOR))
            if key != tried:
                tried = key
                polished = _polish_sub(sub, lam, x, tol)
                if polished is not None:
                    if stats is not None:
                        stats["fista_iterations"] = stats.get("fista_iterations", 0) + it
                    return polished
            if abs(last_check - F) <= cfg.fista_tol * max(abs(F), 1e-300):
                break
            last_check = F
    if stats is not None:
        stats["fista_iterations"] = stats.get("fista_iterations", 0) + it
    polished = _polish_sub(sub, lam, x, tol)
    return x if polished is None else polished


def lasso_objective(shapes: ShapeBank, y, acts: ActivationSet, lam: float) -> float:
    ys = y.samples if isinstance(y, MultiSignal) else y
    res = ys - render(shapes.waveforms, acts.neurons, acts.samples, acts.amplitudes, ys.shape[1])
    return 0.5 * float(np.sum(res**2)) + lam * acts.l1_norm()


def kkt_certificate(shapes: ShapeBank, y, acts: ActivationSet):
    """Largest ``|H_j^T (y - Ha)|`` over coordinates with ``a_j = 0``."""
    ys = y.samples if isinstance(y, MultiSignal) else y
    n = ys.shape[1]
    res = ys - render(shapes.waveforms, acts.neurons, acts.samples, acts.amplitudes, n)
    corr = np.abs(correlate_padded(shapes.waveforms, pad_right(res, shapes.t), 0, n))
    corr[acts.neurons, acts.samples] = 0.0
    return float(corr.max())


def fista_full(shapes: ShapeBank, y, cfg: LassoConfig, kkt_tol: Optional[float] = None,
               time_limit: Optional[float] = None):
    """Matrix-free FISTA on the whole signal.

    Returns ``(ActivationSet, SolveReport)``; the report is non-certified when
    the iteration budget runs out before the optimality check passes.
    """
    t0 = time.perf_counter()
    ys = y.samples if isinstance(y, MultiSignal) else np.atleast_2d(y)
    lam = cfg.lam
    kkt_tol = DEFAULT_KKT_RTOL * lam if kkt_tol is None else kkt_tol
    w = shapes.waveforms
    k, t = shapes.k, shapes.t
    n = ys.shape[1]
    report = SolveReport("fista-full", lam, kkt_tol)

    def grad_at(hx):
        return correlate_padded(w, pad_right(hx - ys, t), 0, n)

    def finish(dense, certified_hint=None):
        acts = ActivationSet.from_dense(dense, AMPLITUDE_FLOOR)
        report.kkt_value = kkt_certificate(shapes, ys, acts)
        report.certified = report.kkt_value <= lam + kkt_tol
        report.objective = lasso_objective(shapes, ys, acts, lam)
        report.seconds = time.perf_counter() - t0
        return acts, report

    corr0 = correlate_padded(w, pad_right(ys, t), 0, n)
    if np.abs(corr0).max(initial=0.0) <= lam:
        return finish(np.zeros((k, n)))

    L = lipschitz_bound(shapes, n)
    x = np.zeros((k, n))
    hx = np.zeros_like(ys)
    F = 0.5 * float(np.sum(ys**2))
    yv, hy, tk = x, hx, 1.0
    last_check = F
    tried = None
    for it in range(1, cfg.max_iter + 1):
        x_new = soft_threshold(yv - grad_at(hy) / L, lam / L)
        hx_new = forward_dense(w, x_new)
        F_new = 0.5 * float(np.sum((ys - hx_new) ** 2)) + lam * float(np.abs(x_new).sum())
        if F_new > F:
            x_new = soft_threshold(x - grad_at(hx) / L, lam / L)
            hx_new = forward_dense(w, x_new)
            F_new = 0.5 * float(np.sum((ys - hx_new) ** 2)) + lam * float(np.abs(x_new).sum())
            tk = 1.0
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
        beta = (tk - 1.0) / t_new
        yv = x_new + beta * (x_new - x)
        hy = hx_new + beta * (hx_new - hx)
        x, hx, F, tk = x_new, hx_new, F_new, t_new
        report.iterations = it
        if it % CHECKPOINT == 0:
            report.objective_trace.append(F)
            supp = np.abs(x) > AMPLITUDE_FLOOR
            key = (np.flatnonzero(supp).tobytes(), np.sign(x[supp]).tobytes())
            if key != tried:
                tried = key
                z = _polish_full(shapes, ys, lam, x, kkt_tol)
                if z is not None:
                    return finish(z)
            if abs(last_check - F) <= cfg.fista_tol * abs(F):
                break
            last_check = F
            if time_limit is not None and time.perf_counter() - t0 > time_limit:
                report.timed_out = True
                break
    z = _polish_full(shapes, ys, lam, x, kkt_tol)
    if z is None:
        report.hit_iteration_cap = report.iterations >= cfg.max_iter
        z = x
    return finish(z)


def _polish_full(shapes, ys, lam, x, kkt_tol, rounds=5):
    """Exact refit on the support of ``x``, grown by outside violators.

    Returns the dense solution, or None if the refit does not reach
    optimality within ``rounds`` growth steps.
    """
    k, n = x.shape
    w, t = shapes.waveforms, shapes.t
    pad = pad_right(ys, t)
    active = np.abs(x) > AMPLITUDE_FLOOR
    signs = np.sign(x)
    for _ in range(rounds):
        r, j = np.nonzero(active)
        if r.size == 0:
            return None
        g = gram_matrix(shapes, r, j, n)
        idx = j[:, None] + np.arange(t)
        b = np.einsum("ipt,ipt->i", w[r], pad[:, idx].transpose(1, 0, 2))
        res = refit_support(g, b, lam, signs[r, j])
        if res is None:
            return None
        keep, z = res
        out = np.zeros((k, n))
        out[r[keep], j[keep]] = z
        resid = ys - forward_dense(w, out)
        corr = correlate_padded(w, pad_right(resid, t), 0, n)
        nz = out != 0
        if np.abs(np.abs(corr[nz]) - lam).max(initial=0.0) > kkt_tol:
            return None
        viol = ~nz & (np.abs(corr) > lam * (1.0 + EXACT_RTOL))
        if not viol.any():
            return out
        active = nz | viol
        signs = np.where(nz, np.sign(out), np.sign(corr))
    return None
