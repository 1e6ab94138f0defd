"""Recovery quality over a grid of regularization and noise levels."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .active_set import solve
from .metrics import CPConfig, MatchConfig, cp_score, f1_score
from .operator import ActivationSet, MultiSignal, forward, lambda_max
from .simulate import PoissonSpec, ShapeParams, TAG_NOISE, noise_sigma, poisson_activations, stream, synth_shapes

# eight points per decade from 0.01 to 1; the last sits just above lambda_max
DEFAULT_LAMBDAS = [float(f"{x:.3g}") for x in np.logspace(-2, 0, 17)][:-1] + [1.001]
DEFAULT_SNRS = [None, 20.0, 10.0, 0.0, -10.0]


@dataclass
class SweepSpec:
    lambdas: list = field(default_factory=lambda: list(DEFAULT_LAMBDAS))
    snrs: list = field(default_factory=lambda: list(DEFAULT_SNRS))
    draws: int = 5
    n: int = 500
    k: int = 2
    d: int = 4
    t: int = 30
    rate_hz: float = 50.0
    sample_rate_hz: float = 10_000.0
    seed: int = 0
    tol: int = 0
    cp_width: Optional[int] = None
    binarize: bool = False
    jitter: bool = True
    window: Optional[int] = None


def draw_seed(root: int, draw: int) -> int:
    return int(np.random.SeedSequence([int(root), int(draw)]).generate_state(1)[0])


def run_sweep(spec: SweepSpec):
    """Simulate, solve (windowed) and score every (lambda, snr, draw).

    Each draw fixes shapes, spike trains and a unit noise field from its own
    seed; the SNR only rescales that noise field, so every cell is independent
    of the order of the grid. Returns ``(cells, runs)`` lists of dicts.
    """
    cp_cfg = CPConfig(spec.cp_width) if spec.cp_width else CPConfig.for_shape_length(spec.t, spec.binarize)
    cp_cfg.binarize = spec.binarize
    match = MatchConfig(spec.tol)
    runs = []
    for draw in range(spec.draws):
        seed = draw_seed(spec.seed, draw)
        shapes = synth_shapes(ShapeParams.random(spec.k, spec.d, spec.t, seed), spec.sample_rate_hz)
        truth = poisson_activations(
            PoissonSpec.from_rate(spec.k, spec.rate_hz, spec.sample_rate_hz, spec.n, seed, spec.t, spec.jitter)
        )
        clean = forward(shapes, truth, spec.n).samples
        unit = stream(seed, TAG_NOISE).standard_normal(clean.shape)
        energy = float(np.sum(clean**2))
        for snr in spec.snrs:
            if snr is None or energy == 0:
                y = clean
            else:
                y = clean + noise_sigma(energy, spec.d, spec.n, snr) * unit
            y = MultiSignal(y)
            lmax = lambda_max(shapes, y)
            for rel in spec.lambdas:
                if lmax == 0:
                    est, certified = ActivationSet.empty(spec.n, spec.k), True
                else:
                    est, rep = solve(shapes, y, rel * lmax, "as-window", window=spec.window)
                    certified = rep.certified
                p, r, f1 = f1_score(truth, est, match)
                cp, _ = cp_score(truth, est, cp_cfg)
                runs.append({
                    "lambda_rel": rel, "snr_db": "inf" if snr is None else snr, "draw": draw,
                    "seed": seed, "n_true": len(truth), "n_est": len(est),
                    "precision": p, "recall": r, "f1": f1, "cp": cp, "certified": certified,
                })
    cells = []
    for snr in spec.snrs:
        key = "inf" if snr is None else snr
        for rel in spec.lambdas:
            sub = [x for x in runs if x["snr_db"] == key and x["lambda_rel"] == rel]
            cells.append({
                "lambda_rel": rel, "snr_db": key, "draws": len(sub),
                "f1_mean": float(np.mean([x["f1"] for x in sub])),
                "f1_std": float(np.std([x["f1"] for x in sub])),
                "cp_mean": float(np.mean([x["cp"] for x in sub])),
                "precision_mean": float(np.mean([x["precision"] for x in sub])),
                "recall_mean": float(np.mean([x["recall"] for x in sub])),
                "uncertified": sum(not x["certified"] for x in sub),
            })
    return cells, runs


def admissible_decades(cells, snr, threshold=0.9):
    """Width in decades of the longest contiguous lambda run with mean F1 >= threshold."""
    row = sorted((c for c in cells if c["snr_db"] == snr), key=lambda c: c["lambda_rel"])
    best = 0.0
    run_start = None
    for c in row:
        if c["f1_mean"] >= threshold:
            if run_start is None:
                run_start = c["lambda_rel"]
            best = max(best, float(np.log10(c["lambda_rel"] / run_start)))
        else:
            run_start = None
    return best
