"""Comparison methods: large-scale random search with local refinement,
direct supervised inverse regression, and pure random search.

All three optimize against the trained emulator in normalized space; their
final candidates are scored on the real machine by the harness, exactly once,
for apples-to-apples comparison with the two-loop method.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .emulator import fit_full_batch
from .loops import ReverseModel, standardization_stats
from .process import Dataset, ProcessSpec


@dataclass(frozen=True)
class LsrsConfig:
    """Random search + projected Adam refinement knobs."""

    n_samples: int = 100      # initial uniform draws
    top_k: int = 10           # candidates kept for refinement
    refine_iters: int = 200   # Adam steps per candidate
    refine_rate: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.top_k <= self.n_samples:
            raise ValueError("need 1 <= top_k <= n_samples")
        if self.refine_iters < 0:
            raise ValueError("refinement iterations must be >= 0")
        if self.refine_rate <= 0:
            raise ValueError("refinement rate must be positive")


@dataclass(frozen=True)
class CandidateLog:
    """One refined candidate: where it started, where it ended, what it cost."""

    start: np.ndarray
    final: np.ndarray
    final_loss: float
    best: np.ndarray        # best-so-far iterate (loss can ring under Adam)
    best_loss: float


@dataclass(frozen=True)
class LsrsResult:
    x_star: np.ndarray
    final_loss: float
    candidates: tuple[CandidateLog, ...]
    stage1_losses: np.ndarray
    stage1_selected: np.ndarray  # indices of the top-k draws

    @property
    def best_so_far_x(self) -> np.ndarray:
        """Alternative answer tracking the best iterate ever seen."""
        best = min(self.candidates, key=lambda c: c.best_loss)
        return best.best


def _candidate_loss(net, x, y_target) -> float:
    return float(((nn.forward(net, x) - y_target) ** 2).sum())


def lsrs_lr(
    emulator_net: nn.DenseNet,
    y_target,
    bounds_lo,
    bounds_hi,
    cfg: LsrsConfig,
) -> LsrsResult:
    """Two-stage search against the emulator.

    Stage 1 draws uniform samples inside the bounds, scores them by squared
    error against the target, and keeps the top-k (ties broken by draw
    index). Stage 2 refines each candidate with bias-corrected Adam on the
    emulator loss, projecting back into the bounds after every step. The
    answer is the refined candidate with the smallest final loss.
    """
    y_target = np.asarray(y_target, dtype=float)
    lo = np.asarray(bounds_lo, dtype=float)
    hi = np.asarray(bounds_hi, dtype=float)
    if lo.shape != hi.shape or np.any(lo >= hi):
        raise ValueError("bounds must satisfy lo < hi elementwise")
    if not np.all(np.isfinite(y_target)):
        raise ValueError("target must be finite")

    rng = np.random.default_rng(cfg.seed)
    draws = rng.uniform(lo, hi, size=(cfg.n_samples, lo.size))
    outputs = nn.forward_batch(emulator_net, draws)
    if not np.all(np.isfinite(outputs)):
        raise FloatingPointError("emulator produced non-finite outputs")
    losses = ((outputs - y_target) ** 2).sum(axis=1)
    selected = np.argsort(losses, kind="stable")[: cfg.top_k]

    logs = []
    for idx in selected:
        x = draws[idx].copy()
        best_x, best_loss = x.copy(), float(losses[idx])
        state = nn.adam_init([x])
        for _ in range(cfg.refine_iters):
            y = nn.forward(emulator_net, x)
            grad = 2.0 * (nn.jacobian_input(emulator_net, x).T @ (y - y_target))
            (x,), state = nn.adam_update_arrays([x], [grad], state, cfg.refine_rate)
            x = np.clip(x, lo, hi)
            loss_here = _candidate_loss(emulator_net, x, y_target)
            if loss_here < best_loss:
                best_loss, best_x = loss_here, x.copy()
        final_loss = _candidate_loss(emulator_net, x, y_target)
        logs.append(CandidateLog(draws[idx].copy(), x, final_loss, best_x, best_loss))

    winner = int(np.argmin([c.final_loss for c in logs]))
    return LsrsResult(
        x_star=logs[winner].final,
        final_loss=logs[winner].final_loss,
        candidates=tuple(logs),
        stage1_losses=losses,
        stage1_selected=selected,
    )


def random_search(
    emulator_net: nn.DenseNet, y_target, bounds_lo, bounds_hi, n_samples: int, seed: int
) -> tuple[np.ndarray, float]:
    """Stage 1 alone with a single winner; the weakest baseline."""
    cfg = LsrsConfig(n_samples=n_samples, top_k=1, refine_iters=0, seed=seed)
    result = lsrs_lr(emulator_net, y_target, bounds_lo, bounds_hi, cfg)
    return result.x_star, result.final_loss


@dataclass(frozen=True)
class SupervisedInverseResult:
    model: ReverseModel
    history: tuple  # (epoch, train MSE, nan) rows


def supervised_inverse(
    dataset: Dataset,
    spec: ProcessSpec,
    epochs: int = 700,
    learning_rate: float = 0.01,
    seed: int = 0,
) -> SupervisedInverseResult:
    """Directly regress recipes from outputs on reversed dataset pairs.

    Same architecture as the two-loop reverse model (standardized inputs,
    bounded output layer); trained full-batch on input-space MSE.
    """
    if len(dataset) < 1:
        raise ValueError("dataset must be non-empty")
    Xn = spec.normalize_inputs(dataset.x)
    Zn = spec.normalize_outputs(dataset.z)
    center, scale = standardization_stats(Zn)
    net = nn.init_net(
        [spec.output_dim, 64, spec.input_dim],
        seed,
        output_activation="bounded",
        box_lo=-np.ones(spec.input_dim),
        box_hi=np.ones(spec.input_dim),
    )
    net, history = fit_full_batch(
        net, (Zn - center) / scale, Xn, epochs, learning_rate
    )
    return SupervisedInverseResult(ReverseModel(net, center, scale), history)
