"""Supervised training of the forward emulator approximating a machine.

The emulator is a tanh network trained with full-batch gradient descent on
normalized (recipe, output) pairs. Domain randomization optionally injects
zero-mean Gaussian noise into the training inputs, resampled every epoch, so
the surrogate tolerates noisy recipes; validation and the returned score are
always computed noise-free.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .process import Dataset, ProcessSpec


class TrainingDiverged(RuntimeError):
    """Raised when the training loss stops being finite."""

    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class EmulatorConfig:
    hidden: tuple[int, ...] = (64,)
    epochs: int = 700
    learning_rate: float = 0.01
    dr_noise_std: float = 0.02
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.dr_noise_std < 0:
            raise ValueError("domain-randomization noise std must be >= 0")
        if not 0 < self.val_fraction < 1:
            raise ValueError("validation fraction must be in (0, 1)")
        object.__setattr__(self, "hidden", tuple(self.hidden))


@dataclass(frozen=True)
class TrainedEmulator:
    """Trained surrogate plus its held-out score and per-epoch history."""

    net: nn.DenseNet
    val_mse: float
    history: tuple[tuple[int, float, float], ...]  # (epoch, train MSE, val MSE)


def fit_full_batch(
    net: nn.DenseNet,
    X: np.ndarray,
    Y: np.ndarray,
    epochs: int,
    learning_rate: float,
    noise_std: float = 0.0,
    noise_rng: np.random.Generator | None = None,
    eval_sets: tuple[np.ndarray, np.ndarray] | None = None,
):
    """Full-batch gradient descent on mean squared vector error.

    The loss is the mean over samples of the squared L2 residual norm. When
    ``noise_std`` > 0 the inputs are perturbed with fresh Gaussian noise each
    epoch; the recorded train MSE refers to the perturbed batch actually used.
    Returns (net, history) where history rows are (epoch, train_mse, eval_mse)
    with eval_mse = nan when no eval set is given.
    """
    n = X.shape[0]
    history = []
    for epoch in range(epochs):
        if noise_std > 0:
            Xin = X + noise_rng.normal(0.0, noise_std, X.shape)
        else:
            Xin = X
        pred, inputs, pre = nn._forward_cached(net, Xin)
        resid = pred - Y
        train_mse = float((resid**2).sum(axis=1).mean())
        if not np.isfinite(train_mse):
            raise TrainingDiverged(epoch)
        eval_mse = float("nan")
        if eval_sets is not None:
            ev = nn.forward_batch(net, eval_sets[0]) - eval_sets[1]
            eval_mse = float((ev**2).sum(axis=1).mean())
        history.append((epoch, train_mse, eval_mse))
        grads, _ = nn._backward(net, inputs, pre, 2.0 * resid / n)
        net = nn.gd_step(net, grads, learning_rate)
    return net, tuple(history)


def train_emulator(
    dataset: Dataset, spec: ProcessSpec, cfg: EmulatorConfig
) -> TrainedEmulator:
    """Fit the emulator on a dataset; returns the net and its validation MSE.

    All data is normalized through the spec before training; the held-out
    split is drawn with a seeded permutation and scored without noise.
    """
    if len(dataset) < 2:
        raise ValueError("need at least 2 samples to split train/validation")
    Xn = spec.normalize_inputs(dataset.x)
    Zn = spec.normalize_outputs(dataset.z)
    root = np.random.default_rng(cfg.seed)
    split_rng, init_rng, noise_rng = root.spawn(3)
    perm = split_rng.permutation(len(dataset))
    n_val = max(1, int(round(cfg.val_fraction * len(dataset))))
    if n_val >= len(dataset):
        raise ValueError("validation split leaves no training data")
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    net = nn.init_net([spec.input_dim, *cfg.hidden, spec.output_dim], init_rng)
    net, history = fit_full_batch(
        net,
        Xn[train_idx],
        Zn[train_idx],
        cfg.epochs,
        cfg.learning_rate,
        noise_std=cfg.dr_noise_std,
        noise_rng=noise_rng,
        eval_sets=(Xn[val_idx], Zn[val_idx]),
    )
    resid = nn.forward_batch(net, Xn[val_idx]) - Zn[val_idx]
    val_mse = float((resid**2).sum(axis=1).mean())
    return TrainedEmulator(net=net, val_mse=val_mse, history=history)


def write_history_csv(history, path) -> None:
    """Sidecar metrics file: epoch, train MSE, validation MSE."""
    with open(path, "w", newline="") as fh:
        fh.write("epoch,train_mse,val_mse\n")
        for epoch, train_mse, val_mse in history:
            fh.write(f"{epoch},{train_mse!r},{val_mse!r}\n")
