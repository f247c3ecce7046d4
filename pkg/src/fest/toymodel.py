"""A per-pixel logistic segmenter trained by full-batch gradient descent.

Small enough to train in seconds, but the loss gradient still flows
through ``eedm_gradient`` exactly as it would for a real network.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .eedm import LossConfig, Objective
from .raster import as_prob

FEATURES = ("intensity", "mean3", "max3", "contrast", "bias")
LOSS_KINDS = ("bce", "ee", "dm", "eedm")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training diverged (non-finite loss) at epoch {epoch}")
        self.epoch = epoch


def extract_features(image) -> np.ndarray:
    """Feature stack of shape (H, W, 5); borders use edge replication.

    contrast is the centre pixel minus the mean of its 8 neighbours.
    """
    img = as_prob(image)
    win = sliding_window_view(np.pad(img, 1, mode="edge"), (3, 3))
    total = win.sum(axis=(2, 3))
    mean3 = total / 9.0
    max3 = win.max(axis=(2, 3))
    ring = (total - img) / 8.0
    return np.stack([img, mean3, max3, img - ring, np.ones_like(img)], axis=-1)


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "eedm"
    w: float = 4.0
    p: float = 0.5
    lr: float = 0.5
    epochs: int = 200
    seed: int = 7

    def __post_init__(self):
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.loss!r}")
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        self.loss_config()

    def loss_config(self) -> LossConfig:
        w = self.w if self.loss in ("ee", "eedm") else 1.0
        p = self.p if self.loss in ("dm", "eedm") else 1.0
        return LossConfig(w=w, p=p)


@dataclass
class ToyModel:
    weights: np.ndarray
    log: list[float] = field(default_factory=list)


def predict_toy(model: ToyModel, image) -> np.ndarray:
    out = expit(extract_features(image) @ model.weights)
    out.flags.writeable = False
    return out


def _objective(weights, stacks, objectives, kept=None):
    """Mean per-image loss, its weight gradient and the hard sets used.

    With ``kept`` given, the hard sets are frozen to those index sets.
    """
    loss = 0.0
    grad = np.zeros_like(weights)
    kepts = []
    for i, (f, obj) in enumerate(zip(stacks, objectives)):
        q = expit(f @ weights)
        res, g = obj(q, None if kept is None else kept[i])
        loss += res.loss
        grad += np.tensordot(f, g * q * (1 - q), axes=([0, 1], [0, 1]))
        kepts.append(res.kept)
    n = len(stacks)
    return loss / n, grad / n, kepts


def initial_weights(seed: int) -> np.ndarray:
    return 0.01 * np.random.Generator(np.random.PCG64(seed)).standard_normal(len(FEATURES))


def standardizer(stacks) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and standard deviation over all training pixels.

    The bias channel gets (0, 1) so it stays a constant 1.
    """
    flat = np.concatenate([f.reshape(-1, f.shape[-1]) for f in stacks])
    mu, sd = flat.mean(axis=0), flat.std(axis=0)
    mu[-1], sd[-1] = 0.0, 1.0
    return mu, np.where(sd > 0, sd, 1.0)


def train_toy(cases: Sequence, cfg: TrainConfig = TrainConfig()) -> ToyModel:
    """Full-batch gradient descent on the mean per-image loss.

    ``cases`` are objects with ``image`` and ``gt`` grids (e.g. SynthCase).
    Descent runs on features standardized with training-set statistics;
    the returned weights are mapped back so they apply to raw features.
    """
    if not cases:
        raise ValueError("empty training set")
    raw = [extract_features(c.image) for c in cases]
    mu, sd = standardizer(raw)
    stacks = [(f - mu) / sd for f in raw]
    objectives = [Objective(c.gt, cfg.loss_config()) for c in cases]
    v = initial_weights(cfg.seed)
    log = []
    for epoch in range(cfg.epochs):
        loss, grad, _ = _objective(v, stacks, objectives)
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            raise TrainingDiverged(epoch)
        log.append(loss)
        v = v - cfg.lr * grad
        if not np.all(np.isfinite(v)):
            raise TrainingDiverged(epoch)
    final, _, _ = _objective(v, stacks, objectives)
    if not math.isfinite(final):
        raise TrainingDiverged(cfg.epochs)
    log.append(final)
    weights = v / sd
    weights[-1] -= float(mu @ weights)
    return ToyModel(weights, log)


def save_model(model: ToyModel, path) -> None:
    with open(path, "w") as fh:
        fh.writelines(f"{float(v)!r}\n" for v in model.weights)


def load_model(path) -> ToyModel:
    with open(path) as fh:
        vals = [float(line) for line in fh if line.strip()]
    if len(vals) != len(FEATURES):
        raise ValueError(f"{path}: expected {len(FEATURES)} weights, got {len(vals)}")
    return ToyModel(np.array(vals))
