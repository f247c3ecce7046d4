"""Edge-enhanced, difficulty-mined BCE loss and its gradient.

Per pixel: BCE (with the usual minus sign), multiplied by ``w`` on the
inner boundary of the label. The ``k = max(1, floor(p * N))`` largest
weighted losses are averaged. ``p = 1`` gives the edge-only variant,
``w = 1`` the mining-only variant, and both together plain mean BCE.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .raster import as_binary, as_prob


@dataclass(frozen=True)
class LossConfig:
    w: float = 4.0
    p: float = 0.5
    eps: float = 1e-7

    def __post_init__(self):
        if not (math.isfinite(self.w) and self.w >= 1):
            raise ValueError(f"edge weight w must be >= 1, got {self.w}")
        if not 0 < self.p <= 1:
            raise ValueError(f"mining ratio p must be in (0, 1], got {self.p}")
        if not 0 < self.eps < 0.5:
            raise ValueError(f"eps must be in (0, 0.5), got {self.eps}")


def _pair(y, yhat):
    y, yhat = as_binary(y), as_prob(yhat)
    if y.shape != yhat.shape:
        raise ValueError(f"dimension mismatch: {y.shape} vs {yhat.shape}")
    return y, yhat


def extract_edge_map(label) -> np.ndarray:
    """Foreground pixels with at least one 4-neighbour on background.

    Pixels outside the image count as background.
    """
    fg = as_binary(label)
    padded = np.pad(fg, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    edge = fg & ~interior
    edge.flags.writeable = False
    return edge


def edge_weight_matrix(edges, w: float) -> np.ndarray:
    if w < 1:
        raise ValueError(f"edge weight w must be >= 1, got {w}")
    return np.where(np.asarray(edges) > 0, float(w), 1.0)


def _bce(y: np.ndarray, q: np.ndarray, eps: float) -> np.ndarray:
    q = np.clip(q, eps, 1 - eps)
    return np.where(y, -np.log(q), -np.log1p(-q))


def bce_matrix(y, yhat, eps: float = 1e-7) -> np.ndarray:
    y, yhat = _pair(y, yhat)
    return _bce(y, yhat, eps)


@dataclass(frozen=True)
class LossResult:
    loss: float
    kept: np.ndarray  # flat raster indices of the hard pixels, ascending
    weighted: np.ndarray  # weighted per-pixel loss grid


def hard_count(n: int, p: float) -> int:
    return max(1, math.floor(p * n))


def hard_set(flat: np.ndarray, k: int) -> np.ndarray:
    """Raster indices (ascending) of the ``k`` largest values.

    Values tied with the k-th largest are taken in raster order.
    """
    n = flat.size
    if k >= n:
        return np.arange(n)
    kth = np.partition(flat, n - k)[n - k]
    above = np.flatnonzero(flat > kth)
    ties = np.flatnonzero(flat == kth)[: k - above.size]
    return np.sort(np.concatenate([above, ties]))


def edge_weights(y, w: float) -> np.ndarray:
    """Per-pixel weight grid for label ``y``: ``w`` on its edge, 1 elsewhere."""
    if w == 1:
        return np.ones(np.shape(y))
    return edge_weight_matrix(extract_edge_map(y), w)


def _loss(y, q, weight, cfg: LossConfig) -> LossResult:
    weighted = weight * _bce(y, q, cfg.eps)
    flat = weighted.ravel()
    kept = hard_set(flat, hard_count(flat.size, cfg.p))
    return LossResult(float(np.mean(flat[kept])), kept, weighted)


def _grad(y, q, weight, kept, eps: float) -> np.ndarray:
    raw = q.ravel()[kept]
    qi = np.clip(raw, eps, 1 - eps)
    g = weight.ravel()[kept] * (qi - y.ravel()[kept]) / (qi * (1 - qi)) / len(kept)
    grad = np.zeros(q.size)
    grad[kept] = np.where(raw != qi, 0.0, g)
    return grad.reshape(q.shape)


def eedm_loss(y, yhat, cfg: LossConfig = LossConfig()) -> LossResult:
    y, yhat = _pair(y, yhat)
    return _loss(y, yhat, edge_weights(y, cfg.w), cfg)


def ee_loss(y, yhat, w: float = 4.0, eps: float = 1e-7) -> float:
    return eedm_loss(y, yhat, LossConfig(w=w, p=1.0, eps=eps)).loss


def dm_loss(y, yhat, p: float = 0.5, eps: float = 1e-7) -> float:
    return eedm_loss(y, yhat, LossConfig(w=1.0, p=p, eps=eps)).loss


def mean_bce(y, yhat, eps: float = 1e-7) -> float:
    return float(np.mean(bce_matrix(y, yhat, eps).ravel()))


def eedm_gradient(y, yhat, cfg: LossConfig = LossConfig(), kept=None) -> np.ndarray:
    """d loss / d yhat with the hard set held fixed.

    ``kept`` may be passed to reuse the hard set of an earlier ``eedm_loss``
    call. Pixels outside the hard set, or where the clamp is active, get 0.
    """
    y, yhat = _pair(y, yhat)
    weight = edge_weights(y, cfg.w)
    if kept is None:
        kept = _loss(y, yhat, weight, cfg).kept
    return _grad(y, yhat, weight, kept, cfg.eps)


class Objective:
    """Loss and gradient for one fixed label, with its edge weights cached.

    Used by training loops; skips the per-call validation of the public
    functions.
    """

    def __init__(self, y, cfg: LossConfig):
        self.y = as_binary(y)
        self.cfg = cfg
        self.weight = edge_weights(self.y, cfg.w)

    def __call__(self, q: np.ndarray, kept=None):
        res = _loss(self.y, q, self.weight, self.cfg)
        if kept is not None:
            res = LossResult(float(np.mean(res.weighted.ravel()[kept])), kept, res.weighted)
        return res, _grad(self.y, q, self.weight, res.kept, self.cfg.eps)
