"""Dataset-level IoU, target-level Pd / Fa, the composite score, ROC sweeps.

All values are ratios in [0, 1]; ``percent`` renders them the way result
tables do (x100, two decimals, half-up).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Sequence

import numpy as np

from .ccl import label_components
from .raster import as_binary
from .sensitivity import binarize


@dataclass(frozen=True)
class MatchConfig:
    dmax: float = 3.0
    connectivity: int = 8

    def __post_init__(self):
        if not self.dmax >= 0:
            raise ValueError(f"dmax must be >= 0, got {self.dmax}")
        if self.connectivity not in (4, 8):
            raise ValueError(f"connectivity must be 4 or 8, got {self.connectivity}")


@dataclass(frozen=True)
class ScoreConfig:
    alpha: float = 0.5
    fa_limit: float = 1e-4

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class ImageTally:
    """Raw counts for one (pred, gt) pair."""

    tp: int
    t: int
    p: int
    detected: tuple[bool, ...]
    false_pixels: int
    pixels: int

    @property
    def targets(self) -> int:
        return len(self.detected)

    @property
    def hits(self) -> int:
        return sum(self.detected)


@dataclass(frozen=True)
class EvalReport:
    iou: float
    pd: float
    fa: float
    score: float | None
    valid: bool
    images: list[ImageTally] = field(default_factory=list)


def percent(x: float) -> str:
    return str(Decimal(repr(x * 100)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def _pairs(preds: Sequence, gts: Sequence):
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions for {len(gts)} ground truths")
    out = []
    for p, g in zip(preds, gts):
        p, g = as_binary(p), as_binary(g)
        if p.shape != g.shape:
            raise ValueError(f"dimension mismatch: {p.shape} vs {g.shape}")
        out.append((p, g))
    return out


def dataset_iou(preds: Sequence, gts: Sequence) -> float:
    tp = t = p = 0
    for pm, gm in _pairs(preds, gts):
        tp += int(np.count_nonzero(pm & gm))
        t += int(np.count_nonzero(gm))
        p += int(np.count_nonzero(pm))
    if t == 0 and p == 0:
        return 1.0
    return tp / (t + p - tp)


def match_targets(pred, gt, cfg: MatchConfig = MatchConfig()) -> ImageTally:
    """Greedy one-to-one matching of predicted to ground-truth components.

    A (gt, pred) pair is a candidate if the components share a pixel or
    their centroids are within ``dmax``. Candidates are accepted in order
    of ascending centroid distance (ties by gt id, then pred id).
    """
    (pred, gt), = _pairs([pred], [gt])
    glm = label_components(gt, cfg.connectivity)
    plm = label_components(pred, cfg.connectivity)
    touching = set()
    both = pred & gt
    if both.any():
        touching = set(zip(glm.labels[both].tolist(), plm.labels[both].tolist()))
    cands = []
    for g in glm.components:
        for q in plm.components:
            d = math.hypot(g.centroid_row - q.centroid_row, g.centroid_col - q.centroid_col)
            if d <= cfg.dmax or (g.id, q.id) in touching:
                cands.append((d, g.id, q.id))
    cands.sort()
    detected = [False] * glm.count
    used = set()
    for _, gi, qi in cands:
        if not detected[gi - 1] and qi not in used:
            detected[gi - 1] = True
            used.add(qi)
    return ImageTally(
        tp=int(np.count_nonzero(both)),
        t=int(np.count_nonzero(gt)),
        p=int(np.count_nonzero(pred)),
        detected=tuple(detected),
        false_pixels=int(np.count_nonzero(pred & ~gt)),
        pixels=gt.size,
    )


def dataset_pd(tallies: Sequence[ImageTally]) -> float:
    total = sum(t.targets for t in tallies)
    if total == 0:
        raise ValueError("Pd is undefined: the dataset has no ground-truth targets")
    return sum(t.hits for t in tallies) / total


def dataset_fa(tallies: Sequence[ImageTally]) -> float:
    if not tallies:
        raise ValueError("Fa is undefined for an empty dataset")
    return sum(t.false_pixels for t in tallies) / sum(t.pixels for t in tallies)


def tally_iou(tallies: Sequence[ImageTally]) -> float:
    tp = sum(t.tp for t in tallies)
    union = sum(t.t + t.p - t.tp for t in tallies)
    return 1.0 if union == 0 else tp / union


def score(iou, pd, fa, cfg: ScoreConfig = ScoreConfig()):
    """``alpha * iou + (1 - alpha) * pd``, or None when ``fa >= fa_limit``."""
    if fa >= cfg.fa_limit:
        return None
    return cfg.alpha * iou + (1 - cfg.alpha) * pd


def evaluate(
    preds: Sequence,
    gts: Sequence,
    match: MatchConfig = MatchConfig(),
    scoring: ScoreConfig = ScoreConfig(),
    tallies: Sequence[ImageTally] | None = None,
) -> EvalReport:
    if tallies is None:
        tallies = [match_targets(p, g, match) for p, g in _pairs(preds, gts)]
    iou = tally_iou(tallies)
    pd = dataset_pd(tallies)
    fa = dataset_fa(tallies)
    s = score(iou, pd, fa, scoring)
    return EvalReport(iou, pd, fa, s, s is not None, list(tallies))


def roc_sweep(probs: Sequence, gts: Sequence, thresholds: Sequence[float], match: MatchConfig = MatchConfig()):
    """(threshold, fa, pd) for each threshold, in the given descending order."""
    ths = [float(t) for t in thresholds]
    if not ths:
        raise ValueError("no thresholds given")
    if any(not 0 < t < 1 for t in ths):
        raise ValueError("thresholds must lie in (0, 1)")
    if any(a <= b for a, b in zip(ths, ths[1:])):
        raise ValueError("thresholds must be strictly descending")
    if len(probs) != len(gts):
        raise ValueError(f"{len(probs)} probability maps for {len(gts)} ground truths")
    gts = [as_binary(g) for g in gts]
    rows = []
    for th in ths:
        tallies = [match_targets(binarize(p, th), g, match) for p, g in zip(probs, gts)]
        rows.append((th, dataset_fa(tallies), dataset_pd(tallies)))
    return rows
