"""Dual-threshold post-processing with weak-target centroid injection.

``M1 = prob >= th1`` is kept as is. Each connected region of
``M2 = prob >= th2`` that does not touch ``M1`` is a weak target and is
added to the output as its centroid pixel (or a 3x3 cross around it).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ccl import label_components
from .raster import as_prob

INJECTION_STYLES = ("single", "cross")


@dataclass(frozen=True)
class ASConfig:
    th1: float = 0.5
    th2: float | None = 0.1
    injection: str = "single"

    def __post_init__(self):
        if not 0 < self.th1 < 1:
            raise ValueError(f"th1 must be in (0, 1), got {self.th1}")
        if self.th2 is not None:
            if not 0 < self.th2 < 1:
                raise ValueError(f"th2 must be in (0, 1), got {self.th2}")
            if not self.th1 > self.th2:
                raise ValueError(f"need th1 > th2, got {self.th1} <= {self.th2}")
        if self.injection not in INJECTION_STYLES:
            raise ValueError(f"unknown injection style {self.injection!r}")


@dataclass(frozen=True)
class TargetReport:
    kind: str  # "strong" | "weak"
    pixel_count: int
    centroid_row: float
    centroid_col: float
    peak: float


def binarize(m, th: float) -> np.ndarray:
    if not 0 < th < 1:
        raise ValueError(f"threshold must be in (0, 1), got {th}")
    out = as_prob(m) >= th
    out.flags.writeable = False
    return out


def _round_index(c: float, n: int) -> int:
    return min(max(math.floor(c + 0.5), 0), n - 1)


def _analyse(prob, cfg: ASConfig):
    prob = as_prob(prob)
    m1 = binarize(prob, cfg.th1)
    reports = []
    for s in label_components(m1).components:
        r0, c0, r1, c1 = s.bbox
        peak = float(prob[r0 : r1 + 1, c0 : c1 + 1].max())
        reports.append(TargetReport("strong", s.pixel_count, s.centroid_row, s.centroid_col, peak))
    if cfg.th2 is not None:
        lm = label_components(binarize(prob, cfg.th2))
        if lm.count:
            hits = np.zeros(lm.count + 1, dtype=bool)
            hits[np.unique(lm.labels[m1])] = True
            peaks = np.zeros(lm.count + 1)
            np.maximum.at(peaks, lm.labels.ravel(), prob.ravel())
            for s in lm.components:
                if not hits[s.id]:
                    reports.append(
                        TargetReport("weak", s.pixel_count, s.centroid_row, s.centroid_col, float(peaks[s.id]))
                    )
    return prob, m1, reports


def classify_targets(prob, cfg: ASConfig) -> list[TargetReport]:
    return _analyse(prob, cfg)[2]


def apply_as(prob, cfg: ASConfig) -> tuple[np.ndarray, list[TargetReport]]:
    prob, m1, reports = _analyse(prob, cfg)
    out = m1.copy()
    h, w = out.shape
    for t in reports:
        if t.kind != "weak":
            continue
        r = _round_index(t.centroid_row, h)
        c = _round_index(t.centroid_col, w)
        out[r, c] = True
        if cfg.injection == "cross":
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                if 0 <= r + dr < h and 0 <= c + dc < w:
                    out[r + dr, c + dc] = True
    out.flags.writeable = False
    return out, reports
