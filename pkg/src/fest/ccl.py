"""Connected-component labeling and per-component geometry.

Labeling is a two-pass union-find over horizontal runs: each row is split
into runs of foreground pixels, runs on consecutive rows are merged when
they touch, and ids are then handed out in raster order of each
component's first pixel. Nothing recurses, so large masks are safe.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .raster import as_binary


@dataclass(frozen=True)
class ComponentStat:
    id: int
    pixel_count: int
    centroid_row: float
    centroid_col: float
    bbox: tuple[int, int, int, int]  # row0, col0, row1, col1 (inclusive)


@dataclass(frozen=True)
class LabelMap:
    height: int
    width: int
    labels: np.ndarray
    components: list[ComponentStat] = field(default_factory=list)
    connectivity: int = 8

    @property
    def count(self) -> int:
        return len(self.components)

    def stat(self, id: int) -> ComponentStat:
        if not 1 <= id <= len(self.components):
            raise KeyError(f"unknown component id {id} (have {len(self.components)})")
        return self.components[id - 1]


def _runs(mask: np.ndarray):
    """Row index, start col and end col (exclusive) of every foreground run."""
    padded = np.zeros((mask.shape[0], mask.shape[1] + 2), dtype=np.int8)
    padded[:, 1:-1] = mask
    d = np.diff(padded, axis=1)
    starts = np.argwhere(d == 1)
    ends = np.argwhere(d == -1)
    return starts[:, 0], starts[:, 1], ends[:, 1]


def _find(parent: list[int], i: int) -> int:
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        parent[i], i = root, parent[i]
    return root


def label_components(mask, connectivity: int = 8) -> LabelMap:
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    mask = as_binary(mask)
    h, w = mask.shape
    rows, starts, ends = _runs(mask)
    n = len(rows)
    parent = list(range(n))
    slack = 1 if connectivity == 8 else 0

    # first run index of every row; rows without runs get an empty slice
    row_lo = np.searchsorted(rows, np.arange(h), side="left")
    row_hi = np.searchsorted(rows, np.arange(h), side="right")
    for r in range(1, h):
        a0, a1 = row_lo[r], row_hi[r]
        b0, b1 = row_lo[r - 1], row_hi[r - 1]
        if a0 == a1 or b0 == b1:
            continue
        sb, eb = starts[b0:b1], ends[b0:b1]
        lo = np.searchsorted(eb, starts[a0:a1] - slack, side="right")
        hi = np.searchsorted(sb, ends[a0:a1] + slack, side="left")
        for k in range(a1 - a0):
            for j in range(lo[k], hi[k]):
                ra, rb = _find(parent, a0 + k), _find(parent, b0 + j)
                if ra != rb:
                    # keep the earlier run as root so ids follow raster order
                    if ra < rb:
                        parent[rb] = ra
                    else:
                        parent[ra] = rb

    labels = np.zeros((h, w), dtype=np.int32)
    ids: dict[int, int] = {}
    for i in range(n):
        root = _find(parent, i)
        if root not in ids:
            ids[root] = len(ids) + 1
        labels[rows[i], starts[i] : ends[i]] = ids[root]

    k = len(ids)
    rr, cc = np.nonzero(labels)
    lab = labels[rr, cc]
    counts = np.bincount(lab, minlength=k + 1)
    row_sum = np.bincount(lab, weights=rr, minlength=k + 1)
    col_sum = np.bincount(lab, weights=cc, minlength=k + 1)
    r0 = np.full(k + 1, h)
    c0 = np.full(k + 1, w)
    r1 = np.full(k + 1, -1)
    c1 = np.full(k + 1, -1)
    np.minimum.at(r0, lab, rr)
    np.minimum.at(c0, lab, cc)
    np.maximum.at(r1, lab, rr)
    np.maximum.at(c1, lab, cc)
    comps = [
        ComponentStat(
            id=i,
            pixel_count=int(counts[i]),
            centroid_row=float(row_sum[i] / counts[i]),
            centroid_col=float(col_sum[i] / counts[i]),
            bbox=(int(r0[i]), int(c0[i]), int(r1[i]), int(c1[i])),
        )
        for i in range(1, k + 1)
    ]
    labels.flags.writeable = False
    return LabelMap(h, w, labels, comps, connectivity)


def component_mask(lm: LabelMap, id: int) -> np.ndarray:
    lm.stat(id)
    out = lm.labels == id
    out.flags.writeable = False
    return out


def centroid(lm: LabelMap, id: int) -> tuple[float, float]:
    s = lm.stat(id)
    return s.centroid_row, s.centroid_col


def overlaps(a, b) -> bool:
    a, b = np.asarray(a, dtype=bool), np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return bool(np.any(a & b))
