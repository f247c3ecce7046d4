"""Directory-level helpers: mask trees on disk and batched evaluation."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial

import numpy as np

from .metrics import MatchConfig, match_targets
from .raster import read_mask


@dataclass(frozen=True)
class Case:
    id: str
    image: np.ndarray
    gt: np.ndarray


def list_ids(directory) -> list[str]:
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"not a directory: {directory}")
    return sorted(f[:-4] for f in os.listdir(directory) if f.endswith(".pgm"))


def load_dir(directory, kind: str, ids=None) -> list[np.ndarray]:
    ids = list_ids(directory) if ids is None else ids
    out = []
    for i in ids:
        path = os.path.join(directory, f"{i}.pgm")
        if not os.path.isfile(path):
            raise FileNotFoundError(f"missing {path}")
        out.append(read_mask(path, kind))
    return out


def load_pairs(pred_dir, gt_dir, pred_kind: str):
    """Ids of ``gt_dir`` plus the matching predictions and ground truths."""
    ids = list_ids(gt_dir)
    if not ids:
        raise ValueError(f"empty dataset: no .pgm files in {gt_dir}")
    return ids, load_dir(pred_dir, pred_kind, ids), load_dir(gt_dir, "binary8", ids)


def load_cases(data_dir) -> list[Case]:
    """``img/`` and ``gt/`` trees under ``data_dir`` as training cases."""
    ids = list_ids(os.path.join(data_dir, "gt"))
    if not ids:
        raise ValueError(f"empty dataset: no ground truth under {data_dir}")
    imgs = load_dir(os.path.join(data_dir, "img"), "gray16", ids)
    gts = load_dir(os.path.join(data_dir, "gt"), "binary8", ids)
    return [Case(i, im, g) for i, im, g in zip(ids, imgs, gts)]


def tally_all(preds, gts, match: MatchConfig = MatchConfig(), jobs: int = 1):
    """Per-image tallies, in input order; ``jobs > 1`` spreads images over processes."""
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions for {len(gts)} ground truths")
    fn = partial(match_targets, cfg=match)
    if jobs > 1 and len(preds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, preds, gts, chunksize=max(1, len(preds) // (4 * jobs))))
    return [fn(p, g) for p, g in zip(preds, gts)]
