"""Multi-scale inference: resample, predict per scale, resample back, fuse."""
from __future__ import annotations

import os
import shlex
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence

import numpy as np

from .raster import RasterError, as_prob, read_any, write_mask

FUSION_MODES = ("mean", "max")

# (image resampled to s x s, s) -> probability mask of shape (s, s)
Predictor = Callable[[np.ndarray, int], np.ndarray]


class PredictorError(RuntimeError):
    def __init__(self, scale: int, reason: str):
        super().__init__(f"predictor failed at scale {scale}: {reason}")
        self.scale = scale


def scale_set(scales: Iterable[int]) -> tuple[int, ...]:
    out = tuple(int(s) for s in scales)
    if not out:
        raise ValueError("scale set is empty")
    if any(s <= 0 for s in out):
        raise ValueError(f"scales must be positive: {out}")
    if len(set(out)) != len(out):
        raise ValueError(f"duplicate scales: {out}")
    return out


def _axis(src_len: int, dst_len: int):
    x = (np.arange(dst_len) + 0.5) * (src_len / dst_len) - 0.5
    x = np.clip(x, 0.0, src_len - 1)
    i0 = np.floor(x).astype(np.intp)
    i1 = np.minimum(i0 + 1, src_len - 1)
    return i0, i1, x - i0


def resample_bilinear(m, out_h: int, out_w: int) -> np.ndarray:
    """Center-aligned bilinear resize of a [0, 1] grid."""
    if out_h <= 0 or out_w <= 0:
        raise ValueError(f"output size must be positive, got {out_h}x{out_w}")
    m = as_prob(m)
    h, w = m.shape
    if (h, w) == (out_h, out_w):
        return m
    r0, r1, fr = _axis(h, out_h)
    c0, c1, fc = _axis(w, out_w)
    # a + f * (b - a) keeps constant regions exactly constant
    top, bot = m[r0], m[r1]
    rows = top + fr[:, None] * (bot - top)
    left, right = rows[:, c0], rows[:, c1]
    out = left + fc[None, :] * (right - left)
    return as_prob(np.clip(out, 0.0, 1.0))


def fuse(maps: Sequence, mode: str = "mean") -> np.ndarray:
    if mode not in FUSION_MODES:
        raise ValueError(f"unknown fusion mode {mode!r}")
    if not maps:
        raise ValueError("nothing to fuse")
    arrs = [as_prob(m) for m in maps]
    shape = arrs[0].shape
    for a in arrs[1:]:
        if a.shape != shape:
            raise ValueError(f"dimension mismatch: {shape} vs {a.shape}")
    if len(arrs) == 1:
        return arrs[0]
    stack = np.stack(arrs)
    if mode == "max":
        return as_prob(stack.max(axis=0))
    # sort along the stack axis so the mean does not depend on input order
    return as_prob(np.clip(np.sort(stack, axis=0).mean(axis=0), 0.0, 1.0))


def directory_predictor(root, image_id: str) -> Predictor:
    """Precomputed masks laid out as ``<root>/<image_id>/<scale>.pgm``."""

    def predict(_image, scale):
        path = os.path.join(root, image_id, f"{scale}.pgm")
        if not os.path.isfile(path):
            raise PredictorError(scale, f"missing file {path}")
        try:
            return read_any(path)
        except (OSError, RasterError) as exc:
            raise PredictorError(scale, f"{path}: {exc}") from None

    return predict


def command_predictor(cmd: str) -> Predictor:
    """Runs ``cmd <in.pgm> <out.pgm>`` once per scale."""
    argv = shlex.split(cmd)
    if not argv:
        raise ValueError("empty predictor command")

    def predict(image, scale):
        with tempfile.TemporaryDirectory(prefix="fest-") as tmp:
            src = os.path.join(tmp, "in.pgm")
            dst = os.path.join(tmp, "out.pgm")
            write_mask(image, src)
            proc = subprocess.run(argv + [src, dst], capture_output=True, text=True)
            if proc.returncode != 0:
                msg = proc.stderr.strip().splitlines()[-1:] or [""]
                raise PredictorError(scale, f"exit status {proc.returncode} {msg[0]}".strip())
            if not os.path.isfile(dst):
                raise PredictorError(scale, "command wrote no output")
            try:
                return read_any(dst)
            except RasterError as exc:
                raise PredictorError(scale, str(exc)) from None

    return predict


def run_multiscale(image, scales, predictor: Predictor, mode: str = "mean", jobs: int = 1) -> np.ndarray:
    image = as_prob(image)
    scales = scale_set(scales)
    h, w = image.shape

    def one(s):
        pred = predictor(resample_bilinear(image, s, s), s)
        try:
            pred = as_prob(pred)
        except RasterError as exc:
            raise PredictorError(s, str(exc)) from None
        if pred.shape != (s, s):
            raise PredictorError(s, f"returned shape {pred.shape}, expected {(s, s)}")
        return resample_bilinear(pred, h, w)

    if jobs > 1 and len(scales) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            preds = list(ex.map(one, scales))
    else:
        preds = [one(s) for s in scales]
    return fuse(preds, mode)
