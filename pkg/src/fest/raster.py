"""Grid value types and binary PGM (P5) I/O.

Grids are plain 2-D numpy arrays, frozen (``writeable=False``) once
validated:

* ``GrayImage`` / ``ProbMask``: float64 in [0, 1]
* ``BinaryMask``: bool

The dtype is what ``write_mask`` uses to pick the on-disk encoding: float
grids go to 16-bit PGM, bool grids to 8-bit PGM with values {0, 255}.
Coordinates are (row, col) with the origin at the top-left.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

KINDS = ("gray8", "gray16", "binary8")
_MAXVAL = {"gray8": 255, "gray16": 65535, "binary8": 255}


class RasterError(ValueError):
    """Malformed or invalid raster data."""


@dataclass(frozen=True)
class RasterHeader:
    kind: str
    height: int
    width: int
    maxval: int

    def __post_init__(self):
        if self.maxval not in (255, 65535):
            raise RasterError(f"unsupported maxval {self.maxval}")
        if self.height <= 0 or self.width <= 0:
            raise RasterError(f"bad dimensions {self.height}x{self.width}")


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def as_prob(data) -> np.ndarray:
    """Validate and freeze a probability (or gray intensity) grid."""
    a = np.array(data, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise RasterError(f"expected a non-empty 2-D grid, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise RasterError("grid contains NaN or infinite values")
    if a.min() < 0.0 or a.max() > 1.0:
        raise RasterError("grid values must lie in [0, 1]")
    return _freeze(a)


as_gray = as_prob


def as_binary(data) -> np.ndarray:
    """Validate and freeze a {0,1} mask; accepts bool or numeric 0/1 input."""
    a = np.asarray(data)
    if a.ndim != 2 or a.size == 0:
        raise RasterError(f"expected a non-empty 2-D grid, got shape {a.shape}")
    if a.dtype != np.bool_:
        if not np.issubdtype(a.dtype, np.number):
            raise RasterError(f"unsupported dtype {a.dtype}")
        if not np.all((a == 0) | (a == 1)):
            raise RasterError("binary mask values must be exactly 0 or 1")
    return _freeze(np.array(a, dtype=bool))


def _tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping comments.

    Returns the tokens and the offset of the single whitespace byte that
    terminates the last one.
    """
    toks = []
    i, n = 0, len(buf)
    while len(toks) < count:
        while i < n and buf[i : i + 1].isspace():
            i += 1
        if i < n and buf[i : i + 1] == b"#":
            while i < n and buf[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        if i >= n:
            raise RasterError("truncated header")
        j = i
        while j < n and not buf[j : j + 1].isspace() and buf[j : j + 1] != b"#":
            j += 1
        toks.append(buf[i:j])
        i = j
    if i >= n or not buf[i : i + 1].isspace():
        raise RasterError("header not terminated by whitespace")
    return toks, i


def decode_pgm(buf: bytes) -> tuple[RasterHeader, np.ndarray]:
    """Parse a P5 byte string into its header and raw integer samples."""
    toks, end = _tokens(buf, 4)
    if toks[0] != b"P5":
        raise RasterError(f"bad magic {toks[0]!r}, expected b'P5'")
    try:
        width, height, maxval = (int(t) for t in toks[1:])
    except ValueError as exc:
        raise RasterError(f"non-numeric header field: {exc}") from None
    if maxval not in (255, 65535):
        raise RasterError(f"unsupported maxval {maxval}")
    hdr = RasterHeader("gray16" if maxval == 65535 else "gray8", height, width, maxval)
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = height * width * dtype.itemsize
    payload = buf[end + 1 : end + 1 + need]
    if len(payload) < need:
        raise RasterError(f"truncated payload: {len(payload)} of {need} bytes")
    samples = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    if samples.max() > maxval:
        raise RasterError("sample exceeds maxval")
    return hdr, samples


def encode_pgm(samples: np.ndarray, maxval: int) -> bytes:
    h, w = samples.shape
    dtype = ">u2" if maxval > 255 else "u1"
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    return header + np.ascontiguousarray(samples, dtype=dtype).tobytes()


def read_mask(path, kind: str) -> np.ndarray:
    """Load a P5 file as ``kind`` (gray8 | gray16 | binary8)."""
    if kind not in KINDS:
        raise RasterError(f"unknown kind {kind!r}")
    with open(path, "rb") as fh:
        hdr, samples = decode_pgm(fh.read())
    if hdr.maxval != _MAXVAL[kind]:
        raise RasterError(f"{os.fspath(path)}: maxval {hdr.maxval} does not match kind {kind}")
    if kind == "binary8":
        return _freeze(samples != 0)
    return _freeze(samples.astype(np.float64) / hdr.maxval)


def read_any(path) -> np.ndarray:
    """Load a P5 file, choosing gray16 or gray8 from its own maxval."""
    with open(path, "rb") as fh:
        hdr, samples = decode_pgm(fh.read())
    return _freeze(samples.astype(np.float64) / hdr.maxval)


def quantize(m: np.ndarray) -> np.ndarray:
    """16-bit codes round(p * 65535) of a float grid."""
    return np.rint(np.asarray(m, dtype=np.float64) * 65535.0).astype(np.uint16)


def write_mask(m: np.ndarray, path) -> None:
    m = np.asarray(m)
    if m.dtype == np.bool_:
        data = encode_pgm(as_binary(m).astype(np.uint8) * 255, 255)
    else:
        data = encode_pgm(quantize(as_prob(m)), 65535)
    with open(path, "wb") as fh:
        fh.write(data)
