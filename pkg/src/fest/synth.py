"""Synthetic infrared-like scenes with known ground truth.

Every target shows up in the probability map as a Gaussian bump whose
height is the target's peak confidence, so a target is recovered at
threshold ``th`` exactly when its peak is >= ``th`` (up to noise).
Clutter blobs produce the same bumps with no ground truth behind them.

Randomness comes from numpy's PCG64 bit generator. Per-case seeds are
derived from the master seed as ``splitmix64(master ^ i)``.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .fusion import resample_bilinear
from .raster import as_binary, as_prob, write_mask

_MASK64 = (1 << 64) - 1

BACKGROUND = 0.15
CONTRAST = 0.6
CLUTTER_SIZE = 1.5


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def case_seed(master: int, i: int) -> int:
    return splitmix64((master & _MASK64) ^ i)


def rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed & _MASK64))


@dataclass(frozen=True)
class Blob:
    row: float
    col: float
    radius: float  # std-dev of the Gaussian confidence profile
    peak: float
    truth_radius: float | None = None  # None for clutter


@dataclass(frozen=True)
class SceneSpec:
    height: int
    width: int
    targets: tuple[Blob, ...] = ()
    clutter: tuple[Blob, ...] = ()
    noise: float = 0.0
    image_noise: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ValueError(f"bad scene size {self.height}x{self.width}")
        if self.noise < 0 or self.image_noise < 0:
            raise ValueError("noise levels must be >= 0")
        for b in self.targets + self.clutter:
            if not (0 <= b.row < self.height and 0 <= b.col < self.width):
                raise ValueError(f"blob centre ({b.row}, {b.col}) outside the image")
            if b.radius < 1:
                raise ValueError(f"blob radius must be >= 1, got {b.radius}")
            if not 0 < b.peak <= 1:
                raise ValueError(f"blob peak must be in (0, 1], got {b.peak}")
        for b in self.targets:
            if b.truth_radius is None or b.truth_radius < 1:
                raise ValueError("targets need a truth radius >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        d["targets"] = tuple(Blob(**b) for b in d.get("targets", ()))
        d["clutter"] = tuple(Blob(**b) for b in d.get("clutter", ()))
        return cls(**d)


@dataclass(frozen=True)
class SynthCase:
    gt: np.ndarray
    prob: np.ndarray
    image: np.ndarray
    spec: SceneSpec


def gen_scene(spec: SceneSpec) -> SynthCase:
    h, w = spec.height, spec.width
    rr, cc = np.mgrid[0:h, 0:w].astype(np.float64)
    gt = np.zeros((h, w), dtype=bool)
    signal = np.zeros((h, w))
    bright = np.zeros((h, w))
    for b in spec.targets + spec.clutter:
        d2 = (rr - b.row) ** 2 + (cc - b.col) ** 2
        signal += b.peak * np.exp(-d2 / (2 * b.radius**2))
        # intensity is a flat-topped blob sized like the object itself
        size = b.truth_radius if b.truth_radius is not None else CLUTTER_SIZE * b.radius
        bright += b.peak * np.exp(-0.5 * (d2 / size**2) ** 4)
        if b.truth_radius is not None:
            gt |= d2 <= b.truth_radius**2
    g = rng(spec.seed)
    prob = np.clip(signal + spec.noise * g.standard_normal((h, w)), 0.0, 1.0)
    image = np.clip(
        BACKGROUND + CONTRAST * bright + spec.image_noise * g.standard_normal((h, w)), 0.0, 1.0
    )
    return SynthCase(as_binary(gt), as_prob(prob), as_prob(image), spec)


@dataclass(frozen=True)
class Template:
    """Ranges a random scene is drawn from."""

    height: int = 128
    width: int = 128
    targets: tuple[int, int] = (1, 5)
    clutter: tuple[int, int] = (0, 1)
    radius: tuple[float, float] = (1.0, 2.5)
    truth_scale: tuple[float, float] = (1.3, 2.0)
    # (low, high, weight): strong, mid and weak confidence bands
    peak_bands: tuple[tuple[float, float, float], ...] = (
        (0.55, 0.95, 0.5),
        (0.32, 0.48, 0.25),
        (0.12, 0.28, 0.25),
    )
    clutter_peak: tuple[float, float] = (0.12, 0.35)
    noise: float = 0.003
    image_noise: float = 0.01
    separation: float = 16.0
    border: int = 3

    def __post_init__(self):
        if self.targets[0] < 0 or self.targets[0] > self.targets[1]:
            raise ValueError(f"bad target count range {self.targets}")
        if self.clutter[0] < 0 or self.clutter[0] > self.clutter[1]:
            raise ValueError(f"bad clutter count range {self.clutter}")
        if not self.peak_bands:
            raise ValueError("need at least one peak band")
        if min(self.height, self.width) <= 2 * self.border:
            raise ValueError("image too small for the border")


def _layout(t: Template, seed: int) -> SceneSpec:
    g = rng(seed)
    n_t = int(g.integers(t.targets[0], t.targets[1] + 1))
    n_c = int(g.integers(t.clutter[0], t.clutter[1] + 1))
    weights = np.array([b[2] for b in t.peak_bands], dtype=np.float64)
    centres: list[tuple[int, int]] = []
    blobs = []
    for i in range(n_t + n_c):
        for _ in range(1000):
            r = int(g.integers(t.border, t.height - t.border))
            c = int(g.integers(t.border, t.width - t.border))
            if all((r - a) ** 2 + (c - b) ** 2 >= t.separation**2 for a, b in centres):
                break
        else:
            # no room left: emit fewer blobs rather than overlapping ones
            break
        centres.append((r, c))
        radius = float(g.uniform(*t.radius))
        if i < n_t:
            lo, hi, _ = t.peak_bands[int(g.choice(len(weights), p=weights / weights.sum()))]
            truth = max(1.0, radius * float(g.uniform(*t.truth_scale)))
            blobs.append(Blob(r, c, radius, float(g.uniform(lo, hi)), truth))
        else:
            blobs.append(Blob(r, c, radius, float(g.uniform(*t.clutter_peak))))
    targets = tuple(b for b in blobs if b.truth_radius is not None)
    clutter = tuple(b for b in blobs if b.truth_radius is None)
    return SceneSpec(t.height, t.width, targets, clutter, t.noise, t.image_noise, splitmix64(seed))


def gen_dataset(template: Template, n: int, seed: int) -> list[SynthCase]:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return [gen_scene(_layout(template, case_seed(seed, i))) for i in range(n)]


def case_id(i: int) -> str:
    return f"case_{i:04d}"


def scale_prediction(prob, scale: int, seed: int, noise: float = 0.002) -> np.ndarray:
    """Stand-in for a network run at ``scale``: resampled map plus a little noise."""
    m = resample_bilinear(prob, scale, scale)
    jitter = noise * rng(splitmix64(seed ^ scale)).standard_normal(m.shape)
    return as_prob(np.clip(m + jitter, 0.0, 1.0))


def write_dataset(cases: list[SynthCase], out_dir, scales=(), manifest_extra: dict | None = None) -> None:
    """Write ``gt/``, ``prob/``, ``img/`` (and ``pred/<id>/<scale>.pgm``) plus ``manifest.json``."""
    for sub in ("gt", "prob", "img"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    entries = []
    for i, case in enumerate(cases):
        cid = case_id(i)
        write_mask(case.gt, os.path.join(out_dir, "gt", f"{cid}.pgm"))
        write_mask(case.prob, os.path.join(out_dir, "prob", f"{cid}.pgm"))
        write_mask(case.image, os.path.join(out_dir, "img", f"{cid}.pgm"))
        for s in scales:
            d = os.path.join(out_dir, "pred", cid)
            os.makedirs(d, exist_ok=True)
            write_mask(scale_prediction(case.prob, s, case.spec.seed), os.path.join(d, f"{s}.pgm"))
        entries.append({"id": cid, "spec": case.spec.to_dict()})
    manifest = {"cases": entries, **(manifest_extra or {})}
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
