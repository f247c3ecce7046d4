"""Acceptance criteria 1-11, one PASS/FAIL line each (run with ``pytest -s`` or read the log)."""
import filecmp
import math
import os
import time
from fractions import Fraction

import numpy as np
import pytest

from fest.ccl import label_components
from fest.cli import default_thresholds, main
from fest.eedm import LossConfig, Objective, dm_loss, ee_loss, eedm_gradient, eedm_loss, mean_bce
from fest.fusion import fuse, resample_bilinear, run_multiscale
from fest.metrics import ScoreConfig, evaluate, percent, roc_sweep, score
from fest.sensitivity import ASConfig, apply_as, binarize
from fest.synth import Template, gen_dataset
from fest.toymodel import TrainConfig, predict_toy, train_toy
from oracles import component_pixels, flood_fill_labels, mean_coords


def verdict(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\n[acceptance] criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def scenes():
    t0 = time.perf_counter()
    cases = gen_dataset(Template(), 200, 42)
    return cases, time.perf_counter() - t0


def test_criterion_01_score_arithmetic(capsys):
    exact = ScoreConfig(alpha=Fraction(1, 2), fa_limit=Fraction(1, 10000))
    tol = Fraction(5, 1000)
    s1 = score(Fraction(6422, 10000), Fraction(8029, 10000), Fraction(2057, 10**8), exact) * 100
    s2 = score(Fraction(6142, 10000), Fraction(8998, 10000), Fraction(2811, 10**8), exact) * 100
    bad = score(Fraction(6422, 10000), Fraction(8029, 10000), Fraction(13846, 10**8), exact)
    f1 = percent(score(0.6422, 0.8029, 20.57e-6))
    f2 = percent(score(0.6142, 0.8998, 28.11e-6))
    fbad = score(0.6422, 0.8029, 138.46e-6)
    ok = (abs(s1 - Fraction(7226, 100)) <= tol and abs(s2 - Fraction(7570, 100)) <= tol
          and bad is None and fbad is None and (f1, f2) == ("72.26", "75.70"))
    verdict(capsys, 1, ok, f"scores {float(s1):.3f} / {float(s2):.3f} render {f1} / {f2}; Fa 138.46e-6 invalid={bad is None}")


def test_criterion_02_gradient_fd(capsys):
    t0 = time.perf_counter()
    g = np.random.default_rng(2)
    cfg = LossConfig(w=4.0, p=0.5)
    h = 1e-5
    worst = 0.0
    for _ in range(100):
        y = g.random((8, 8)) > 0.6
        q = g.uniform(0.001, 0.999, (8, 8))
        kept = eedm_loss(y, q, cfg).kept
        an = eedm_gradient(y, q, cfg, kept)
        obj = Objective(y, cfg)
        for i in range(64):
            up, dn = q.copy(), q.copy()
            up.flat[i] += h
            dn.flat[i] -= h
            fd = (obj(up, kept)[0].loss - obj(dn, kept)[0].loss) / (2 * h)
            a = an.flat[i]
            rel = abs(fd - a) / max(abs(a), abs(fd)) if (a or fd) else 0.0
            worst = max(worst, rel)
    dt = time.perf_counter() - t0
    verdict(capsys, 2, worst <= 1e-4 and dt < 5, f"worst relative error {worst:.2e} (tol 1e-4), {dt:.2f}s")


def test_criterion_03_degeneracy(capsys):
    g = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        y = g.random((10, 12)) > 0.7
        q = g.random((10, 12))
        w, p = float(g.uniform(1, 8)), float(g.uniform(0.05, 1))
        worst = max(
            worst,
            abs(eedm_loss(y, q, LossConfig(1.0, p)).loss - dm_loss(y, q, p)),
            abs(eedm_loss(y, q, LossConfig(w, 1.0)).loss - ee_loss(y, q, w)),
            abs(eedm_loss(y, q, LossConfig(1.0, 1.0)).loss - mean_bce(y, q)),
        )
    verdict(capsys, 3, worst <= 1e-12, f"max |difference| {worst:.1e} (tol 1e-12)")


def test_criterion_04_ccl_oracle(capsys):
    g = np.random.default_rng(4)
    mismatches = 0
    for i in range(500):
        mask = g.random((16, 16)) < g.uniform(0.2, 0.7)
        for conn in (4, 8):
            lm = label_components(mask, conn)
            labels, k = flood_fill_labels(mask, conn)
            same = lm.count == k and np.array_equal(lm.labels, labels)
            if same:
                for stat, pix in zip(lm.components, component_pixels(labels, k)):
                    if (stat.centroid_row, stat.centroid_col) != mean_coords(pix) or stat.pixel_count != len(pix):
                        same = False
            mismatches += not same
    verdict(capsys, 4, mismatches == 0, f"{mismatches} mismatches over 500 masks x 2 connectivities")


def test_criterion_05_as_superset_fidelity(scenes, capsys):
    cases, _ = scenes
    bad = 0
    cfg = ASConfig(0.3, 0.1)
    for c in cases:
        out, _ = apply_as(c.prob, cfg)
        m1 = binarize(c.prob, 0.3)
        m2 = label_components(binarize(c.prob, 0.1))
        strong_regions = np.isin(m2.labels, np.unique(m2.labels[m1]))
        if not (np.all(out[m1]) and np.array_equal(out[strong_regions], m1[strong_regions])):
            bad += 1
    verdict(capsys, 5, bad == 0, f"{bad} of {len(cases)} scenes violate superset/fidelity")


def _sweep(cases, th1, th2=None):
    gts = [c.gt for c in cases]
    if th2 is None:
        preds = [binarize(c.prob, th1) for c in cases]
    else:
        preds = [apply_as(c.prob, ASConfig(th1, th2))[0] for c in cases]
    return evaluate(preds, gts)


def test_criterion_06_th1_trend(scenes, capsys):
    cases, gen_time = scenes
    t0 = time.perf_counter()
    peaks = np.array([b.peak for c in cases for b in c.spec.targets])
    mid = float(np.mean((peaks > 0.3) & (peaks < 0.5)))
    weak = int(np.sum((peaks > 0.1) & (peaks < 0.5)))
    reps = [_sweep(cases, th) for th in (0.5, 0.45, 0.4, 0.35, 0.3)]
    pds = [r.pd for r in reps]
    fas = [r.fa for r in reps]
    mono = all(b >= a for a, b in zip(pds, pds[1:])) and all(b >= a for a, b in zip(fas, fas[1:]))
    gain = (pds[-1] - pds[0]) * 100
    dt = time.perf_counter() - t0 + gen_time
    ok = mono and gain >= 5 and mid >= 0.10 and weak > 0 and dt < 30
    verdict(capsys, 6, ok, f"Pd {' '.join(percent(p) for p in pds)}; gain {gain:.2f}pp; "
                           f"mid-band peaks {mid:.0%}; monotone={mono}; {dt:.1f}s")


def test_criterion_07_th2_trend(scenes, capsys):
    cases, _ = scenes
    plain, dual = _sweep(cases, 0.3), _sweep(cases, 0.3, 0.1)
    dpd = (dual.pd - plain.pd) * 100
    diou = abs(dual.iou - plain.iou) * 100
    verdict(capsys, 7, dpd >= 5 and diou <= 2,
            f"Pd {percent(plain.pd)} -> {percent(dual.pd)} (+{dpd:.2f}pp), IoU {percent(plain.iou)} -> {percent(dual.iou)}")


def test_criterion_08_roc_monotone(scenes, capsys):
    cases, _ = scenes
    subset = cases[:40]
    t0 = time.perf_counter()
    rows = roc_sweep([c.prob for c in subset], [c.gt for c in subset], default_thresholds())
    steps = len(rows) - 1
    bad = sum(1 for (_, fa0, pd0), (_, fa1, pd1) in zip(rows, rows[1:]) if pd1 < pd0 or fa1 < fa0)
    dt = time.perf_counter() - t0
    verdict(capsys, 8, len(rows) == 99 and bad == 0,
            f"{bad} non-monotone steps of {steps}; Pd {rows[0][2]:.3f} -> {rows[-1][2]:.3f}; {dt:.1f}s")


TOY_TRAIN = Template(height=256, width=256, targets=(1, 4))
TOY_TEST = Template(height=512, width=512, targets=(1, 4))


def test_criterion_09_toy_ablation(capsys):
    t0 = time.perf_counter()
    train = gen_dataset(TOY_TRAIN, 12, 1)
    test = gen_dataset(TOY_TEST, 40, 2)
    gts = [c.gt for c in test]
    reps = {}
    for loss in ("bce", "eedm"):
        model = train_toy(train, TrainConfig(loss=loss))
        reps[loss] = evaluate([binarize(predict_toy(model, c.image), 0.5) for c in test], gts)
    dt = time.perf_counter() - t0
    b, e = reps["bce"], reps["eedm"]
    ok = (b.valid and e.valid and e.pd >= b.pd and e.score >= b.score and dt < 60)

    def fmt(r):
        s = "invalid" if r.score is None else percent(r.score)
        return f"Pd {percent(r.pd)} Score {s}"

    verdict(capsys, 9, ok, f"EEDM {fmt(e)} vs BCE {fmt(b)}; {dt:.1f}s")


def test_criterion_10_fusion_identities(capsys):
    g = np.random.default_rng(10)
    m = g.random((13, 17))
    single = np.array_equal(fuse([m], "mean"), m) and np.array_equal(fuse([m], "max"), m)
    const = all(
        np.all(resample_bilinear(np.full((13, 17), v), hh, ww) == v)
        for v in (0.0, 0.3, 0.5, 1.0) for hh, ww in [(5, 5), (40, 21), (13, 17), (1, 1)]
    )
    out = run_multiscale(m, [8, 24, 31], lambda img, s: np.full((s, s), 0.5))
    stub = out.shape == m.shape and np.all(out == 0.5)
    verdict(capsys, 10, single and const and stub, f"single-map={single} constant={const} stub={stub}")


def _pipeline(root):
    d = str(root)
    steps = [
        ["synth", "--out-dir", f"{d}/data", "--n", "6", "--seed", "42", "--hw", "96x96", "--scales", "64,80"],
        ["fuse", "--image-dir", f"{d}/data/img", "--scales", "64,80", "--pred-dir", f"{d}/data/pred",
         "--out-dir", f"{d}/fused"],
        ["post", "--prob-dir", f"{d}/fused", "--th1", "0.3", "--th2", "0.1", "--out-dir", f"{d}/final",
         "--report", f"{d}/report.csv"],
        ["eval", "--pred-dir", f"{d}/final", "--gt-dir", f"{d}/data/gt", "--csv", f"{d}/eval.csv"],
    ]
    return [main(s) for s in steps]


def _files(root):
    out = []
    for base, _, files in os.walk(root):
        out += [os.path.relpath(os.path.join(base, f), root) for f in files]
    return sorted(out)


def test_criterion_11_determinism(tmp_path, capsys):
    codes = _pipeline(tmp_path / "a") + _pipeline(tmp_path / "b")
    fa, fb = _files(tmp_path / "a"), _files(tmp_path / "b")
    outputs = [f for f in fa if f.endswith((".pgm", ".csv"))]
    same = fa == fb and all(filecmp.cmp(tmp_path / "a" / f, tmp_path / "b" / f, shallow=False) for f in fa)
    ok = codes == [0] * 8 and same and len(outputs) > 0
    verdict(capsys, 11, ok, f"{len(outputs)} PGM/CSV outputs byte-identical={same}; exit codes {codes}")
