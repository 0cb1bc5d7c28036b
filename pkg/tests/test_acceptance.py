"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Benchmark data is read from ``FILTERDEBLUR_BSD500`` (training photos) and
``FILTERDEBLUR_SET5`` (evaluation photos). Without them, the criteria that
only need a photo corpus run on the bundled photos, and the benchmark
criterion fails with a "dataset unavailable" message.
"""

import os
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from filterdeblur.blending import (
    delta,
    initial_state,
    max_rounds,
    run_round,
    NegativeWeightError,
)
from filterdeblur.cli import list_images
from filterdeblur.imaging import convolve, degrade, gaussian_kernel, load_image, psnr, ssim
from filterdeblur.inference import restore
from filterdeblur.learning import TrainConfig, key_map, solve, train
from filterdeblur.sharpness import deviation_v, index_j, metric_q
from filterdeblur.structure import ANGLE_BINS, QuantConfig, features, quantize_arrays, key_index
from filterdeblur import blend
from oracles import gauss_solve

TRAIN_PHOTOS = (
    "camera", "coffee", "brick", "grass", "gravel", "coins", "moon", "rocket",
    "hubble_deep_field", "cell", "immunohistochemistry", "clock",
)
HELD_OUT = (
    "astronaut", "chelsea", "page", "text", "retina", "colorwheel",
    "china", "flower", "grace_hopper", "motorcycle_left",
)
TEXTURED = (
    "brick", "grass", "gravel", "astronaut", "camera", "coffee", "coins",
    "motorcycle_left", "china", "immunohistochemistry",
)
BLUR = "gaussian:15:2.10"
BLEND_SIZES = (13, 15, 21, 25)


def record(number, title, passed, detail, elapsed, budget):
    within = elapsed <= budget
    ok = bool(passed and within)
    line = (
        f"[{number}] {'PASS' if ok else 'FAIL'} {title}: {detail} "
        f"({elapsed:.2f}s, budget {budget:g}s)"
    )
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert passed, line
    assert within, line


def dataset_dir(var):
    path = os.environ.get(var)
    return path if path and os.path.isdir(path) else None


@pytest.fixture(scope="module")
def stand_in_banks(photos):
    """Filter banks at the blending patch sizes, trained on the bundled photos."""
    t0 = time.perf_counter()
    corpus = [photos[n] for n in TRAIN_PHOTOS]
    banks = {
        p: train(corpus, TrainConfig(patch_size=p, stride=2, kernel=BLUR))
        for p in BLEND_SIZES
    }
    return banks, time.perf_counter() - t0


def test_solver_matches_elimination():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        a = rng.standard_normal((60, 25))
        W = a.T @ a
        V = rng.standard_normal(25)
        h = solve(W, V)
        ref = gauss_solve(W, V)
        worst = max(worst, np.linalg.norm(h - ref) / np.linalg.norm(ref))
    elapsed = time.perf_counter() - t0
    record(1, "pseudo-inverse solve vs elimination, 200 systems k=5",
           worst <= 1e-8, f"worst relative error {worst:.2e} (tol 1e-8)", elapsed, 5)


def test_identity_kernel_closure(photos):
    bsd = dataset_dir("FILTERDEBLUR_BSD500")
    if bsd:
        files = list_images([bsd])
        corpus, held = files[:20], load_image(files[20])
        source = "BSD500"
    else:
        names = [n for n in sorted(photos) if n != "grace_hopper"][:20]
        corpus, held = [photos[n] for n in names], photos["grace_hopper"]
        source = "bundled photos"
    t0 = time.perf_counter()
    bank = train(corpus, TrainConfig(patch_size=7, kernel="identity"))
    value = psnr(held, restore(held, bank))
    elapsed = time.perf_counter() - t0
    record(2, f"identity-kernel closure p=7, 20 images ({source})",
           value > 50, f"held-out PSNR {value:.2f} dB (> 50)", elapsed, 120)


@pytest.mark.slow
def test_benchmark_reproduction():
    bsd, set5 = dataset_dir("FILTERDEBLUR_BSD500"), dataset_dir("FILTERDEBLUR_SET5")
    title = "Gaussian 15/2.10, p=21, BSD500 -> Set5"
    if not (bsd and set5):
        record(3, title, False,
               "dataset unavailable: set FILTERDEBLUR_BSD500 and FILTERDEBLUR_SET5", 0.0, 7200)
    t0 = time.perf_counter()
    bank = train(list_images([bsd]), TrainConfig(patch_size=21, stride=2, kernel=BLUR))
    kernel = gaussian_kernel(15, 2.10)
    rows = []
    for path in list_images([set5]):
        ref = load_image(path)
        deg = degrade(ref, kernel)
        out = restore(deg, bank)
        rows.append((psnr(ref, deg), psnr(ref, out), ssim(ref, out)))
    elapsed = time.perf_counter() - t0
    rows = np.array(rows)
    mean_psnr, mean_ssim = rows[:, 1].mean(), rows[:, 2].mean()
    min_gain = (rows[:, 1] - rows[:, 0]).min()
    ok = mean_psnr >= 30.0 and mean_ssim >= 0.86 and min_gain >= 2.0
    record(3, title, ok,
           f"mean PSNR {mean_psnr:.2f} (>= 30), mean SSIM {mean_ssim:.4f} (>= 0.86), "
           f"smallest per-image gain {min_gain:.2f} dB (>= 2)", elapsed, 7200)


def test_index_contract():
    rng = np.random.default_rng(4)
    t0 = time.perf_counter()
    failures = []
    for _ in range(1000):
        q_deg, q_orig = np.sort(rng.uniform(0.1, 20.0, 2))
        if q_orig == q_deg:
            continue
        if index_j(deviation_v(q_orig, q_orig, q_deg)) != 1.0:
            failures.append("J(I) != 1")
        if index_j(deviation_v(q_deg, q_orig, q_deg)) != 0.0:
            failures.append("J(G) != 0")
        # J grows as the restored Q moves from the degraded towards the original
        lo, hi = np.sort(rng.uniform(0.0, 1.0, 2))
        j_lo = index_j(deviation_v(q_deg + lo * (q_orig - q_deg), q_orig, q_deg))
        j_hi = index_j(deviation_v(q_deg + hi * (q_orig - q_deg), q_orig, q_deg))
        if j_lo > j_hi:
            failures.append("J not monotone")
        q_rest = rng.uniform(q_deg, q_orig)
        c = rng.uniform(0.1, 10.0)
        j = index_j(deviation_v(q_rest, q_orig, q_deg))
        if not np.isclose(index_j(deviation_v(c * q_rest, c * q_orig, c * q_deg)), j, rtol=1e-12):
            failures.append("J not scale invariant")
    v = deviation_v(10.055, 11.901, 5.638)
    j = index_j(v)
    if abs(j - 0.703) > 0.01:
        failures.append(f"reference triple J {j:.5f}")
    elapsed = time.perf_counter() - t0
    record(4, "J index contract", not failures,
           f"reference triple V={v:.6f} J={j:.5f} (0.703 +- 0.01); "
           f"{len(failures)} property violations", elapsed, 1)


def test_blending_invariants():
    rng = np.random.default_rng(5)
    t0 = time.perf_counter()
    problems = []
    rounds_run = 0
    for n in (2, 3, 4, 5):
        for trial in range(25):
            spread = 0.02 if trial % 2 else 0.5
            q = rng.uniform(1.0, 10.0) * (1.0 + rng.uniform(0.0, spread, n))
            dummy = [np.zeros((1, 1))] * n
            state = initial_state(dummy, q)
            limit = max_rounds(state)
            while state.round < limit:
                try:
                    nxt = run_round(state)
                except NegativeWeightError:
                    break
                rounds_run += 1
                w_prev, w = state.weights, nxt.weights
                if abs(w.sum() - 1.0) > 1e-9:
                    problems.append(f"N={n} weights sum {w.sum()}")
                if w[0] > w_prev[0] or w[-1] < w_prev[-1]:
                    problems.append(f"N={n} extreme weights moved the wrong way")
                if n == 2:
                    d = delta(state.q_values[0], state.q_values[1])
                    m = nxt.round
                    expect = np.array([max(0.5 - m * d, 0.0), 0.5 + m * d])
                    if not np.allclose(w, expect, rtol=0, atol=1e-12):
                        problems.append(f"N=2 round {m} weights {w} != {expect}")
                state = nxt
    elapsed = time.perf_counter() - t0
    record(5, "blending weight invariants, N in 2..5", not problems,
           f"{rounds_run} rounds checked, {len(problems)} violations", elapsed, 1)


def held_out_crops(photos, size=160, per_image=4):
    crops = []
    for name in HELD_OUT:
        im = photos[name]
        corners = [
            (r, c)
            for r in range(0, im.shape[0] - size + 1, size)
            for c in range(0, im.shape[1] - size + 1, size)
        ]
        pick = np.linspace(0, len(corners) - 1, per_image).round().astype(int)
        for i in pick:
            r, c = corners[i]
            crops.append(im[r:r + size, c:c + size])
    return crops


@pytest.mark.slow
def test_blending_beats_average(photos, stand_in_banks):
    banks, train_time = stand_in_banks
    t0 = time.perf_counter()
    kernel = gaussian_kernel(15, 2.10)
    q_blend, q_mean = [], []
    crops = held_out_crops(photos)
    for crop in crops:
        deg = degrade(crop, kernel)
        cands = [restore(deg, banks[p]) for p in BLEND_SIZES]
        image, state = blend(cands)
        q_blend.append(metric_q(image))
        q_mean.append(metric_q(np.clip(sum(cands) / len(cands), 0.0, 1.0)))
    elapsed = train_time + time.perf_counter() - t0
    ratio = np.mean(q_blend) / np.mean(q_mean)
    record(6, f"Q-guided blend vs plain average, {len(crops)} held-out crops (bundled photos)",
           len(crops) >= 30 and ratio >= 1.005,
           f"mean Q {np.mean(q_blend):.4f} vs {np.mean(q_mean):.4f}, ratio {ratio:.4f} (>= 1.005)",
           elapsed, 1800)


def test_q_decreases_with_blur(photos):
    t0 = time.perf_counter()
    bad = []
    for name in TEXTURED:
        im = photos[name]
        qs = [
            metric_q(convolve(im, gaussian_kernel(2 * int(np.ceil(3 * s)) + 1, s)))
            for s in (0.5, 1.0, 2.0, 4.0)
        ]
        if not all(a > b for a, b in zip(qs, qs[1:])):
            bad.append(name)
    elapsed = time.perf_counter() - t0
    record(7, "Q strictly decreasing in blur sigma, 10 textured photos", not bad,
           f"non-monotone: {bad or 'none'}", elapsed, 10)


def off_boundary_patches(rng, n, k=7, margin=1e-3):
    cfg = QuantConfig()
    edges_s = np.array(cfg.strength_thresholds)
    edges_c = np.array(cfg.coherence_thresholds)
    out = []
    while sum(len(p) for p in out) < n:
        scale = 10 ** rng.uniform(-3, 0, (4 * n, 1, 1))
        ramp = rng.standard_normal((4 * n, 1, 1)) * np.arange(k)[None, :, None] / k
        p = rng.random((4 * n, k, k)) * scale + ramp * scale
        f = features(p)
        pos = np.mod(f.angle / np.pi * ANGLE_BINS, 1.0)
        ok = (pos > margin) & (pos < 1 - margin)
        ok &= np.all(np.abs(f.strength[:, None] / edges_s - 1) > margin, axis=1)
        ok &= np.all(np.abs(f.coherence[:, None] - edges_c) > margin, axis=1)
        ok &= f.strength > 0
        out.append(p[ok])
    return np.concatenate(out)[:n]


def test_rotation_symmetry():
    rng = np.random.default_rng(8)
    cfg = QuantConfig()
    t0 = time.perf_counter()
    patches = off_boundary_patches(rng, 1000)
    f0 = features(patches)
    f1 = features(np.rot90(patches, 1, axes=(1, 2)))
    a0, s0, c0 = quantize_arrays(f0.angle, f0.strength, f0.coherence, cfg)
    a1, s1, c1 = quantize_arrays(f1.angle, f1.strength, f1.coherence, cfg)
    shift_ok = np.all((a1 - a0) % ANGLE_BINS == ANGLE_BINS // 2)
    rest_ok = np.all(s0 == s1) and np.all(c0 == c1)
    # the augmentation key map must agree with hashing the rotated patch
    mapped = key_map((1, 0))[key_index(a0, s0, c0)]
    map_ok = np.all(mapped == key_index(a1, s1, c1))
    elapsed = time.perf_counter() - t0
    strength_bins = np.bincount(s0, minlength=3)
    record(8, "90-degree rotation shifts angle bin by 12", shift_ok and rest_ok and map_ok,
           f"{len(patches)} patches, strength bins {strength_bins.tolist()}, "
           f"shift ok={bool(shift_ok)}, other bins ok={bool(rest_ok)}, key map ok={bool(map_ok)}",
           elapsed, 5)


@pytest.mark.slow
def test_stand_in_restoration(photos, stand_in_banks):
    """Not an acceptance criterion: the benchmark setting on bundled photos.

    With only twelve training photos the per-image gain is uneven (china sits
    below 2 dB), so this checks that every image improves and the mean gain.
    """
    banks, _ = stand_in_banks
    kernel = gaussian_kernel(15, 2.10)
    gains = []
    for name in ("astronaut", "chelsea", "china", "grace_hopper", "motorcycle_left"):
        ref = photos[name]
        deg = degrade(ref, kernel)
        gains.append(psnr(ref, restore(deg, banks[21])) - psnr(ref, deg))
    print("stand-in p=21 gains (dB):", np.round(gains, 2))
    assert min(gains) > 0.0
    assert np.mean(gains) >= 2.0
