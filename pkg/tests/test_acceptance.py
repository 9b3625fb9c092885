"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import json
import time
from pathlib import Path

import numpy as np
import pytest
from conftest import report_criterion
from oracles import brute_dbscan, brute_silhouette, same_partition

from oscmine.cluster import dbscan, select_epsilon
from oscmine.envelope import analytic_envelope
from oscmine.experiments import mine_synthetic, planted_agreement, planted_cluster_set, score_recovery
from oscmine.signal import Band, bandpass_filter, segment
from oscmine.spoc import Component, estimate_z, normalized_covariances, spoc_train, z_auc
from oscmine.sweep import chronological_folds, default_space, enumerate_configs, select_components
from oscmine.synthetic import (
    PlantedSource,
    SyntheticSpec,
    demo_spec_dict,
    generate_recording,
    noise_level_for_snr,
    smooth_pattern,
    spec_from_dict,
)
from oscmine.validate import icph, ic_mse, max_envelope_diff, pattern_angle, silhouette_samples

E2E_SEEDS = range(5)


def test_c01_configuration_count():
    t = time.perf_counter()
    space = default_space()
    n = len(enumerate_configs(space))
    dt = time.perf_counter() - t
    ok = n == space.size == 81_000 and dt < 1.0
    report_criterion(1, "configuration-space count", ok, f"|Omega|={n}, {dt:.2f} s")
    assert ok


def test_c02_gevp_contract():
    rng = np.random.default_rng(2020)
    t = time.perf_counter()
    worst_c = worst_r = 0.0
    for _ in range(500):
        n_c = int(rng.integers(2, 17))
        n_ep = int(rng.integers(10, 40))
        mix = rng.standard_normal((n_c, n_c))
        x = np.einsum("ij,ejt->eit", mix, rng.standard_normal((n_ep, n_c, 4 * n_c)))
        alpha = 10 ** rng.uniform(-8, -2)
        sol = spoc_train(normalized_covariances(x), rng.standard_normal(n_ep), alpha)
        w, a, b, lam = sol.filters, sol.target_cov, sol.constraint, sol.eigenvalues
        worst_c = max(worst_c, np.abs(np.einsum("ik,ij,jk->k", w, b, w) - 1).max())
        # backward error of each eigenpair relative to the pencil norm
        res = np.linalg.norm(a @ w - b @ w * lam, axis=0)
        scale = (np.linalg.norm(a, 2) + np.abs(lam) * np.linalg.norm(b, 2)) * np.linalg.norm(w, axis=0)
        worst_r = max(worst_r, (res / scale).max())
    dt = time.perf_counter() - t
    ok = worst_c <= 1e-8 and worst_r <= 1e-7 and dt < 30
    report_criterion(2, "GEVP contract", ok,
                     f"max|w'Bw-1|={worst_c:.1e}, max rel residual={worst_r:.1e}, {dt:.1f} s")
    assert ok


def _spoc_trial(seed: int) -> tuple[float, float]:
    rng = np.random.default_rng(100 + seed)
    src = PlantedSource(Band(10.0, 4.0), smooth_pattern(32, rng), {}, 0.9)
    spec = SyntheticSpec(32, 200.0, 300, [src], seed=seed)
    level = noise_level_for_snr(spec, src, 0.0)
    rec, gt = generate_recording(SyntheticSpec(32, 200.0, 300, [src], noise_level=level, seed=seed))
    cov = normalized_covariances(segment(bandpass_filter(rec, src.band), "go-cue", -1.0, 1.0).epochs)
    angles, aucs = [], []
    for train, test in chronological_folds(len(cov), 5):
        sol = spoc_train(cov.subset(train), gt.z[train], 1e-6)
        w = sol.filters[:, 0]
        angles.append(pattern_angle(sol.average @ w, src.pattern))
        aucs.append(z_auc(estimate_z(w, cov.subset(test)), gt.z[test]))
    return float(np.mean(angles)), float(np.mean(aucs))


def test_c03_spoc_recovery():
    t = time.perf_counter()
    results = [_spoc_trial(s) for s in range(10)]
    dt = time.perf_counter() - t
    passed = sum(a < 10.0 and auc >= 0.8 for a, auc in results)
    ok = passed >= 9 and dt < 300
    detail = ", ".join(f"{a:.1f}deg/{auc:.3f}" for a, auc in results)
    report_criterion(3, "SPoC recovery", ok, f"{passed}/10 seeds, {dt:.0f} s ({detail})")
    assert ok


def test_c04_envelope():
    t = time.perf_counter()
    fs, n = 500.0, 4000
    tt = np.arange(n) / fs
    env = 1.0 + 0.5 * np.sin(2 * np.pi * 1.5 * tt)
    s = env * np.cos(2 * np.pi * 40.0 * tt)
    got = analytic_envelope(s)
    mid = slice(n // 10, n - n // 10)
    err = float(np.max(np.abs(got[mid] - env[mid]) / env[mid]))
    exact = all(np.array_equal(analytic_envelope(c * s), abs(c) * got) for c in (2.0, 0.5, -4.0, 0.125))
    dt = time.perf_counter() - t
    ok = err < 0.02 and exact and dt < 10
    report_criterion(4, "envelope correctness", ok, f"max rel error {err:.2e}, scaling exact={exact}")
    assert ok


def test_c05_silhouette_oracle():
    rng = np.random.default_rng(5)
    t = time.perf_counter()
    worst, done = 0.0, 0
    while done < 200:
        n, k, dim = int(rng.integers(3, 51)), int(rng.integers(2, 6)), int(rng.integers(1, 6))
        labels = rng.integers(-1, k - 1, n)
        if np.unique(labels).size < 2:
            continue
        x = rng.standard_normal((n, dim))
        ref = np.array(brute_silhouette(x.tolist(), labels.tolist()))
        worst = max(worst, float(np.abs(silhouette_samples(x, labels) - ref).max()))
        done += 1
    dt = time.perf_counter() - t
    ok = worst <= 1e-12 and dt < 30
    report_criterion(5, "silhouette oracle", ok, f"200 instances, max |diff|={worst:.1e}, {dt:.1f} s")
    assert ok


def test_c06_dbscan_oracle():
    rng = np.random.default_rng(6)
    t = time.perf_counter()
    mismatches = 0
    for _ in range(100):
        n, dim = int(rng.integers(10, 201)), int(rng.integers(2, 13))
        centers = rng.uniform(0, 4, (int(rng.integers(1, 5)), dim))
        x = centers[rng.integers(len(centers), size=n)] + 0.3 * rng.standard_normal((n, dim))
        m_pts = int(rng.integers(2, 2 * dim + 1))
        d = np.linalg.norm(x[:, None] - x[None], axis=-1)[np.triu_indices(n, 1)]
        eps = float(np.quantile(d, rng.uniform(0.02, 0.2)))
        res = dbscan(x, eps, m_pts)
        ref_labels, ref_core = brute_dbscan(x.tolist(), eps, m_pts)
        core = np.asarray(ref_core)
        same = (np.array_equal(res.core_flags.astype(bool), core)
                and same_partition(res.labels[core].tolist(), np.asarray(ref_labels)[core].tolist()))
        mismatches += not same
    dt = time.perf_counter() - t
    ok = mismatches == 0 and dt < 120
    report_criterion(6, "DBSCAN oracle", ok, f"100 instances, {mismatches} mismatches, {dt:.1f} s")
    assert ok


def test_c07_epsilon_selection():
    t = time.perf_counter()
    passed = 0
    for seed in range(20):
        E, planted = planted_cluster_set(seed)
        _, res = select_epsilon(E)
        passed += res.n_hom == 3 and planted_agreement(res.labels, planted) >= 0.95
    dt = time.perf_counter() - t
    ok = passed >= 18 and dt < 120
    report_criterion(7, "epsilon-selection recovery", ok, f"{passed}/20 seeds, {dt:.1f} s")
    assert ok


def test_c09_denoising_gate():
    below_z = np.nextafter(0.6, 0.0)
    above_p = np.nextafter(1e-5, 1.0)
    cases = [(0.6, 1e-5, True), (below_z, 0.0, False), (0.6, above_p, False), (1.0, 0.0, True),
             (0.6, 0.0, True), (0.9, 1e-5, True)]
    comps = [Component(np.ones(2), np.ones(2), 1.0, 1, None, z, p) for z, p, _ in cases]
    kept, frac = select_components(comps)
    expected = [c for c, (_, _, keep) in zip(comps, cases) if keep]
    ok = kept == expected and frac == len(expected) / len(cases)
    report_criterion(9, "denoising gate", ok, f"kept {len(kept)}/{len(cases)} boundary cases")
    assert ok


def test_c10_metric_invariants():
    t = time.perf_counter()
    rng = np.random.default_rng(10)
    fs = 210.0  # 64-sample baseline keeps the offset arithmetic exact
    n_t = int(round(2.3 * fs)) + 1
    prof = {e: rng.integers(-64, 64, n_t) / 8.0 for e in ("go-cue", "hit1")}
    mse_zero = ic_mse([prof, prof, prof], ["go-cue", "hit1"]) == 0.0
    pats = rng.standard_normal((7, 16))
    flips = rng.choice([-1.0, 1.0], size=(7, 1))
    icph_ok = all(icph(pats, r) == icph(pats * flips, r) for r in range(7))
    profs = [{e: rng.integers(-64, 64, n_t) / 8.0 for e in ("go-cue",)} for _ in range(5)]
    offsets = [{"go-cue": p["go-cue"] + c} for p, c in zip(profs, (0.5, -2.0, 4.0, 1.25, -0.75))]
    dphi_ok = max_envelope_diff(profs, "go-cue", fs) == max_envelope_diff(offsets, "go-cue", fs)
    dt = time.perf_counter() - t
    ok = mse_zero and icph_ok and dphi_ok and dt < 10
    report_criterion(10, "metric invariants", ok,
                     f"IC-MSE zero={mse_zero}, ICPH flip={icph_ok}, dphi offset={dphi_ok}")
    assert ok


@pytest.fixture(scope="module")
def mined(tmp_path_factory):
    base = tmp_path_factory.mktemp("e2e")
    t = time.perf_counter()
    runs = {}
    for seed in E2E_SEEDS:
        spec = spec_from_dict(demo_spec_dict(), seed=seed)
        manifest, gt, cfg = mine_synthetic(spec, base / f"seed{seed}", workers=1)
        runs[seed] = (manifest, gt, cfg)
    return runs, time.perf_counter() - t


@pytest.mark.slow
def test_c08_end_to_end_mining(mined):
    runs, dt = mined
    passed, detail = 0, []
    for seed, (manifest, gt, cfg) in runs.items():
        matches = score_recovery(cfg.output, gt)
        passed += all(m.found for m in matches)
        found = "".join("+" if m.found else "-" for m in matches)
        detail.append(f"seed {seed} {found} ({manifest['counts']['omega']} configs)")
    ok = passed >= 4 and dt < 1800
    report_criterion(8, "end-to-end mining", ok, f"{passed}/5 seeds, {dt:.0f} s; " + "; ".join(detail))
    assert ok


def _numerical_artifacts(out: Path) -> dict[str, bytes]:
    return {str(p.relative_to(out)): p.read_bytes() for p in sorted(out.rglob("*.csv"))}


@pytest.mark.slow
def test_c11_determinism_across_workers(mined, tmp_path):
    runs, dt8 = mined
    seed = next(iter(runs))
    serial_manifest, _, serial_cfg = runs[seed]
    t = time.perf_counter()
    manifest, _, cfg = mine_synthetic(spec_from_dict(demo_spec_dict(), seed=seed), tmp_path, workers=8)
    dt = time.perf_counter() - t
    a = _numerical_artifacts(Path(serial_cfg.output))
    b = _numerical_artifacts(Path(cfg.output))
    differing = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    strip = lambda m: {k: v for k, v in m.items() if k not in ("timings", "config")}
    same_manifest = json.dumps(strip(manifest), default=float) == json.dumps(strip(serial_manifest),
                                                                             default=float)
    ok = not differing and same_manifest and dt < 2 * 1800
    report_criterion(11, "determinism 1 vs 8 workers", ok,
                     f"{len(a)} CSV artifacts, differing={differing}, manifest equal={same_manifest}, {dt:.0f} s")
    assert ok
