import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oscmine.envelope import analytic_envelope
from oscmine.signal import Band, bandpass_filter, read_recording
from oscmine.synthetic import (
    GroundTruth,
    PlantedSource,
    SyntheticSpec,
    demo_spec_dict,
    generate_recording,
    noise_level_for_snr,
    oracle_component_check,
    read_ground_truth,
    smooth_pattern,
    spec_from_dict,
    spec_to_dict,
    write_synthetic,
)


def _src(n_c=8, seed=0, **kw):
    base = dict(band=Band(10.0, 4.0), pattern=smooth_pattern(n_c, np.random.default_rng(seed)),
                envelope_profile={}, comodulation_strength=0.8)
    base.update(kw)
    return PlantedSource(**base)


def test_source_validation():
    with pytest.raises(ValueError):
        _src(comodulation_strength=1.5)
    with pytest.raises(ValueError):
        _src(envelope_profile={"go-cue": [(0.0, 1.0), (1.0, 0.0)]})
    with pytest.raises(ValueError):
        PlantedSource(Band(10, 2), np.zeros(4))
    assert np.linalg.norm(_src(pattern=np.array([3.0, 4.0])).pattern) == pytest.approx(1.0)


def test_deterministic():
    spec = SyntheticSpec(8, 100.0, 10, [_src()], noise_level=0.5, seed=3)
    a, ga = generate_recording(spec)
    b, gb = generate_recording(spec)
    np.testing.assert_array_equal(a.data, b.data)
    np.testing.assert_array_equal(ga.z, gb.z)
    assert a.events == b.events


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        generate_recording(SyntheticSpec(6, 100.0, 5, [_src(n_c=8)]))
    with pytest.raises(ValueError):
        generate_recording(SyntheticSpec(8, 100.0, 0, [_src()]))


def test_noiseless_rank_equals_source_count():
    srcs = [_src(seed=1), _src(seed=2, band=Band(20.0, 4.0)), _src(seed=3, band=Band(30.0, 4.0))]
    rec, gt = generate_recording(SyntheticSpec(8, 100.0, 10, srcs[:1], noise_level=0.0))
    ratio = rec.data / gt.mixing[:, :1]
    np.testing.assert_allclose(ratio, np.broadcast_to(ratio[:1], ratio.shape), rtol=1e-9)
    for k in (1, 2, 3):
        rec, gt = generate_recording(SyntheticSpec(8, 100.0, 10, srcs[:k], noise_level=0.0))
        ev = np.linalg.eigvalsh(np.cov(rec.data))
        assert int((ev > 1e-9 * ev.max()).sum()) == k
        np.testing.assert_array_equal(gt.mixing, np.column_stack([s.pattern for s in srcs[:k]]))


@pytest.mark.parametrize("rho", [0.3, 0.6, 0.9])
def test_power_correlates_with_z(rho):
    srcs = [_src(comodulation_strength=rho), _src(seed=5, comodulation_strength=rho / 2,
                                                  band=Band(20.0, 4.0))]
    _, gt = generate_recording(SyntheticSpec(8, 100.0, 400, srcs, seed=11))
    for k, s in enumerate(srcs):
        r = np.corrcoef(gt.power[:, k], gt.z)[0, 1]
        assert abs(r - s.comodulation_strength) <= 0.1
    assert np.all(np.isfinite(gt.z)) and gt.informative == 0


def test_planted_power_is_realized_in_reference_window():
    src = _src()
    rec, gt = generate_recording(SyntheticSpec(8, 100.0, 30, [src], noise_level=0.0, seed=2))
    s = np.linalg.pinv(gt.mixing) @ rec.data
    go = rec.event_samples("go-cue")
    realized = np.array([np.mean(s[0, g - 100 : g] ** 2) for g in go])
    np.testing.assert_allclose(realized, gt.power[:, 0], rtol=1e-9)


def test_go_cue_dip_visible_in_envelope():
    dip = {"go-cue": [(-0.3, 1.0), (-0.01, 1.0), (0.0, 0.5), (0.5, 0.5), (0.51, 1.0), (2.0, 1.0)]}
    src = _src(envelope_profile=dip, comodulation_strength=0.0)
    rec, gt = generate_recording(SyntheticSpec(8, 200.0, 60, [src], noise_level=0.0, seed=4))
    s = np.linalg.pinv(gt.mixing)[0] @ rec.data
    env = analytic_envelope(s)
    go = rec.event_samples("go-cue")
    base = np.mean([env[g - 60 : g].mean() for g in go])
    inside = np.mean([env[g + 10 : g + 90].mean() for g in go])
    assert inside <= 0.6 * base


def test_noise_level_for_snr_in_band():
    src = _src(n_c=16, seed=9, band=Band(12.0, 4.0))
    spec = SyntheticSpec(16, 200.0, 80, [src], seed=9)
    level = noise_level_for_snr(spec, src, 0.0)
    sig, _ = generate_recording(SyntheticSpec(16, 200.0, 80, [src], noise_level=0.0, seed=9))
    full, _ = generate_recording(SyntheticSpec(16, 200.0, 80, [src], noise_level=level, seed=9))
    noise = full.with_data(full.data - sig.data)
    p_sig = bandpass_filter(sig, src.band).data.var(axis=1).sum()
    p_noise = bandpass_filter(noise, src.band).data.var(axis=1).sum()
    assert 10 * np.log10(p_sig / p_noise) == pytest.approx(0.0, abs=1.0)


def test_oracle_component_check():
    srcs = [_src(pattern=np.eye(4)[0]), _src(pattern=np.eye(4)[1], band=Band(20, 4))]
    gt = GroundTruth(srcs, np.eye(4)[:, :2], np.zeros(3), np.ones((3, 2)))
    out = oracle_component_check(gt, -np.eye(4)[1] * 3, f0=21.0)
    assert out == {"source": 1, "pattern_angle": 0.0, "band_error": 1.0}
    assert oracle_component_check(gt, np.eye(4)[3])["pattern_angle"] == pytest.approx(90.0)


def test_write_and_read(tmp_path):
    spec = spec_from_dict(demo_spec_dict() | {"n_trials": 4}, seed=1)
    rec, gt = generate_recording(spec)
    paths = write_synthetic(rec, gt, tmp_path / "demo")
    back = read_recording(paths["header"])
    assert back.events == rec.events
    gt2 = read_ground_truth(paths["ground_truth"])
    np.testing.assert_array_equal(gt2.mixing, gt.mixing)
    np.testing.assert_array_equal(gt2.z, gt.z)
    lines = paths["target"].read_text().splitlines()
    assert lines[0] == "trial_index,z" and len(lines) == 5


def test_spec_dict_roundtrip():
    spec = spec_from_dict(demo_spec_dict(), seed=2)
    again = spec_from_dict(spec_to_dict(spec))
    assert again.seed == 2 and again.power_spread == spec.power_spread
    for a, b in zip(spec.sources, again.sources):
        np.testing.assert_array_equal(a.pattern, b.pattern)
        assert a.band == b.band and dict(a.envelope_profile) == dict(b.envelope_profile)


@settings(max_examples=15, deadline=None)
@given(n_trials=st.integers(1, 12), n_c=st.integers(1, 6), seed=st.integers(0, 2**32 - 1))
def test_schedule_events_ordered(n_trials, n_c, seed):
    src = _src(n_c=n_c, pattern=np.ones(n_c))
    rec, gt = generate_recording(SyntheticSpec(n_c, 100.0, n_trials, [src], seed=seed))
    names = [n for n, _ in rec.events]
    assert names == ["get-ready", "go-cue", "hit1", "hit2", "hit3", "hit4"] * n_trials
    samples = [s for _, s in rec.events]
    assert samples == sorted(samples) and gt.z.shape == (n_trials,)
