"""Synthetic recordings with planted oscillatory sources and known ground truth.

Each planted source is band-limited Gaussian noise whose amplitude is
modulated by (i) a trial-wise power scalar that comodulates with the target
variable z and (ii) event-locked piecewise-linear gain curves. Sensor noise is
spatially mixed 1/f noise plus white noise.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .signal import Band, Recording, filter_array, write_recording
from .validate import pattern_angle

EVENTS = ("get-ready", "go-cue", "hit1", "hit2", "hit3", "hit4")
GAIN_WINDOW = (-0.3, 2.0)

CHANNELS_32 = (
    "Fp1 Fp2 F7 F3 Fz F4 F8 FC5 FC1 FC2 FC6 T7 C3 Cz C4 T8 "
    "TP9 CP5 CP1 CP2 CP6 TP10 P7 P3 Pz P4 P8 PO9 O1 Oz O2 PO10"
).split()


def default_channel_names(n: int) -> list[str]:
    if n == len(CHANNELS_32):
        return list(CHANNELS_32)
    return [f"Ch{i + 1:02d}" for i in range(n)]


@dataclass(frozen=True)
class EventSchedule:
    """Within-trial timing; all values in seconds."""

    ready_to_go: tuple[float, float] = (2.0, 3.0)
    hit_gap_median: float = 0.8
    hit_gap_sigma: float = 0.25
    n_hits: int = 4
    post_trial: float = 2.0
    iti: tuple[float, float] = (0.5, 1.0)
    lead_in: float = 2.0

    def event_names(self) -> list[str]:
        return ["get-ready", "go-cue"] + [f"hit{i + 1}" for i in range(self.n_hits)]


@dataclass(frozen=True)
class PlantedSource:
    band: Band
    pattern: np.ndarray
    envelope_profile: Mapping[str, Sequence[tuple[float, float]]] = field(default_factory=dict)
    comodulation_strength: float = 0.0
    base_amplitude: float = 1.0
    is_artifact: bool = False
    name: str = ""

    def __post_init__(self):
        p = np.asarray(self.pattern, dtype=float)
        n = np.linalg.norm(p)
        if n == 0:
            raise ValueError("pattern must be nonzero")
        object.__setattr__(self, "pattern", p / n)
        if not 0.0 <= self.comodulation_strength <= 1.0:
            raise ValueError("comodulation_strength must lie in [0, 1]")
        if not self.base_amplitude > 0:
            raise ValueError("base_amplitude must be positive")
        for ev, knots in self.envelope_profile.items():
            if any(g <= 0 for _, g in knots):
                raise ValueError(f"gain curve for {ev!r} must be strictly positive")

    def gain(self, event: str, t: np.ndarray) -> np.ndarray:
        knots = self.envelope_profile.get(event)
        if not knots:
            return np.ones_like(t)
        kt, kg = np.array(knots, dtype=float).T
        return np.interp(t, kt, kg)


@dataclass(frozen=True)
class SyntheticSpec:
    n_channels: int
    fs: float
    n_trials: int
    sources: Sequence[PlantedSource]
    noise_level: float = 1.0
    seed: int = 0
    schedule: EventSchedule = field(default_factory=EventSchedule)
    power_spread: float = 0.6
    white_fraction: float = 0.2
    channel_names: Sequence[str] | None = None
    power_event: str = "go-cue"
    power_window: tuple[float, float] = (-1.0, 0.0)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    sources: list[PlantedSource]
    mixing: np.ndarray  # (n_channels, n_sources)
    z: np.ndarray
    power: np.ndarray  # (n_trials, n_sources)
    informative: int = 0

    def to_json(self) -> dict:
        return {
            "mixing": self.mixing.tolist(),
            "z": self.z.tolist(),
            "power": self.power.tolist(),
            "informative": self.informative,
            "sources": [
                {
                    "name": s.name,
                    "f0": s.band.f0,
                    "df": s.band.df,
                    "pattern": s.pattern.tolist(),
                    "envelope_profile": {k: [list(map(float, kv)) for kv in v]
                                         for k, v in s.envelope_profile.items()},
                    "comodulation_strength": s.comodulation_strength,
                    "base_amplitude": s.base_amplitude,
                    "is_artifact": s.is_artifact,
                }
                for s in self.sources
            ],
        }

    @classmethod
    def from_json(cls, d: dict) -> "GroundTruth":
        sources = [
            PlantedSource(Band(s["f0"], s["df"]), np.array(s["pattern"]),
                          {k: [tuple(kv) for kv in v] for k, v in s["envelope_profile"].items()},
                          s["comodulation_strength"], s["base_amplitude"], s["is_artifact"], s["name"])
            for s in d["sources"]
        ]
        return cls(sources, np.array(d["mixing"]), np.array(d["z"]), np.array(d["power"]),
                   d.get("informative", 0))


def _schedule(spec: SyntheticSpec, rng: np.random.Generator) -> tuple[list[list[float]], float]:
    sch = spec.schedule
    t = sch.lead_in
    trials = []
    for _ in range(spec.n_trials):
        times = [t, t + rng.uniform(*sch.ready_to_go)]
        for _ in range(sch.n_hits):
            times.append(times[-1] + rng.lognormal(np.log(sch.hit_gap_median), sch.hit_gap_sigma))
        trials.append(times)
        t = times[-1] + sch.post_trial + rng.uniform(*sch.iti)
    return trials, t + 1.0


def _pink(n_sig: int, n: int, fs: float, rng: np.random.Generator) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal((n_sig, n)), axis=1)
    f = np.fft.rfftfreq(n, 1.0 / fs)
    spec *= 1.0 / np.sqrt(np.maximum(f, 1.0))
    x = np.fft.irfft(spec, n, axis=1)
    return x / x.std(axis=1, keepdims=True)


def _unit(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return (x - x.mean()) / x.std()


def _trial_powers(spec: SyntheticSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, int]:
    n_tr, srcs = spec.n_trials, list(spec.sources)
    sig = spec.power_spread
    strengths = np.array([s.comodulation_strength for s in srcs]) if srcs else np.zeros(0)
    informative = int(np.argmax(strengths)) if srcs else 0
    power = np.ones((n_tr, len(srcs)))
    noise = rng.standard_normal((n_tr, len(srcs) + 1))
    if not srcs:
        return power, noise[:, 0], 0
    v_inf = noise[:, informative]
    power[:, informative] = np.exp(sig * v_inf - sig**2 / 2)
    rho = strengths[informative]
    if n_tr > 1 and power[:, informative].std() > 0:
        z = rho * _unit(power[:, informative]) + np.sqrt(1 - rho**2) * noise[:, -1]
    else:
        z = noise[:, -1]
    zs = _unit(z) if n_tr > 1 and z.std() > 0 else z
    for i, s in enumerate(srcs):
        if i == informative:
            continue
        c = s.comodulation_strength
        v = c * zs + np.sqrt(1 - c**2) * noise[:, i]
        power[:, i] = np.exp(sig * v - sig**2 / 2)
    return power, z, informative


def generate_recording(spec: SyntheticSpec) -> tuple[Recording, GroundTruth]:
    """Simulate ``x(t) = A s(t) + noise`` for the planted sources in ``spec``."""
    if spec.n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    if spec.n_channels < 1 or not spec.fs > 0:
        raise ValueError("invalid channel count or sample rate")
    for s in spec.sources:
        if s.pattern.size != spec.n_channels:
            raise ValueError(f"source pattern has {s.pattern.size} entries, expected {spec.n_channels}")
        s.band.check(spec.fs)
    names = list(spec.channel_names) if spec.channel_names else default_channel_names(spec.n_channels)
    if len(names) != spec.n_channels:
        raise ValueError("channel_names length does not match n_channels")

    ss = np.random.SeedSequence(spec.seed)
    r_sched, r_pow, r_noise, *r_src = [np.random.default_rng(c)
                                       for c in ss.spawn(3 + len(spec.sources))]
    fs = spec.fs
    trials, t_end = _schedule(spec, r_sched)
    n = int(np.ceil(t_end * fs))
    ev_names = spec.schedule.event_names()
    events = [(ev_names[i], int(round(tm * fs))) for tr in trials for i, tm in enumerate(tr)]

    power, z, informative = _trial_powers(spec, r_pow)
    # each trial's power holds from shortly before its get-ready until the next trial
    bounds = np.array([int(round((tr[0] - 0.4) * fs)) for tr in trials])
    trial_of = np.clip(np.searchsorted(bounds, np.arange(n), side="right") - 1, 0, None)

    # the planted trial power is the carrier's realized power in the reference window
    ref = [int(round(tr[ev_names.index(spec.power_event)] * fs)) for tr in trials] \
        if spec.power_event in ev_names else [int(round(tr[0] * fs)) for tr in trials]
    w_lo, w_hi = int(round(spec.power_window[0] * fs)), int(round(spec.power_window[1] * fs))

    def ref_gain(carrier):
        rms = np.array([np.sqrt(np.mean(carrier[max(r + w_lo, 0):max(r + w_hi, r + w_lo + 1)] ** 2))
                        for r in ref])
        return 1.0 / np.where(rms > 0, rms, 1.0)

    data = np.zeros((spec.n_channels, n))
    g_lo, g_hi = int(round(GAIN_WINDOW[0] * fs)), int(round(GAIN_WINDOW[1] * fs))
    rel = np.arange(g_lo, g_hi + 1) / fs
    for k, (src, rng) in enumerate(zip(spec.sources, r_src)):
        carrier = filter_array(rng.standard_normal(n), src.band, fs)
        carrier *= ref_gain(carrier)[trial_of]
        amp = src.base_amplitude * np.sqrt(power[trial_of, k])
        for ev in src.envelope_profile:
            curve = src.gain(ev, rel)
            for name, smp in events:
                if name != ev:
                    continue
                lo, hi = smp + g_lo, smp + g_hi + 1
                c_lo, c_hi = max(lo, 0), min(hi, n)
                amp[c_lo:c_hi] *= curve[c_lo - lo : len(curve) - (hi - c_hi)]
        data += np.outer(src.pattern, amp * carrier)

    if spec.noise_level > 0:
        nc = spec.n_channels
        mix = r_noise.standard_normal((nc, nc))
        mix /= np.linalg.norm(mix, axis=1, keepdims=True)
        pink = mix @ _pink(nc, n, fs, r_noise)
        white = r_noise.standard_normal((nc, n))
        wf = spec.white_fraction
        data += spec.noise_level * (np.sqrt(1 - wf) * pink + np.sqrt(wf) * white)

    mixing = (np.column_stack([s.pattern for s in spec.sources])
              if spec.sources else np.zeros((spec.n_channels, 0)))
    gt = GroundTruth(list(spec.sources), mixing, z, power, informative)
    return Recording(data, fs, names, events), gt


def noise_level_for_snr(spec: SyntheticSpec, source: PlantedSource, snr_db: float) -> float:
    """Noise level giving ``snr_db`` between the source's power and the noise
    power inside the source band, both summed over channels.

    Uses the analytic noise spectrum: 1/f above 1 Hz (flat below) and white.
    """
    lo, hi = source.band.low, source.band.high
    nyq = spec.fs / 2.0

    def pink_int(a, b):
        a, b = max(a, 0.0), min(b, nyq)
        below = max(0.0, min(b, 1.0) - a)
        above = np.log(max(b, 1.0) / max(a, 1.0)) if b > 1.0 else 0.0
        return below + above

    frac_pink = pink_int(lo, hi) / pink_int(0.0, nyq)
    frac_white = (hi - lo) / nyq
    wf = spec.white_fraction
    per_unit = spec.n_channels * ((1 - wf) * frac_pink + wf * frac_white)
    return float(source.base_amplitude / np.sqrt(per_unit * 10 ** (snr_db / 10)))


def oracle_component_check(ground_truth: GroundTruth, pattern: np.ndarray, f0: float | None = None) -> dict:
    """Smallest sign-invariant angle between ``pattern`` and any planted pattern."""
    pattern = np.asarray(getattr(pattern, "a", pattern), dtype=float)
    if pattern.size != ground_truth.mixing.shape[0]:
        raise ValueError("channel count mismatch")
    angles = [pattern_angle(pattern, s.pattern) for s in ground_truth.sources]
    best = int(np.argmin(angles))
    out = {"source": best, "pattern_angle": float(angles[best])}
    if f0 is not None:
        out["band_error"] = float(abs(f0 - ground_truth.sources[best].band.f0))
    return out


def write_ground_truth(gt: GroundTruth, path: str | Path) -> Path:
    p = Path(path)
    p.write_text(json.dumps(gt.to_json()))
    return p


def read_ground_truth(path: str | Path) -> GroundTruth:
    return GroundTruth.from_json(json.loads(Path(path).read_text()))


def write_synthetic(recording: Recording, gt: GroundTruth, stem: str | Path) -> dict[str, Path]:
    hdr, dat = write_recording(recording, stem)
    base = str(hdr)[: -len(".oschdr.json")]
    gt_path = write_ground_truth(gt, base + ".gt.json")
    z_path = Path(base + ".z.csv")
    z_path.write_text("trial_index,z\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(gt.z.tolist())))
    return {"header": hdr, "data": dat, "ground_truth": gt_path, "target": z_path}


# --- spec (de)serialization ---------------------------------------------------


def source_from_dict(d: Mapping, n_channels: int, rng: np.random.Generator) -> PlantedSource:
    pattern = d.get("pattern")
    if pattern is None:
        pattern = smooth_pattern(n_channels, rng)
    profile = {k: [tuple(map(float, kv)) for kv in v] for k, v in d.get("envelope_profile", {}).items()}
    return PlantedSource(
        Band(float(d["f0"]), float(d["df"])), np.asarray(pattern, dtype=float), profile,
        float(d.get("comodulation_strength", 0.0)), float(d.get("base_amplitude", 1.0)),
        bool(d.get("is_artifact", False)), str(d.get("name", "")),
    )


def smooth_pattern(n_channels: int, rng: np.random.Generator) -> np.ndarray:
    """Random pattern with energy spread over many channels (dipole-like blob)."""
    center = rng.integers(n_channels)
    idx = np.arange(n_channels)
    dist = np.minimum(np.abs(idx - center), n_channels - np.abs(idx - center))
    width = max(2.0, n_channels / 5)
    p = np.exp(-(dist / width) ** 2) + 0.3 * rng.standard_normal(n_channels)
    return p / np.linalg.norm(p)


def spec_from_dict(d: Mapping, seed: int | None = None) -> SyntheticSpec:
    """Build a spec from a JSON/TOML mapping; missing patterns are drawn from the seed."""
    seed = int(d.get("seed", 0) if seed is None else seed)
    n_c = int(d["n_channels"])
    if int(d["n_trials"]) < 1:
        raise ValueError("n_trials must be at least 1")
    prng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    sources = [source_from_dict(s, n_c, prng) for s in d.get("sources", [])]
    sch = dict(d.get("schedule", {}))
    for key in ("ready_to_go", "iti"):
        if key in sch:
            sch[key] = tuple(sch[key])
    return SyntheticSpec(
        n_channels=n_c, fs=float(d["fs"]), n_trials=int(d["n_trials"]), sources=sources,
        noise_level=float(d.get("noise_level", 1.0)), seed=seed,
        schedule=EventSchedule(**sch), power_spread=float(d.get("power_spread", 0.6)),
        white_fraction=float(d.get("white_fraction", 0.2)),
        channel_names=d.get("channel_names"),
        power_event=str(d.get("power_event", "go-cue")),
        power_window=tuple(d.get("power_window", (-1.0, 0.0))),
    )


def demo_spec_dict() -> dict:
    """Three comodulating sources at 10, 22 and 35 Hz with distinct event dynamics."""
    return {
        "n_channels": 32,
        "fs": 200.0,
        "n_trials": 200,
        "noise_level": 0.6,
        "power_spread": 0.6,
        "seed": 0,
        "sources": [
            {"name": "alpha-erd", "f0": 10.0, "df": 3.0, "comodulation_strength": 0.9,
             "envelope_profile": {
                 "go-cue": [[-0.3, 1.0], [0.0, 1.0], [0.2, 0.5], [0.9, 0.5], [1.3, 1.0], [2.0, 1.0]],
                 "hit4": [[-0.3, 1.0], [0.3, 1.0], [0.7, 1.6], [1.4, 1.6], [2.0, 1.0]]}},
            {"name": "beta-ers", "f0": 22.0, "df": 4.0, "comodulation_strength": 0.8,
             "envelope_profile": {
                 "get-ready": [[-0.3, 1.0], [0.1, 1.0], [0.4, 0.6], [1.2, 0.6], [1.6, 1.0], [2.0, 1.0]],
                 "go-cue": [[-0.3, 1.0], [0.0, 1.0], [0.3, 1.8], [1.0, 1.8], [1.4, 1.0], [2.0, 1.0]]}},
            {"name": "gamma-erd", "f0": 35.0, "df": 5.0, "comodulation_strength": 0.8,
             "envelope_profile": {
                 "go-cue": [[-0.3, 1.0], [0.2, 1.0], [0.5, 0.55], [1.5, 0.55], [1.9, 1.0], [2.0, 1.0]],
                 "hit3": [[-0.3, 1.0], [0.0, 1.0], [0.3, 1.7], [0.9, 1.7], [1.3, 1.0], [2.0, 1.0]]}},
        ],
    }


def spec_to_dict(spec: SyntheticSpec) -> dict:
    d = {
        "n_channels": spec.n_channels, "fs": spec.fs, "n_trials": spec.n_trials,
        "noise_level": spec.noise_level, "seed": spec.seed, "power_spread": spec.power_spread,
        "white_fraction": spec.white_fraction, "schedule": asdict(spec.schedule),
        "power_event": spec.power_event, "power_window": list(spec.power_window),
        "sources": [],
    }
    for s in spec.sources:
        d["sources"].append({
            "name": s.name, "f0": s.band.f0, "df": s.band.df, "pattern": s.pattern.tolist(),
            "envelope_profile": {k: [list(kv) for kv in v] for k, v in s.envelope_profile.items()},
            "comodulation_strength": s.comodulation_strength, "base_amplitude": s.base_amplitude,
            "is_artifact": s.is_artifact,
        })
    return d
