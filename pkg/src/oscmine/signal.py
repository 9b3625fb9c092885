"""Recordings, narrow-band filtering, epoching and outlier rejection."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal as sps

HEADER_SUFFIX = ".oschdr.json"
DATA_SUFFIX = ".oscdat"

FILTER_ORDER = 5


class InvalidBandError(ValueError):
    pass


@dataclass(frozen=True)
class Band:
    f0: float
    df: float

    @property
    def low(self) -> float:
        return self.f0 - self.df / 2.0

    @property
    def high(self) -> float:
        return self.f0 + self.df / 2.0

    def check(self, fs: float) -> None:
        if self.df <= 0 or self.low <= 0 or self.high >= fs / 2.0:
            raise InvalidBandError(
                f"band [{self.low:g}, {self.high:g}] Hz is not inside (0, {fs / 2.0:g}) Hz"
            )


@dataclass(frozen=True, eq=False)
class Recording:
    """Continuous multichannel recording with named event markers.

    ``data`` has shape (n_channels, n_samples). ``events`` is a sequence of
    ``(name, sample_index)`` pairs in the order they occur.
    """

    data: np.ndarray
    fs: float
    channel_names: tuple[str, ...]
    events: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"data must be (n_channels, n_samples), got {data.shape}")
        if not self.fs > 0:
            raise ValueError("fs must be positive")
        names = tuple(str(c) for c in self.channel_names)
        if len(names) != data.shape[0]:
            raise ValueError("channel_names length does not match n_channels")
        if len(set(names)) != len(names):
            raise ValueError("duplicate channel names")
        events = tuple((str(n), int(s)) for n, s in self.events)
        for name, s in events:
            if not 0 <= s < data.shape[1]:
                raise ValueError(f"event {name!r} at sample {s} outside recording")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "channel_names", names)
        object.__setattr__(self, "events", events)

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    def event_samples(self, name: str) -> np.ndarray:
        return np.array([s for n, s in self.events if n == name], dtype=int)

    def event_names(self) -> list[str]:
        return list(dict.fromkeys(n for n, _ in self.events))

    def with_data(self, data: np.ndarray) -> "Recording":
        return Recording(data, self.fs, self.channel_names, self.events)

    def pick_channels(self, keep: np.ndarray) -> "Recording":
        keep = np.asarray(keep, dtype=bool)
        names = [c for c, k in zip(self.channel_names, keep) if k]
        return Recording(self.data[keep], self.fs, names, self.events)


@dataclass(frozen=True, eq=False)
class EpochSet:
    epochs: np.ndarray  # (n_epochs, n_channels, n_times)
    t0: float
    dt: float
    event_name: str
    fs: float
    event_samples: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    event_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    n_skipped: int = 0
    warning: str | None = None

    @property
    def n_epochs(self) -> int:
        return self.epochs.shape[0]


def design_bandpass(band: Band, fs: float) -> np.ndarray:
    """5th-order Butterworth band-pass as second-order sections.

    Applied with :func:`bandpass_filter` the filter runs forward and
    backward, so the net response is squared in magnitude and zero-phase.
    """
    band.check(fs)
    return sps.butter(FILTER_ORDER, [band.low, band.high], btype="bandpass", fs=fs, output="sos")


def filter_array(x: np.ndarray, band: Band, fs: float) -> np.ndarray:
    sos = design_bandpass(band, fs)
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    # sosfiltfilt's default padding needs a few filter lengths of signal
    padlen = min(3 * (2 * len(sos) + 1), n - 1)
    return sps.sosfiltfilt(sos, x, axis=-1, padlen=max(padlen, 0))


def bandpass_filter(recording: Recording, band: Band) -> Recording:
    return recording.with_data(filter_array(recording.data, band, recording.fs))


def segment(recording: Recording, event_name: str, t0: float, dt: float) -> EpochSet:
    """Cut ``[t0, t0 + dt)`` seconds around every ``event_name`` marker.

    Windows that do not fit inside the recording are skipped and counted in
    ``n_skipped``; they are never padded.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    fs = recording.fs
    n_times = int(round(dt * fs))
    offset = int(round(t0 * fs))
    samples = recording.event_samples(event_name)
    n_c = recording.n_channels
    if samples.size == 0:
        return EpochSet(
            np.zeros((0, n_c, n_times)), t0, dt, event_name, fs,
            warning=f"no events named {event_name!r}",
        )
    starts = samples + offset
    ok = (starts >= 0) & (starts + n_times <= recording.n_samples)
    starts = starts[ok]
    idx = starts[:, None] + np.arange(n_times)[None, :]
    epochs = recording.data[:, idx].transpose(1, 0, 2)
    return EpochSet(
        np.ascontiguousarray(epochs), t0, dt, event_name, fs,
        event_samples=samples[ok], event_index=np.flatnonzero(ok), n_skipped=int((~ok).sum()),
    )


def band_grid(n_bands: int, f0_range: Sequence[float], df_range: Sequence[float]) -> list[Band]:
    """Geometric center frequencies with bandwidths linear in the band index."""
    if n_bands < 2:
        raise ValueError("n_bands must be at least 2")
    f_lo, f_hi = map(float, f0_range)
    d_lo, d_hi = map(float, df_range)
    if min(f_lo, f_hi, d_lo, d_hi) <= 0 or f_lo >= f_hi or d_lo > d_hi:
        raise ValueError("ranges must be positive and ordered")
    i = np.arange(n_bands) / (n_bands - 1)
    f0 = f_lo * (f_hi / f_lo) ** i
    f0[0], f0[-1] = f_lo, f_hi
    df = d_lo + (d_hi - d_lo) * i
    return [Band(float(f), float(d)) for f, d in zip(f0, df)]


def _percentile_outliers(values: np.ndarray) -> np.ndarray:
    p10, p90 = np.percentile(values, [10, 90])
    spread = p90 - p10
    return (values > p90 + 2 * spread) | (values < p10 - 2 * spread)


def reject_outlier_epochs(epochs: EpochSet) -> np.ndarray:
    """Keep-mask from a variance and a min-max criterion.

    Each epoch is summarized by its largest channel variance and its largest
    channel peak-to-peak range; an epoch is dropped when either statistic
    exceeds ``P90 + 2 * (P90 - P10)`` of the pooled distribution.
    """
    x = epochs.epochs
    if x.shape[0] < 5:
        raise ValueError("need at least 5 epochs for outlier statistics")
    var = x.var(axis=2).max(axis=1)
    rng = np.ptp(x, axis=2).max(axis=1)
    keep = np.ones(x.shape[0], dtype=bool)
    for stat in (var, rng):
        p10, p90 = np.percentile(stat, [10, 90])
        keep &= ~(stat > p90 + 2 * (p90 - p10))
    return keep


def reject_noisy_channels(
    recording: Recording,
    epochs: EpochSet,
    share_of_outliers: float = 0.10,
    min_epoch_fraction: float = 0.05,
) -> np.ndarray:
    """Channel keep-mask from pooled epoch-by-channel variances.

    A (epoch, channel) variance is an outlier when it lies outside the
    [10, 90] percentile range by more than twice that range. Channels that
    hold more than ``share_of_outliers`` of all outliers and are outlying in
    at least ``min_epoch_fraction`` of epochs are rejected.
    """
    x = epochs.epochs
    if x.shape[0] < 5:
        raise ValueError("need at least 5 epochs for outlier statistics")
    if recording.n_channels < 2 or x.shape[1] != recording.n_channels:
        raise ValueError("need at least 2 channels matching the recording")
    var = x.var(axis=2)
    out = _percentile_outliers(var.ravel()).reshape(var.shape)
    per_channel = out.sum(axis=0)
    total = per_channel.sum()
    if total == 0:
        return np.ones(recording.n_channels, dtype=bool)
    bad = (per_channel > share_of_outliers * total) & (per_channel >= min_epoch_fraction * x.shape[0])
    return ~bad


# --- file format ---------------------------------------------------------


def _stem(path: str | Path) -> Path:
    p = Path(path)
    name = p.name
    for suffix in (HEADER_SUFFIX, DATA_SUFFIX):
        if name.endswith(suffix):
            return p.with_name(name[: -len(suffix)])
    return p


def write_recording(recording: Recording, path: str | Path) -> tuple[Path, Path]:
    """Write ``<stem>.oschdr.json`` and ``<stem>.oscdat`` (float32 LE, channel-major)."""
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    hdr = stem.with_name(stem.name + HEADER_SUFFIX)
    dat = stem.with_name(stem.name + DATA_SUFFIX)
    header = {
        "fs": recording.fs,
        "n_channels": recording.n_channels,
        "n_samples": recording.n_samples,
        "channel_names": list(recording.channel_names),
        "events": [{"name": n, "sample": s} for n, s in recording.events],
    }
    hdr.write_text(json.dumps(header, indent=1))
    recording.data.astype("<f4").tofile(dat)
    return hdr, dat


def read_recording(path: str | Path) -> Recording:
    stem = _stem(path)
    hdr = stem.with_name(stem.name + HEADER_SUFFIX)
    dat = stem.with_name(stem.name + DATA_SUFFIX)
    header = json.loads(hdr.read_text())
    n_c, n_s = int(header["n_channels"]), int(header["n_samples"])
    raw = np.fromfile(dat, dtype="<f4")
    if raw.size != n_c * n_s:
        raise ValueError(f"{dat}: expected {n_c * n_s} samples, found {raw.size}")
    events = [(e["name"], int(e["sample"])) for e in header["events"]]
    return Recording(raw.reshape(n_c, n_s).astype(float), float(header["fs"]),
                     header["channel_names"], events)


def warn_if_empty(epochs: EpochSet) -> None:
    if epochs.warning:
        warnings.warn(epochs.warning, stacklevel=2)
