"""Event-locked log-envelopes and their condensation into clustering features."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import linalg

from .signal import Band, Recording, filter_array

PROFILE_WINDOW = (-0.3, 2.0)
DEFAULT_EVENTS = ("get-ready", "go-cue", "hit3", "hit4")
ALL_EVENTS = ("get-ready", "go-cue", "hit1", "hit2", "hit3", "hit4")
N_SUB = 18
D_RED = 10


@dataclass(frozen=True, eq=False)
class EnvelopeProfile:
    values: Mapping[str, np.ndarray]
    fs: float
    n_epochs_averaged: Mapping[str, int] = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return profile_times(self.fs)


@dataclass(frozen=True, eq=False)
class FeatureVector:
    condensed: np.ndarray
    mu: float
    sigma: float
    owner: object = None

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.condensed, [self.mu, self.sigma]])


def profile_times(fs: float, window: tuple[float, float] = PROFILE_WINDOW) -> np.ndarray:
    start = int(round(window[0] * fs))
    n = int(round((window[1] - window[0]) * fs)) + 1
    return (start + np.arange(n)) / fs


def analytic_envelope(s: np.ndarray, axis: int = -1) -> np.ndarray:
    """Magnitude of the FFT-based analytic signal along ``axis``."""
    s = np.asarray(s, dtype=float)
    n = s.shape[axis]
    if n < 64:
        raise ValueError("signal too short for a stable analytic envelope (< 64 samples)")
    spec = np.fft.fft(s, axis=axis)
    h = np.zeros(n)
    h[0] = 1.0
    if n % 2 == 0:
        h[n // 2] = 1.0
        h[1 : n // 2] = 2.0
    else:
        h[1 : (n + 1) // 2] = 2.0
    shape = [1] * s.ndim
    shape[axis] = n
    return np.abs(np.fft.ifft(spec * h.reshape(shape), axis=axis))


def _log(env: np.ndarray) -> np.ndarray:
    tiny = np.finfo(float).tiny
    return np.log(np.maximum(env, tiny))


def log_envelope_profiles(
    log_env: np.ndarray,
    recording: Recording,
    events: Sequence[str],
    window: tuple[float, float] = PROFILE_WINDOW,
) -> list[EnvelopeProfile]:
    """Average (n_components, n_samples) log-envelopes around each event."""
    log_env = np.atleast_2d(log_env)
    fs = recording.fs
    start = int(round(window[0] * fs))
    n = int(round((window[1] - window[0]) * fs)) + 1
    values: list[dict] = [dict() for _ in range(log_env.shape[0])]
    counts: dict[str, int] = {}
    for name in events:
        samples = recording.event_samples(name) + start
        samples = samples[(samples >= 0) & (samples + n <= recording.n_samples)]
        if samples.size == 0:
            warnings.warn(f"no usable epochs for event {name!r}; omitted", stacklevel=2)
            continue
        counts[name] = int(samples.size)
        acc = np.zeros((log_env.shape[0], n))
        for s in samples:
            acc += log_env[:, s : s + n]
        acc /= samples.size
        for j in range(log_env.shape[0]):
            values[j][name] = acc[j]
    return [EnvelopeProfile(v, fs, dict(counts)) for v in values]


def event_locked_log_envelope(
    w: np.ndarray,
    band: Band,
    recording: Recording,
    events: Sequence[str],
    filtered: np.ndarray | None = None,
) -> EnvelopeProfile:
    """Band-pass, project through ``w``, take the log of the analytic envelope
    and average it over every occurrence of each event.

    ``filtered`` may carry the recording already band-passed to ``band``.
    """
    if filtered is None:
        filtered = filter_array(recording.data, band, recording.fs)
    return component_profiles(np.asarray(w)[:, None], filtered, recording, events)[0]


def component_profiles(
    W: np.ndarray, filtered: np.ndarray, recording: Recording, events: Sequence[str]
) -> list[EnvelopeProfile]:
    """Profiles for several filters (columns of ``W``) sharing one band."""
    sources = np.asarray(W).T @ filtered
    return log_envelope_profiles(_log(analytic_envelope(sources)), recording, events)


def subsample_concat(profile: EnvelopeProfile, events: Sequence[str], n_sub: int = N_SUB) -> np.ndarray:
    """Bin means over ``n_sub`` equal, contiguous bins per event, concatenated."""
    parts = []
    for name in events:
        if name not in profile.values:
            raise KeyError(f"profile has no event {name!r}")
        v = np.asarray(profile.values[name], dtype=float)
        edges = np.linspace(0, v.size, n_sub + 1)
        csum = np.concatenate([[0.0], np.cumsum(v)])
        # bins hold whole samples; boundary samples go to the bin holding their left edge
        idx = np.round(edges).astype(int)
        parts.append((csum[idx[1:]] - csum[idx[:-1]]) / np.diff(idx))
    return np.concatenate(parts)


def standardize(v: np.ndarray) -> tuple[np.ndarray, float, float, bool]:
    """Zero-mean, unit sample-std copy of ``v`` plus ``(mu, sigma, degenerate)``."""
    v = np.asarray(v, dtype=float)
    if v.size < 2:
        raise ValueError("need at least 2 values to standardize")
    mu = float(v.mean())
    sigma = float(v.std(ddof=1))
    if sigma < 1e-12:
        return np.zeros_like(v), mu, sigma, True
    return (v - mu) / sigma, mu, sigma, False


def rbf_kernel(x: np.ndarray, y: np.ndarray, gamma: float) -> np.ndarray:
    sq = (x * x).sum(1)[:, None] + (y * y).sum(1)[None, :] - 2.0 * x @ y.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


def linear_kernel(x: np.ndarray, y: np.ndarray, gamma: float = 0.0) -> np.ndarray:
    return x @ y.T


@dataclass(frozen=True, eq=False)
class KernelPCA:
    train: np.ndarray
    alphas: np.ndarray  # (n_train, n_components), eigenvectors / sqrt(eigenvalue)
    eigenvalues: np.ndarray
    gamma: float
    kernel: Callable[..., np.ndarray]
    _col_mean: np.ndarray
    _total_mean: float

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        k = self.kernel(x, self.train, self.gamma)
        k = k - k.mean(axis=1, keepdims=True) - self._col_mean[None, :] + self._total_mean
        return k @ self.alphas


def kernel_pca_fit(
    phi: np.ndarray,
    d_red: int = D_RED,
    gamma: float | None = None,
    kernel: Callable[..., np.ndarray] = rbf_kernel,
) -> KernelPCA:
    """Kernel PCA with a centered kernel, keeping the top ``d_red`` axes.

    ``gamma`` defaults to ``1 / d_red``. Eigenvector signs are fixed so the
    largest-magnitude loading of each axis is positive (first index on ties).
    """
    phi = np.asarray(phi, dtype=float)
    n = phi.shape[0]
    if n < d_red + 1:
        raise ValueError(f"need more than {d_red} samples, got {n}")
    if gamma is None:
        gamma = 1.0 / d_red
    k = kernel(phi, phi, gamma)
    col_mean = k.mean(axis=0)
    total = float(col_mean.mean())
    kc = k - col_mean[None, :] - col_mean[:, None] + total
    kc = (kc + kc.T) / 2
    lam, v = linalg.eigh(kc, subset_by_index=[n - d_red, n - 1])
    lam, v = lam[::-1], v[:, ::-1]
    pivot = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[pivot, np.arange(d_red)])
    signs[signs == 0] = 1.0
    v = v * signs
    pos = lam > lam.max() * 1e-12 if lam.max() > 0 else np.zeros_like(lam, dtype=bool)
    alphas = np.zeros_like(v)
    alphas[:, pos] = v[:, pos] / np.sqrt(lam[pos])
    return KernelPCA(phi, alphas, lam, gamma, kernel, col_mean, total)


def assemble_features(
    profiles: Sequence[EnvelopeProfile],
    events: Sequence[str] = DEFAULT_EVENTS,
    d_red: int = D_RED,
    n_sub: int = N_SUB,
    stat_scale: float = 1.0,
) -> tuple[np.ndarray, KernelPCA]:
    """Feature matrix with rows ``[kpca_1..kpca_d_red, mu, sigma]``.

    ``stat_scale`` multiplies the two standardization statistics; 1.0 passes
    them through unchanged.
    """
    cat = np.array([subsample_concat(p, events, n_sub) for p in profiles])
    std = [standardize(v) for v in cat]
    phi = np.array([s[0] for s in std])
    stats = np.array([[s[1], s[2]] for s in std]) * stat_scale
    model = kernel_pca_fit(phi, d_red=d_red)
    return np.hstack([model.transform(phi), stats]), model
