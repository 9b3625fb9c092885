"""Hyperparameter sweep: harvest one component per configuration and denoise."""

from __future__ import annotations

import csv
import logging
import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy import stats

from .envelope import analytic_envelope
from .signal import Band, InvalidBandError, Recording, band_grid, filter_array, segment
from .spoc import (
    Component,
    DegenerateEpochError,
    IllConditionedError,
    UndefinedMetricError,
    normalized_covariances,
    spoc_train,
    z_auc,
)

log = logging.getLogger(__name__)

ZAUC_MIN = 0.6
P_ART_MAX = 1e-5
MAX_RANK = 8


@dataclass(frozen=True, order=True)
class ConfigPoint:
    t0: float
    f0: float
    df: float
    rank_k: int
    alpha: float
    fold_q: int

    @property
    def band(self) -> Band:
        return Band(self.f0, self.df)


@dataclass(frozen=True)
class SweepSpace:
    t0_values: tuple[float, ...]
    bands: tuple[Band, ...]
    ranks: tuple[int, ...] = tuple(range(1, MAX_RANK + 1))
    alphas: tuple[float, ...] = ()
    n_folds: int = 5
    dt: float = 1.0
    training_event: str = "go-cue"

    def __post_init__(self):
        for name in ("t0_values", "bands", "ranks", "alphas"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    @property
    def size(self) -> int:
        return (len(self.t0_values) * len(self.bands) * len(self.alphas)
                * self.n_folds * len(self.ranks))


@dataclass(frozen=True)
class SkipRecord:
    t0: float
    f0: float
    df: float
    alpha: float
    fold_q: int
    reason: str


@dataclass
class HarvestResult:
    components: list[Component] = field(default_factory=list)
    skipped: list[SkipRecord] = field(default_factory=list)
    n_channels: int = 0

    def __len__(self) -> int:
        return len(self.components)

    def __iter__(self):
        return iter(self.components)

    def __getitem__(self, i):
        return self.components[i]


def default_space() -> SweepSpace:
    return SweepSpace(
        t0_values=(-1.0, -0.75, -0.5),
        bands=tuple(band_grid(45, (1.0, 95.0), (2.0, 10.0))),
        ranks=tuple(range(1, 9)),
        alphas=tuple(np.logspace(-8, -3, 15)),
        n_folds=5,
        dt=1.0,
    )


def enumerate_configs(space: SweepSpace) -> list[ConfigPoint]:
    """All configurations in (t0, band, alpha, fold, rank) lexicographic order."""
    if not (space.t0_values and space.bands and space.alphas and space.ranks) or space.n_folds < 1:
        raise ValueError("every sweep dimension must be nonempty")
    return [
        ConfigPoint(float(t0), b.f0, b.df, int(k), float(a), q)
        for t0 in space.t0_values
        for b in space.bands
        for a in space.alphas
        for q in range(1, space.n_folds + 1)
        for k in space.ranks
    ]


def chronological_folds(n_epochs: int, n_folds: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Contiguous test blocks in time order; training is the complement."""
    if n_folds < 1 or n_epochs < 2 * n_folds:
        raise ValueError(f"{n_epochs} epochs are too few for {n_folds} folds")
    idx = np.arange(n_epochs)
    return [(np.setdiff1d(idx, te), te) for te in np.array_split(idx, n_folds)]


# --- artifact scoring --------------------------------------------------------


class ArtifactScorer(Protocol):
    def __call__(self, pattern: np.ndarray, band: Band, stats: dict,
                 channel_names: Sequence[str] = ()) -> float: ...


def _sigmoid(x: float) -> float:
    return float(0.5 * (1.0 + np.tanh(0.5 * x)))


@dataclass(frozen=True)
class HeuristicArtifactScorer:
    """Rule-of-thumb stand-in for a trained neural-vs-artifact classifier.

    Three indicators, each mapped through a steep logistic and combined as
    independent probabilities:

    * focal: share of pattern energy on the strongest ``focal_channels``
      channels above ``focal_threshold`` (bad electrode, single-channel noise)
    * muscle: center frequency at or above ``muscle_f0`` with envelope excess
      kurtosis above ``muscle_kurtosis`` (bursty broadband activity)
    * ocular: center frequency below ``ocular_f0`` with more than
      ``ocular_threshold`` of pattern energy on frontal-edge channels

    Distributed patterns score well below 1e-5 on 32 channels.
    """

    focal_channels: int = 2
    focal_threshold: float = 0.6
    muscle_f0: float = 45.0
    muscle_kurtosis: float = 3.0
    ocular_f0: float = 5.0
    ocular_threshold: float = 0.5
    steepness: float = 60.0
    kurtosis_steepness: float = 8.0
    frontal_prefixes: tuple[str, ...] = ("Fp", "AF")
    frontal_names: tuple[str, ...] = ("F7", "F8", "F9", "F10")

    def __call__(self, pattern, band, stats, channel_names=()):
        energy = np.asarray(pattern, dtype=float) ** 2
        total = energy.sum()
        if total <= 0:
            return 1.0
        energy = energy / total
        top = np.sort(energy)[::-1][: self.focal_channels].sum()
        p_focal = _sigmoid(self.steepness * (top - self.focal_threshold))
        p_muscle = 0.0
        kurt = stats.get("envelope_kurtosis", 0.0)
        if band.f0 >= self.muscle_f0:
            p_muscle = _sigmoid(self.kurtosis_steepness * (kurt - self.muscle_kurtosis))
        p_ocular = 0.0
        if band.f0 < self.ocular_f0 and channel_names:
            frontal = np.array([c.startswith(self.frontal_prefixes) or c in self.frontal_names
                                for c in channel_names])
            if frontal.any():
                p_ocular = _sigmoid(self.steepness * (energy[frontal].sum() - self.ocular_threshold))
        return float(1.0 - (1.0 - p_focal) * (1.0 - p_muscle) * (1.0 - p_ocular))


def envelope_kurtosis(w: np.ndarray, epochs: np.ndarray) -> float:
    """Excess kurtosis of the pooled analytic envelope of ``w``-projected epochs."""
    s = np.einsum("c,ect->et", w, epochs)
    if s.shape[-1] < 64:
        env = np.abs(s)
    else:
        env = analytic_envelope(s, axis=-1)
    return float(stats.kurtosis(env, axis=None))


# --- harvest -------------------------------------------------------------------


def _band_job(recording: Recording, z: np.ndarray, space: SweepSpace, band: Band,
              scorer: ArtifactScorer, n_ranks: int, trial_keep: np.ndarray | None):
    """All (t0, alpha, fold) trainings for one band; keyed for reassembly."""
    out: dict[tuple, list[Component] | SkipRecord] = {}

    def skip_all(t0, reason):
        for a in space.alphas:
            for q in range(1, space.n_folds + 1):
                out[(t0, a, q)] = SkipRecord(t0, band.f0, band.df, a, q, reason)

    try:
        filtered = recording.with_data(filter_array(recording.data, band, recording.fs))
    except InvalidBandError as exc:
        for t0 in space.t0_values:
            skip_all(t0, f"invalid band: {exc}")
        return out
    for t0 in space.t0_values:
        ep = segment(filtered, space.training_event, t0, space.dt)
        idx = ep.event_index
        epochs = ep.epochs
        if trial_keep is not None:
            sel = trial_keep[idx]
            idx, epochs = idx[sel], epochs[sel]
        zt = z[idx]
        try:
            folds = chronological_folds(len(idx), space.n_folds)
            covs = normalized_covariances(epochs)
        except (ValueError, DegenerateEpochError) as exc:
            skip_all(t0, f"segmentation: {exc}")
            continue
        for a in space.alphas:
            for q, (tr, te) in enumerate(folds, start=1):
                try:
                    sol = spoc_train(covs.subset(tr), zt[tr], a)
                    if sol.degenerate_target:
                        raise UndefinedMetricError("training target is constant")
                    test = covs.per_epoch[te]
                    comps = []
                    for k in range(min(n_ranks, len(sol))):
                        w = sol.filters[:, k]
                        z_est = np.einsum("i,eij,j->e", w, test, w)
                        score = z_auc(z_est, zt[te])
                        pattern = sol.average @ w
                        kurt = envelope_kurtosis(w, epochs[tr])
                        p_art = scorer(pattern, band, {"envelope_kurtosis": kurt},
                                       recording.channel_names)
                        cfg = ConfigPoint(float(t0), band.f0, band.df, k + 1, float(a), q)
                        comps.append(Component(w, pattern, float(sol.eigenvalues[k]), k + 1,
                                               cfg, float(score), float(p_art)))
                    out[(t0, a, q)] = comps
                except (IllConditionedError, UndefinedMetricError, np.linalg.LinAlgError) as exc:
                    out[(t0, a, q)] = SkipRecord(t0, band.f0, band.df, a, q, str(exc))
    return out


_SHARED: dict = {}


def _worker_job(i):
    s = _SHARED
    return _band_job(s["recording"], s["z"], s["space"], s["space"].bands[i], s["scorer"],
                     s["n_ranks"], s["trial_keep"])


def harvest(
    recording: Recording,
    z: np.ndarray,
    space: SweepSpace,
    artifact_scorer: ArtifactScorer | None = None,
    workers: int = 1,
    trial_keep: np.ndarray | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> HarvestResult:
    """Train SPoC over the whole sweep space.

    ``z`` holds one value per occurrence of the training event.
    ``trial_keep`` optionally masks trials (e.g. outlier epochs). Failures of
    single configurations are collected in ``skipped``. The component order
    equals :func:`enumerate_configs` restricted to successful configurations.
    """
    scorer = artifact_scorer or HeuristicArtifactScorer()
    z = np.asarray(z, dtype=float)
    n_events = recording.event_samples(space.training_event).size
    if z.size != n_events:
        raise ValueError(f"z has {z.size} values but recording has {n_events} "
                         f"{space.training_event!r} events")
    result = HarvestResult(n_channels=recording.n_channels)
    if not (space.t0_values and space.bands and space.alphas and space.ranks):
        return result
    n_ranks = min(max(space.ranks), recording.n_channels)
    n_bands = len(space.bands)
    if workers > 1 and n_bands > 1:
        _SHARED.update(recording=recording, z=z, space=space, scorer=scorer,
                       n_ranks=n_ranks, trial_keep=trial_keep)
        try:
            ctx = mp.get_context("fork")
            with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as ex:
                per_band = []
                for i, res in enumerate(ex.map(_worker_job, range(n_bands))):
                    per_band.append(res)
                    if progress:
                        progress(i + 1, n_bands)
        finally:
            _SHARED.clear()
    else:
        per_band = []
        for i, band in enumerate(space.bands):
            per_band.append(_band_job(recording, z, space, band, scorer, n_ranks, trial_keep))
            if progress:
                progress(i + 1, n_bands)

    rank_set = set(space.ranks)
    for t0 in space.t0_values:
        for band_out in per_band:
            for a in space.alphas:
                for q in range(1, space.n_folds + 1):
                    entry = band_out[(t0, a, q)]
                    if isinstance(entry, SkipRecord):
                        result.skipped.append(entry)
                    else:
                        result.components.extend(c for c in entry if c.rank_k in rank_set)
    return result


def select_components(components: Sequence[Component], zauc_min: float = ZAUC_MIN,
                      p_art_max: float = P_ART_MAX) -> tuple[list[Component], float]:
    """Keep components decoding at ``z_auc >= zauc_min`` with ``p_art <= p_art_max``.

    Returns the kept components in input order and the kept fraction.
    """
    if not (0 <= zauc_min <= 1 and 0 <= p_art_max <= 1):
        raise ValueError("thresholds must lie in [0, 1]")
    kept = [c for c in components if c.z_auc >= zauc_min and c.p_art <= p_art_max]
    frac = len(kept) / len(components) if len(components) else 0.0
    return kept, frac


# --- persistence -------------------------------------------------------------

HARVEST_FIELDS = ("component_id", "t0", "f0", "df", "rank_k", "alpha", "fold_q",
                  "eigenvalue", "z_auc", "p_art")


def write_harvest(result: HarvestResult | Sequence[Component], directory: str | Path) -> None:
    """``components.csv``, ``vectors.bin`` (float64 LE rows ``[w, a]``) and ``skipped.csv``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    comps = list(result)
    with open(d / "components.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(HARVEST_FIELDS)
        for i, c in enumerate(comps):
            cf = c.config
            wr.writerow([i, repr(cf.t0), repr(cf.f0), repr(cf.df), cf.rank_k, repr(cf.alpha),
                         cf.fold_q, repr(c.eigenvalue), repr(c.z_auc), repr(c.p_art)])
    if comps:
        vec = np.array([np.concatenate([c.w, c.a]) for c in comps], dtype="<f8")
    else:
        vec = np.zeros((0,), dtype="<f8")
    vec.tofile(d / "vectors.bin")
    skipped = getattr(result, "skipped", [])
    with open(d / "skipped.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t0", "f0", "df", "alpha", "fold_q", "reason"])
        for s in skipped:
            wr.writerow([repr(s.t0), repr(s.f0), repr(s.df), repr(s.alpha), s.fold_q, s.reason])


def read_harvest(directory: str | Path, n_channels: int) -> HarvestResult:
    d = Path(directory)
    with open(d / "components.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    vec = np.fromfile(d / "vectors.bin", dtype="<f8").reshape(len(rows), 2 * n_channels) \
        if rows else np.zeros((0, 2 * n_channels))
    comps = []
    for r, v in zip(rows, vec):
        cfg = ConfigPoint(float(r["t0"]), float(r["f0"]), float(r["df"]), int(r["rank_k"]),
                          float(r["alpha"]), int(r["fold_q"]))
        comps.append(Component(v[:n_channels].copy(), v[n_channels:].copy(), float(r["eigenvalue"]),
                               cfg.rank_k, cfg, float(r["z_auc"]), float(r["p_art"])))
    skipped = []
    sk = d / "skipped.csv"
    if sk.exists():
        with open(sk, newline="") as fh:
            for r in csv.DictReader(fh):
                skipped.append(SkipRecord(float(r["t0"]), float(r["f0"]), float(r["df"]),
                                          float(r["alpha"]), int(r["fold_q"]), r["reason"]))
    return HarvestResult(comps, skipped, n_channels)
