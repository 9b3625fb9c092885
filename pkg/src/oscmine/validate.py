"""Cluster validation metrics and functional ERD/ERS summaries."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .spoc import UndefinedMetricError

BASELINE = (-0.3, 0.0)
RESPONSE = (0.0, 2.0)


@dataclass
class ClusterReport:
    cluster_id: int
    size: int
    mean_silhouette: float
    min_silhouette: float
    ic_mse: float
    icph: float
    f0_std: float
    delta_phi_max: dict[str, float] = field(default_factory=dict)
    representative: int = -1
    mean_z_auc: float = float("nan")
    mean_p_art: float = float("nan")
    run_id: int = 0


def silhouette_samples(x: np.ndarray, labels: np.ndarray, precomputed: bool = False) -> np.ndarray:
    """Silhouette of every sample; every distinct label (including -1) is a group.

    ``a`` is the mean distance to the other members of the own group, ``b``
    the smallest mean distance to any other group. Members of singleton
    groups score 0.
    """
    labels = np.asarray(labels)
    dist = np.asarray(x, dtype=float) if precomputed else cdist(x, x)
    groups, inv = np.unique(labels, return_inverse=True)
    if groups.size < 2:
        raise UndefinedMetricError("silhouette needs at least two groups")
    onehot = np.zeros((labels.size, groups.size))
    onehot[np.arange(labels.size), inv] = 1.0
    sums = dist @ onehot
    counts = onehot.sum(axis=0)
    rows = np.arange(labels.size)
    own = counts[inv]
    a = np.divide(sums[rows, inv], own - 1, out=np.zeros(labels.size), where=own > 1)
    mean_other = sums / counts[None, :]
    mean_other[rows, inv] = np.inf
    b = mean_other.min(axis=1)
    denom = np.maximum(a, b)
    s = np.divide(b - a, denom, out=np.zeros(labels.size), where=denom > 0)
    s[own == 1] = 0.0
    return s


def silhouette(i: int, labels: np.ndarray, E: np.ndarray) -> float:
    """Silhouette of sample ``i`` under ``labels``."""
    labels = np.asarray(labels)
    E = np.asarray(E, dtype=float)
    groups = np.unique(labels)
    if groups.size < 2:
        raise UndefinedMetricError("silhouette needs at least two groups")
    d = np.sqrt(((E - E[i]) ** 2).sum(axis=1))
    own = labels == labels[i]
    if own.sum() == 1:
        return 0.0
    a = d[own].sum() / (own.sum() - 1)
    b = min(d[labels == g].mean() for g in groups if g != labels[i])
    m = max(a, b)
    return 0.0 if m == 0 else float((b - a) / m)


def _values(p):
    return p if isinstance(p, Mapping) else p.values


def _stack(profiles: Sequence[Mapping[str, np.ndarray]], events: Sequence[str]) -> np.ndarray:
    try:
        return np.array([[np.asarray(p[m], dtype=float) for m in events] for p in profiles])
    except KeyError as exc:
        raise KeyError(f"member profile lacks event {exc}") from None


def ic_mse(profiles: Sequence[Mapping[str, np.ndarray]], events: Sequence[str]) -> float:
    """Mean squared deviation of member log-envelopes from the cluster mean,
    over all events and time samples."""
    x = _stack([_values(p) for p in profiles], events)
    return float(((x - x.mean(axis=0)) ** 2).mean())


def representative(E: np.ndarray) -> int:
    """Index (within ``E``) of the member with the smallest summed distance to
    the others; lowest index wins ties."""
    E = np.atleast_2d(np.asarray(E, dtype=float))
    if E.shape[0] == 0:
        raise ValueError("empty cluster")
    return int(np.argmin(cdist(E, E).sum(axis=1)))


def pattern_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Sign-invariant angle in degrees between two patterns."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("zero-norm pattern")
    c = min(1.0, abs(float(np.dot(a, b))) / (na * nb))
    return float(np.degrees(np.arccos(c)))


def icph(patterns: np.ndarray, rep: int) -> float:
    patterns = np.atleast_2d(patterns)
    return float(np.mean([pattern_angle(p, patterns[rep]) for p in patterns]))


def f0_std(f0: Sequence[float]) -> float:
    f0 = np.asarray(f0, dtype=float)
    return float(f0.std(ddof=1)) if f0.size > 1 else 0.0


def max_envelope_diff(
    profiles: Sequence[Mapping[str, np.ndarray]], event: str, fs: float,
    window_start: float = BASELINE[0],
) -> float:
    """Average over members of the signed largest post-event deviation from
    the pre-event baseline mean."""
    vals = []
    for p in profiles:
        v = np.asarray(_values(p)[event], dtype=float)
        t = window_start + np.arange(v.size) / fs
        base = v[(t >= BASELINE[0] - 1e-9) & (t <= BASELINE[1] + 1e-9)].mean()
        resp = v[(t >= RESPONSE[0] - 1e-9) & (t <= RESPONSE[1] + 1e-9)] - base
        vals.append(resp[np.argmax(np.abs(resp))])
    return float(np.mean(vals))


def cluster_report(
    cluster_id: int,
    member_idx: np.ndarray,
    E: np.ndarray,
    silhouettes: np.ndarray | None,
    profiles: Sequence[Mapping[str, np.ndarray]],
    patterns: np.ndarray,
    f0: np.ndarray,
    events: Sequence[str],
    fs: float,
    z_auc: np.ndarray | None = None,
    p_art: np.ndarray | None = None,
    run_id: int = 0,
) -> ClusterReport:
    """Full metric set for one cluster; arrays are indexed by ``member_idx``."""
    member_idx = np.asarray(member_idx)
    members_p = [profiles[i] for i in member_idx]
    rep_local = representative(E[member_idx])
    sil = silhouettes[member_idx] if silhouettes is not None else np.full(member_idx.size, np.nan)
    return ClusterReport(
        cluster_id=int(cluster_id),
        size=int(member_idx.size),
        mean_silhouette=float(sil.mean()),
        min_silhouette=float(sil.min()),
        ic_mse=ic_mse(members_p, events),
        icph=icph(patterns[member_idx], rep_local),
        f0_std=f0_std(f0[member_idx]),
        delta_phi_max={m: max_envelope_diff(members_p, m, fs) for m in events},
        representative=int(member_idx[rep_local]),
        mean_z_auc=float(np.mean(z_auc[member_idx])) if z_auc is not None else float("nan"),
        mean_p_art=float(np.mean(p_art[member_idx])) if p_art is not None else float("nan"),
        run_id=run_id,
    )


def functional_summary(reports: Sequence[ClusterReport], events: Sequence[str] | None = None):
    """Rows of ``(run_id, cluster_id, event, delta_phi_max)`` for every cluster
    and event, plus the reports themselves."""
    rows = []
    for r in reports:
        for m in events if events is not None else r.delta_phi_max:
            rows.append((r.run_id, r.cluster_id, m, r.delta_phi_max[m]))
    return rows, list(reports)


def scatter_points(reports: Sequence[ClusterReport], event_x: str, event_y: str):
    return [(r.run_id, r.cluster_id, r.delta_phi_max[event_x], r.delta_phi_max[event_y])
            for r in reports]
