"""DBSCAN on condensed features with epsilon chosen to maximize homogeneous clusters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist

from .validate import silhouette_samples

D_FEATURES = 12
M_PTS = 2 * D_FEATURES
N_EPS = 60
S_HOM = 0.2
# variance jump that marks the k-distance knee; smaller ratios fire inside cluster tails
KNEE_RATIO = 100.0
# where the search range ends: at the first steep window or where the final tail begins
KNEE_MODE = "last"


@dataclass(frozen=True, eq=False)
class ClusteringResult:
    labels: np.ndarray
    epsilon: float
    m_pts: int
    core_flags: np.ndarray
    n_hom: int = 0
    silhouettes: np.ndarray | None = None
    sample_ids: np.ndarray | None = None
    diagnostic: str | None = None

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    @property
    def outlier_fraction(self) -> float:
        return float((self.labels < 0).mean()) if self.labels.size else 0.0

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.labels == k)


@dataclass(frozen=True)
class EpsilonRange:
    eps_min: float
    eps_max: float
    fallback: bool = False
    widened: bool = False
    k_distances: np.ndarray = field(default=None, repr=False, compare=False)


def pairwise_distances(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return cdist(x, x)


def dbscan_from_distances(dist: np.ndarray, epsilon: float, m_pts: int) -> ClusteringResult:
    """DBSCAN on a precomputed distance matrix.

    A point is core when at least ``m_pts`` *other* points lie within
    ``epsilon`` (inclusive). Cluster ids follow the index of the first core
    point of each cluster; a border point reachable from several clusters
    joins the lowest id, which is what a sequential scan in index order
    produces.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if m_pts < 1:
        raise ValueError("m_pts must be at least 1")
    n = dist.shape[0]
    if n == 0:
        return ClusteringResult(np.zeros(0, int), epsilon, m_pts, np.zeros(0, bool))
    adj = dist <= epsilon
    core = adj.sum(axis=1) - 1 >= m_pts
    labels = np.full(n, -1, dtype=int)
    core_idx = np.flatnonzero(core)
    if core_idx.size:
        sub = csr_matrix(adj[np.ix_(core_idx, core_idx)])
        _, comp = connected_components(sub, directed=False)
        # renumber components by first appearance in index order
        _, first = np.unique(comp, return_index=True)
        order = np.argsort(first, kind="stable")
        remap = np.empty_like(order)
        remap[order] = np.arange(order.size)
        labels[core_idx] = remap[comp]
        border = np.flatnonzero(~core)
        if border.size:
            reach = adj[np.ix_(border, core_idx)]
            cand = np.where(reach, labels[core_idx][None, :], np.iinfo(int).max)
            best = cand.min(axis=1)
            hit = reach.any(axis=1)
            labels[border[hit]] = best[hit]
    return ClusteringResult(labels, float(epsilon), int(m_pts), core)


def dbscan(E: np.ndarray, epsilon: float, m_pts: int = M_PTS) -> ClusteringResult:
    E = np.asarray(E, dtype=float)
    if E.shape[0] == 0:
        return ClusteringResult(np.zeros(0, int), float(epsilon), int(m_pts), np.zeros(0, bool))
    return dbscan_from_distances(pairwise_distances(E), epsilon, m_pts)


def kth_nn_distances(E: np.ndarray, k: int, dist: np.ndarray | None = None) -> np.ndarray:
    """Ascending k-th nearest neighbor distances (self excluded)."""
    E = np.asarray(E, dtype=float)
    n = E.shape[0]
    if n <= k:
        raise ValueError(f"need more than k={k} samples, got {n}")
    out = np.empty(n)
    block = max(1, 2_000_000 // max(n, 1))
    for start in range(0, n, block):
        d = dist[start : start + block] if dist is not None else cdist(E[start : start + block], E)
        # position 0 holds the zero self-distance (or an equal duplicate)
        out[start : start + block] = np.partition(d, k, axis=1)[:, k]
    return np.sort(out)


def knee_index(curve: np.ndarray, width: int | None = None, ratio: float = KNEE_RATIO,
               mode: str = KNEE_MODE) -> int | None:
    """Index of a substantial increase of an ascending curve.

    A window is *steep* when its variance exceeds ``ratio`` times the median
    variance of all earlier windows. ``mode="first"`` returns the last index
    of the first steep window. ``mode="last"`` returns the last index of the
    first window of the final run of steep windows, i.e. where the closing
    tail begins. None when no window is steep.
    """
    n = curve.size
    if width is None:
        width = max(10, n // 50)
    if n < width + 1:
        return None
    if mode not in ("first", "last"):
        raise ValueError(f"unknown knee mode {mode!r}")
    win = np.lib.stride_tricks.sliding_window_view(curve, width)
    var = win.var(axis=1, ddof=1)
    steep = np.zeros(var.size, dtype=bool)
    for i in range(1, var.size):
        steep[i] = var[i] > ratio * np.median(var[:i]) and var[i] > 0
        if steep[i] and mode == "first":
            return i + width - 1
    if mode == "first" or not steep.any():
        return None
    j = int(np.flatnonzero(steep)[-1])
    while steep[j - 1]:
        j -= 1
    return j + width - 1


def epsilon_range(E: np.ndarray, k: int = D_FEATURES, dist: np.ndarray | None = None,
                  knee_ratio: float = KNEE_RATIO, knee_mode: str = KNEE_MODE) -> EpsilonRange:
    kd = kth_nn_distances(E, k, dist)
    span = kd[-1] - kd[0]
    if span <= 1e-9 * max(kd[-1], 1e-300):
        base = float(np.median(kd)) or 1.0
        return EpsilonRange(0.5 * base, 1.5 * base, fallback=True, k_distances=kd)
    eps_min = float(np.percentile(kd, 2))
    knee = knee_index(kd, ratio=knee_ratio, mode=knee_mode)
    eps_max = float(kd[knee]) if knee is not None else float(np.percentile(kd, 90))
    widened = False
    if not eps_max > eps_min:
        above = kd[kd > eps_min]
        eps_max = float(above[0]) if above.size else eps_min * 1.5
        widened = True
    if eps_min <= 0:
        eps_min = float(kd[kd > 0][0]) if np.any(kd > 0) else eps_max / 2
        widened = True
    return EpsilonRange(eps_min, eps_max, fallback=knee is None, widened=widened, k_distances=kd)


def n_hom(result: ClusteringResult, E: np.ndarray | None = None, s_hom: float = S_HOM,
          dist: np.ndarray | None = None) -> int:
    """Number of clusters whose smallest member silhouette reaches ``s_hom``.

    Outliers form one extra comparison group for the silhouette but never
    count as a cluster.
    """
    sil = result.silhouettes
    if sil is None:
        sil = cluster_silhouettes(result.labels, E, dist)
    if sil is None:
        return 0
    count = 0
    for k in range(result.n_clusters):
        members = result.labels == k
        if members.any() and sil[members].min() >= s_hom:
            count += 1
    return count


def cluster_silhouettes(labels: np.ndarray, E: np.ndarray | None = None,
                        dist: np.ndarray | None = None) -> np.ndarray | None:
    """Per-sample silhouettes with outliers as a comparison group, or None
    when fewer than two groups exist."""
    labels = np.asarray(labels)
    if labels.size == 0 or labels.max() < 0:
        return None
    groups = np.unique(labels)
    if groups.size < 2:
        return None
    if dist is None:
        dist = pairwise_distances(E)
    return silhouette_samples(dist, labels, precomputed=True)


def select_epsilon(
    E: np.ndarray,
    n_eps: int = N_EPS,
    m_pts: int | None = None,
    s_hom: float = S_HOM,
    k: int | None = None,
    knee_ratio: float = KNEE_RATIO,
    knee_mode: str = KNEE_MODE,
) -> tuple[float, ClusteringResult]:
    """Scan ``n_eps`` evenly spaced epsilons and keep the one with most
    homogeneous clusters.

    Ties go to the larger epsilon: at equal count the larger radius has the
    more completely grown clusters.
    """
    E = np.asarray(E, dtype=float)
    dim = E.shape[1]
    k = dim if k is None else k
    m_pts = 2 * dim if m_pts is None else m_pts
    if E.shape[0] < 100:
        raise ValueError("need at least 100 samples for epsilon selection")
    dist = pairwise_distances(E)
    rng = epsilon_range(E, k, dist, knee_ratio, knee_mode)
    best = None
    for eps in np.linspace(rng.eps_min, rng.eps_max, n_eps):
        res = dbscan_from_distances(dist, float(eps), m_pts)
        sil = cluster_silhouettes(res.labels, dist=dist)
        res = ClusteringResult(res.labels, res.epsilon, m_pts, res.core_flags, silhouettes=sil)
        nh = n_hom(res, s_hom=s_hom)
        if best is None or nh >= best[0]:
            best = (nh, res)
    nh, res = best
    diag = None
    if nh == 0:
        diag = (f"no homogeneous clusters for epsilon in [{rng.eps_min:.4g}, {rng.eps_max:.4g}]")
        res = ClusteringResult(np.full(E.shape[0], -1), res.epsilon, m_pts,
                               np.zeros(E.shape[0], bool), 0, None, diagnostic=diag)
        return res.epsilon, res
    res = ClusteringResult(res.labels, res.epsilon, m_pts, res.core_flags, nh, res.silhouettes)
    return res.epsilon, res


def subsample_indices(n_total: int, n_samples: int, n_reps: int, seed: int) -> list[np.ndarray]:
    """Order-preserving random subsets, one independent substream per repetition."""
    if n_total < n_samples:
        return [np.arange(n_total)]
    children = np.random.SeedSequence(seed).spawn(n_reps)
    return [np.sort(np.random.default_rng(c).choice(n_total, n_samples, replace=False))
            for c in children]


def clustering_runs(
    E: np.ndarray,
    n_samples: int = 2000,
    n_reps: int = 12,
    seed: int = 0,
    s_hom: float = S_HOM,
    workers: int = 1,
) -> list[ClusteringResult]:
    E = np.asarray(E, dtype=float)
    subsets = subsample_indices(E.shape[0], n_samples, n_reps, seed)
    jobs = [(E[idx], s_hom) for idx in subsets]
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            outs = list(ex.map(_run_one, jobs))
    else:
        outs = [_run_one(j) for j in jobs]
    return [
        ClusteringResult(r.labels, r.epsilon, r.m_pts, r.core_flags, r.n_hom, r.silhouettes,
                         sample_ids=idx, diagnostic=r.diagnostic)
        for r, idx in zip(outs, subsets)
    ]


def _run_one(job) -> ClusteringResult:
    sub, s_hom = job
    if sub.shape[0] < 100:
        return ClusteringResult(np.full(sub.shape[0], -1), float("nan"), M_PTS,
                                np.zeros(sub.shape[0], bool),
                                diagnostic="fewer than 100 samples; clustering skipped")
    return select_epsilon(sub, s_hom=s_hom)[1]
