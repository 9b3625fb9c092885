"""Regularized source power comodulation (trace-normalized, Tikhonov-shrunk SPoC)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy import linalg, stats

if TYPE_CHECKING:
    from .sweep import ConfigPoint

MAX_CONDITION = 1e12


class DegenerateEpochError(ValueError):
    pass


class IllConditionedError(np.linalg.LinAlgError):
    pass


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CovarianceSet:
    per_epoch: np.ndarray  # (n_epochs, n_channels, n_channels)
    average: np.ndarray

    @classmethod
    def from_matrices(cls, per_epoch: np.ndarray) -> "CovarianceSet":
        per_epoch = np.asarray(per_epoch, dtype=float)
        return cls(per_epoch, per_epoch.mean(axis=0))

    def subset(self, idx) -> "CovarianceSet":
        return CovarianceSet.from_matrices(self.per_epoch[idx])

    def __len__(self) -> int:
        return self.per_epoch.shape[0]


@dataclass(frozen=True, eq=False)
class Component:
    """One spatial filter harvested at a single configuration."""

    w: np.ndarray
    a: np.ndarray
    eigenvalue: float
    rank_k: int
    config: "ConfigPoint | None" = None
    z_auc: float = float("nan")
    p_art: float = float("nan")

    @property
    def f0(self) -> float:
        return self.config.f0


@dataclass(frozen=True, eq=False)
class SpocSolution:
    filters: np.ndarray  # (n_channels, n_channels), column k is w_k
    eigenvalues: np.ndarray  # descending
    constraint: np.ndarray  # shrunk average covariance
    target_cov: np.ndarray
    average: np.ndarray  # unshrunk average covariance, for patterns
    degenerate_target: bool = False

    def __iter__(self):
        return iter(zip(self.filters.T, self.eigenvalues))

    def __len__(self) -> int:
        return self.eigenvalues.size


def epoch_covariance(epoch: np.ndarray) -> np.ndarray:
    x = np.asarray(epoch, dtype=float)
    if x.shape[-1] < 2:
        raise ValueError("need at least 2 samples per epoch")
    x = x - x.mean(axis=-1, keepdims=True)
    cov = x @ np.swapaxes(x, -1, -2) / (x.shape[-1] - 1)
    return (cov + np.swapaxes(cov, -1, -2)) / 2


def epoch_covariances(epochs: np.ndarray) -> CovarianceSet:
    """Stacked :func:`epoch_covariance` over an (n_epochs, n_channels, n_times) array."""
    return CovarianceSet.from_matrices(epoch_covariance(epochs))


def trace_normalize(cov: np.ndarray) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    tr = np.trace(cov, axis1=-2, axis2=-1)
    if np.any(~(tr > 0)):
        raise DegenerateEpochError("covariance with non-positive trace")
    return cov / np.asarray(tr)[..., None, None]


def normalized_covariances(epochs: np.ndarray) -> CovarianceSet:
    return CovarianceSet.from_matrices(trace_normalize(epoch_covariance(epochs)))


def shrink(cov: np.ndarray, alpha: float) -> np.ndarray:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    cov = np.asarray(cov, dtype=float)
    return (1.0 - alpha) * cov + alpha * np.eye(cov.shape[0])


def _standardize_target(z: np.ndarray) -> tuple[np.ndarray, bool]:
    z = np.asarray(z, dtype=float)
    z = z - z.mean()
    sd = z.std()
    if sd <= 1e-12 * max(1.0, np.abs(z).max()):
        return np.zeros_like(z), True
    return z / sd, False


def solve_gevp(target_cov: np.ndarray, constraint: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Solve ``A w = lam B w`` for symmetric A and SPD B by Cholesky reduction.

    Returns eigenvalues in descending order and B-orthonormal eigenvectors as
    columns.
    """
    cond = np.linalg.cond(constraint)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise IllConditionedError(
            f"constraint covariance condition number {cond:.3g} exceeds {MAX_CONDITION:g}; "
            "increase the regularization alpha"
        )
    chol = linalg.cholesky(constraint, lower=True)
    tmp = linalg.solve_triangular(chol, target_cov, lower=True)
    reduced = linalg.solve_triangular(chol, tmp.T, lower=True)
    reduced = (reduced + reduced.T) / 2
    lam, v = linalg.eigh(reduced)
    order = np.argsort(-lam, kind="stable")
    w = linalg.solve_triangular(chol.T, v[:, order], lower=False)
    return lam[order], w


def spoc_train(covariances: CovarianceSet, z: np.ndarray, alpha: float) -> SpocSolution:
    """Filters whose epoch-wise power maximally covaries with ``z``.

    ``covariances`` are expected trace-normalized per epoch. The average is
    trace-normalized once more before shrinkage towards the identity. Each
    returned filter ``w`` satisfies ``w @ shrunk_avg @ w == 1`` and its sign
    is chosen so the largest-magnitude entry of its activity pattern is
    positive.
    """
    c = covariances.per_epoch
    if len(z) != c.shape[0]:
        raise ValueError("z length does not match number of epochs")
    zs, degenerate = _standardize_target(z)
    target = np.tensordot(zs, c, axes=1) / c.shape[0]
    target = (target + target.T) / 2
    avg = trace_normalize(covariances.average)
    constraint = shrink(avg, alpha)
    lam, w = solve_gevp(target, constraint)
    # rescale against rounding so the constraint holds tightly
    w = w / np.sqrt(np.einsum("ik,ij,jk->k", w, constraint, w))
    a = avg @ w
    pivot = np.argmax(np.abs(a), axis=0)
    signs = np.sign(a[pivot, np.arange(a.shape[1])])
    signs[signs == 0] = 1.0
    w = w * signs
    if degenerate:
        lam = np.zeros_like(lam)
    return SpocSolution(w, lam, constraint, target, avg, degenerate_target=degenerate)


def activity_pattern(w: np.ndarray, average: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return the pattern ``average @ w`` and a unit-norm copy (zero stays zero)."""
    a = np.asarray(average) @ np.asarray(w)
    norm = np.linalg.norm(a)
    return a, (a / norm if norm > 0 else a.copy())


def estimate_z(w: np.ndarray, test_covariances: CovarianceSet | np.ndarray) -> np.ndarray:
    per_epoch = getattr(test_covariances, "per_epoch", test_covariances)
    z = np.einsum("i,eij,j->e", w, per_epoch, w)
    return np.maximum(z, 0.0)


def z_auc(z_est: np.ndarray, z_true: np.ndarray) -> float:
    """ROC-AUC of ``z_est`` against a median split of ``z_true``.

    Values equal to the median fall into the lower class; tied scores count
    one half.
    """
    z_est = np.asarray(z_est, dtype=float)
    z_true = np.asarray(z_true, dtype=float)
    if z_est.shape != z_true.shape or z_true.size < 4:
        raise UndefinedMetricError("need at least 4 paired values")
    upper = z_true > np.median(z_true)
    n_pos = int(upper.sum())
    n_neg = upper.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("target is constant; median split is empty")
    ranks = stats.rankdata(z_est)
    u = ranks[upper].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))
