"""Comparison defences: kNN label sanitization and outlier detection.

The kNN sanitizer relabels nothing -- it flags any instance whose k
nearest neighbours (excluding itself) vote for a different label with
frequency above t.  The outlier defences score each instance against a
trusted, known-clean slice of its own class, either by mean distance to
the k nearest trusted points (L2) or by the local outlier factor (LOF),
and flag scores above an ECDF percentile of the trusted scores.

All neighbour searches are exact brute force with squared distances
computed from explicit differences (not the gemm expansion), so duplicate
points get a distance of exactly zero and ties resolve deterministically
by lower index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import Dataset

LRD_CLAMP = 1e12


@dataclass(frozen=True)
class KnnConfig:
    k: int = 10
    t: float = 0.6

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.5 < self.t <= 1.0:
            raise ValueError(f"t must lie in (0.5, 1], got {self.t}")


@dataclass(frozen=True)
class OutlierConfig:
    """``alpha=None`` resolves to 0.99 for L2 and 0.95 for LOF."""

    metric: str = "l2"
    k: int = 5
    alpha: float | None = None

    def __post_init__(self) -> None:
        if self.metric not in ("l2", "lof"):
            raise ValueError(f"metric must be 'l2' or 'lof', got {self.metric!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.alpha is not None and not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")

    @property
    def resolved_alpha(self) -> float:
        if self.alpha is not None:
            return self.alpha
        return 0.99 if self.metric == "l2" else 0.95


def pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact squared euclidean distances, chunked to bound memory."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n_a, d = a.shape
    out = np.empty((n_a, b.shape[0]), dtype=np.float64)
    chunk = max(1, int(4e6) // max(1, b.shape[0] * d))
    for start in range(0, n_a, chunk):
        stop = min(start + chunk, n_a)
        diff = a[start:stop, None, :] - b[None, :, :]
        out[start:stop] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def _nearest(dists: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k smallest entries per row, ties broken by lower index."""
    return np.argsort(dists, axis=1, kind="stable")[:, :k]


def knn_sanitize(data: Dataset, cfg: KnnConfig = KnnConfig()) -> np.ndarray:
    """Flag instances outvoted by their k nearest neighbours.

    Instance i is flagged iff the modal label among its k nearest
    neighbours (self excluded) is unique, has frequency strictly above
    cfg.t, and differs from y_i.
    """
    if data.n <= cfg.k:
        raise ValueError(f"need more than k={cfg.k} instances, have {data.n}")
    d2 = pairwise_sq_dists(data.X, data.X)
    np.fill_diagonal(d2, np.inf)
    neighbours = _nearest(d2, cfg.k)

    flagged = []
    for i in range(data.n):
        votes = np.bincount(data.y[neighbours[i]], minlength=data.n_classes)
        top = int(votes.max())
        modal = np.flatnonzero(votes == top)
        if modal.shape[0] != 1:  # tied vote: give the benefit of the doubt
            continue
        if top / cfg.k > cfg.t and int(modal[0]) != int(data.y[i]):
            flagged.append(i)
    return np.array(flagged, dtype=np.int64)


def l2_scores(trusted_X: np.ndarray, query_X: np.ndarray, k: int = 5) -> np.ndarray:
    """Mean euclidean distance from each query to its k nearest trusted points."""
    trusted_X = np.atleast_2d(trusted_X)
    if trusted_X.shape[0] < k:
        raise ValueError(f"need at least k={k} trusted points, have {trusted_X.shape[0]}")
    d = np.sqrt(pairwise_sq_dists(np.atleast_2d(query_X), trusted_X))
    nearest = _nearest(d, k)
    return d[np.arange(d.shape[0])[:, None], nearest].mean(axis=1)


def _lof_internals(trusted_X: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """k-distances and local reachability densities within the trusted set.

    Each trusted point's neighbourhood excludes itself.  Neighbourhoods
    are exactly k points (index tie-break) rather than the distance-tied
    closure; densities are clamped at LRD_CLAMP when duplicates collapse
    reachability to zero.
    """
    n = trusted_X.shape[0]
    if n < k + 1:
        raise ValueError(f"LOF needs at least k+1={k + 1} trusted points, have {n}")
    d2 = pairwise_sq_dists(trusted_X, trusted_X)
    np.fill_diagonal(d2, np.inf)
    d = np.sqrt(d2)
    neigh = _nearest(d, k)
    rows = np.arange(n)[:, None]
    kdist = d[rows, neigh][:, -1]
    reach = np.maximum(kdist[neigh], d[rows, neigh])
    mean_reach = reach.mean(axis=1)
    with np.errstate(divide="ignore"):
        lrd = np.where(mean_reach > 0, 1.0 / np.maximum(mean_reach, 1e-300), LRD_CLAMP)
    return kdist, np.minimum(lrd, LRD_CLAMP)


def lof_scores(trusted_X: np.ndarray, query_X: np.ndarray, k: int = 5) -> np.ndarray:
    """Local outlier factor of each query w.r.t. the trusted set.

    Queries are treated as external points: their neighbourhoods are the k
    nearest trusted points with no self-exclusion.  Scores near 1 mean the
    query sits at typical trusted density; larger means more isolated.
    """
    trusted_X = np.atleast_2d(trusted_X)
    query_X = np.atleast_2d(query_X)
    kdist, lrd = _lof_internals(trusted_X, k)
    d = np.sqrt(pairwise_sq_dists(query_X, trusted_X))
    neigh = _nearest(d, k)
    rows = np.arange(query_X.shape[0])[:, None]
    reach = np.maximum(kdist[neigh], d[rows, neigh])
    mean_reach = reach.mean(axis=1)
    with np.errstate(divide="ignore"):
        lrd_q = np.where(mean_reach > 0, 1.0 / np.maximum(mean_reach, 1e-300), LRD_CLAMP)
    lrd_q = np.minimum(lrd_q, LRD_CLAMP)
    return lrd[neigh].mean(axis=1) / lrd_q


def ecdf_threshold(scores: np.ndarray, alpha: float) -> float:
    """Smallest score whose empirical CDF value reaches alpha.

    Implemented as the first sorted score s with (rank of s) / n >= alpha,
    i.e. the order statistic at ceil(alpha * n), using the same floating
    comparison a linear ECDF scan would make.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("cannot take a percentile of no scores")
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    ranked = np.sort(scores)
    n = ranked.shape[0]
    idx = int(np.searchsorted(np.arange(1, n + 1) / n, alpha, side="left"))
    return float(ranked[min(idx, n - 1)])


def outlier_defence(
    data: Dataset, trusted: Dataset, cfg: OutlierConfig = OutlierConfig()
) -> np.ndarray:
    """Per-class outlier flagging against a trusted reference slice.

    For each class: score the trusted points of that class, take the
    alpha-percentile of those scores as threshold, and flag data points of
    the class scoring strictly above it.
    """
    scorer = l2_scores if cfg.metric == "l2" else lof_scores
    flagged: list[np.ndarray] = []
    for c in range(data.n_classes):
        members = np.flatnonzero(data.y == c)
        if members.size == 0:
            continue
        ref = trusted.X[trusted.y == c]
        if ref.shape[0] < cfg.k + 1:
            raise ValueError(
                f"trusted slice has {ref.shape[0]} points of class {c}, "
                f"need at least {cfg.k + 1}"
            )
        threshold = ecdf_threshold(scorer(ref, ref, cfg.k), cfg.resolved_alpha)
        scores = scorer(ref, data.X[members], cfg.k)
        flagged.append(members[scores > threshold])
    if not flagged:
        return np.empty(0, dtype=np.int64)
    return np.sort(np.concatenate(flagged)).astype(np.int64)
