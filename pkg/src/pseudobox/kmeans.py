"""Deterministic K-Means for dataset-wide pseudo-labeling.

Everything here is bit-reproducible for a fixed (features, n_clusters, seed)
triple: initialization draws from a PCG64 stream seeded by ``seed`` alone,
assignment ties go to the lowest centroid index, reductions run in fixed
order, and empty clusters are reseeded to the point currently farthest from
its assigned centroid.

Fitted models serialize to a small binary container (extension ``.plm``):
magic "PLM1", u32 cluster count C, u32 dimension d, u64 seed, C*d float32
centroid values row-major, then one float64 inertia. Little-endian.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from .formats import FormatError
from .validation import check_feature_matrix, check_seed

PLM_MAGIC = b"PLM1"
_PLM_HEAD = struct.Struct("<IIQ")

DEFAULT_N_CLUSTERS = 2048
DEFAULT_MAX_ITER = 300
DEFAULT_TOL = 1e-4


@dataclass
class PseudoLabelModel:
    """Fitted centroids plus the fit's seed and final inertia."""

    centroids: np.ndarray
    inertia: float
    seed: int

    def __post_init__(self) -> None:
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        if self.centroids.ndim != 2 or self.centroids.shape[0] < 1:
            raise ValueError(f"centroids must be (C, d), got shape {self.centroids.shape}")
        if not np.isfinite(self.centroids).all():
            raise ValueError("centroids contain non-finite values")
        self.seed = check_seed(self.seed)

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


def _inertia(x: np.ndarray, centers: np.ndarray, labels: np.ndarray) -> float:
    """Sum of squared point-to-assigned-centroid distances, difference form.

    The expansion form used for nearest-centroid search leaves ~1 ulp of
    noise when a point coincides with its centroid; this form is exactly
    zero there, which the N == C contract relies on.
    """
    diff = x - centers[labels]
    return float(np.einsum("ij,ij->", diff, diff))


def _sq_dists(x: np.ndarray, centers: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Squared Euclidean distances (n, C), chunked over rows to bound memory."""
    n = x.shape[0]
    out = np.empty((n, centers.shape[0]), dtype=np.float64)
    c_sq = np.einsum("ij,ij->i", centers, centers)
    for start in range(0, n, chunk):
        rows = x[start : start + chunk]
        d = rows @ centers.T
        d *= -2.0
        d += np.einsum("ij,ij->i", rows, rows)[:, None]
        d += c_sq[None, :]
        np.clip(d, 0.0, None, out=d)
        out[start : start + chunk] = d
    return out


def _plus_plus_init(x: np.ndarray, n_clusters: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding; all draws come from ``rng`` in a fixed order."""
    n = x.shape[0]
    centers = np.empty((n_clusters, x.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centers[0] = x[first]
    closest = _sq_dists(x, centers[0:1])[:, 0]
    for k in range(1, n_clusters):
        total = closest.sum()
        if total > 0:
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(closest), r, side="right"))
            idx = min(idx, n - 1)
        else:
            idx = int(rng.integers(n))
        centers[k] = x[idx]
        np.minimum(closest, _sq_dists(x, centers[k : k + 1])[:, 0], out=closest)
    return centers


def kmeans_fit(
    features: np.ndarray,
    n_clusters: int,
    seed: int = 0,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    inertia_history: list[float] | None = None,
) -> PseudoLabelModel:
    """Fit K-Means with k-means++ seeding and Lloyd iterations.

    Stops when the largest centroid shift falls below ``tol`` or after
    ``max_iter`` iterations. ``inertia_history``, when given, receives the
    inertia at every assignment step (a non-increasing sequence).

    Raises ValueError unless ``1 <= n_clusters <= n_samples`` and the input
    is finite.
    """
    x = check_feature_matrix(features)
    n = x.shape[0]
    if not 1 <= n_clusters <= n:
        raise ValueError(f"n_clusters must be in [1, {n}], got {n_clusters}")
    rng = np.random.Generator(np.random.PCG64(check_seed(seed)))
    centers = _plus_plus_init(x, n_clusters, rng)

    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        d = _sq_dists(x, centers)
        labels = np.argmin(d, axis=1)
        inertia = _inertia(x, centers, labels)
        if inertia_history is not None:
            inertia_history.append(inertia)

        new_centers = centers.copy()
        counts = np.bincount(labels, minlength=n_clusters)
        for k in range(n_clusters):
            if counts[k] > 0:
                new_centers[k] = x[labels == k].mean(axis=0)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            dist_to_own = d[np.arange(n), labels].copy()
            for k in empty:
                far = int(np.argmax(dist_to_own))
                new_centers[k] = x[far]
                dist_to_own[far] = -1.0
        shift = float(np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max())
        centers = new_centers
        if shift < tol:
            break

    d = _sq_dists(x, centers)
    labels = np.argmin(d, axis=1)
    inertia = _inertia(x, centers, labels)
    if inertia_history is not None:
        inertia_history.append(inertia)
    return PseudoLabelModel(centroids=centers, inertia=inertia, seed=seed)


def kmeans_assign(model: PseudoLabelModel, features: np.ndarray) -> np.ndarray:
    """Assign each feature row to its nearest centroid (ties: lowest index)."""
    x = check_feature_matrix(features)
    if x.shape[1] != model.dim:
        raise ValueError(f"features have dim {x.shape[1]}, model expects {model.dim}")
    return np.argmin(_sq_dists(x, model.centroids), axis=1)


def save_model(path: str, model: PseudoLabelModel) -> None:
    """Write a fitted model in the PLM1 binary layout."""
    c, d = model.centroids.shape
    with open(path, "wb") as fh:
        fh.write(PLM_MAGIC)
        fh.write(_PLM_HEAD.pack(c, d, model.seed))
        fh.write(model.centroids.astype("<f4").tobytes())
        fh.write(struct.pack("<d", float(model.inertia)))


def load_model(path: str) -> PseudoLabelModel:
    """Read a PLM1 model file, validating magic and size."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[:4] != PLM_MAGIC:
        raise FormatError(f"{path}: bad magic, expected {PLM_MAGIC!r}")
    head_end = 4 + _PLM_HEAD.size
    if len(raw) < head_end:
        raise FormatError(f"{path}: truncated header")
    c, d, seed = _PLM_HEAD.unpack(raw[4:head_end])
    expected = head_end + 4 * c * d + 8
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for C={c}, d={d}, got {len(raw)}")
    centroids = np.frombuffer(raw[head_end : head_end + 4 * c * d], dtype="<f4").reshape(c, d)
    (inertia,) = struct.unpack("<d", raw[head_end + 4 * c * d :])
    if not np.isfinite(centroids).all():
        raise FormatError(f"{path}: centroids contain non-finite values")
    return PseudoLabelModel(centroids=centroids.astype(np.float64), inertia=float(inertia), seed=seed)


class SeededKMeans(BaseEstimator, ClusterMixin):
    """Estimator wrapper around :func:`kmeans_fit` / :func:`kmeans_assign`.

    Parameters
    ----------
    n_clusters : int, default 2048
    seed : int, default 0
    max_iter : int, default 300
    tol : float, default 1e-4
        Convergence threshold on the largest centroid shift.
    """

    def __init__(
        self,
        n_clusters: int = DEFAULT_N_CLUSTERS,
        seed: int = 0,
        max_iter: int = DEFAULT_MAX_ITER,
        tol: float = DEFAULT_TOL,
    ):
        self.n_clusters = n_clusters
        self.seed = seed
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y=None):
        history: list[float] = []
        model = kmeans_fit(
            X, self.n_clusters, seed=self.seed, max_iter=self.max_iter, tol=self.tol,
            inertia_history=history,
        )
        self.model_ = model
        self.cluster_centers_ = model.centroids
        self.inertia_ = model.inertia
        self.inertia_history_ = history
        self.labels_ = kmeans_assign(model, X)
        return self

    def predict(self, X):
        if not hasattr(self, "model_"):
            raise ValueError("SeededKMeans instance is not fitted yet; call fit first")
        return kmeans_assign(self.model_, X)
