"""Local clustering of feature-map pixels via normalized spectral cuts.

Pipeline per feature map: pairwise clamped-cosine affinity restricted to
each pixel's k nearest neighbors, symmetrized; normalized Laplacian
L = I - D^{-1/2} A D^{-1/2}; eigenvectors of the K smallest eigenvalues;
row-normalized embedding; K-Means with deterministic restarts. Maps larger
than ``pixel_cap`` pixels are bilinearly downsampled first and the label
grid is upsampled back by nearest neighbor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, ClusterMixin

from .formats import FeatureMap, FeatureStack
from .kmeans import kmeans_fit, kmeans_assign
from .validation import check_seed, mix_seed

DEFAULT_KNN = 10
DEFAULT_CLUSTER_COUNTS = (2, 3, 4, 5)
DEFAULT_PIXEL_CAP = 10_000
DEFAULT_RESTARTS = 10
_ZERO_PIXEL_WEIGHT = 1e-6


@dataclass
class ClusterMask:
    """Pixel labels for one (level, cluster count) configuration."""

    level: int
    n_clusters: int
    labels: np.ndarray

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 2:
            raise ValueError(f"labels must be 2-D (H, W), got shape {self.labels.shape}")
        if self.labels.size:
            lo, hi = int(self.labels.min()), int(self.labels.max())
            if lo < 0 or hi >= self.n_clusters:
                raise ValueError(f"labels must lie in [0, {self.n_clusters}), got [{lo}, {hi}]")


def build_affinity(fmap: FeatureMap, knn: int = DEFAULT_KNN) -> sp.csr_matrix:
    """Sparse symmetric kNN affinity over a feature map's pixels.

    Edge weight is the cosine similarity clamped to [0, 1]; each pixel
    contributes edges to its ``knn`` most similar pixels (self excluded) and
    the matrix is symmetrized with an elementwise max. Pixels whose feature
    vector has zero norm take no part in the cosine graph; they instead get
    a tiny uniform weight (1e-6) to their spatial 4-neighbors so the grid
    stays usable.

    Requires ``1 <= knn < H*W``.
    """
    h, w = fmap.height, fmap.width
    n = h * w
    if not 1 <= knn < n:
        raise ValueError(f"knn must satisfy 1 <= knn < H*W = {n}, got {knn}")

    pixels = fmap.pixel_matrix()
    norms = np.linalg.norm(pixels, axis=1)
    nonzero = norms > 0
    unit = np.zeros_like(pixels)
    unit[nonzero] = pixels[nonzero] / norms[nonzero, None]

    rows_out: list[np.ndarray] = []
    cols_out: list[np.ndarray] = []
    vals_out: list[np.ndarray] = []
    chunk = max(1, min(n, (1 << 22) // max(n, 1)))
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        sims = unit[start:stop] @ unit.T
        for i in range(start, stop):
            if not nonzero[i]:
                continue
            row = sims[i - start]
            row[i] = -np.inf
            # stable descending sort keeps neighbor choice deterministic on ties
            nbrs = np.argsort(-row, kind="stable")[:knn]
            weights = np.clip(row[nbrs], 0.0, 1.0)
            keep = weights > 0
            if keep.any():
                rows_out.append(np.full(int(keep.sum()), i, dtype=np.int64))
                cols_out.append(nbrs[keep].astype(np.int64))
                vals_out.append(weights[keep])

    if rows_out:
        data = np.concatenate(vals_out)
        affinity = sp.csr_matrix(
            (data, (np.concatenate(rows_out), np.concatenate(cols_out))), shape=(n, n)
        )
    else:
        affinity = sp.csr_matrix((n, n), dtype=np.float64)
    affinity = affinity.maximum(affinity.T)

    zero_idx = np.flatnonzero(~nonzero)
    if zero_idx.size:
        zr: list[int] = []
        zc: list[int] = []
        for i in zero_idx:
            y, x = divmod(int(i), w)
            for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                if 0 <= ny < h and 0 <= nx < w:
                    j = ny * w + nx
                    zr.extend((int(i), j))
                    zc.extend((j, int(i)))
        fallback = sp.csr_matrix(
            (np.full(len(zr), _ZERO_PIXEL_WEIGHT), (zr, zc)), shape=(n, n)
        )
        fallback.data[:] = _ZERO_PIXEL_WEIGHT  # duplicate entries summed by CSR build
        affinity = affinity.maximum(fallback)

    affinity.setdiag(0.0)
    affinity.eliminate_zeros()
    return affinity


def normalized_laplacian(affinity: sp.spmatrix) -> np.ndarray:
    """Dense symmetric normalized Laplacian I - D^{-1/2} A D^{-1/2}.

    Rows with zero degree keep an identity row (their inverse square-root
    degree is taken as 0).
    """
    a = sp.csr_matrix(affinity, dtype=np.float64)
    degrees = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(degrees)
    pos = degrees > 0
    inv_sqrt[pos] = 1.0 / np.sqrt(degrees[pos])
    dense = a.toarray()
    dense *= inv_sqrt[:, None]
    dense *= inv_sqrt[None, :]
    lap = np.eye(a.shape[0]) - dense
    return (lap + lap.T) / 2.0


def _resize_bilinear(data: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of (d, H, W) data, half-pixel centers, edges clamped."""
    d, h, w = data.shape
    oh, ow = out_hw
    ys = (np.arange(oh) + 0.5) * (h / oh) - 0.5
    xs = (np.arange(ow) + 0.5) * (w / ow) - 0.5
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)
    wx = np.clip(xs - x0, 0.0, 1.0)
    top = data[:, y0][:, :, x0] * (1 - wx)[None, None, :] + data[:, y0][:, :, x1] * wx[None, None, :]
    bot = data[:, y1][:, :, x0] * (1 - wx)[None, None, :] + data[:, y1][:, :, x1] * wx[None, None, :]
    return top * (1 - wy)[None, :, None] + bot * wy[None, :, None]


def _upsample_labels_nn(labels: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor upsample of a label grid to ``out_hw``."""
    h, w = labels.shape
    oh, ow = out_hw
    ys = np.minimum(((np.arange(oh) + 0.5) * (h / oh)).astype(np.int64), h - 1)
    xs = np.minimum(((np.arange(ow) + 0.5) * (w / ow)).astype(np.int64), w - 1)
    return labels[np.ix_(ys, xs)]


def spectral_cluster(
    fmap: FeatureMap,
    n_clusters: int,
    knn: int = DEFAULT_KNN,
    seed: int = 0,
    pixel_cap: int = DEFAULT_PIXEL_CAP,
    restarts: int = DEFAULT_RESTARTS,
) -> np.ndarray:
    """Cluster one feature map's pixels; returns (H, W) int labels in [0, K).

    ``n_clusters=1`` short-circuits to an all-zero mask. Requires
    ``1 <= n_clusters <= H*W``.
    """
    h, w = fmap.height, fmap.width
    n = h * w
    if not 1 <= n_clusters <= n:
        raise ValueError(f"n_clusters must be in [1, {n}], got {n_clusters}")
    if n_clusters == 1:
        return np.zeros((h, w), dtype=np.int64)
    seed = check_seed(seed)

    work = fmap
    if n > pixel_cap:
        scale = (pixel_cap / n) ** 0.5
        small_h = max(1, int(h * scale))
        small_w = max(1, int(w * scale))
        work = FeatureMap(level=fmap.level, data=_resize_bilinear(fmap.data.astype(np.float64), (small_h, small_w)))

    affinity = build_affinity(work, knn=knn)
    lap = normalized_laplacian(affinity)
    _, vecs = np.linalg.eigh(lap)
    embedding = vecs[:, :n_clusters]
    row_norms = np.linalg.norm(embedding, axis=1, keepdims=True)
    embedding = embedding / np.where(row_norms > 0, row_norms, 1.0)

    best_labels = None
    best_inertia = np.inf
    for r in range(restarts):
        model = kmeans_fit(embedding, n_clusters, seed=mix_seed(seed, r))
        if model.inertia < best_inertia:
            best_inertia = model.inertia
            best_labels = kmeans_assign(model, embedding)
    labels = best_labels.reshape(work.height, work.width)
    if work is not fmap:
        labels = _upsample_labels_nn(labels, (h, w))
    return labels.astype(np.int64)


def cluster_stack(
    stack: FeatureStack,
    levels: list[int] | None = None,
    cluster_counts: tuple[int, ...] = DEFAULT_CLUSTER_COUNTS,
    knn: int = DEFAULT_KNN,
    seed: int = 0,
    pixel_cap: int = DEFAULT_PIXEL_CAP,
    restarts: int = DEFAULT_RESTARTS,
) -> list[ClusterMask]:
    """Run spectral clustering for every (level, cluster count) pair.

    ``levels`` lists level indices to cluster; None means the deepest two
    available. Each mask draws from its own seed, mixed from ``seed`` and
    the (level, K) pair, so results do not depend on execution order.
    """
    available = {fm.level: fm for fm in stack.levels}
    if levels is None:
        chosen = [fm.level for fm in stack.levels[-2:]]
    else:
        missing = [l for l in levels if l not in available]
        if missing:
            raise ValueError(f"stack {stack.image_id!r} has no level(s) {missing}")
        chosen = list(levels)

    masks = []
    for level in chosen:
        fmap = available[level]
        for k in cluster_counts:
            labels = spectral_cluster(
                fmap,
                n_clusters=k,
                knn=knn,
                seed=mix_seed(seed, level, k),
                pixel_cap=pixel_cap,
                restarts=restarts,
            )
            masks.append(ClusterMask(level=level, n_clusters=k, labels=labels))
    return masks


class SpectralGridClusterer(BaseEstimator, ClusterMixin):
    """Estimator facade over :func:`spectral_cluster` for a single map.

    ``fit``/``fit_predict`` accept a FeatureMap or a (d, H, W) array and
    store the (H, W) label grid as ``labels_``.
    """

    def __init__(
        self,
        n_clusters: int = 2,
        knn: int = DEFAULT_KNN,
        seed: int = 0,
        pixel_cap: int = DEFAULT_PIXEL_CAP,
        restarts: int = DEFAULT_RESTARTS,
    ):
        self.n_clusters = n_clusters
        self.knn = knn
        self.seed = seed
        self.pixel_cap = pixel_cap
        self.restarts = restarts

    def fit(self, X, y=None):
        fmap = X if isinstance(X, FeatureMap) else FeatureMap(level=0, data=np.asarray(X))
        self.labels_ = spectral_cluster(
            fmap,
            n_clusters=self.n_clusters,
            knn=self.knn,
            seed=self.seed,
            pixel_cap=self.pixel_cap,
            restarts=self.restarts,
        )
        return self

    def fit_predict(self, X, y=None):
        return self.fit(X).labels_
