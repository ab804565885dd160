"""Gaussian-to-point attribute transfer.

For every point, candidate Gaussians are the centroids within ``r_match``
(Euclidean). Among them the ``k`` nearest under the Mahalanobis distance of
each Gaussian's own covariance are kept (ties broken by ascending id), their
inverse distances are normalized into weights, and the weights average the
Gaussians' scale vectors and opacities onto the point.

Points with no candidate retry with the radius doubled, up to
``cfg.max_doublings`` times; if that still finds nothing the point gets zero
scale/opacity and ``matched=False``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._parallel import map_chunks
from .config import PipelineConfig
from .spatial import CentroidIndex, build_index, euclidean
from .types import AugmentedCloud, CorrespondenceSet, GaussianSet, PointCloud, ValidationError

EPS_D = 1e-12


@dataclass(frozen=True)
class PreparedGaussians:
    """Per-Gaussian quantities cached once per scene."""

    centroids: np.ndarray
    rotations: np.ndarray  # (M, 3, 3)
    variances: np.ndarray  # (M, 3), clamped eigenvalues of the covariance
    degenerate: np.ndarray
    scales: np.ndarray
    opacities: np.ndarray

    @classmethod
    def from_set(cls, gaussians: GaussianSet, eps: float) -> "PreparedGaussians":
        var, degenerate = gaussians.principal_variances(eps)
        return cls(
            gaussians.centroids, gaussians.rotation_matrices(), var, degenerate,
            gaussians.scales, gaussians.opacities,
        )


def pair_distances(points, prepared: PreparedGaussians, pair_q, pair_id, metric="mahalanobis"):
    """Distances between ``points[pair_q]`` and Gaussians ``pair_id``."""
    p = points[pair_q]
    mu = prepared.centroids[pair_id]
    if metric == "euclidean":
        return euclidean(p, mu)
    dx = p[:, 0] - mu[:, 0]
    dy = p[:, 1] - mu[:, 1]
    dz = p[:, 2] - mu[:, 2]
    R = prepared.rotations[pair_id]
    var = prepared.variances[pair_id]
    # Offset expressed in the Gaussian's principal frame: R^T d.
    d2 = np.zeros(len(pair_q))
    for a in range(3):
        la = R[:, 0, a] * dx + R[:, 1, a] * dy + R[:, 2, a] * dz
        d2 = d2 + la * la / var[:, a]
    return np.sqrt(d2)


def select_topk(n: int, pair_q, pair_id, dist, k: int):
    """Keep the ``k`` smallest distances per query, ties by ascending id.

    Returns padded ``(ids, distances, counts)`` with id -1 / distance inf padding.
    """
    order = np.lexsort((pair_id, dist, pair_q))
    q, gid, d = pair_q[order], pair_id[order], dist[order]
    counts_all = np.bincount(q, minlength=n)
    first = np.cumsum(counts_all) - counts_all
    rank = np.arange(len(q)) - first[q]
    keep = rank < k
    ids = np.full((n, k), -1, dtype=np.int64)
    dists = np.full((n, k), np.inf)
    ids[q[keep], rank[keep]] = gid[keep]
    dists[q[keep], rank[keep]] = d[keep]
    return ids, dists, np.minimum(counts_all, k)


def compute_weights(distances) -> np.ndarray:
    """Normalized inverse-distance weights over one neighbor list.

    When a distance is (numerically) zero the inverse blows up; the limit puts
    all mass uniformly on the zero-distance neighbors.
    """
    d = np.asarray(distances, dtype=np.float64)
    if d.ndim != 1 or len(d) == 0:
        raise ValidationError("compute_weights needs a non-empty 1-D distance list")
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise ValidationError("distances must be finite and non-negative")
    w, _ = weights_batch(d[None, :], np.array([len(d)]))
    return w[0]


def weights_batch(dists: np.ndarray, counts: np.ndarray):
    """Row-wise version of :func:`compute_weights` over padded distances.

    Returns ``(weights, row_sums)``; padding columns get weight 0.
    """
    n, k = dists.shape
    valid = np.arange(k)[None, :] < counts[:, None]
    zero = valid & (dists < EPS_D)
    has_zero = zero.any(axis=1)
    inv = np.where(valid & ~zero, 1.0 / np.where(valid & ~zero, dists, 1.0), 0.0)
    raw = np.where(has_zero[:, None], zero.astype(np.float64), inv)
    total = _rowsum(raw)
    safe = np.where(total > 0, total, 1.0)
    w = raw / safe[:, None]
    return w, _rowsum(w)


def _rowsum(a: np.ndarray) -> np.ndarray:
    # Fixed left-to-right order over the k columns.
    out = np.zeros(a.shape[0])
    for j in range(a.shape[1]):
        out = out + a[:, j]
    return out


def aggregate_attributes(ids, weights, gaussians) -> tuple[np.ndarray, float]:
    """Weighted scale vector and opacity for one correspondence entry.

    An empty entry (a point nothing matched) yields zeros.
    """
    ids = np.asarray(ids, dtype=np.int64)
    w = np.asarray(weights, dtype=np.float64)
    if len(ids) == 0:
        return np.zeros(3), 0.0
    S, a = aggregate_batch(ids[None, :], w[None, :], gaussians.scales, gaussians.opacities)
    return S[0], float(a[0])


def aggregate_batch(ids, weights, scales, opacities):
    n, k = ids.shape
    S = np.zeros((n, 3))
    alpha = np.zeros(n)
    if len(scales) == 0:
        return S, alpha
    safe = np.maximum(ids, 0)
    for j in range(k):
        w = weights[:, j]
        S = S + w[:, None] * scales[safe[:, j]]
        alpha = alpha + w * opacities[safe[:, j]]
    return S, alpha


def _match_chunk(P, index: CentroidIndex, prepared: PreparedGaussians, cfg: PipelineConfig):
    n = len(P)
    pairs = index.query_batch(P, cfg.r_match)
    pair_q, pair_id = pairs.query_of, pairs.ids
    fallback = np.where(pairs.counts > 0, 0, -1).astype(np.int8)
    missing = np.flatnonzero(pairs.counts == 0)
    for level in range(1, cfg.max_doublings + 1):
        if not len(missing):
            break
        extra = index.query_batch(P[missing], cfg.r_match * 2 ** level)
        found = extra.counts > 0
        fallback[missing[found]] = level
        pair_q = np.concatenate([pair_q, missing[extra.query_of]])
        pair_id = np.concatenate([pair_id, extra.ids])
        missing = missing[~found]
    dist = pair_distances(P, prepared, pair_q, pair_id, cfg.distance_metric)
    ids, dists, counts = select_topk(n, pair_q, pair_id, dist, cfg.k)
    weights, _ = weights_batch(dists, counts)
    return ids, dists, weights, counts, fallback


def match_points(points, index, prepared, cfg: PipelineConfig, threads=None) -> CorrespondenceSet:
    P = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    parts = map_chunks(lambda s, e: _match_chunk(P[s:e], index, prepared, cfg), len(P), threads)
    if not parts:
        k = cfg.k
        return CorrespondenceSet(
            np.zeros((0, k), np.int64), np.zeros((0, k)), np.zeros((0, k)),
            np.zeros(0, np.int64), np.zeros(0, np.int8),
        )
    ids, dists, weights, counts, fallback = (np.concatenate(x) for x in zip(*parts))
    return CorrespondenceSet(ids, dists, weights, counts, fallback)


def match_point(point, index: CentroidIndex, gaussians: GaussianSet, cfg: PipelineConfig):
    """Correspondence for a single point: ``(ids, distances, weights, fallback_level)``."""
    prepared = PreparedGaussians.from_set(gaussians, cfg.eps_sigma)
    corr = match_points(np.asarray(point, dtype=np.float64)[None], index, prepared, cfg, threads=1)
    ids, d, w = corr.entry(0)
    return ids, d, w, int(corr.fallback[0])


def augment_cloud(
    cloud: PointCloud,
    gaussians: GaussianSet,
    cfg: PipelineConfig | None = None,
    index: CentroidIndex | None = None,
    threads: int | None = None,
) -> tuple[AugmentedCloud, CorrespondenceSet]:
    """Attach aggregated Gaussian scale and opacity to every point.

    Both inputs must already share a coordinate frame; no transform is
    applied. Output order matches input order and the result does not depend
    on ``threads``.
    """
    cfg = cfg or PipelineConfig()
    if index is None:
        index = build_index(gaussians.centroids, cfg.r_match)
    prepared = PreparedGaussians.from_set(gaussians, cfg.eps_sigma)
    corr = match_points(cloud.positions, index, prepared, cfg, threads)
    S, alpha = aggregate_batch(corr.ids, corr.weights, prepared.scales, prepared.opacities)
    matched = corr.counts > 0
    S[~matched] = 0.0
    alpha[~matched] = 0.0
    alpha = np.clip(alpha, 0.0, 1.0)
    return AugmentedCloud(cloud, S, alpha, matched), corr
