"""Brute-force references, written independently of the package internals."""
import math

import numpy as np
from scipy.spatial.transform import Rotation


def covariance_matrix(quat_wxyz, scale):
    w, x, y, z = quat_wxyz
    R = Rotation.from_quat([x, y, z, w]).as_matrix()
    return R @ np.diag(np.asarray(scale) ** 2) @ R.T


def all_pairs_match(point, centroids, quats, scales, opacities, r, k, metric="mahalanobis"):
    """Top-k by distance (ties by id) among centroids within ``r``; weights and aggregates."""
    cands = []
    for j in range(len(centroids)):
        diff = np.asarray(point) - centroids[j]
        if np.linalg.norm(diff) > r:
            continue
        if metric == "mahalanobis":
            inv = np.linalg.inv(covariance_matrix(quats[j], scales[j]))
            d = math.sqrt(max(diff @ inv @ diff, 0.0))
        else:
            d = float(np.linalg.norm(diff))
        cands.append((d, j))
    cands.sort()
    chosen = cands[:k]
    if not chosen:
        return [], [], [], np.zeros(3), 0.0
    ids = [j for _, j in chosen]
    dists = [d for d, _ in chosen]
    inv = [1.0 / d for d in dists]
    total = math.fsum(inv)
    weights = [v / total for v in inv]
    S = np.array([math.fsum(w * scales[j][a] for w, j in zip(weights, ids)) for a in range(3)])
    alpha = math.fsum(w * opacities[j] for w, j in zip(weights, ids))
    return ids, dists, weights, S, alpha


def all_pairs_batch(points, centroids, quats, scales, r, k, metric="mahalanobis", doublings=5):
    """Row-wise brute force over every Gaussian, with the radius-doubling fallback.

    Returns per-point lists of (ids, weights).
    """
    inv = np.linalg.inv(np.stack([covariance_matrix(q, s) for q, s in zip(quats, scales)]))
    out = []
    for p in points:
        diff = p - centroids
        eu = np.linalg.norm(diff, axis=1)
        if metric == "mahalanobis":
            dist = np.sqrt(np.maximum(np.einsum("ji,jik,jk->j", diff, inv, diff), 0.0))
        else:
            dist = eu
        cand = np.array([], dtype=np.int64)
        for level in range(doublings + 1):
            cand = np.flatnonzero(eu <= r * 2**level)
            if len(cand):
                break
        if not len(cand):
            out.append(([], []))
            continue
        order = sorted(cand.tolist(), key=lambda j: (dist[j], j))[:k]
        recip = [1.0 / dist[j] for j in order]
        total = math.fsum(recip)
        out.append((order, [v / total for v in recip]))
    return out


def radius_ids(point, centroids, r):
    return [j for j in range(len(centroids)) if np.linalg.norm(centroids[j] - point) <= r]


def semantic_boundary(positions, labels, r):
    """Double loop over all pairs (vectorized per row)."""
    n = len(positions)
    out = np.zeros(n, dtype=bool)
    for i in range(n):
        d = np.linalg.norm(positions - positions[i], axis=1)
        out[i] = np.any((d <= r) & (labels != labels[i]))
    return out


def random_gaussians(rng, m, extent=1.0, scale_range=(0.005, 0.05)):
    centroids = rng.uniform(0, extent, (m, 3))
    quats = rng.normal(size=(m, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    lo, hi = np.log(scale_range[0]), np.log(scale_range[1])
    scales = np.exp(rng.uniform(lo, hi, (m, 3)))
    opacities = rng.uniform(0, 1, m)
    return centroids, quats, scales, opacities


def jaccard_choquet(errors, fg):
    """Lovasz extension as a level-set integral: sum of J({e >= t}) dt over t in [0, max e]."""
    levels = sorted(set(float(e) for e in errors), reverse=True)
    total = 0.0
    levels.append(0.0)
    for hi, lo in zip(levels, levels[1:]):
        mistakes = [e >= hi for e in errors]
        inter = sum(1 for m, f in zip(mistakes, fg) if f and not m)
        union = sum(1 for m, f in zip(mistakes, fg) if f or m)
        jac = 0.0 if union == 0 else 1.0 - inter / union
        total += (hi - lo) * jac
    return total


def lovasz_softmax_oracle(probs, labels):
    vals = []
    for k in range(probs.shape[1]):
        fg = [int(y) == k for y in labels]
        if any(fg):
            vals.append(jaccard_choquet([abs(f - p) for f, p in zip(fg, probs[:, k])], fg))
    return math.fsum(vals) / len(vals) if vals else 0.0
