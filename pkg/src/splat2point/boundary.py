"""Boundary pseudo-labels from aggregated scale and from label disagreement."""
from __future__ import annotations

import logging
import math

import numpy as np

from ._parallel import map_chunks
from .spatial import build_index
from .types import AugmentedCloud, BoundaryLabels, ValidationError

log = logging.getLogger(__name__)


def scale_magnitude(scale) -> np.ndarray | float:
    s = np.asarray(scale, dtype=np.float64)
    out = np.sqrt(s[..., 0] * s[..., 0] + s[..., 1] * s[..., 1] + s[..., 2] * s[..., 2])
    return float(out) if out.ndim == 0 else out


def keep_count(n: int, eta: float) -> int:
    """Nearest-rank position of the ``1 - eta`` quantile among ``n`` values.

    A 1e-9 slack absorbs binary rounding, e.g. ``(1 - 0.7) * 10`` is
    ``3.0000000000000004`` and must still give 3.
    """
    if n == 0:
        return 0
    return min(n, max(1, math.ceil((1.0 - eta) * n - 1e-9)))


def extract_scale_boundary(
    scales,
    labels=None,
    background_ids=(),
    eta: float = 0.7,
    matched=None,
) -> tuple[np.ndarray, float]:
    """Small-scale boundary membership and the realized threshold.

    Candidates are matched points whose label is not a background class
    (all matched points when ``labels`` is None). The largest ``eta`` fraction
    of candidate scale magnitudes is pruned; the rest, including every tie at
    the threshold, are boundary points. Returns ``(mask, tau)``; ``tau`` is NaN
    when no candidate exists.
    """
    if not 0 < eta < 1:
        raise ValidationError(f"eta must lie in (0, 1), got {eta}")
    mag = scale_magnitude(np.asarray(scales, dtype=np.float64).reshape(-1, 3))
    n = len(mag)
    candidates = np.ones(n, dtype=bool) if matched is None else np.asarray(matched, bool).copy()
    if labels is not None:
        bg = np.fromiter((int(b) for b in background_ids), dtype=np.int64)
        candidates &= ~np.isin(np.asarray(labels), bg)
    vals = np.sort(mag[candidates])
    if not len(vals):
        log.warning("no non-background matched points; scale boundary is empty")
        return np.zeros(n, dtype=bool), float("nan")
    tau = float(vals[keep_count(len(vals), eta) - 1])
    return candidates & (mag <= tau), tau


def extract_semantic_boundary(positions, labels, r_sem: float = 0.04, threads=None, ignore_id=None) -> np.ndarray:
    """Points with a differently-labeled point within ``r_sem`` (inclusive).

    Pairs touching ``ignore_id`` are not counted.
    """
    if labels is None:
        raise ValidationError("semantic boundary requires labels")
    if not r_sem > 0:
        raise ValidationError(f"r_sem must be positive, got {r_sem}")
    P = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    y = np.asarray(labels).reshape(-1)
    if len(y) != len(P):
        raise ValidationError("labels and positions differ in length")
    index = build_index(P, r_sem)

    def chunk(s, e):
        pairs = index.query_batch(P[s:e], r_sem)
        q = pairs.query_of + s
        diff = y[q] != y[pairs.ids]
        if ignore_id is not None:
            diff &= (y[q] != ignore_id) & (y[pairs.ids] != ignore_id)
        out = np.zeros(e - s, dtype=bool)
        out[q[diff] - s] = True
        return out

    parts = map_chunks(chunk, len(P), threads)
    return np.concatenate(parts) if parts else np.zeros(0, dtype=bool)


def union_boundary(in_scale, in_sem, tau: float = float("nan"), mode: str = "labeled") -> BoundaryLabels:
    a = np.asarray(in_scale, dtype=bool)
    b = np.asarray(in_sem, dtype=bool)
    if a.shape != b.shape:
        raise ValidationError("boundary sets differ in point count")
    return BoundaryLabels(a, b, a | b, tau, mode)


def extract_boundaries(
    aug: AugmentedCloud,
    eta: float = 0.7,
    r_sem: float = 0.04,
    background_ids=(0, 1),
    labels=None,
    threads=None,
) -> BoundaryLabels:
    """Full boundary pass over an augmented cloud.

    Without labels, background exclusion and the semantic set are impossible:
    the scale set is computed over all matched points and the result is tagged
    ``mode="scale_only"``.
    """
    labels = aug.labels if labels is None else np.asarray(labels)
    if labels is None:
        in_scale, tau = extract_scale_boundary(aug.scales, None, (), eta, aug.matched)
        return union_boundary(in_scale, np.zeros(len(aug), bool), tau, mode="scale_only")
    in_scale, tau = extract_scale_boundary(aug.scales, labels, background_ids, eta, aug.matched)
    in_sem = extract_semantic_boundary(aug.cloud.positions, labels, r_sem, threads)
    return union_boundary(in_scale, in_sem, tau)
