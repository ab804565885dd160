"""Uniform-grid radius queries over 3D centroids.

Centroids are bucketed into cubic cells of a fixed edge length. A query walks
every cell overlapping the query ball's bounding box and keeps the ids whose
Euclidean distance is ``<= r``. Result id-lists are always ascending, so the
output does not depend on the order the centroids were supplied in.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .types import ValidationError

log = logging.getLogger(__name__)

# Above this many cells per query, a linear scan of all centroids is cheaper.
MAX_CELLS_PER_QUERY = 729


@dataclass(frozen=True)
class RadiusPairs:
    """CSR layout of a batched radius query: ids of query i are ``ids[offsets[i]:offsets[i+1]]``."""

    offsets: np.ndarray
    ids: np.ndarray

    def __len__(self) -> int:
        return len(self.offsets) - 1

    def __getitem__(self, i: int) -> np.ndarray:
        return self.ids[self.offsets[i]:self.offsets[i + 1]]

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def query_of(self) -> np.ndarray:
        return np.repeat(np.arange(len(self)), self.counts)


def euclidean(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Written out per component so the result is independent of batch shape.
    dx = a[..., 0] - b[..., 0]
    dy = a[..., 1] - b[..., 1]
    dz = a[..., 2] - b[..., 2]
    return np.sqrt(dx * dx + dy * dy + dz * dz)


class CentroidIndex:
    """Grid over centroids with cell edge ``cell_edge``.

    ``strict=True`` rejects non-finite centroids; otherwise they are left out of
    the grid and listed in ``rejected``.
    """

    def __init__(self, centroids, cell_edge: float, strict: bool = True):
        if not cell_edge > 0:
            raise ValidationError(f"cell_edge must be positive, got {cell_edge}")
        pts = np.asarray(centroids, dtype=np.float64).reshape(-1, 3)
        finite = np.all(np.isfinite(pts), axis=1)
        if not np.all(finite):
            bad = np.flatnonzero(~finite)
            if strict:
                raise ValidationError(f"non-finite centroid at index {int(bad[0])}")
            log.warning("excluding %d non-finite centroids from index", len(bad))
        self.rejected = np.flatnonzero(~finite)
        self.points = pts
        self.cell_edge = float(cell_edge)
        valid = np.flatnonzero(finite)
        self.size = len(pts)
        if len(valid):
            self.origin = pts[valid].min(axis=0)
            upper = pts[valid].max(axis=0)
            self.dims = np.floor((upper - self.origin) / self.cell_edge).astype(np.int64) + 1
        else:
            self.origin = np.zeros(3)
            self.dims = np.zeros(3, dtype=np.int64)
        cells = self._cell_coords(pts[valid])
        keys = self._keys(cells)
        # Stable sort on keys over ascending ids keeps each cell's list ascending.
        order = np.argsort(keys, kind="stable")
        self.sorted_ids = valid[order]
        self.cell_keys, self.cell_start, self.cell_count = np.unique(
            keys[order], return_index=True, return_counts=True
        )
        self._valid = valid

    @property
    def n_valid(self) -> int:
        return len(self._valid)

    def _cell_coords(self, pts: np.ndarray) -> np.ndarray:
        return np.floor((pts - self.origin) / self.cell_edge).astype(np.int64)

    def _keys(self, cells: np.ndarray) -> np.ndarray:
        nx, ny, nz = (int(d) for d in self.dims)
        return (cells[..., 0] * ny + cells[..., 1]) * nz + cells[..., 2]

    def cell_of(self, gid: int) -> int:
        """Key of the cell holding centroid ``gid``."""
        return int(self._keys(self._cell_coords(self.points[gid][None]))[0])

    def query(self, point, r: float) -> np.ndarray:
        return self.query_batch(np.asarray(point, dtype=np.float64).reshape(1, 3), r)[0]

    def query_batch(self, points, r: float) -> RadiusPairs:
        """Exact radius query for every row of ``points``; boundary ties included."""
        if not r > 0:
            raise ValidationError(f"query radius must be positive, got {r}")
        P = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        n = len(P)
        if n == 0 or self.n_valid == 0:
            return RadiusPairs(np.zeros(n + 1, dtype=np.int64), np.zeros(0, dtype=np.int64))
        # Widen the cell range slightly so rounding in the floor never drops a cell.
        pad = r * (1 + 1e-9) + 1e-12
        lo = np.maximum(self._cell_coords(P - pad), 0)
        hi = np.minimum(self._cell_coords(P + pad), self.dims - 1)
        span = np.maximum(hi - lo + 1, 0)
        ncells = span.prod(axis=1)
        if ncells.max(initial=0) > min(MAX_CELLS_PER_QUERY, max(self.n_valid, 27)):
            return self._scan(P, r)

        s = span.max(axis=0)
        offs = np.stack(np.meshgrid(np.arange(s[0]), np.arange(s[1]), np.arange(s[2]), indexing="ij"), -1)
        offs = offs.reshape(-1, 3)
        cells = lo[:, None, :] + offs[None, :, :]
        inside = np.all(cells <= hi[:, None, :], axis=2)
        qi, ci = np.nonzero(inside)
        keys = self._keys(cells[qi, ci])
        pos = np.searchsorted(self.cell_keys, keys)
        pos_c = np.minimum(pos, len(self.cell_keys) - 1)
        hit = self.cell_keys[pos_c] == keys
        qi = qi[hit]
        starts = self.cell_start[pos_c[hit]]
        counts = self.cell_count[pos_c[hit]]

        total = int(counts.sum())
        pair_q = np.repeat(qi, counts)
        first = np.cumsum(counts) - counts
        within = np.arange(total) - np.repeat(first, counts)
        pair_id = self.sorted_ids[np.repeat(starts, counts) + within]

        keep = euclidean(P[pair_q], self.points[pair_id]) <= r
        pair_q, pair_id = pair_q[keep], pair_id[keep]
        order = np.lexsort((pair_id, pair_q))
        return _to_csr(n, pair_q[order], pair_id[order])

    def _scan(self, P: np.ndarray, r: float) -> RadiusPairs:
        qs, ids = [], []
        G = self.points[self._valid]
        for i, p in enumerate(P):
            hit = self._valid[euclidean(G, p) <= r]
            qs.append(np.full(len(hit), i, dtype=np.int64))
            ids.append(hit)
        return _to_csr(len(P), np.concatenate(qs), np.concatenate(ids))


def _to_csr(n: int, query_idx: np.ndarray, ids: np.ndarray) -> RadiusPairs:
    counts = np.bincount(query_idx, minlength=n)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return RadiusPairs(offsets, ids.astype(np.int64))


def build_index(centroids, cell_edge: float, strict: bool = True) -> CentroidIndex:
    """Grid index over ``centroids`` (an (N, 3) array or a ``GaussianSet``)."""
    pts = getattr(centroids, "centroids", centroids)
    return CentroidIndex(pts, cell_edge, strict=strict)


def radius_query(index: CentroidIndex, point, r: float) -> np.ndarray:
    return index.query(point, r)
