"""Deterministic synthetic indoor scenes with ground-truth edge labels.

Scenes are unions of labeled planar rectangles. Points and Gaussians are
sampled on the rectangles; Gaussians are flat discs whose two in-plane axes
span the surface. Near a declared geometric edge (within ``d_edge``) the
Gaussians are shrunk by ``shrink`` and sampled ``edge_boost`` times denser,
mimicking how optimized splats densify into small primitives at object
borders. Opacity ranges are disjoint per object.

Presets:

``door-on-wall``
    a door coplanar with a wall, standing on a floor.
``box-on-floor``
    a closed box (five visible faces) resting on a floor.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .types import GaussianSet, PointCloud, ValidationError

WALL, FLOOR, CABINET, DOOR = 0, 1, 2, 7
BACKGROUND = frozenset({WALL, FLOOR})

# Per-label appearance: (rgb, opacity range). Opacity ranges do not overlap.
APPEARANCE = {
    WALL: ((0.82, 0.80, 0.76), (0.55, 0.70)),
    FLOOR: ((0.45, 0.33, 0.22), (0.30, 0.45)),
    CABINET: ((0.30, 0.30, 0.35), (0.74, 0.84)),
    DOOR: ((0.55, 0.35, 0.20), (0.88, 0.98)),
}


@dataclass(frozen=True)
class Rect:
    """Rectangle ``origin + s * size[0] * u + t * size[1] * v`` for s, t in [0, 1]."""

    origin: tuple
    u: tuple
    v: tuple
    size: tuple
    label: int
    holes: tuple = ()

    @property
    def normal(self) -> np.ndarray:
        n = np.cross(self.u, self.v)
        return n / np.linalg.norm(n)

    @property
    def area(self) -> float:
        return self.size[0] * self.size[1] - sum(h.area for h in self.holes)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """``n`` points uniform on the rectangle minus its holes (rejection sampling)."""
        out = []
        need = n
        while need > 0:
            st = rng.random((max(2 * need, 16), 2))
            pts = self.at(st)
            keep = ~np.any([h.contains(pts) for h in self.holes], axis=0) if self.holes else np.ones(len(pts), bool)
            pts = pts[keep][:need]
            out.append(pts)
            need -= len(pts)
        return np.concatenate(out) if out else np.zeros((0, 3))

    def at(self, st: np.ndarray) -> np.ndarray:
        o, u, v = (np.asarray(a, dtype=np.float64) for a in (self.origin, self.u, self.v))
        return o + st[:, :1] * self.size[0] * u + st[:, 1:2] * self.size[1] * v

    def local(self, pts: np.ndarray) -> np.ndarray:
        d = pts - np.asarray(self.origin, dtype=np.float64)
        return np.stack([d @ np.asarray(self.u), d @ np.asarray(self.v), d @ self.normal], axis=1)

    def contains(self, pts: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        loc = self.local(pts)
        return (
            (np.abs(loc[:, 2]) <= tol)
            & (loc[:, 0] >= -tol) & (loc[:, 0] <= self.size[0] + tol)
            & (loc[:, 1] >= -tol) & (loc[:, 1] <= self.size[1] + tol)
        )


def segment_distance(pts: np.ndarray, a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ab = b - a
    t = np.clip(((pts - a) @ ab) / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(pts - (a + t[:, None] * ab), axis=1)


def edge_distance(pts: np.ndarray, edges) -> np.ndarray:
    if not edges:
        return np.full(len(pts), np.inf)
    return np.min([segment_distance(pts, a, b) for a, b in edges], axis=0)


def _door_on_wall():
    door = Rect((1.0, 0.0, 0.0), (1, 0, 0), (0, 0, 1), (0.9, 2.0), DOOR)
    wall = Rect((0.0, 0.0, 0.0), (1, 0, 0), (0, 0, 1), (3.0, 2.5), WALL, holes=(door,))
    floor = Rect((0.0, 0.0, 0.0), (1, 0, 0), (0, 1, 0), (3.0, 2.0), FLOOR)
    edges = [
        ((1.0, 0, 0), (1.0, 0, 2.0)),
        ((1.9, 0, 0), (1.9, 0, 2.0)),
        ((1.0, 0, 2.0), (1.9, 0, 2.0)),
        ((0.0, 0, 0), (3.0, 0, 0)),
    ]
    return [wall, door, floor], edges


def _box_on_floor():
    x0, y0, w, d, h = 1.1, 1.2, 0.8, 0.6, 0.9
    footprint = Rect((x0, y0, 0.0), (1, 0, 0), (0, 1, 0), (w, d), FLOOR)
    floor = Rect((0.0, 0.0, 0.0), (1, 0, 0), (0, 1, 0), (3.0, 3.0), FLOOR, holes=(footprint,))
    faces = [
        Rect((x0, y0, h), (1, 0, 0), (0, 1, 0), (w, d), CABINET),
        Rect((x0, y0, 0.0), (1, 0, 0), (0, 0, 1), (w, h), CABINET),
        Rect((x0, y0 + d, 0.0), (1, 0, 0), (0, 0, 1), (w, h), CABINET),
        Rect((x0, y0, 0.0), (0, 1, 0), (0, 0, 1), (d, h), CABINET),
        Rect((x0 + w, y0, 0.0), (0, 1, 0), (0, 0, 1), (d, h), CABINET),
    ]
    c = np.array([[x0, y0], [x0 + w, y0], [x0 + w, y0 + d], [x0, y0 + d]])
    edges = []
    for i in range(4):
        a, b = c[i], c[(i + 1) % 4]
        edges.append(((a[0], a[1], 0.0), (b[0], b[1], 0.0)))
        edges.append(((a[0], a[1], h), (b[0], b[1], h)))
        edges.append(((a[0], a[1], 0.0), (a[0], a[1], h)))
    return [floor] + faces, edges


PRESETS = {"door-on-wall": _door_on_wall, "box-on-floor": _box_on_floor}


@dataclass
class SceneSpec:
    preset: str = "door-on-wall"
    seed: int = 0
    point_density: float = 1500.0  # points per m^2
    gaussian_density: float = 1000.0  # Gaussians per m^2 away from edges
    d_edge: float = 0.05
    shrink: float = 0.2
    edge_boost: float = 4.0
    base_scale: tuple = (0.02, 0.04)  # in-plane scale range, m
    normal_scale: float = 0.003
    color_noise: float = 0.03


@dataclass
class SyntheticScene:
    cloud: PointCloud
    gaussians: GaussianSet
    boundary: np.ndarray  # points within d_edge of a geometric edge
    surfaces: list
    edges: list
    spec: SceneSpec = field(default_factory=SceneSpec)

    @property
    def background_ids(self) -> frozenset:
        return BACKGROUND


def _frame_quaternions(u, v, n, theta: np.ndarray) -> np.ndarray:
    """(w, x, y, z) quaternions of frames (u cos + v sin, -u sin + v cos, n)."""
    u, v, n = (np.asarray(a, dtype=np.float64) for a in (u, v, n))
    c, s = np.cos(theta)[:, None], np.sin(theta)[:, None]
    a1 = c * u + s * v
    a2 = -s * u + c * v
    R = np.stack([a1, a2, np.broadcast_to(n, a1.shape)], axis=2)
    return _matrix_to_quaternion(R)


def _matrix_to_quaternion(R: np.ndarray) -> np.ndarray:
    q = np.empty((len(R), 4))
    for i, m in enumerate(R):
        tr = np.trace(m)
        if tr > 0:
            s = 2.0 * np.sqrt(tr + 1.0)
            q[i] = (0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s)
        elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
            q[i] = ((m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s)
        elif m[1, 1] > m[2, 2]:
            s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
            q[i] = ((m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s)
        else:
            s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
            q[i] = ((m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s)
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def _sample_gaussians(rng, rect: Rect, spec: SceneSpec, edges):
    base = rng.poisson(spec.gaussian_density * rect.area) if spec.gaussian_density > 0 else 0
    pos = rect.sample(rng, base)
    if spec.edge_boost > 1 and spec.gaussian_density > 0:
        extra = rect.sample(rng, rng.poisson((spec.edge_boost - 1) * spec.gaussian_density * rect.area))
        pos = np.concatenate([pos, extra[edge_distance(extra, edges) <= spec.d_edge]])
    n = len(pos)
    lo, hi = spec.base_scale
    scales = np.column_stack([rng.uniform(lo, hi, n), rng.uniform(lo, hi, n), np.full(n, spec.normal_scale)])
    near = edge_distance(pos, edges) <= spec.d_edge
    scales[near, :2] *= spec.shrink
    quats = _frame_quaternions(rect.u, rect.v, rect.normal, rng.uniform(0, np.pi, n))
    a_lo, a_hi = APPEARANCE[rect.label][1]
    return pos, quats, scales, rng.uniform(a_lo, a_hi, n)


def generate_scene(spec: SceneSpec | None = None, **kw) -> SyntheticScene:
    """Build a scene from ``spec`` (or keyword overrides of the defaults)."""
    spec = spec or SceneSpec(**kw)
    if spec.preset not in PRESETS:
        raise ValidationError(f"unknown preset {spec.preset!r}; choose from {sorted(PRESETS)}")
    if spec.point_density <= 0 or spec.gaussian_density < 0:
        raise ValidationError("densities must be positive")
    rng = np.random.default_rng(spec.seed)
    surfaces, edges = PRESETS[spec.preset]()

    pos, col, nrm, lab = [], [], [], []
    g_pos, g_rot, g_scale, g_op = [], [], [], []
    for rect in surfaces:
        n = rng.poisson(spec.point_density * rect.area)
        p = rect.sample(rng, n)
        rgb = np.asarray(APPEARANCE[rect.label][0])
        pos.append(p)
        col.append(np.clip(rgb + rng.normal(0, spec.color_noise, (n, 3)), 0, 1))
        nrm.append(np.broadcast_to(rect.normal, (n, 3)))
        lab.append(np.full(n, rect.label))
        gp, gq, gs, ga = _sample_gaussians(rng, rect, spec, edges)
        g_pos.append(gp)
        g_rot.append(gq)
        g_scale.append(gs)
        g_op.append(ga)

    cloud = PointCloud(np.concatenate(pos), np.concatenate(col), np.concatenate(nrm), np.concatenate(lab))
    gaussians = GaussianSet(
        np.concatenate(g_pos), np.concatenate(g_rot), np.concatenate(g_scale), np.concatenate(g_op)
    )
    boundary = edge_distance(cloud.positions, edges) <= spec.d_edge
    return SyntheticScene(cloud, gaussians, boundary, surfaces, edges, spec)


def on_surface(points: np.ndarray, surfaces, tol: float = 1e-6) -> np.ndarray:
    """Whether each point lies on at least one of ``surfaces`` within ``tol`` meters."""
    return np.any([r.contains(points, tol) for r in surfaces], axis=0)


def boundary_recall(predicted, truth, among=None) -> float:
    """Fraction of ``truth`` points (restricted to ``among``) that are ``predicted``."""
    truth = np.asarray(truth, dtype=bool)
    if among is not None:
        truth = truth & np.asarray(among, dtype=bool)
    if not truth.any():
        return float("nan")
    return float((np.asarray(predicted, dtype=bool) & truth).sum() / truth.sum())
