"""Domain types: Gaussian primitives, point clouds, covariances, correspondences.

Single items (``GaussianPrimitive``, ``CloudPoint``, ``AugmentedPoint``) are
small frozen dataclasses. Scenes are held column-wise in ``GaussianSet``,
``PointCloud`` and ``AugmentedCloud`` so that million-primitive scenes stay
in numpy arrays; indexing a set returns the single-item view.

Canonical units: meters for positions and scales (linear, not log), opacity as
a probability in [0, 1], quaternions as unit (w, x, y, z).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPS_SIGMA = 1e-8


class ValidationError(ValueError):
    """Input failed a domain check (non-finite value, bad range, shape mismatch)."""


def _check_finite(name: str, value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"non-finite value in {name}: {arr!r}")
    return arr


def normalize_quaternions(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise ValidationError("zero-norm quaternion")
    return q / norm


def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for (w, x, y, z) quaternions, shape (..., 3, 3).

    The input is normalized first; a zero quaternion raises ``ValidationError``.
    """
    q = normalize_quaternions(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


@dataclass(frozen=True)
class Covariance3:
    """Conditioned 3x3 covariance with its cached inverse."""

    matrix: np.ndarray
    inverse: np.ndarray
    degenerate: bool


def covariance_from(rotation, scale, eps: float = EPS_SIGMA) -> Covariance3:
    """Build ``R diag(s)^2 R^T`` and condition it for inversion.

    Eigenvalues below ``eps`` (m^2) are clamped up to ``eps``; the returned
    matrix is the conditioned one and ``degenerate`` records whether any
    clamping happened.
    """
    q = _check_finite("rotation", rotation)
    s = _check_finite("scale", scale)
    if q.shape != (4,):
        raise ValidationError(f"rotation must be a (w, x, y, z) quaternion, got shape {q.shape}")
    if s.shape != (3,):
        raise ValidationError(f"scale must be a 3-vector, got shape {s.shape}")
    if np.any(s <= 0):
        raise ValidationError(f"scale components must be positive: {s!r}")
    R = quaternion_to_matrix(q)
    # R is orthonormal, so the eigenpairs of the covariance are (s**2, columns of R).
    evals = s * s
    degenerate = bool(np.any(evals < eps))
    evals = np.maximum(evals, eps)
    matrix = (R * evals) @ R.T
    inverse = (R / evals) @ R.T
    return Covariance3(0.5 * (matrix + matrix.T), 0.5 * (inverse + inverse.T), degenerate)


def mahalanobis_distance(point, centroid, cov: Covariance3) -> float:
    p = _check_finite("point", point)
    mu = _check_finite("centroid", centroid)
    d = p - mu
    if not np.any(d):
        return 0.0
    return float(np.sqrt(max(float(d @ cov.inverse @ d), 0.0)))


@dataclass(frozen=True)
class GaussianPrimitive:
    centroid: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    opacity: float
    sh_payload: bytes = b""

    def __post_init__(self):
        c = _check_finite("centroid", self.centroid)
        q = _check_finite("rotation", self.rotation)
        s = _check_finite("scale", self.scale)
        if np.any(s <= 0):
            raise ValidationError(f"scale components must be positive: {s!r}")
        if not 0.0 <= self.opacity <= 1.0:
            raise ValidationError(f"opacity outside [0, 1]: {self.opacity}")
        object.__setattr__(self, "centroid", c)
        object.__setattr__(self, "rotation", normalize_quaternions(q))
        object.__setattr__(self, "scale", s)

    def covariance(self, eps: float = EPS_SIGMA) -> Covariance3:
        return covariance_from(self.rotation, self.scale, eps)


@dataclass
class GaussianSet:
    """Column-wise Gaussian scene.

    ``extra`` is a numpy structured array of every stored property that is not
    one of the geometric/opacity fields (SH coefficients, normals, ...), kept
    verbatim so that files round-trip.
    """

    centroids: np.ndarray
    rotations: np.ndarray
    scales: np.ndarray
    opacities: np.ndarray
    extra: np.ndarray | None = None
    header: object = None

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64).reshape(-1, 3)
        n = len(self.centroids)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.scales = np.asarray(self.scales, dtype=np.float64).reshape(n, 3)
        self.opacities = np.asarray(self.opacities, dtype=np.float64).reshape(n)
        if n:
            self.rotations = normalize_quaternions(self.rotations)
        if self.extra is not None and len(self.extra) != n:
            raise ValidationError("extra payload length does not match Gaussian count")

    def __len__(self) -> int:
        return len(self.centroids)

    def __getitem__(self, i: int) -> GaussianPrimitive:
        payload = self.extra[i].tobytes() if self.extra is not None else b""
        return GaussianPrimitive(
            self.centroids[i], self.rotations[i], self.scales[i], float(self.opacities[i]), payload
        )

    @classmethod
    def from_primitives(cls, prims) -> "GaussianSet":
        prims = list(prims)
        if not prims:
            return cls.empty()
        return cls(
            np.array([g.centroid for g in prims]),
            np.array([g.rotation for g in prims]),
            np.array([g.scale for g in prims]),
            np.array([g.opacity for g in prims]),
        )

    @classmethod
    def empty(cls) -> "GaussianSet":
        return cls(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0))

    def validate(self) -> None:
        for name in ("centroids", "rotations", "scales", "opacities"):
            _check_finite(name, getattr(self, name))
        if np.any(self.scales <= 0):
            raise ValidationError("scale components must be positive")
        if np.any((self.opacities < 0) | (self.opacities > 1)):
            raise ValidationError("opacity outside [0, 1]")

    def rotation_matrices(self) -> np.ndarray:
        if not len(self):
            return np.zeros((0, 3, 3))
        return quaternion_to_matrix(self.rotations)

    def principal_variances(self, eps: float = EPS_SIGMA) -> tuple[np.ndarray, np.ndarray]:
        """Clamped per-axis variances and the degenerate mask.

        The eigenvalues of ``R S S^T R^T`` are exactly ``s**2``, so conditioning
        the batch reduces to clamping them.
        """
        var = self.scales * self.scales
        degenerate = np.any(var < eps, axis=1)
        return np.maximum(var, eps), degenerate


@dataclass(frozen=True)
class CloudPoint:
    position: np.ndarray
    color: np.ndarray
    normal: np.ndarray
    label: int | None = None


@dataclass(frozen=True)
class AugmentedPoint(CloudPoint):
    scale: np.ndarray = field(default_factory=lambda: np.zeros(3))
    opacity: float = 0.0
    matched: bool = False

    def features(self) -> np.ndarray:
        return np.concatenate(
            [self.position, self.color, self.normal, self.scale, [self.opacity]]
        )


@dataclass
class PointCloud:
    positions: np.ndarray
    colors: np.ndarray | None = None
    normals: np.ndarray | None = None
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = len(self.positions)
        self.colors = (
            np.zeros((n, 3)) if self.colors is None else np.asarray(self.colors, np.float64).reshape(n, 3)
        )
        self.normals = (
            np.zeros((n, 3)) if self.normals is None else np.asarray(self.normals, np.float64).reshape(n, 3)
        )
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(n)

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, i: int) -> CloudPoint:
        label = None if self.labels is None else int(self.labels[i])
        return CloudPoint(self.positions[i], self.colors[i], self.normals[i], label)

    def validate(self, num_classes: int | None = None) -> None:
        for name in ("positions", "colors", "normals"):
            _check_finite(name, getattr(self, name))
        norms = np.linalg.norm(self.normals, axis=1)
        bad = (norms != 0) & (np.abs(norms - 1) > 1e-4)
        if np.any(bad):
            raise ValidationError(f"non-unit normal at point {int(np.argmax(bad))}")
        if num_classes is not None and self.labels is not None and np.any(self.labels >= num_classes):
            raise ValidationError(f"label id >= class count {num_classes}")


@dataclass
class AugmentedCloud:
    """Point cloud extended with aggregated Gaussian scale and opacity."""

    cloud: PointCloud
    scales: np.ndarray
    opacities: np.ndarray
    matched: np.ndarray

    def __len__(self) -> int:
        return len(self.cloud)

    def __getitem__(self, i: int) -> AugmentedPoint:
        c = self.cloud[i]
        return AugmentedPoint(
            c.position, c.color, c.normal, c.label,
            scale=self.scales[i], opacity=float(self.opacities[i]), matched=bool(self.matched[i]),
        )

    @property
    def labels(self) -> np.ndarray | None:
        return self.cloud.labels

    def features(self) -> np.ndarray:
        """The (N, 13) feature matrix: position, color, normal, scale, opacity."""
        c = self.cloud
        return np.concatenate(
            [c.positions, c.colors, c.normals, self.scales, self.opacities[:, None]], axis=1
        )


@dataclass
class CorrespondenceSet:
    """Per-point matched Gaussians, padded to ``k`` columns.

    Padding uses id -1, distance inf and weight 0. ``fallback`` is the number of
    radius doublings needed to find candidates (0 for a direct hit, -1 when
    every doubling failed).
    """

    ids: np.ndarray
    distances: np.ndarray
    weights: np.ndarray
    counts: np.ndarray
    fallback: np.ndarray

    def __len__(self) -> int:
        return len(self.counts)

    def entry(self, i: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = int(self.counts[i])
        return self.ids[i, :n], self.distances[i, :n], self.weights[i, :n]

    @property
    def matched(self) -> np.ndarray:
        return self.counts > 0


@dataclass
class BoundaryLabels:
    in_scale: np.ndarray
    in_sem: np.ndarray
    in_union: np.ndarray
    tau: float = float("nan")
    mode: str = "labeled"

    def __len__(self) -> int:
        return len(self.in_union)

    def counts(self) -> dict[str, int]:
        return {
            "scale": int(self.in_scale.sum()),
            "sem": int(self.in_sem.sum()),
            "union": int(self.in_union.sum()),
            "overlap": int((self.in_scale & self.in_sem).sum()),
        }

    @classmethod
    def empty(cls, n: int) -> "BoundaryLabels":
        z = np.zeros(n, dtype=bool)
        return cls(z, z.copy(), z.copy())
