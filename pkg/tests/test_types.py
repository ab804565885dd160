import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from splat2point.types import (
    AugmentedPoint,
    GaussianPrimitive,
    GaussianSet,
    ValidationError,
    covariance_from,
    mahalanobis_distance,
    quaternion_to_matrix,
)

IDENTITY = (1.0, 0.0, 0.0, 0.0)
ROT_Z_90 = (math.cos(math.pi / 4), 0.0, 0.0, math.sin(math.pi / 4))


def test_covariance_identity_rotation():
    cov = covariance_from(IDENTITY, (1, 2, 3))
    np.testing.assert_allclose(cov.matrix, np.diag([1, 4, 9]), atol=1e-12)
    assert not cov.degenerate


def test_covariance_isotropic():
    s = 0.37
    cov = covariance_from(IDENTITY, (s, s, s))
    np.testing.assert_allclose(cov.matrix, s * s * np.eye(3), atol=1e-15)


def test_covariance_rotated_z():
    # Rz(90) maps x->y, y->-x, so the long axis (2 along local y) lands on world x.
    Rz = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    expected = Rz @ np.diag([1.0, 4.0, 1.0]) @ Rz.T
    np.testing.assert_allclose(expected, np.diag([4.0, 1.0, 1.0]))
    cov = covariance_from(ROT_Z_90, (1, 2, 1))
    np.testing.assert_allclose(cov.matrix, np.diag([4.0, 1.0, 1.0]), atol=1e-12)


def test_covariance_inverse_and_degenerate_flag():
    cov = covariance_from(ROT_Z_90, (0.1, 0.2, 0.3))
    np.testing.assert_allclose(cov.matrix @ cov.inverse, np.eye(3), atol=1e-6)
    flat = covariance_from(IDENTITY, (0.1, 0.1, 1e-6))
    assert flat.degenerate
    assert np.linalg.eigvalsh(flat.matrix).min() >= 1e-8 * (1 - 1e-9)


@pytest.mark.parametrize("field,rot,scale", [
    ("rotation", (np.nan, 0, 0, 0), (1, 1, 1)),
    ("scale", IDENTITY, (1, np.inf, 1)),
])
def test_covariance_rejects_non_finite(field, rot, scale):
    with pytest.raises(ValidationError, match=field):
        covariance_from(rot, scale)


def test_quaternion_matches_scipy(rng):
    q = rng.normal(size=(50, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    ref = Rotation.from_quat(q[:, [1, 2, 3, 0]]).as_matrix()
    np.testing.assert_allclose(quaternion_to_matrix(q), ref, atol=1e-12)


def test_mahalanobis_examples():
    cov = covariance_from(ROT_Z_90, (1, 2, 1))
    assert mahalanobis_distance((1, 0, 0), (0, 0, 0), cov) == pytest.approx(0.5, abs=1e-12)
    assert mahalanobis_distance((3, 2, 1), (3, 2, 1), cov) == 0.0


def test_mahalanobis_isotropic_equals_scaled_euclidean(rng):
    for _ in range(100):
        sigma = float(np.exp(rng.uniform(-4, 1)))
        q = rng.normal(size=4)
        cov = covariance_from(q / np.linalg.norm(q), (sigma,) * 3)
        p, mu = rng.normal(size=3), rng.normal(size=3)
        assert mahalanobis_distance(p, mu, cov) * sigma == pytest.approx(np.linalg.norm(p - mu), rel=1e-9)


unit = st.floats(-1, 1, allow_nan=False)
quats = st.tuples(unit, unit, unit, unit).filter(lambda q: np.linalg.norm(q) > 0.1)
scales = st.tuples(*[st.floats(1e-3, 10.0)] * 3)


@settings(max_examples=200, deadline=None)
@given(quats, scales)
def test_covariance_is_spd(q, s):
    cov = covariance_from(np.array(q) / np.linalg.norm(q), s)
    np.testing.assert_allclose(cov.matrix, cov.matrix.T, atol=1e-9 * np.abs(cov.matrix).max())
    assert np.linalg.eigvalsh(cov.matrix).min() > 0


@settings(max_examples=200, deadline=None)
@given(quats, quats, scales, st.tuples(*[st.floats(-2, 2)] * 3))
def test_mahalanobis_rigid_rotation_invariance(q, g, s, offset):
    q = np.array(q) / np.linalg.norm(q)
    g = np.array(g) / np.linalg.norm(g)
    mu = np.array([0.3, -0.2, 0.5])
    p = mu + np.array(offset)
    d0 = mahalanobis_distance(p, mu, covariance_from(q, s))
    # Apply rotation g to point, centroid and orientation (quaternion product g * q).
    G = quaternion_to_matrix(g)
    gw, gv = g[0], g[1:]
    qw, qv = q[0], q[1:]
    composed = np.concatenate([[gw * qw - gv @ qv], gw * qv + qw * gv + np.cross(gv, qv)])
    d1 = mahalanobis_distance(G @ p, G @ mu, covariance_from(composed, s))
    assert d1 == pytest.approx(d0, rel=1e-9, abs=1e-9)


def test_primitive_invariants():
    g = GaussianPrimitive(np.zeros(3), (2.0, 0, 0, 0), np.ones(3), 0.5)
    assert np.linalg.norm(g.rotation) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValidationError):
        GaussianPrimitive(np.zeros(3), IDENTITY, (1, 0, 1), 0.5)
    with pytest.raises(ValidationError):
        GaussianPrimitive(np.zeros(3), IDENTITY, (1, 1, 1), 1.5)


def test_gaussian_set_indexing_and_variances():
    gs = GaussianSet([[0, 0, 0], [1, 1, 1]], [IDENTITY, ROT_Z_90], [[1, 2, 3], [1e-5, 1, 1]], [0.2, 0.9])
    assert gs[1].opacity == 0.9
    var, degenerate = gs.principal_variances()
    np.testing.assert_allclose(var[0], [1, 4, 9])
    assert degenerate.tolist() == [False, True]


def test_augmented_point_has_13_features():
    p = AugmentedPoint(np.zeros(3), np.ones(3), np.array([0, 0, 1.0]), 3, scale=np.array([0.1, 0.2, 0.3]),
                       opacity=0.4, matched=True)
    assert p.features().shape == (13,)
