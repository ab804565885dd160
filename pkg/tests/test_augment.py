from fractions import Fraction

import numpy as np
import pytest

from oracles import all_pairs_match, random_gaussians
from splat2point.augment import (
    aggregate_attributes,
    augment_cloud,
    compute_weights,
    match_point,
    weights_batch,
)
from splat2point.config import PipelineConfig
from splat2point.spatial import build_index, euclidean
from splat2point.synth import APPEARANCE, FLOOR, generate_scene
from splat2point.types import GaussianSet, PointCloud, ValidationError

IDENTITY = (1.0, 0.0, 0.0, 0.0)


def make_set(centroids, scales=None, opacities=None, quats=None):
    c = np.asarray(centroids, dtype=float)
    m = len(c)
    return GaussianSet(
        c,
        np.tile(IDENTITY, (m, 1)) if quats is None else quats,
        np.full((m, 3), 0.05) if scales is None else scales,
        np.full(m, 0.5) if opacities is None else opacities,
    )


def test_weights_examples():
    np.testing.assert_allclose(compute_weights([1, 1, 1]), [1 / 3] * 3, rtol=1e-15)
    np.testing.assert_allclose(compute_weights([1, 2]), [2 / 3, 1 / 3], rtol=1e-15)
    np.testing.assert_array_equal(compute_weights([0, 5]), [1.0, 0.0])
    np.testing.assert_array_equal(compute_weights([3, 0, 0]), [0.0, 0.5, 0.5])
    with pytest.raises(ValidationError):
        compute_weights([])


def test_weights_batch_matches_single(rng):
    d = rng.uniform(0.01, 3, (200, 7))
    counts = rng.integers(1, 8, 200)
    w, sums = weights_batch(np.where(np.arange(7) < counts[:, None], d, np.inf), counts)
    for i in range(200):
        np.testing.assert_array_equal(w[i, :counts[i]], compute_weights(d[i, :counts[i]]))
        assert np.all(w[i, counts[i]:] == 0)
    assert np.all(np.abs(sums - 1) <= 1e-9)


def test_single_candidate_gets_full_weight():
    gs = make_set([[0.02, 0, 0], [5, 5, 5]])
    cfg = PipelineConfig(k=20)
    ids, d, w, level = match_point((0, 0, 0), build_index(gs.centroids, cfg.r_match), gs, cfg)
    assert ids.tolist() == [0] and w.tolist() == [1.0] and level == 0


def test_equidistant_pair_splits_evenly():
    gs = make_set([[0.03, 0, 0], [-0.03, 0, 0]])
    cfg = PipelineConfig(k=2)
    ids, d, w, _ = match_point((0, 0, 0), build_index(gs.centroids, cfg.r_match), gs, cfg)
    assert sorted(ids.tolist()) == [0, 1]
    np.testing.assert_allclose(w, [0.5, 0.5], rtol=1e-15)


def test_tie_break_by_id():
    gs = make_set([[0.03, 0, 0], [0, 0.03, 0], [-0.03, 0, 0], [0, -0.03, 0]])
    cfg = PipelineConfig(k=3)
    ids, *_ = match_point((0, 0, 0), build_index(gs.centroids, cfg.r_match), gs, cfg)
    assert ids.tolist() == [0, 1, 2]


@pytest.mark.parametrize("metric", ["mahalanobis", "euclidean"])
def test_random_match_vs_all_pairs_oracle(rng, metric):
    c, q, s, a = random_gaussians(rng, 100, extent=0.3)
    gs = GaussianSet(c, q, s, a)
    cfg = PipelineConfig(k=20, r_match=0.15, distance_metric=metric)
    idx = build_index(gs.centroids, cfg.r_match)
    for p in rng.uniform(0, 0.3, (30, 3)):
        ids, d, w, _ = match_point(p, idx, gs, cfg)
        ref_ids, ref_d, ref_w, _, _ = all_pairs_match(p, c, q, s, a, cfg.r_match, cfg.k, metric)
        assert ids.tolist() == ref_ids
        np.testing.assert_allclose(d, ref_d, rtol=1e-9)
        np.testing.assert_allclose(w, ref_w, rtol=0, atol=1e-9)


def test_aggregate_examples():
    gs = make_set([[0, 0, 0], [1, 0, 0]], scales=[[0.1, 0.2, 0.3], [1, 1, 1]], opacities=[0.8, 0.6])
    S, alpha = aggregate_attributes([0], [1.0], gs)
    np.testing.assert_allclose(S, [0.1, 0.2, 0.3])
    assert alpha == pytest.approx(0.8)
    gs2 = make_set([[0, 0, 0], [1, 0, 0]], opacities=[0.2, 0.6])
    assert aggregate_attributes([0, 1], [0.5, 0.5], gs2)[1] == pytest.approx(0.4, abs=1e-15)
    S, alpha = aggregate_attributes([], [], gs)
    assert S.tolist() == [0, 0, 0] and alpha == 0.0


def test_aggregate_vs_exact_rational(rng):
    c, q, s, a = random_gaussians(rng, 50)
    gs = GaussianSet(c, q, s, a)
    for _ in range(20):
        ids = rng.choice(50, 20, replace=False)
        w = compute_weights(rng.uniform(0.1, 4, 20))
        S, alpha = aggregate_attributes(ids, w, gs)
        exact_alpha = sum(Fraction(float(wi)) * Fraction(float(a[j])) for wi, j in zip(w, ids))
        assert abs(Fraction(alpha) - exact_alpha) < Fraction(1, 10**14)
        for ax in range(3):
            exact = sum(Fraction(float(wi)) * Fraction(float(s[j, ax])) for wi, j in zip(w, ids))
            assert abs(Fraction(float(S[ax])) - exact) < Fraction(1, 10**15)
        lo, hi = s[ids].min(axis=0), s[ids].max(axis=0)
        assert np.all(S >= lo - 1e-15) and np.all(S <= hi + 1e-15)
        assert a[ids].min() - 1e-15 <= alpha <= a[ids].max() + 1e-15


def test_point_on_gaussian_copies_attributes():
    gs = make_set([[0.5, 0.5, 0.5]], scales=[[0.01, 0.02, 0.03]], opacities=[0.7])
    aug, corr = augment_cloud(PointCloud([[0.5, 0.5, 0.5]]), gs)
    assert aug.matched.tolist() == [True]
    np.testing.assert_array_equal(aug.scales[0], [0.01, 0.02, 0.03])
    assert aug.opacities[0] == 0.7


def test_fallback_radius_doubling():
    gs = make_set([[0.3, 0, 0]])
    cloud = PointCloud([[0, 0, 0], [100, 0, 0], [0.35, 0, 0]])
    aug, corr = augment_cloud(cloud, gs, PipelineConfig(r_match=0.1))
    # 0.3 m needs radius 0.4 = 0.1 * 2**2; 100 m exceeds 0.1 * 2**5.
    assert corr.fallback.tolist() == [2, -1, 0]
    assert aug.matched.tolist() == [True, False, True]
    assert aug.scales[1].tolist() == [0, 0, 0] and aug.opacities[1] == 0


def test_no_gaussians_all_unmatched(rng):
    aug, corr = augment_cloud(PointCloud(rng.uniform(0, 1, (10, 3))), GaussianSet.empty())
    assert not aug.matched.any()
    assert np.all(corr.fallback == -1)


def test_geometry_preserved_bitwise(rng):
    c, q, s, a = random_gaussians(rng, 500)
    cloud = PointCloud(rng.uniform(0, 1, (400, 3)), rng.uniform(0, 1, (400, 3)),
                       np.tile([0.0, 0.0, 1.0], (400, 1)))
    before = [arr.copy() for arr in (cloud.positions, cloud.colors, cloud.normals)]
    aug, _ = augment_cloud(cloud, GaussianSet(c, q, s, a))
    feats = aug.features()
    assert feats.shape == (400, 13)
    for got, want in zip((feats[:, 0:3], feats[:, 3:6], feats[:, 6:9]), before):
        assert got.tobytes() == want.tobytes()


def test_weight_simplex_and_convex_hull(rng):
    c, q, s, a = random_gaussians(rng, 3000)
    gs = GaussianSet(c, q, s, a)
    aug, corr = augment_cloud(PointCloud(rng.uniform(0, 1, (3000, 3))), gs)
    m = corr.matched
    assert np.all(np.abs(corr.weights[m].sum(axis=1) - 1) <= 1e-9)
    for i in np.flatnonzero(m)[:300]:
        ids, _, w = corr.entry(i)
        assert np.all(w > 0)
        assert np.all(aug.scales[i] >= s[ids].min(axis=0) - 1e-15)
        assert np.all(aug.scales[i] <= s[ids].max(axis=0) + 1e-15)


def test_isotropic_mahalanobis_selects_like_euclidean(rng):
    c, q, _, a = random_gaussians(rng, 2000)
    gs = GaussianSet(c, q, np.full((2000, 3), 0.02), a)
    P = rng.uniform(0, 1, (1000, 3))
    _, cm = augment_cloud(PointCloud(P), gs, PipelineConfig(distance_metric="mahalanobis"))
    _, ce = augment_cloud(PointCloud(P), gs, PipelineConfig(distance_metric="euclidean"))
    np.testing.assert_array_equal(cm.ids, ce.ids)


def test_thread_and_chunk_independence(rng, monkeypatch):
    import splat2point._parallel as par

    c, q, s, a = random_gaussians(rng, 2000)
    gs = GaussianSet(c, q, s, a)
    cloud = PointCloud(rng.uniform(0, 1, (3000, 3)))
    ref, _ = augment_cloud(cloud, gs, threads=1)
    monkeypatch.setattr(par, "CHUNK", 257)
    for threads in (1, 3, 8):
        got, _ = augment_cloud(cloud, gs, threads=threads)
        assert got.features().tobytes() == ref.features().tobytes()
    order = rng.permutation(len(cloud))
    shuffled, _ = augment_cloud(PointCloud(cloud.positions[order]), gs)
    assert shuffled.features()[np.argsort(order)].tobytes() == ref.features().tobytes()


def test_plane_opacity_is_smooth():
    scene = generate_scene(preset="box-on-floor", seed=3)
    aug, _ = augment_cloud(scene.cloud, scene.gaussians)
    floor = (scene.cloud.labels == FLOOR) & ~scene.boundary
    P = scene.cloud.positions[floor]
    alpha = aug.opacities[floor]
    idx = build_index(P, 0.03)
    diffs = []
    for i in range(0, len(P), 7):
        nb = idx.query(P[i], 0.03)
        nb = nb[nb != i]
        if len(nb):
            j = nb[np.argmin(euclidean(P[nb], P[i]))]
            diffs.append(abs(alpha[i] - alpha[j]))
    lo, hi = APPEARANCE[FLOOR][1]
    # Unaggregated neighbours drawn iid from U(lo, hi) differ by (hi - lo) / 3 on average.
    assert np.mean(diffs) < (hi - lo) / 3
    assert np.all((alpha >= lo) & (alpha <= hi))
