"""Tests for the coarse-to-fine correspondence pipeline."""
import numpy as np
import pytest

import proxymatch.matcher as matcher
from proxymatch.features import build_pyramid
from proxymatch.geometry import PointCloud
from proxymatch.matcher import (
    CoarseMatch,
    Correspondences,
    MatchConfig,
    NoMatch,
    build_matcher_proxies,
    coarse_scores,
    correspondences_to_json,
    group_point_to_node,
    marginal_violation,
    match_pair,
    sinkhorn_ot,
    topk_matches,
)


@pytest.fixture(scope="module")
def cfg():
    return MatchConfig()


@pytest.fixture(scope="module")
def proxies(cfg):
    return build_matcher_proxies(cfg)


@pytest.fixture(scope="module")
def volume_cloud():
    # volumetric noise: every neighborhood is geometrically distinctive,
    # which makes self-matching nearly unambiguous
    rng = np.random.default_rng(2)
    return PointCloud(rng.random((700, 3)), None)


@pytest.fixture(scope="module")
def volume_pyramid(volume_cloud):
    return build_pyramid(volume_cloud)


@pytest.fixture(scope="module")
def self_match(volume_pyramid, cfg, proxies):
    return match_pair(volume_pyramid, volume_pyramid, cfg, proxies)


class TestMatchConfig:
    def test_defaults(self, cfg):
        assert cfg.k == 128
        assert cfg.sinkhorn_iterations == 100
        assert cfg.temperature == 0.1
        assert cfg.dustbin_score == 1.0
        assert cfg.epsilon == 16
        assert cfg.n_heads == 4
        assert cfg.emb_dims == (512, 256, 128)
        assert cfg.proxy_dims == ((32, 128), (16, 64), (8, 32))

    def test_validation(self):
        with pytest.raises(ValueError):
            MatchConfig(k=0)
        with pytest.raises(ValueError):
            MatchConfig(temperature=0.0)
        with pytest.raises(ValueError):
            MatchConfig(emb_dims=(64, 32))

    def test_digest_stable_and_sensitive(self, cfg):
        assert cfg.digest() == MatchConfig().digest()
        assert cfg.digest() != MatchConfig(k=64).digest()


class TestCoarseScores:
    def test_identical_rows_score_one(self):
        f = np.array([[0.3, -0.2, 1.0]])
        assert coarse_scores(f, f)[0, 0] == pytest.approx(1.0)

    def test_unit_squared_distance(self):
        a = np.zeros((1, 4))
        b = np.array([[1.0, 0.0, 0.0, 0.0]])
        assert coarse_scores(a, b)[0, 0] == pytest.approx(np.exp(-1.0))

    def test_matches_per_entry_loop(self):
        rng = np.random.default_rng(0)
        fx = rng.normal(size=(4, 6))
        fy = rng.normal(size=(4, 6))
        got = coarse_scores(fx, fy)
        for i in range(4):
            for j in range(4):
                want = np.exp(-np.sum((fx[i] - fy[j]) ** 2))
                assert abs(got[i, j] - want) < 1e-12

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ValueError, match="dims"):
            coarse_scores(np.zeros((2, 3)), np.zeros((2, 4)))

    def test_range(self):
        rng = np.random.default_rng(1)
        s = coarse_scores(rng.normal(size=(5, 8)), rng.normal(size=(7, 8)))
        assert np.all(s > 0) and np.all(s <= 1.0)


class TestTopkMatches:
    def test_unique_max(self):
        s = np.array([[0.1, 0.9], [0.3, 0.2]])
        (m,) = topk_matches(s, 1)
        assert (m.x, m.y, m.score) == (0, 1, 0.9)

    def test_all_equal_ties_lexicographic(self):
        s = np.full((3, 3), 0.5)
        got = [(m.x, m.y) for m in topk_matches(s, 3)]
        assert got == [(0, 0), (0, 1), (0, 2)]

    @pytest.mark.parametrize("shape,k", [((10, 10), 5), ((17, 31), 40), ((100, 100), 128)])
    def test_agrees_with_full_sort(self, shape, k):
        rng = np.random.default_rng(shape[0] * 1000 + k)
        s = rng.random(shape)
        got = [(m.x, m.y) for m in topk_matches(s, k)]
        flat = [(-s[i, j], i, j) for i in range(shape[0]) for j in range(shape[1])]
        want = [(i, j) for _, i, j in sorted(flat)[:k]]
        assert got == want

    def test_descending_scores(self):
        rng = np.random.default_rng(4)
        ms = topk_matches(rng.random((8, 8)), 10)
        scores = [m.score for m in ms]
        assert scores == sorted(scores, reverse=True)

    def test_oversized_k_clamps_with_warning(self):
        s = np.array([[0.2, 0.1]])
        with pytest.warns(UserWarning, match="clamp"):
            got = topk_matches(s, 5)
        assert len(got) == 2


class TestGrouping:
    def test_single_coarse_node_takes_all(self):
        groups = group_point_to_node(np.zeros(7, dtype=int), np.zeros(1, dtype=int), 1)
        assert len(groups) == 1
        assert np.array_equal(np.sort(groups[0]), np.arange(7))

    def test_partitions_fine_points(self):
        rng = np.random.default_rng(5)
        f2m = rng.integers(0, 6, size=40)
        m2c = rng.integers(0, 3, size=6)
        groups = group_point_to_node(f2m, m2c, 4)
        assert len(groups) == 4
        merged = np.concatenate(groups)
        assert merged.size == 40
        assert np.array_equal(np.sort(merged), np.arange(40))

    def test_separated_clusters_stay_separate(self):
        f2m = np.array([0] * 5 + [1] * 5 + [2] * 5 + [3] * 5)
        m2c = np.array([0, 0, 1, 1])
        groups = group_point_to_node(f2m, m2c, 2)
        assert np.array_equal(np.sort(groups[0]), np.arange(10))
        assert np.array_equal(np.sort(groups[1]), np.arange(10, 20))

    def test_empty_nodes_allowed(self):
        groups = group_point_to_node(np.zeros(3, dtype=int), np.zeros(1, dtype=int), 3)
        assert [g.size for g in groups] == [3, 0, 0]


class TestSinkhorn:
    def test_single_strong_pair_concentrates(self, cfg):
        plan = sinkhorn_ot(np.array([[5.0]]), cfg)
        assert plan.shape == (2, 2)
        assert plan[0, 0] > 0.9

    def test_symmetric_scores_symmetric_plan(self, cfg):
        plan = sinkhorn_ot(np.array([[0.9, 0.4], [0.4, 0.9]]), cfg)
        assert np.abs(plan - plan.T).max() < 1e-12

    def test_total_mass_and_shape(self, cfg):
        rng = np.random.default_rng(6)
        plan = sinkhorn_ot(rng.random((5, 9)), cfg)
        assert plan.shape == (6, 10)
        assert plan.sum() == pytest.approx(5 + 9, abs=1e-9)

    def test_marginals_converge_on_random_problems(self, cfg):
        rng = np.random.default_rng(7)
        for _ in range(3):
            plan = sinkhorn_ot(rng.random((50, 50)), cfg)
            assert marginal_violation(plan) < 1e-6

    def test_nan_scores_rejected(self, cfg):
        s = np.array([[0.1, np.nan]])
        with pytest.raises(ValueError, match="NaN"):
            sinkhorn_ot(s, cfg)

    def test_empty_rejected(self, cfg):
        with pytest.raises(ValueError):
            sinkhorn_ot(np.zeros((0, 3)), cfg)


class TestMatchPair:
    def test_self_match_recovers_self_pairs(self, self_match):
        assert isinstance(self_match, Correspondences)
        self_rate = np.mean(self_match.src_indices == self_match.dst_indices)
        assert self_rate >= 0.9

    def test_weights_in_unit_interval(self, self_match):
        assert np.all(self_match.weights > 0)
        assert np.all(self_match.weights <= 1.0)

    def test_one_pair_per_source_point(self, self_match):
        assert len(np.unique(self_match.src_indices)) == len(self_match)

    def test_points_align_with_indices(self, self_match, volume_cloud):
        assert np.array_equal(
            self_match.src_points, volume_cloud.points[self_match.src_indices])
        assert np.array_equal(
            self_match.dst_points, volume_cloud.points[self_match.dst_indices])

    def test_deterministic(self, volume_pyramid, cfg, proxies, self_match):
        again = match_pair(volume_pyramid, volume_pyramid, cfg, proxies)
        assert again.src_indices.tobytes() == self_match.src_indices.tobytes()
        assert again.dst_indices.tobytes() == self_match.dst_indices.tobytes()
        assert again.weights.tobytes() == self_match.weights.tobytes()

    def test_uninformative_descriptors_yield_no_match(
            self, volume_pyramid, cfg, proxies, monkeypatch):
        # constant per-side descriptors: every patch score ties, the dustbin
        # wins every row, and extraction must report the typed empty outcome
        original = matcher.refined_fine_descriptors

        def flat(pyramid, cfg_, proxies_, side):
            out = original(pyramid, cfg_, proxies_, side)
            vec = np.zeros(out.shape[1])
            vec[0 if side == "X" else 1] = 0.45
            return np.tile(vec, (out.shape[0], 1))

        monkeypatch.setattr(matcher, "refined_fine_descriptors", flat)
        res = match_pair(volume_pyramid, volume_pyramid, cfg, proxies)
        assert isinstance(res, NoMatch)
        assert "threshold" in res.reason

    def test_permutation_leaves_geometry_pairs_stable(
            self, volume_cloud, volume_pyramid, cfg, proxies, self_match):
        perm = np.random.default_rng(8).permutation(len(volume_cloud))
        permuted = PointCloud(volume_cloud.points[perm], None)
        res_p = match_pair(build_pyramid(permuted), volume_pyramid, cfg, proxies)
        pairs = set(zip(self_match.src_indices.tolist(),
                        self_match.dst_indices.tolist()))
        pairs_p = set(zip(perm[res_p.src_indices].tolist(),
                          res_p.dst_indices.tolist()))
        # identical up to float-summation order in the fine descriptors,
        # which can flip pairs sitting exactly at the transport threshold
        jaccard = len(pairs & pairs_p) / len(pairs | pairs_p)
        assert jaccard >= 0.95

    def test_return_patches(self, volume_pyramid, cfg, proxies):
        res, patches = match_pair(
            volume_pyramid, volume_pyramid, cfg, proxies, return_patches=True)
        assert isinstance(res, Correspondences)
        assert patches
        for p in patches:
            assert p.plan.shape == (p.members_x.size + 1, p.members_y.size + 1)
            assert p.confidence >= 0.0


class TestSerialization:
    def test_json_payload(self, self_match, cfg, volume_pyramid):
        doc = correspondences_to_json(self_match, cfg, volume_pyramid, volume_pyramid)
        assert len(doc["pairs"]) == len(self_match)
        assert doc["meta"]["config_digest"] == cfg.digest()
        assert doc["meta"]["level_sizes_x"] == [len(c) for c in volume_pyramid.clouds]
        first = doc["pairs"][0]
        assert first["w"] == pytest.approx(self_match.weights[0])
        assert first["src"] == [float(v) for v in self_match.src_points[0]]
