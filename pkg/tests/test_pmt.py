import numpy as np
import pytest

from proxymatch.features import FeatureMatrix
from proxymatch.geometry import PointCloud, knn
from proxymatch.pmt import (
    ConstraintLoss,
    PmtLayerConfig,
    PmtStackLayer,
    ProxySet,
    SparseAttention,
    build_attention,
    constraint_grad,
    constraint_losses,
    fit_proxies,
    group_norm,
    init_proxies,
    leaky_relu,
    load_proxies,
    pmt_forward,
    pmt_forward_positional,
    pmt_stack,
    save_proxies,
)


def _random_proxy_set(rng, h, dp, de):
    P = rng.normal(scale=1.0 / np.sqrt(de), size=(h, dp, de))
    w = rng.uniform(0.2, 1.0, size=h)
    return ProxySet(P, w, w * 0.5)


def test_init_feasible_blocks_orthonormal():
    cfg = PmtLayerConfig(n_heads=2, d_proxy=8, d_emb=4, epsilon=4)
    ps = init_proxies(cfg, mode="feasible", seed=3)
    eye = np.eye(4)
    for i in range(2):
        for j in range(2):
            prod = ps.proxies[i].T @ ps.proxies[j]
            target = eye if i == j else np.zeros((4, 4))
            assert np.abs(prod - target).max() < 1e-10


def test_init_feasible_scalar_case():
    cfg = PmtLayerConfig(n_heads=1, d_proxy=1, d_emb=1, epsilon=1)
    ps = init_proxies(cfg, mode="feasible", seed=0)
    assert abs(abs(ps.proxies[0, 0, 0]) - 1.0) < 1e-12


def test_init_feasible_infeasible_dims_error():
    cfg = PmtLayerConfig(n_heads=4, d_proxy=8, d_emb=4)
    with pytest.raises(ValueError, match="infeasible"):
        init_proxies(cfg, mode="feasible", seed=0)


def test_init_practical_published_dims():
    cfg = PmtLayerConfig(n_heads=4, d_proxy=32, d_emb=512)
    ps = init_proxies(cfg, mode="practical", seed=1)
    assert ps.proxies.shape == (4, 32, 512)
    # std close to 1/sqrt(512)
    assert abs(ps.proxies.std() - 1.0 / np.sqrt(512)) < 0.01
    np.testing.assert_allclose(ps.weights_x, 0.25)


def test_init_deterministic_by_seed():
    cfg = PmtLayerConfig(n_heads=2, d_proxy=8, d_emb=4)
    a = init_proxies(cfg, mode="feasible", seed=11)
    b = init_proxies(cfg, mode="feasible", seed=11)
    c = init_proxies(cfg, mode="feasible", seed=12)
    np.testing.assert_array_equal(a.proxies, b.proxies)
    assert np.abs(a.proxies - c.proxies).max() > 1e-3


def test_constraint_losses_zero_at_feasible():
    cfg = PmtLayerConfig(n_heads=3, d_proxy=12, d_emb=4)
    ps = init_proxies(cfg, mode="feasible", seed=5)
    cl = constraint_losses(ps)
    assert cl.orthonormal < 1e-18
    assert cl.cross_zero < 1e-18
    assert cl.combined < 1e-18


def test_constraint_losses_scaled_identity_block():
    # single head, proxy = 2 * identity block: P^T P = 4I, residual 3I
    de, dp = 5, 7
    P = np.zeros((1, dp, de))
    P[0, :de, :de] = 2.0 * np.eye(de)
    ps = ProxySet(P, np.ones(1), np.ones(1))
    cl = constraint_losses(ps)
    assert abs(cl.orthonormal - 9.0 * de) < 1e-12
    assert cl.cross_zero == 0.0


def test_constraint_losses_identical_orthonormal_heads():
    de, dp = 4, 8
    cfg = PmtLayerConfig(n_heads=1, d_proxy=dp, d_emb=de)
    base = init_proxies(cfg, mode="feasible", seed=2).proxies[0]
    ps = ProxySet(np.stack([base, base]), np.ones(2), np.ones(2))
    cl = constraint_losses(ps)
    assert cl.orthonormal < 1e-18
    assert abs(cl.cross_zero - de) < 1e-10


def test_constraint_grad_zero_at_feasible():
    cfg = PmtLayerConfig(n_heads=2, d_proxy=8, d_emb=4)
    ps = init_proxies(cfg, mode="feasible", seed=9)
    g = constraint_grad(ps)
    assert np.abs(g).max() < 1e-12


def test_constraint_grad_matches_finite_differences():
    rng = np.random.default_rng(17)
    step = 1e-5
    for trial in range(100):
        h = int(rng.integers(1, 4))
        dp = int(rng.integers(2, 6))
        de = int(rng.integers(2, 6))
        lo = float(rng.uniform(0.5, 2.0))
        lz = float(rng.uniform(0.5, 2.0))
        ps = _random_proxy_set(rng, h, dp, de)
        g = constraint_grad(ps, lo, lz)

        def loss(P):
            return constraint_losses(
                ProxySet(P, ps.weights_x, ps.weights_y), lo, lz
            ).combined

        # probe a handful of random entries per trial
        for _ in range(6):
            k = int(rng.integers(h))
            r = int(rng.integers(dp))
            c = int(rng.integers(de))
            Pp = ps.proxies.copy()
            Pm = ps.proxies.copy()
            Pp[k, r, c] += step
            Pm[k, r, c] -= step
            fd = (loss(Pp) - loss(Pm)) / (2 * step)
            denom = max(abs(fd), abs(g[k, r, c]), 1e-8)
            assert abs(fd - g[k, r, c]) / denom < 1e-5


def test_constraint_grad_isotropic_scaling_direction():
    # single head, P = s * orthonormal block: loss = de*(s^2-1)^2, gradient
    # along P with coefficient 4 s (s^2 - 1) / s applied entrywise
    de, dp, s = 3, 6, 1.7
    cfg = PmtLayerConfig(n_heads=1, d_proxy=dp, d_emb=de)
    base = init_proxies(cfg, mode="feasible", seed=4).proxies
    ps = ProxySet(s * base, np.ones(1), np.ones(1))
    g = constraint_grad(ps)
    expected = 4.0 * s * (s * s - 1.0) * base[0]
    np.testing.assert_allclose(g[0], expected, atol=1e-10)


def test_fit_proxies_constant_at_feasible():
    cfg = PmtLayerConfig(n_heads=2, d_proxy=8, d_emb=4)
    ps = init_proxies(cfg, mode="feasible", seed=6)
    fitted, trace = fit_proxies(ps, steps=20)
    assert np.all(trace < 1e-18)


def test_fit_proxies_reaches_zero_from_random_feasible_dims():
    rng = np.random.default_rng(23)
    for seed in range(5):
        h, de = 2, 4
        ps = _random_proxy_set(np.random.default_rng(seed), h, h * de, de)
        fitted, trace = fit_proxies(ps, steps=500, step_size=0.05)
        assert trace[-1] < 1e-6
        assert np.all(np.diff(trace) <= 1e-15)  # monotone non-increasing


def test_fit_proxies_rank_bound_plateau():
    # d_proxy < d_emb: P^T P has rank <= d_proxy so the orthonormal residual
    # cannot drop below d_emb - d_proxy per head
    h, dp, de = 2, 3, 8
    ps = _random_proxy_set(np.random.default_rng(31), h, dp, de)
    fitted, trace = fit_proxies(ps, steps=600, step_size=0.02)
    cl = constraint_losses(fitted)
    assert cl.orthonormal >= h * (de - dp) - 1e-6


def test_build_attention_single_point():
    cloud = PointCloud(np.array([[0.0, 0.0, 0.0]]))
    table = knn(cloud, cloud, 1)
    cfg = PmtLayerConfig(n_heads=1, d_proxy=4, d_emb=4, epsilon=1)
    att = build_attention(cloud, table, cfg, np.array([0.5]))
    np.testing.assert_allclose(att.weights, [[[1.0]]])


def test_build_attention_equal_distance_symmetry():
    cloud = PointCloud(np.array([[0.0, 0, 0], [1.0, 0, 0], [-1.0, 0, 0]]))
    table = knn(cloud, cloud, 3)
    cfg = PmtLayerConfig(n_heads=1, d_proxy=4, d_emb=4, epsilon=3)
    att = build_attention(cloud, table, cfg, np.array([0.7]))
    # row 0: self at d=0 plus two neighbors at d=1 with equal weight
    w = att.weights[0, 0]
    assert abs(w[1] - w[2]) < 1e-12


def test_build_attention_gaussian_ratio():
    # neighbors at d = 0 and d = sigma: weights proportional to 1 and e^-1
    cloud = PointCloud(np.array([[0.0, 0, 0], [0.5, 0, 0]]))
    table = knn(cloud, cloud, 2)
    cfg = PmtLayerConfig(n_heads=1, d_proxy=4, d_emb=4, epsilon=2)
    att = build_attention(cloud, table, cfg, np.array([0.5]))
    w = att.weights[0, 0]
    expected = np.array([1.0, np.exp(-1.0)])
    expected /= expected.sum()
    np.testing.assert_allclose(w, expected, atol=1e-12)


def test_build_attention_rows_stochastic_and_masked():
    rng = np.random.default_rng(40)
    cloud = PointCloud(rng.uniform(-1, 1, size=(3, 3)))
    table = knn(cloud, cloud, 5)  # k > population: padding present
    cfg = PmtLayerConfig(n_heads=3, d_proxy=4, d_emb=4, epsilon=5)
    att = build_attention(cloud, table, cfg, np.array([0.2, 0.5, 1.0]))
    sums = att.weights.sum(axis=2)
    np.testing.assert_allclose(sums, 1.0, atol=1e-6)
    assert np.all(att.weights[:, ~table.valid] == 0.0)


def test_build_attention_global_scope():
    rng = np.random.default_rng(41)
    cloud = PointCloud(rng.uniform(-1, 1, size=(7, 3)))
    cfg = PmtLayerConfig(n_heads=2, d_proxy=4, d_emb=4, scope="global")
    att = build_attention(cloud, None, cfg, np.array([0.5, 1.0]))
    assert att.weights.shape == (2, 7, 7)
    np.testing.assert_allclose(att.weights.sum(axis=2), 1.0, atol=1e-6)


def test_attention_permutation_equivariant():
    rng = np.random.default_rng(42)
    pts = rng.uniform(-1, 1, size=(12, 3))
    perm = rng.permutation(12)
    cfg = PmtLayerConfig(n_heads=2, d_proxy=4, d_emb=4, scope="global")
    a = build_attention(PointCloud(pts), None, cfg, np.array([0.3, 0.8]))
    b = build_attention(PointCloud(pts[perm]), None, cfg, np.array([0.3, 0.8]))
    # row i of the permuted cloud equals row perm[i] of the original with
    # columns relabeled; compare attention mass as dense matrices
    inv = np.argsort(perm)
    for h in range(2):
        dense_a = np.zeros((12, 12))
        dense_b = np.zeros((12, 12))
        for i in range(12):
            dense_a[i, a.table.indices[i]] = a.weights[h, i]
            dense_b[i, b.table.indices[i]] = b.weights[h, i]
        np.testing.assert_allclose(dense_b, dense_a[perm][:, perm], atol=1e-12)


def test_pmt_forward_identity_layer():
    # one head, self-only neighborhoods, identity proxy, unit weight
    n, d = 6, 4
    rng = np.random.default_rng(50)
    F = rng.normal(size=(n, d))
    cloud = PointCloud(rng.uniform(-1, 1, size=(n, 3)))
    table = knn(cloud, cloud, 1)  # self only
    cfg = PmtLayerConfig(n_heads=1, d_proxy=d, d_emb=d, epsilon=1)
    att = build_attention(cloud, table, cfg, np.array([1.0]))
    ps = ProxySet(np.eye(d)[None], np.ones(1), np.ones(1))
    out = pmt_forward(F, att, ps, side="X")
    np.testing.assert_allclose(out, F, atol=1e-12)


def test_pmt_forward_zero_weights():
    rng = np.random.default_rng(51)
    n, d = 5, 3
    F = rng.normal(size=(n, d))
    cloud = PointCloud(rng.uniform(-1, 1, size=(n, 3)))
    table = knn(cloud, cloud, 2)
    cfg = PmtLayerConfig(n_heads=2, d_proxy=4, d_emb=d, epsilon=2)
    att = build_attention(cloud, table, cfg, np.array([0.5, 1.0]))
    P = rng.normal(size=(2, 4, d))
    ps = ProxySet(P, np.zeros(2), np.ones(2))
    out = pmt_forward(F, att, ps, side="X")
    np.testing.assert_allclose(out, 0.0)


def test_pmt_forward_matches_positional_oracle():
    rng = np.random.default_rng(52)
    for trial in range(20):
        n = int(rng.integers(3, 33))
        de = int(rng.integers(2, 6))
        dp = int(rng.integers(2, 6))
        h = int(rng.integers(1, 4))
        k = int(rng.integers(1, min(n, 5) + 1))
        F = rng.normal(size=(n, de))
        cloud = PointCloud(rng.uniform(-1, 1, size=(n, 3)))
        table = knn(cloud, cloud, k)
        cfg = PmtLayerConfig(n_heads=h, d_proxy=dp, d_emb=de, epsilon=k)
        att = build_attention(cloud, table, cfg, rng.uniform(0.3, 1.5, size=h))
        ps = _random_proxy_set(rng, h, dp, de)
        fast = pmt_forward(F, att, ps, side="Y")
        slow = pmt_forward_positional(F, att, ps, side="Y")
        np.testing.assert_allclose(fast, slow, atol=1e-12)


def test_pmt_forward_dim_mismatch():
    rng = np.random.default_rng(53)
    cloud = PointCloud(rng.uniform(-1, 1, size=(4, 3)))
    table = knn(cloud, cloud, 2)
    cfg = PmtLayerConfig(n_heads=1, d_proxy=3, d_emb=5, epsilon=2)
    att = build_attention(cloud, table, cfg, np.array([1.0]))
    ps = _random_proxy_set(rng, 1, 3, 5)
    with pytest.raises(ValueError, match="does not match"):
        pmt_forward(rng.normal(size=(4, 7)), att, ps)


def test_pmt_stack_empty_is_identity():
    rng = np.random.default_rng(54)
    F = rng.normal(size=(5, 8))
    np.testing.assert_array_equal(pmt_stack(F, []), F)


def test_pmt_stack_identity_layer_reduces_to_normalization():
    # nonnegative features, identity transform: only group norm acts
    rng = np.random.default_rng(55)
    n, d = 6, 8
    F = rng.uniform(0.1, 1.0, size=(n, d))
    cloud = PointCloud(rng.uniform(-1, 1, size=(n, 3)))
    table = knn(cloud, cloud, 1)
    cfg = PmtLayerConfig(n_heads=1, d_proxy=d, d_emb=d, epsilon=1)
    att = build_attention(cloud, table, cfg, np.array([1.0]))
    ps = ProxySet(np.eye(d)[None], np.ones(1), np.ones(1))
    out = pmt_stack(F, [PmtStackLayer(att, ps, activate=True)])
    np.testing.assert_allclose(out, group_norm(F), atol=1e-12)


def test_pmt_stack_chain_dims():
    # published mid-level chain: 256 -> 16 -> 64
    rng = np.random.default_rng(56)
    n = 10
    F = rng.normal(size=(n, 256))
    cloud = PointCloud(rng.uniform(-1, 1, size=(n, 3)))
    table = knn(cloud, cloud, 4)
    layers = []
    for d_in, d_out in ((256, 16), (16, 64)):
        cfg = PmtLayerConfig(n_heads=4, d_proxy=d_out, d_emb=d_in, epsilon=4)
        att = build_attention(cloud, table, cfg, np.array([0.3, 0.6, 1.2, 2.4]))
        layers.append(PmtStackLayer(att, init_proxies(cfg, "practical", seed=d_out)))
    out = pmt_stack(F, layers)
    assert out.shape == (n, 64)

    bad = [layers[1], layers[0]]
    with pytest.raises(ValueError, match="chain"):
        pmt_stack(F, bad)


def test_leaky_relu_and_group_norm():
    x = np.array([[-1.0, 2.0, -3.0, 4.0]])
    np.testing.assert_allclose(leaky_relu(x), [[-0.1, 2.0, -0.3, 4.0]])
    g = group_norm(np.arange(8.0)[None], groups=4)
    # pairs (0,1), (2,3), ... each normalize to (-1, 1) / sqrt(var + eps)
    assert g.shape == (1, 8)
    np.testing.assert_allclose(g[0, 0], -g[0, 1], atol=1e-9)


def test_proxy_serialization_roundtrip(tmp_path):
    rng = np.random.default_rng(60)
    ps = _random_proxy_set(rng, 3, 5, 4)
    path = str(tmp_path / "proxies.bin")
    save_proxies(path, ps)
    back = load_proxies(path)
    np.testing.assert_array_equal(back.proxies, ps.proxies)
    np.testing.assert_array_equal(back.weights_x, ps.weights_x)
    np.testing.assert_array_equal(back.weights_y, ps.weights_y)
    with open(path, "rb") as f:
        assert f.read(4) == b"PMT1"
    with pytest.raises(ValueError, match="bad magic"):
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"NOPE" + b"\x00" * 16)
        load_proxies(str(bad))


def test_sparse_attention_validation():
    rng = np.random.default_rng(61)
    cloud = PointCloud(rng.uniform(-1, 1, size=(4, 3)))
    table = knn(cloud, cloud, 2)
    good = np.full((1, 4, 2), 0.5)
    SparseAttention(good, table, np.array([1.0]))
    with pytest.raises(ValueError, match="sum to 1"):
        SparseAttention(good * 0.9, table, np.array([1.0]))
    with pytest.raises(ValueError, match="nonnegative"):
        bad = good.copy()
        bad[0, 0] = [-0.5, 1.5]
        SparseAttention(bad, table, np.array([1.0]))
