import numpy as np
import pytest

from proxymatch.features import FeatureMatrix, Pyramid, PyramidConfig, build_pyramid, describe
from proxymatch.geometry import PointCloud, knn, random_rotation


def _random_cloud(rng, n, with_normals=True):
    pts = rng.uniform(-1, 1, size=(n, 3))
    normals = None
    if with_normals:
        normals = rng.normal(size=(n, 3))
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(pts, normals)


def test_describe_rejects_small_dim():
    cloud = _random_cloud(np.random.default_rng(0), 10)
    table = knn(cloud, cloud, 4)
    with pytest.raises(ValueError, match="descriptor dim too small"):
        describe(cloud, table, 8)


def test_describe_rows_unit_norm():
    rng = np.random.default_rng(1)
    for with_normals in (True, False):
        cloud = _random_cloud(rng, 60, with_normals)
        table = knn(cloud, cloud, 10)
        fm = describe(cloud, table, 48)
        assert fm.values.shape == (60, 48)
        np.testing.assert_allclose(np.linalg.norm(fm.values, axis=1), 1.0, atol=1e-9)


def test_describe_rotation_invariant():
    rng = np.random.default_rng(2)
    for trial in range(5):
        cloud = _random_cloud(rng, 80)
        R = random_rotation(rng)
        rotated = PointCloud(cloud.points @ R.T, cloud.normals @ R.T)
        a = describe(cloud, knn(cloud, cloud, 12), 64)
        b = describe(rotated, knn(rotated, rotated, 12), 64)
        assert np.abs(a.values - b.values).max() < 1e-6


def test_describe_translation_invariant():
    rng = np.random.default_rng(12)
    cloud = _random_cloud(rng, 50)
    shifted = PointCloud(cloud.points + np.array([10.0, -3.0, 7.0]), cloud.normals)
    a = describe(cloud, knn(cloud, cloud, 10), 32)
    b = describe(shifted, knn(shifted, shifted, 10), 32)
    assert np.abs(a.values - b.values).max() < 1e-6


def test_describe_planar_patch_planarity_dominates():
    # two concentric rings plus center in a tilted plane: in-plane covariance
    # is exactly isotropic, so the eigenvalue triple is (a, a, 0)
    u = np.array([1.0, 0.2, -0.3])
    u /= np.linalg.norm(u)
    v = np.cross(u, [0.0, 0.0, 1.0])
    v /= np.linalg.norm(v)
    theta = np.arange(8) * (2 * np.pi / 8)
    ring = np.cos(theta)[:, None] * u + np.sin(theta)[:, None] * v
    pts = np.vstack([ring, 0.5 * ring, np.zeros((1, 3))])
    cloud = PointCloud(pts)
    table = knn(cloud, cloud, len(pts))  # whole cloud as each neighborhood
    fm = describe(cloud, table, 16)
    # base block layout: eigs[0:3], linearity[3], planarity[4], sphericity[5]
    shape_triple = fm.values[:, 3:6]
    assert np.all(np.argmax(shape_triple, axis=1) == 1)
    np.testing.assert_allclose(shape_triple[:, 1], shape_triple.sum(axis=1), atol=1e-9)


def test_describe_tiling_sign_flips():
    rng = np.random.default_rng(4)
    cloud = _random_cloud(rng, 20, with_normals=False)  # base block width 14
    table = knn(cloud, cloud, 8)
    fm = describe(cloud, table, 42)  # three full repeats
    a, b, c = fm.values[:, :14], fm.values[:, 14:28], fm.values[:, 28:42]
    np.testing.assert_allclose(b, -a, atol=1e-12)
    np.testing.assert_allclose(c, a, atol=1e-12)


def test_describe_single_point():
    cloud = PointCloud(np.array([[0.3, 0.4, 0.5]]))
    table = knn(cloud, cloud, 5)
    fm = describe(cloud, table, 16)
    assert fm.values.shape == (1, 16)
    assert np.all(np.isfinite(fm.values))
    np.testing.assert_allclose(np.linalg.norm(fm.values[0]), 1.0, atol=1e-9)


def test_build_pyramid_sizes_and_parents():
    rng = np.random.default_rng(5)
    cloud = _random_cloud(rng, 5000)
    pyr = build_pyramid(cloud, PyramidConfig(dims=(64, 32, 16)))
    coarse, mid, fine = pyr.clouds
    assert len(fine) == 5000
    assert len(coarse) < len(mid) < len(fine)
    # parent maps are total functions into the next-coarser level
    assert pyr.parent_fine_to_mid.shape == (len(fine),)
    assert pyr.parent_mid_to_coarse.shape == (len(mid),)
    assert pyr.parent_fine_to_mid.min() >= 0
    assert pyr.parent_fine_to_mid.max() < len(mid)
    assert pyr.parent_mid_to_coarse.min() >= 0
    assert pyr.parent_mid_to_coarse.max() < len(coarse)
    # feature rows align with level point counts, dims ordered coarse->fine
    for lvl, (c, f, d) in enumerate(zip(pyr.clouds, pyr.features, (64, 32, 16)), 1):
        assert len(f) == len(c)
        assert f.dim == d
        assert f.level == lvl


def test_build_pyramid_single_point():
    cloud = PointCloud(np.array([[0.0, 0.0, 0.0]]))
    pyr = build_pyramid(cloud, PyramidConfig(base_cell=0.1, dims=(16, 16, 16)))
    assert all(len(c) == 1 for c in pyr.clouds)


def test_build_pyramid_lattice_voxel_count():
    # 8x8x8 lattice, spacing 1: cell 2r=2 merges 2x2x2 blocks -> 64 cells,
    # then 4r=4 over the 4x4x4 centroid grid (spacing 2) merges pairs -> 8
    g = np.arange(8, dtype=np.float64)
    pts = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    pyr = build_pyramid(PointCloud(pts), PyramidConfig(base_cell=1.0, dims=(16, 16, 16)))
    coarse, mid, fine = pyr.clouds
    assert len(fine) == 512
    assert len(mid) == 64
    assert len(coarse) == 8


def test_feature_matrix_validation():
    with pytest.raises(ValueError):
        FeatureMatrix(np.array([[np.inf, 0.0]]))
    with pytest.raises(ValueError):
        FeatureMatrix(np.zeros((2, 4)), level=5)
    with pytest.raises(ValueError):
        PyramidConfig(dims=(0, 4, 4))
