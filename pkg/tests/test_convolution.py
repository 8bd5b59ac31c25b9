import numpy as np
import pytest

from proxymatch.convolution import (
    KernelSpec,
    conv2_bruteforce,
    correlation,
    identity_kernel,
    kernel_neighborhoods,
    lattice_coords,
    lattice_flat_index,
    lemma1_attention_form,
    product_kernel,
    shift_matrix,
    theorem1_check,
)


def _line_offsets(eps):
    # centered 1-D offsets along the first lattice axis
    half = eps // 2
    return np.array([[o, 0, 0] for o in range(-half, eps - half)])


def _random_shape(rng, max_side=6):
    # at most two axes > 1 to keep the brute-force loop small
    dims = [int(rng.integers(1, max_side + 1)), int(rng.integers(1, 4)), 1]
    rng.shuffle(dims)
    return tuple(dims)


def test_kernel_spec_validation():
    with pytest.raises(ValueError, match="unique"):
        KernelSpec(np.zeros((2, 6), dtype=np.int64), np.ones(2))
    with pytest.raises(ValueError):
        KernelSpec(np.zeros((1, 5), dtype=np.int64), np.ones(1))
    k = identity_kernel(2.5)
    assert k.n_heads == 1
    assert k.weight_table()[(0, 0, 0, 0, 0, 0)] == 2.5


def test_lattice_helpers():
    coords = lattice_coords((2, 3, 1))
    assert coords.shape == (6, 3)
    np.testing.assert_array_equal(coords[0], [0, 0, 0])
    np.testing.assert_array_equal(coords[-1], [1, 2, 0])
    flat = lattice_flat_index((2, 3, 1), np.array([[0, 2, 0], [2, 0, 0], [-1, 0, 0]]))
    np.testing.assert_array_equal(flat, [2, -1, -1])


def test_shift_matrix_semantics():
    S = shift_matrix((4, 1, 1), np.array([1, 0, 0]))
    v = np.array([10.0, 20.0, 30.0, 40.0])
    # (S v)[i] = v[i + 1], zero at the boundary
    np.testing.assert_array_equal(S @ v, [20.0, 30.0, 40.0, 0.0])


def test_correlation_orthonormal_rows_identity():
    q, _ = np.linalg.qr(np.random.default_rng(0).normal(size=(4, 4)))
    F = q.T
    np.testing.assert_allclose(correlation(F, F), np.eye(4), atol=1e-12)


def test_correlation_zero_row_and_loop_oracle():
    rng = np.random.default_rng(1)
    F_X = rng.normal(size=(5, 3))
    F_X[2] = 0.0
    F_Y = rng.normal(size=(4, 3))
    C = correlation(F_X, F_Y)
    np.testing.assert_array_equal(C[2], np.zeros(4))
    for x in range(5):
        for y in range(4):
            assert abs(C[x, y] - float(np.dot(F_X[x], F_Y[y]))) < 1e-12
    with pytest.raises(ValueError):
        correlation(F_X, rng.normal(size=(4, 2)))


def test_conv_identity_kernel_returns_correlation():
    rng = np.random.default_rng(2)
    shape = (4, 1, 1)
    F_X = rng.normal(size=(4, 3))
    F_Y = rng.normal(size=(4, 3))
    k = identity_kernel()
    nbh = kernel_neighborhoods(shape, shape, k)
    out = conv2_bruteforce(F_X, F_Y, nbh, k)
    np.testing.assert_allclose(out, correlation(F_X, F_Y), atol=1e-12)


def test_conv_box_kernel_is_box_sum():
    # all-ones kernel over {-1,0,1} x {-1,0,1} on 1-D lattices: the output
    # at (x, y) is the 3x3 box sum of C centered at (x, y), zero-padded
    rng = np.random.default_rng(3)
    n = 5
    shape = (n, 1, 1)
    F_X = rng.normal(size=(n, 2))
    F_Y = rng.normal(size=(n, 2))
    offs = _line_offsets(3)
    k = product_kernel(offs, offs, np.ones(9))
    nbh = kernel_neighborhoods(shape, shape, k)
    out = conv2_bruteforce(F_X, F_Y, nbh, k)
    C = correlation(F_X, F_Y)
    padded = np.zeros((n + 2, n + 2))
    padded[1:-1, 1:-1] = C
    for x in range(n):
        for y in range(n):
            box = padded[x:x + 3, y:y + 3].sum()
            assert abs(out[x, y] - box) < 1e-12


def test_conv_linearity_in_kernel_and_features():
    rng = np.random.default_rng(4)
    shape = (4, 1, 1)
    F_X = rng.normal(size=(4, 3))
    F_Y = rng.normal(size=(4, 3))
    offs = _line_offsets(3)
    w = rng.normal(size=9)
    k = product_kernel(offs, offs, w)
    k_scaled = product_kernel(offs, offs, 2.5 * w)
    nbh = kernel_neighborhoods(shape, shape, k)
    base = conv2_bruteforce(F_X, F_Y, nbh, k)
    np.testing.assert_allclose(
        conv2_bruteforce(F_X, F_Y, nbh, k_scaled), 2.5 * base, atol=1e-12)
    np.testing.assert_allclose(
        conv2_bruteforce(3.0 * F_X, F_Y, nbh, k), 3.0 * base, atol=1e-12)


def test_lemma1_identity_and_zero_kernel():
    rng = np.random.default_rng(5)
    shape = (3, 2, 1)
    F_X = rng.normal(size=(6, 2))
    F_Y = rng.normal(size=(6, 2))
    np.testing.assert_allclose(
        lemma1_attention_form(F_X, F_Y, shape, shape, identity_kernel()),
        correlation(F_X, F_Y), atol=1e-12)
    offs = _line_offsets(3)
    zero_k = product_kernel(offs, offs, np.zeros(9))
    np.testing.assert_allclose(
        lemma1_attention_form(F_X, F_Y, shape, shape, zero_k), 0.0, atol=0)


def test_lemma1_matches_bruteforce_small():
    rng = np.random.default_rng(6)
    shape = (4, 1, 1)
    F_X = rng.normal(size=(4, 2))
    F_Y = rng.normal(size=(4, 2))
    offs = _line_offsets(3)
    k = product_kernel(offs, offs, rng.normal(size=9))
    nbh = kernel_neighborhoods(shape, shape, k)
    a = conv2_bruteforce(F_X, F_Y, nbh, k)
    b = lemma1_attention_form(F_X, F_Y, shape, shape, k)
    assert np.abs(a - b).max() < 1e-12


def test_lemma1_matches_bruteforce_many_random_instances():
    # the executable equivalence check across random lattices and kernels
    rng = np.random.default_rng(7)
    for _ in range(60):
        shape_x = _random_shape(rng)
        shape_y = _random_shape(rng)
        d = int(rng.integers(1, 4))
        nx = int(np.prod(shape_x))
        ny = int(np.prod(shape_y))
        F_X = rng.normal(size=(nx, d))
        F_Y = rng.normal(size=(ny, d))
        n_offs_x = int(rng.integers(1, 4))
        n_offs_y = int(rng.integers(1, 4))
        offs_x = rng.integers(-2, 3, size=(8, 3))
        offs_x = np.unique(offs_x, axis=0)[:n_offs_x]
        offs_y = rng.integers(-2, 3, size=(8, 3))
        offs_y = np.unique(offs_y, axis=0)[:n_offs_y]
        w = rng.normal(size=offs_x.shape[0] * offs_y.shape[0])
        k = product_kernel(offs_x, offs_y, w)
        nbh = kernel_neighborhoods(shape_x, shape_y, k)
        a = conv2_bruteforce(F_X, F_Y, nbh, k)
        b = lemma1_attention_form(F_X, F_Y, shape_x, shape_y, k)
        assert np.abs(a - b).max() < 1e-12


def test_theorem1_certificate_small():
    offs = _line_offsets(3)
    k = product_kernel(offs, offs, np.random.default_rng(8).normal(size=9))
    report = theorem1_check((4, 1, 1), (4, 1, 1), 2, k, seed=8)
    assert report["max_abs_err"] < 1e-6
    assert report["config"]["n_heads"] == 9
    assert report["config"]["d_proxy"] == 18
    assert report["elapsed_ms"] >= 0.0


def test_theorem1_zero_kernel():
    offs = _line_offsets(3)
    k = product_kernel(offs, offs, np.zeros(9))
    report = theorem1_check((5, 1, 1), (4, 1, 1), 2, k, seed=1)
    assert report["max_abs_err"] == 0.0


def test_theorem1_single_head_identity_displacement():
    report = theorem1_check((4, 1, 1), (4, 1, 1), 3, identity_kernel(1.7), seed=2)
    assert report["max_abs_err"] < 1e-9


def test_theorem1_asymmetric_lattices_and_dims():
    rng = np.random.default_rng(9)
    offs_x = _line_offsets(2)
    offs_y = _line_offsets(3)
    k = product_kernel(offs_x, offs_y, rng.normal(size=6))
    report = theorem1_check((6, 1, 1), (5, 1, 1), 4, k, seed=3)
    assert report["max_abs_err"] < 1e-6
