import warnings

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from wgnn.errors import DegenerateColumnError, DimensionError, InputError, RankDeficiencyWarning
from wgnn.linalg import MaskedMatrix, gram_schmidt_ortho, orthonormality_error, truncated_svd


def test_masked_matrix_shape_check():
    with pytest.raises(DimensionError):
        MaskedMatrix(np.zeros((2, 3)), np.ones((3, 2), dtype=bool))
    M = MaskedMatrix.full(np.ones((2, 3)))
    assert (M.n, M.m, M.observed_count) == (2, 3, 6)


def test_svd_identity():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        f = truncated_svd(np.eye(3), 2)
    np.testing.assert_allclose(f.lam, [1.0, 1.0], atol=1e-12)


def test_svd_diagonal():
    f = truncated_svd(np.diag([3.0, 2.0, 1.0]), 2)
    np.testing.assert_allclose(f.lam, [3.0, 2.0], atol=1e-12)
    np.testing.assert_allclose(np.abs(f.U), np.eye(3)[:, :2], atol=1e-12)
    # sign convention: largest entry of each U column is positive
    np.testing.assert_allclose(f.U, np.eye(3)[:, :2], atol=1e-12)


def test_svd_low_rank_reconstruction():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((50, 5)) @ rng.standard_normal((5, 40))
    f = truncated_svd(X, 5, seed=3)
    err = np.linalg.norm(X - f.reconstruct()) / np.linalg.norm(X)
    assert err <= 1e-8
    assert orthonormality_error(f.U) < 1e-6 and orthonormality_error(f.V) < 1e-6
    assert np.all(np.diff(f.lam) <= 0) and np.all(f.lam >= 0)


def test_svd_matches_exact_leading_values():
    rng = np.random.default_rng(1)
    A, _ = np.linalg.qr(rng.standard_normal((80, 60)))
    B, _ = np.linalg.qr(rng.standard_normal((60, 60)))
    X = (A * 0.8 ** np.arange(60)) @ B.T
    f = truncated_svd(X, 10)
    exact = np.linalg.svd(X, compute_uv=False)[:10]
    np.testing.assert_allclose(f.lam, exact, rtol=1e-10)
    # with a flat spectrum the sketch is only approximate
    G = rng.standard_normal((80, 60))
    g = truncated_svd(G, 10)
    np.testing.assert_allclose(g.lam, np.linalg.svd(G, compute_uv=False)[:10], rtol=1e-2)


def test_svd_sparse_input_agrees_with_dense():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((40, 30)) * (rng.random((40, 30)) < 0.2)
    a = truncated_svd(X, 6, seed=5)
    b = truncated_svd(sp.csr_matrix(X), 6, seed=5)
    np.testing.assert_allclose(a.lam, b.lam, rtol=1e-10)
    np.testing.assert_allclose(a.U, b.U, atol=1e-8)


def test_svd_is_bit_reproducible():
    X = np.random.default_rng(4).standard_normal((30, 20))
    a, b = truncated_svd(X, 5, seed=9), truncated_svd(X, 5, seed=9)
    assert np.array_equal(a.U, b.U) and np.array_equal(a.lam, b.lam) and np.array_equal(a.V, b.V)


def test_svd_errors():
    with pytest.raises(DimensionError):
        truncated_svd(np.ones((3, 4)), 4)
    with pytest.raises(DimensionError):
        truncated_svd(np.ones((3, 4)), 0)
    X = np.ones((3, 3))
    X[0, 0] = np.nan
    with pytest.raises(InputError):
        truncated_svd(X, 1)


def test_svd_rank_clamp_warns():
    X = np.outer(np.arange(1.0, 6.0), np.arange(1.0, 5.0))
    with pytest.warns(RankDeficiencyWarning):
        f = truncated_svd(X, 3)
    assert f.k == 1


def test_gram_schmidt_examples():
    np.testing.assert_allclose(gram_schmidt_ortho(np.eye(3)), np.eye(3))
    Q = gram_schmidt_ortho(np.array([[1.0, 1.0], [0.0, 1.0]]))
    np.testing.assert_allclose(Q, np.eye(2), atol=1e-15)


def test_gram_schmidt_against_qr():
    rng = np.random.default_rng(5)
    M = rng.standard_normal((100, 8))
    Q = gram_schmidt_ortho(M)
    assert orthonormality_error(Q) <= 1e-10
    Qr, _ = np.linalg.qr(M)
    # same span: projecting M onto Q loses nothing
    assert np.linalg.norm(M - Q @ (Q.T @ M)) <= 1e-8
    # columns agree with Householder QR up to sign
    np.testing.assert_allclose(np.abs(Q), np.abs(Qr), atol=1e-10)
    np.testing.assert_allclose(Q[:, 0], M[:, 0] / np.linalg.norm(M[:, 0]))


def test_gram_schmidt_degenerate_column_named():
    M = np.array([[1.0, 2.0, 0.0], [0.0, 0.0, 1.0], [1.0, 2.0, 0.0]])
    with pytest.raises(DegenerateColumnError) as info:
        gram_schmidt_ortho(M)
    assert info.value.column == 1


def test_gram_schmidt_ill_conditioned_stays_orthonormal():
    # Hilbert-like columns lose orthogonality under classical Gram-Schmidt
    n, k = 60, 8
    x = np.linspace(0, 1, n)
    M = np.stack([x**j for j in range(k)], axis=1)
    Q = gram_schmidt_ortho(M)
    assert orthonormality_error(Q) <= 1e-8


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_gram_schmidt_property(k, seed):
    M = np.random.default_rng(seed).standard_normal((k + 5, k))
    Q = gram_schmidt_ortho(M)
    assert orthonormality_error(Q) <= 1e-8
    assert np.linalg.norm(M - Q @ (Q.T @ M)) <= 1e-8 * max(1.0, np.linalg.norm(M))
