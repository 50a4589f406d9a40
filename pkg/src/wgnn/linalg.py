"""Randomized truncated SVD and modified Gram-Schmidt."""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateColumnError, DimensionError, InputError, RankDeficiencyWarning

OVERSAMPLE = 10
POWER_ITERS = 4
RANK_RTOL = 1e-10


@dataclass
class MaskedMatrix:
    """Zero-filled matrix with a boolean observation mask (True = observed)."""

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.shape != self.mask.shape:
            raise DimensionError(
                f"mask shape {self.mask.shape} != values shape {self.values.shape}"
            )

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def m(self):
        return self.values.shape[1]

    @property
    def observed_count(self):
        return int(self.mask.sum())

    @classmethod
    def full(cls, values):
        values = np.asarray(values, dtype=float)
        return cls(values, np.ones(values.shape, dtype=bool))


@dataclass
class SpectralFactors:
    U: np.ndarray
    lam: np.ndarray
    V: np.ndarray

    @property
    def k(self):
        return self.lam.shape[0]

    def reconstruct(self):
        return (self.U * self.lam) @ self.V.T


def _orth(a):
    q, _ = np.linalg.qr(a)
    return q


def truncated_svd(X, k, seed=0, oversample=OVERSAMPLE, power_iters=POWER_ITERS):
    """Rank-``k`` SVD by randomized subspace iteration.

    ``X`` may be a dense array or a scipy sparse matrix. The sketch uses a
    seeded Gaussian test matrix, so the result is a deterministic function of
    ``(X, k, seed)``. Columns are sign-fixed so that the largest-magnitude
    entry of every U column is positive.

    Trailing singular values below ``1e-10 * lambda_1`` are dropped with a
    :class:`RankDeficiencyWarning`, so the returned rank may be smaller than
    ``k``.
    """
    if sp.issparse(X):
        X = X.tocsr().astype(float)
        data = X.data
    else:
        X = np.asarray(X, dtype=float)
        data = X
    if X.ndim != 2:
        raise DimensionError(f"expected a 2-d matrix, got shape {X.shape}")
    n, m = X.shape
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise DimensionError(f"k must be a positive integer, got {k!r}")
    if k > min(n, m):
        raise DimensionError(f"k={k} exceeds min(n, m)={min(n, m)}")
    if not np.all(np.isfinite(data)):
        raise InputError("input matrix contains non-finite entries")

    rng = np.random.default_rng(seed)
    width = min(k + oversample, n, m)
    omega = rng.standard_normal((m, width))
    Q = _orth(X @ omega)
    for _ in range(power_iters):
        Q = _orth(X.T @ Q)
        Q = _orth(X @ Q)
    B = np.asarray((X.T @ Q).T)
    Ub, s, Vt = np.linalg.svd(B, full_matrices=False)
    U = Q @ Ub[:, :k]
    V = Vt[:k].T
    s = s[:k].copy()

    if s[0] == 0.0:
        raise InputError("input matrix is identically zero")
    keep = int(np.sum(s >= RANK_RTOL * s[0]))
    if keep < k:
        warnings.warn(
            f"numerical rank {keep} < requested k={k}; truncating factors",
            RankDeficiencyWarning,
            stacklevel=2,
        )
        U, s, V = U[:, :keep], s[:keep], V[:, :keep]

    pivot = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[pivot, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    U = U * signs
    V = V * signs
    return SpectralFactors(np.ascontiguousarray(U), s, np.ascontiguousarray(V))


def gram_schmidt_ortho(M, tol=1e-12):
    """Orthonormalize the columns of ``M`` (modified Gram-Schmidt, two passes).

    The first output column is ``M[:, 0]`` normalized and the span of every
    leading block of columns is preserved. A column whose residual after
    projection is below ``tol`` (relative to its original norm when that
    exceeds 1) raises :class:`DegenerateColumnError`.
    """
    Q = np.array(M, dtype=float, copy=True)
    if Q.ndim != 2:
        raise DimensionError(f"expected a 2-d matrix, got shape {Q.shape}")
    if not np.all(np.isfinite(Q)):
        raise InputError("matrix contains non-finite entries")
    n, k = Q.shape
    if k > n:
        raise DimensionError(f"cannot orthonormalize {k} columns in dimension {n}")
    for j in range(k):
        v = Q[:, j]
        scale = max(1.0, float(np.linalg.norm(v)))
        for _ in range(2):
            for i in range(j):
                v -= (Q[:, i] @ v) * Q[:, i]
        norm = float(np.linalg.norm(v))
        if norm < tol * scale:
            raise DegenerateColumnError(j, norm)
        Q[:, j] = v / norm
    return Q


def orthonormality_error(Q):
    """Max-abs deviation of ``Q^T Q`` from the identity."""
    Q = np.asarray(Q)
    return float(np.max(np.abs(Q.T @ Q - np.eye(Q.shape[1]))))
