"""Standardization, thin SVDs and ridge-regularized covariance operators.

Everything here works through the thin SVD of the data so that a p x p
covariance matrix is never formed or factorized when p >> n.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateBasis, DimensionMismatch, RankDeficient, ZeroVarianceColumn

RANK_RTOL = 1e-10


@dataclass(frozen=True)
class DataMatrix:
    """An n x p data matrix plus the column scaling used to produce it.

    ``column_means`` and ``column_sds`` are in the units of the raw data, so
    new samples can be mapped onto the same scale with :meth:`apply`.
    """

    values: np.ndarray
    column_means: np.ndarray
    column_sds: np.ndarray
    standardized: bool = True

    @property
    def shape(self):
        return self.values.shape

    @property
    def n_samples(self):
        return self.values.shape[0]

    @property
    def n_features(self):
        return self.values.shape[1]

    def apply(self, raw):
        """Scale new rows with the stored means and standard deviations."""
        raw = np.asarray(raw, dtype=float)
        return (raw - self.column_means) / self.column_sds


def as_array(X):
    """Return the underlying float array of a DataMatrix or array-like."""
    if isinstance(X, DataMatrix):
        return X.values
    return np.asarray(X, dtype=float)


def standardize(raw):
    """Center every column and scale it to unit sample variance (ddof=1).

    Raises
    ------
    ZeroVarianceColumn
        If some column is constant.
    """
    raw = np.array(raw, dtype=float)
    if raw.ndim != 2:
        raise ValueError(f"expected a 2-d array, got shape {raw.shape}")
    n, p = raw.shape
    if n < 2 or p < 1:
        raise ValueError(f"need at least 2 rows and 1 column, got {raw.shape}")
    if not np.all(np.isfinite(raw)):
        raise ValueError("data contains non-finite entries")
    means = raw.mean(axis=0)
    centered = raw - means
    sds = np.sqrt((centered**2).sum(axis=0) / (n - 1))
    # constant columns leave only rounding noise after centering
    scale = np.maximum(np.abs(raw).max(axis=0), 1.0)
    bad = np.flatnonzero(sds <= 1e-14 * scale)
    if bad.size:
        raise ZeroVarianceColumn(int(bad[0]))
    return DataMatrix(centered / sds, means, sds, True)


def cross_covariance(X, Y):
    """Sample cross-covariance ``X^T Y / (n - 1)`` of centered data."""
    x, y = as_array(X), as_array(Y)
    if x.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"row count mismatch: {x.shape[0]} vs {y.shape[0]}")
    return x.T @ y / (x.shape[0] - 1)


def ridge_constant(dim, n):
    """Diagonal inflation ``sqrt(log(dim) / n)`` added to a sample covariance."""
    if dim < 1 or n < 1:
        raise ValueError("dim and n must be positive")
    return float(np.sqrt(np.log(dim) / n))


@dataclass(frozen=True)
class ThinSvd:
    left: np.ndarray  # n x r
    singular_values: np.ndarray  # r, nonincreasing
    right: np.ndarray  # p x r

    @classmethod
    def of(cls, X):
        x = as_array(X)
        u, s, vt = np.linalg.svd(x, full_matrices=False)
        r = int(np.sum(s > RANK_RTOL * s[0])) if s.size and s[0] > 0 else 0
        return cls(u[:, :r], s[:r], vt[:r].T)

    @property
    def rank(self):
        return self.singular_values.size

    def reconstruct(self):
        return (self.left * self.singular_values) @ self.right.T


class RegCovOperator:
    """Implicit ``S + ridge * I`` where ``S = X^T X / (n - 1)``.

    With ``X = U D V^T`` the operator is ``V diag(d^2/(n-1) + ridge) V^T``
    plus ``ridge`` on the orthogonal complement of ``V``; all products cost
    O(p r m) for an m-column argument.
    """

    def __init__(self, X, ridge=None):
        x = as_array(X)
        self.n_samples, self.dim = x.shape
        self.svd = ThinSvd.of(x)
        self.ridge = ridge_constant(self.dim, self.n_samples) if ridge is None else float(ridge)
        self.eigenvalues = self.svd.singular_values**2 / (self.n_samples - 1)

    @property
    def basis(self):
        return self.svd.right

    def _spectral(self, M, fn_eig, fn_ridge):
        M = np.asarray(M, dtype=float)
        V = self.svd.right
        coef = V.T @ M
        inside = V @ (fn_eig[:, None] * coef if M.ndim == 2 else fn_eig * coef)
        if self.svd.rank == self.dim:
            return inside
        return inside + fn_ridge * (M - V @ coef)

    def forward(self, M):
        """``(S + ridge I) M``."""
        return self._spectral(M, self.eigenvalues + self.ridge, self.ridge)

    def inv(self, M):
        """``(S + ridge I)^{-1} M``."""
        if self.ridge <= 0 and self.svd.rank < self.dim:
            raise RankDeficient("covariance is singular and the ridge is zero")
        r = self.ridge
        return self._spectral(M, 1.0 / (self.eigenvalues + r), 1.0 / r if r > 0 else 0.0)

    def inv_sqrt(self, M):
        """``(S + ridge I)^{-1/2} M``."""
        if self.ridge <= 0 and self.svd.rank < self.dim:
            raise RankDeficient("covariance is singular and the ridge is zero")
        r = self.ridge
        return self._spectral(
            M, 1.0 / np.sqrt(self.eigenvalues + r), 1.0 / np.sqrt(r) if r > 0 else 0.0
        )

    def dense(self):
        """Materialize the p x p matrix (for tests and small problems only)."""
        return self.forward(np.eye(self.dim))


def inv_reg_cov_times(op, M):
    return op.inv(M)


def inv_sqrt_reg_cov_times(op, v):
    return op.inv_sqrt(v)


@dataclass(frozen=True)
class NonsparseTriple:
    alpha: np.ndarray
    beta: np.ndarray
    rho: float
    singular_value: float


def _fix_sign(alpha, beta):
    if alpha[np.argmax(np.abs(alpha))] < 0:
        return -alpha, -beta
    return alpha, beta


def nonsparse_init(X, Y, k=1, op_x=None, op_y=None):
    """k-th (1-based) ridge-regularized CCA pair.

    Computes the SVD of ``S~xx^{-1/2} Sxy S~yy^{-1/2}`` through the n x n
    cores of both thin SVDs. The returned vectors ``S~^{-1/2} u_k`` and
    ``S~^{-1/2} v_k`` are scaled to unit l2 norm and ``rho`` is the square
    root of the k-th singular value.
    """
    x, y = as_array(X), as_array(Y)
    n = x.shape[0]
    if y.shape[0] != n:
        raise DimensionMismatch(f"row count mismatch: {n} vs {y.shape[0]}")
    kmax = min(n - 1, x.shape[1], y.shape[1])
    if not 1 <= k <= kmax:
        raise ValueError(f"component index must lie in [1, {kmax}], got {k}")
    op_x = op_x or RegCovOperator(x)
    op_y = op_y or RegCovOperator(y)
    sx, sy = op_x.svd, op_y.svd
    ax = 1.0 / np.sqrt(op_x.eigenvalues + op_x.ridge)
    ay = 1.0 / np.sqrt(op_y.eigenvalues + op_y.ridge)
    core = (ax * sx.singular_values)[:, None] * (sx.left.T @ sy.left) * (sy.singular_values * ay)
    core /= n - 1
    if core.size == 0:
        raise RankDeficient("data matrix has rank zero")
    P, lam, Qt = np.linalg.svd(core)
    rank = int(np.sum(lam > RANK_RTOL * lam[0])) if lam[0] > 0 else 0
    if k > max(rank, 1) or k > lam.size:
        raise RankDeficient(f"component {k} exceeds the rank {rank} of the CCA matrix")
    alpha = sx.right @ (ax * P[:, k - 1])
    beta = sy.right @ (ay * Qt[k - 1])
    alpha /= np.linalg.norm(alpha)
    beta /= np.linalg.norm(beta)
    alpha, beta = _fix_sign(alpha, beta)
    sv = float(lam[k - 1])
    return NonsparseTriple(alpha, beta, float(np.sqrt(sv)), sv)


def deflate(X, basis):
    """Project the rows of X onto the orthogonal complement of ``basis``.

    ``basis`` is p x m (m may be 0). Its columns are orthonormalized by QR
    first, so they need not be orthogonal.
    """
    x = as_array(X)
    B = np.asarray(basis, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    if B.shape[0] != x.shape[1]:
        raise DimensionMismatch(f"basis has {B.shape[0]} rows, data has {x.shape[1]} columns")
    if B.shape[1] == 0:
        out = x.copy()
    else:
        Q, R = np.linalg.qr(B)
        norms = np.linalg.norm(B, axis=0)
        diag = np.abs(np.diag(R))
        if np.any(norms == 0) or np.any(diag < RANK_RTOL * norms):
            raise DegenerateBasis("deflation basis is rank-deficient")
        out = x - (x @ Q) @ Q.T
    if isinstance(X, DataMatrix):
        return DataMatrix(out, X.column_means, X.column_sds, False)
    p = x.shape[1]
    return DataMatrix(out, np.zeros(p), np.ones(p), False)
