import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from netcca.exceptions import DegenerateBasis, DimensionMismatch, RankDeficient, ZeroVarianceColumn
from netcca.linalg import (
    RegCovOperator,
    ThinSvd,
    cross_covariance,
    deflate,
    inv_reg_cov_times,
    inv_sqrt_reg_cov_times,
    nonsparse_init,
    ridge_constant,
    standardize,
)

from conftest import dense_power, dense_reg_cov


def random_standardized(rng, n, p):
    return standardize(rng.normal(size=(n, p)))


class TestStandardize:
    def test_constant_column_rejected(self):
        with pytest.raises(ZeroVarianceColumn) as err:
            standardize([[1.0, 0.0], [1.0, 2.0], [1.0, 5.0]])
        assert err.value.index == 0

    def test_hand_value(self):
        # sample sd with denominator n - 1 is exactly 1 here
        out = standardize(np.array([[-1.0], [0.0], [1.0]]))
        assert_allclose(out.values[:, 0], [-1.0, 0.0, 1.0], atol=1e-12)
        out = standardize(np.array([[-1.0], [0.0], [1.0], [4.0]]))
        assert_allclose(out.values[:, 0], [-2 * np.sqrt(3 / 14), -np.sqrt(3 / 14), 0.0, 3 * np.sqrt(3 / 14)], atol=1e-12)

    def test_idempotent(self, rng):
        once = standardize(rng.normal(3, 2, size=(20, 5)))
        twice = standardize(once.values)
        assert_allclose(twice.values, once.values, atol=1e-10)

    def test_moments_and_metadata(self, rng):
        raw = rng.normal(5, 3, size=(30, 4))
        d = standardize(raw)
        assert d.standardized
        assert_allclose(d.values.mean(axis=0), 0, atol=1e-10)
        assert_allclose(d.values.var(axis=0, ddof=1), 1, atol=1e-8)
        assert_allclose(d.apply(raw), d.values, atol=1e-12)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            standardize([[1.0, np.nan], [2.0, 1.0]])


class TestCrossCovariance:
    def test_self_covariance_has_unit_diagonal(self, rng):
        x = random_standardized(rng, 15, 4)
        s = cross_covariance(x, x)
        assert_allclose(np.diag(s), 1, atol=1e-10)

    def test_orthogonal_blocks_give_zero(self):
        x = np.array([[1.0], [-1.0], [1.0], [-1.0]])
        y = np.array([[1.0], [1.0], [-1.0], [-1.0]])
        assert_allclose(cross_covariance(x, y), 0, atol=1e-15)

    def test_matches_triple_loop(self):
        x = np.array([[1.0, -2.0], [0.5, 1.0], [-1.5, 1.0]])
        y = np.array([[2.0], [-1.0], [-1.0]])
        expect = np.zeros((2, 1))
        for i in range(2):
            for j in range(1):
                expect[i, j] = sum(x[k, i] * y[k, j] for k in range(3)) / 2
        assert_allclose(cross_covariance(x, y), expect, atol=1e-15)
        assert_allclose(cross_covariance(y, x), expect.T, atol=1e-15)

    def test_row_mismatch(self, rng):
        with pytest.raises(DimensionMismatch):
            cross_covariance(rng.normal(size=(4, 2)), rng.normal(size=(5, 2)))


class TestRidgeConstant:
    def test_dim_one_is_zero(self):
        assert ridge_constant(1, 10) == 0

    def test_unit_value(self):
        assert ridge_constant(round(np.e**10), 10) == pytest.approx(1.0, abs=1e-5)

    def test_frozen_value(self):
        # sqrt(log(500) / 80) evaluated in 30-digit arithmetic
        assert ridge_constant(500, 80) == pytest.approx(0.278715986678693, abs=1e-14)


class TestRegCovOperator:
    def test_inverse_matches_dense_wide(self, rng):
        x = random_standardized(rng, 30, 200).values
        op = RegCovOperator(x)
        M = rng.normal(size=(200, 3))
        dense = np.linalg.solve(dense_reg_cov(x), M)
        assert np.max(np.abs(inv_reg_cov_times(op, M) - dense)) <= 1e-8

    def test_inverse_of_forward(self, rng):
        x = random_standardized(rng, 12, 40).values
        op = RegCovOperator(x)
        w = rng.normal(size=40)
        assert_allclose(op.inv(dense_reg_cov(x) @ w), w, atol=1e-8)
        assert_allclose(op.inv(op.forward(w)), w, atol=1e-8)

    def test_identity_covariance(self, rng):
        n, p = 12, 5
        # orthonormal columns orthogonal to the constant vector
        q, _ = np.linalg.qr(np.column_stack([np.ones(n), rng.normal(size=(n, p))]))
        x = q[:, 1:] * np.sqrt(n - 1)
        op = RegCovOperator(x)
        M = rng.normal(size=(p, 2))
        assert_allclose(op.inv(M), M / (1 + op.ridge), atol=1e-10)
        assert_allclose(op.inv_sqrt(M[:, 0]), M[:, 0] / np.sqrt(1 + op.ridge), atol=1e-10)

    def test_inverse_sqrt_matches_dense(self, rng):
        x = random_standardized(rng, 25, 100).values
        op = RegCovOperator(x)
        v = rng.normal(size=100)
        expect = dense_power(dense_reg_cov(x), -0.5) @ v
        assert np.max(np.abs(inv_sqrt_reg_cov_times(op, v) - expect)) <= 1e-8

    def test_inverse_sqrt_squared(self, rng):
        x = random_standardized(rng, 10, 30).values
        op = RegCovOperator(x)
        v = rng.normal(size=30)
        assert_allclose(op.inv_sqrt(op.inv_sqrt(v)), op.inv(v), atol=1e-8)

    def test_same_from_reconstruction(self, rng):
        x = random_standardized(rng, 15, 25).values
        svd = ThinSvd.of(x)
        assert np.linalg.norm(x - svd.reconstruct()) / np.linalg.norm(x) <= 1e-8
        assert_allclose(svd.right.T @ svd.right, np.eye(svd.rank), atol=1e-8)
        a, b = RegCovOperator(x), RegCovOperator(svd.reconstruct())
        v = rng.normal(size=25)
        assert_allclose(a.inv(v), b.inv(v), atol=1e-8)
        assert_allclose(a.inv_sqrt(v), b.inv_sqrt(v), atol=1e-8)

    def test_ridge_positive(self, rng):
        assert RegCovOperator(rng.normal(size=(5, 2))).ridge > 0


@given(st.integers(0, 10_000), st.integers(3, 12), st.integers(2, 30))
def test_inverse_forward_identity_property(seed, n, p):
    rng = np.random.default_rng(seed)
    x = standardize(rng.normal(size=(n, p))).values
    op = RegCovOperator(x)
    w = rng.normal(size=p)
    assert_allclose(op.inv(op.forward(w)), w, atol=1e-8)


def dense_init(x, y, k):
    """Nonsparse pair from dense matrix powers (test oracle)."""
    sx, sy = dense_reg_cov(x), dense_reg_cov(y)
    sxy = x.T @ y / (x.shape[0] - 1)
    ix, iy = dense_power(sx, -0.5), dense_power(sy, -0.5)
    u, lam, vt = np.linalg.svd(ix @ sxy @ iy)
    a, b = ix @ u[:, k - 1], iy @ vt[k - 1]
    a, b = a / np.linalg.norm(a), b / np.linalg.norm(b)
    if a[np.argmax(np.abs(a))] < 0:
        a, b = -a, -b
    return a, b, np.sqrt(lam[k - 1]), lam


class TestNonsparseInit:
    def test_matches_dense_oracle_small(self, rng):
        z = rng.normal(size=(50, 1))
        x = standardize(z + rng.normal(size=(50, 2))).values
        y = standardize(z + rng.normal(size=(50, 2))).values
        got = nonsparse_init(x, y, 1)
        a, b, rho, _ = dense_init(x, y, 1)
        assert_allclose(got.alpha, a, atol=1e-8)
        assert_allclose(got.beta, b, atol=1e-8)
        assert got.rho == pytest.approx(rho, abs=1e-8)

    def test_matches_dense_oracle_wide(self, rng):
        x = random_standardized(rng, 20, 35).values
        y = random_standardized(rng, 20, 28).values
        for k in (1, 2, 3):
            got = nonsparse_init(x, y, k)
            a, b, rho, _ = dense_init(x, y, k)
            assert_allclose(got.alpha, a, atol=1e-8)
            assert_allclose(got.beta, b, atol=1e-8)
            assert got.rho == pytest.approx(rho, abs=1e-8)

    def test_unit_norm_and_order(self, rng):
        x = random_standardized(rng, 20, 10).values
        y = random_standardized(rng, 20, 8).values
        svs = []
        for k in range(1, 6):
            t = nonsparse_init(x, y, k)
            assert np.linalg.norm(t.alpha) == pytest.approx(1, abs=1e-10)
            assert np.linalg.norm(t.beta) == pytest.approx(1, abs=1e-10)
            assert 0 <= t.rho <= 1 + 1e-8
            svs.append(t.singular_value)
        assert all(a >= b - 1e-12 for a, b in zip(svs, svs[1:]))

    def test_zero_cross_covariance(self):
        x = np.array([[1.0], [-1.0], [1.0], [-1.0]])
        y = np.array([[1.0], [1.0], [-1.0], [-1.0]])
        t = nonsparse_init(x, y, 1)
        assert t.rho == 0
        assert np.linalg.norm(t.alpha) == pytest.approx(1)

    def test_rank_deficient_component(self):
        x = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        y = x[:, :1] + 0.0
        x2 = np.column_stack([x[:, 0], x[:, 0]])
        with pytest.raises((RankDeficient, ValueError)):
            nonsparse_init(x2, np.column_stack([y, y]), 2)

    def test_sign_convention(self, rng):
        x = random_standardized(rng, 20, 6).values
        y = random_standardized(rng, 20, 5).values
        t = nonsparse_init(x, y, 1)
        assert t.alpha[np.argmax(np.abs(t.alpha))] > 0
        # flipping the sign of X flips the raw singular vector, not the output
        t2 = nonsparse_init(-x, y, 1)
        assert_allclose(t2.alpha, t.alpha, atol=1e-10)
        assert_allclose(t2.beta, -t.beta, atol=1e-10)

    def test_component_out_of_range(self, rng):
        x = random_standardized(rng, 5, 3).values
        with pytest.raises(ValueError):
            nonsparse_init(x, x, 4)


class TestDeflate:
    def test_empty_basis(self, rng):
        x = rng.normal(size=(6, 4))
        assert_allclose(deflate(x, np.zeros((4, 0))).values, x)

    def test_unit_vector_zeroes_column(self, rng):
        x = rng.normal(size=(6, 4))
        e1 = np.eye(4)[:, 0]
        out = deflate(x, e1).values
        assert_allclose(out[:, 0], 0, atol=1e-15)
        assert_allclose(out[:, 1:], x[:, 1:], atol=1e-14)

    def test_annihilates_basis(self, rng):
        x = rng.normal(size=(30, 12))
        B = rng.normal(size=(12, 2))
        assert np.max(np.abs(deflate(x, B).values @ B)) <= 1e-10

    def test_idempotent(self, rng):
        x = rng.normal(size=(10, 7))
        B = rng.normal(size=(7, 3))
        once = deflate(x, B).values
        assert_allclose(deflate(once, B).values, once, atol=1e-10)

    def test_degenerate_basis(self, rng):
        b = rng.normal(size=5)
        with pytest.raises(DegenerateBasis):
            deflate(rng.normal(size=(4, 5)), np.column_stack([b, 2 * b]))


@given(st.integers(0, 10_000), st.integers(1, 4))
def test_deflate_projection_property(seed, m):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(15, 9))
    B = rng.normal(size=(9, m))
    out = deflate(x, B).values
    assert np.max(np.abs(out @ B)) <= 1e-10
    assert_allclose(deflate(out, B).values, out, atol=1e-10)
