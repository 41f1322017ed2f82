import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from rcovnet import linalg as la
from rcovnet.errors import (
    DimensionMismatch,
    InvalidDegreesOfFreedom,
    NoConvergence,
    NotPositiveDefinite,
)

from conftest import random_spd, rel_fro


def test_cholesky_identity():
    np.testing.assert_array_equal(la.cholesky(np.eye(3)), np.eye(3))


def test_cholesky_hand_example():
    L = la.cholesky([[4.0, 2.0], [2.0, 5.0]])
    np.testing.assert_allclose(L, [[2.0, 0.0], [1.0, 2.0]], atol=1e-15)
    np.testing.assert_allclose(L @ L.T, [[4.0, 2.0], [2.0, 5.0]], atol=1e-14)


def test_cholesky_rejects_indefinite():
    with pytest.raises(NotPositiveDefinite):
        la.cholesky([[1.0, 2.0], [2.0, 1.0]])


def test_cholesky_rejects_numerically_singular():
    v = np.array([1.0, 2.0, 3.0])
    with pytest.raises(NotPositiveDefinite):
        la.cholesky(np.outer(v, v))


def test_sym_eig_diagonal():
    vals, vecs = la.sym_eig(np.diag([3.0, 1.0, 2.0]))
    np.testing.assert_allclose(vals, [3.0, 2.0, 1.0])
    np.testing.assert_allclose(np.abs(vecs), np.eye(3)[:, [0, 2, 1]], atol=1e-15)


def test_sym_eig_two_by_two():
    vals, _ = la.sym_eig([[2.0, 1.0], [1.0, 2.0]])
    np.testing.assert_allclose(vals, [3.0, 1.0], rtol=1e-14)


def test_sym_eig_identity():
    vals, vecs = la.sym_eig(np.eye(5))
    np.testing.assert_array_equal(vals, np.ones(5))
    np.testing.assert_array_equal(vecs, np.eye(5))


def test_sym_eig_sweep_cap(nprng):
    m = random_spd(8, nprng)
    with pytest.raises(NoConvergence):
        la.sym_eig(m, max_sweeps=1)


@pytest.mark.parametrize("d", [2, 7, 30, 64])
def test_sym_eig_against_lapack(kernels, nprng, d):
    m = nprng.standard_normal((d, d))
    m = m + m.T
    vals, vecs, _, ok = kernels.jacobi_eig(np.ascontiguousarray(m), 1e-12, 100)
    assert ok
    order = np.argsort(-vals)
    vals, vecs = vals[order], vecs[:, order]
    np.testing.assert_allclose(vals, np.linalg.eigvalsh(m)[::-1], atol=1e-10 * np.abs(m).max())
    assert np.linalg.norm(vecs.T @ vecs - np.eye(d)) < 1e-10
    assert rel_fro((vecs * vals) @ vecs.T, m) < 1e-9


def test_kernel_backends_agree(nprng):
    from rcovnet import _backend
    if len(_backend.available()) < 2:
        pytest.skip("compiled kernels not built")
    cy, py = _backend.get("cython"), _backend.get("python")
    m = random_spd(12, nprng)
    Lc, bc = cy.cholesky(m, 1e-12)
    Lp, bp = py.cholesky(m, 1e-12)
    assert bc == bp == -1
    np.testing.assert_allclose(Lc, Lp, rtol=1e-12, atol=1e-13)
    vc, Vc, sc, _ = cy.jacobi_eig(m, 1e-12, 100)
    vp, Vp, sp, _ = py.jacobi_eig(m, 1e-12, 100)
    assert sc == sp
    np.testing.assert_allclose(vc, vp, rtol=1e-12)
    np.testing.assert_allclose(Vc, Vp, atol=1e-10)


def test_spd_sqrt_examples():
    np.testing.assert_allclose(la.spd_sqrt(np.eye(4)), np.eye(4), atol=1e-15)
    np.testing.assert_allclose(la.spd_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-15)
    np.testing.assert_allclose(la.spd_sqrt([[5.0, 4.0], [4.0, 5.0]]), [[2.0, 1.0], [1.0, 2.0]], atol=1e-14)


def test_vech_order_and_roundtrip(nprng):
    a, b, c = 1.0, 2.0, 3.0
    np.testing.assert_array_equal(la.vech([[a, b], [b, c]]), [a, b, c])
    assert la.vech(np.eye(3)).shape == (6,)
    m = nprng.standard_normal((5, 5))
    m = m + m.T
    np.testing.assert_array_equal(la.unvech(la.vech(m), 5), m)
    # column-major lower triangle for d = 3
    m3 = np.array([[1, 2, 4], [2, 3, 5], [4, 5, 6]], dtype=float)
    np.testing.assert_array_equal(la.vech(m3), [1, 2, 4, 3, 5, 6])


def test_unvech_length_check():
    with pytest.raises(DimensionMismatch):
        la.unvech(np.ones(5), 3)


spd_dims = st.integers(min_value=1, max_value=12)


@settings(max_examples=60, deadline=None)
@given(d=spd_dims, seed=st.integers(0, 2**32 - 1), eps=st.floats(1e-3, 10.0))
def test_spd_reconstruction_properties(d, seed, eps):
    m = random_spd(d, np.random.default_rng(seed), eps)
    L = la.cholesky(m)
    assert np.all(np.diag(L) > 0)
    assert np.all(np.triu(L, 1) == 0)
    assert rel_fro(L @ L.T, m) < 1e-10
    root = la.spd_sqrt(m)
    np.testing.assert_array_equal(root, root.T)
    assert rel_fro(root @ root, m) < 1e-9


@settings(max_examples=40, deadline=None)
@given(d=st.integers(1, 20), seed=st.integers(0, 2**32 - 1))
def test_eig_orthonormal_and_sorted(d, seed):
    g = np.random.default_rng(seed).standard_normal((d, d))
    vals, vecs = la.sym_eig(g + g.T)
    assert np.all(np.diff(vals) <= 0)
    assert np.linalg.norm(vecs.T @ vecs - np.eye(d)) < 1e-10


def test_rng_determinism():
    a = la.sample_wishart(5.0, np.eye(3), la.Rng(7))
    b = la.sample_wishart(5.0, np.eye(3), la.Rng(7))
    np.testing.assert_array_equal(a, b)
    f1 = la.sample_matrix_f(10.0, 8.0, np.eye(3), la.Rng(3))
    f2 = la.sample_matrix_f(10.0, 8.0, np.eye(3), la.Rng(3))
    np.testing.assert_array_equal(f1, f2)
    c1, c2 = la.Rng(1).spawn(2)
    assert not np.array_equal(c1.normal(4), c2.normal(4))


def test_wishart_df_check():
    with pytest.raises(InvalidDegreesOfFreedom):
        la.sample_wishart(1.5, np.eye(3), la.Rng(0))
    with pytest.raises(InvalidDegreesOfFreedom):
        la.sample_matrix_f(10.0, 4.0, np.eye(3), la.Rng(0))
    with pytest.raises(InvalidDegreesOfFreedom):
        la.sample_matrix_f(1.0, 8.0, np.eye(3), la.Rng(0))


def test_wishart_monte_carlo_mean():
    rng = la.Rng(2024)
    scale = np.eye(3) / 5.0
    draws = np.array([la.sample_wishart(5.0, scale, rng) for _ in range(20_000)])
    assert all(la.is_spd(w) for w in draws[:500])
    np.testing.assert_allclose(draws.mean(axis=0), np.eye(3), atol=0.02)


def test_wishart_non_integer_df_mean():
    rng = la.Rng(5)
    scale = np.array([[1.0, 0.3], [0.3, 0.5]])
    draws = np.array([la.sample_wishart(2.7, scale, rng) for _ in range(20_000)])
    np.testing.assert_allclose(draws.mean(axis=0), 2.7 * scale, atol=0.05)


def test_wishart_matches_outer_product_sum():
    # integer df: W(df, S) equals sum of df outer products of N(0, S) draws
    df, n = 4, 20_000
    scale = np.array([[2.0, 0.5, 0.1], [0.5, 1.0, 0.2], [0.1, 0.2, 0.5]])
    rng = la.Rng(11)
    w11 = np.array([la.sample_wishart(df, scale, rng)[0, 0] for _ in range(n)])
    z = np.random.default_rng(11).multivariate_normal(np.zeros(3), scale, size=(n, df))
    o11 = np.einsum("nki,nki->n", z[..., :1], z[..., :1])
    se_mean = np.sqrt(w11.var() / n + o11.var() / n)
    assert abs(w11.mean() - o11.mean()) < 3 * se_mean
    # variance of a sample variance: use the fourth central moment estimate
    def var_se(x):
        c = x - x.mean()
        return np.sqrt((np.mean(c**4) - np.mean(c**2) ** 2) / len(x))
    se_var = np.hypot(var_se(w11), var_se(o11))
    assert abs(w11.var() - o11.var()) < 3 * se_var
    # the (1,1) entry is scale[0,0] * chi2(df)
    ks = stats.kstest(w11 / scale[0, 0], stats.chi2(df).cdf)
    assert ks.pvalue > 0.01


def test_matrix_f_monte_carlo_mean():
    rng = la.Rng(99)
    s = np.eye(3)
    draws = np.array([la.sample_matrix_f(10.0, 8.0, s, rng) for _ in range(20_000)])
    assert all(la.is_spd(x) for x in draws[:500])
    np.testing.assert_allclose(draws.mean(axis=0), s, atol=0.05)


def test_matrix_f_mean_general_scale():
    rng = la.Rng(4)
    s = np.array([[2.0, 0.4, 0.0], [0.4, 1.0, 0.3], [0.0, 0.3, 0.7]])
    draws = np.array([la.sample_matrix_f(10.0, 8.0, s, rng) for _ in range(20_000)])
    np.testing.assert_allclose(draws.mean(axis=0), s, atol=0.05 * np.abs(s).max())
