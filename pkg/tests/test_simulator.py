import numpy as np
import pytest
from scipy import stats
from scipy.linalg import subspace_angles

from rcovnet import linalg as la
from rcovnet.errors import DimensionMismatch, InvalidDegreesOfFreedom
from rcovnet.simulator import (
    CawParams,
    Innovation,
    MfaEmbedding,
    bekk_step,
    draw_innovation,
    embed_factors,
    make_embedding,
    simulate_caw,
)


def iterate_expected_recursion(params, n_iter=2000):
    """E S = CC' + sum B E S B' + sum A E S A', solved by fixed-point iteration."""
    s = params.cc.copy()
    for _ in range(n_iter):
        s = params.cc + sum(B @ s @ B.T for B in params.B) + sum(A @ s @ A.T for A in params.A)
    return s


def test_bekk_zero_coefficients_gives_intercept():
    p = CawParams(C=np.eye(2) * 0.7, A=(np.zeros((2, 2)),), B=(np.zeros((2, 2)),))
    s = bekk_step(p, [np.eye(2) * 5], [np.eye(2) * 9])
    np.testing.assert_allclose(s, 0.49 * np.eye(2))


def test_bekk_identity_coefficients_is_linear():
    eps = 1e-6
    p = CawParams(C=eps * np.eye(2), A=(np.eye(2),), B=(np.eye(2),))
    s_prev = np.array([[2.0, 0.3], [0.3, 1.0]])
    x_prev = np.array([[1.0, -0.2], [-0.2, 0.5]])
    np.testing.assert_allclose(bekk_step(p, [s_prev], [x_prev]), s_prev + x_prev, atol=1e-11)


def test_bekk_paper_parameters_hand_value():
    p = CawParams.paper()
    s = bekk_step(p, [np.eye(3)] * 2, [np.eye(3)] * 2)
    # CC'[0,0] = .5^2+.2^2+.3^2 = .38; B terms .2^2+.3^2 = .13; A terms .2^2+.3^2 = .13
    assert s[0, 0] == pytest.approx(0.64, abs=1e-14)
    assert la.is_spd(s)


def test_bekk_history_length_check():
    with pytest.raises(DimensionMismatch):
        bekk_step(CawParams.paper(), [np.eye(3)], [np.eye(3)] * 2)


def test_paper_process_is_stationary():
    p = CawParams.paper()
    sums = [sum(m[i, i] ** 2 for m in p.A + p.B) for i in range(3)]
    np.testing.assert_allclose(sums, [0.26, 0.91, 0.49])
    np.testing.assert_allclose(p.stationary_mean(), iterate_expected_recursion(p), rtol=1e-10)


def test_long_run_mean_matches_fixed_point():
    p = CawParams.paper()
    path = simulate_caw(p, 5000, "wishart", la.Rng(17))
    oracle = iterate_expected_recursion(p)
    err = np.linalg.norm(path.scales.mean(axis=0) - oracle) / np.linalg.norm(oracle)
    assert err < 0.05
    err_x = np.linalg.norm(path.factors.mean(axis=0) - oracle) / np.linalg.norm(oracle)
    assert err_x < 0.05


@pytest.mark.parametrize("innovation", list(Innovation))
def test_every_emitted_matrix_is_spd(innovation):
    path = simulate_caw(CawParams.paper(), 400, innovation, la.Rng(1))
    assert path.factors.shape == (400, 3, 3)
    assert all(la.is_spd(x) for x in path.factors)
    assert all(la.is_spd(s) for s in path.scales)


def test_seed_determinism():
    a = simulate_caw(CawParams.paper(), 50, "matrix-f", la.Rng(8))
    b = simulate_caw(CawParams.paper(), 50, "matrix-f", la.Rng(8))
    np.testing.assert_array_equal(a.factors, b.factors)


def test_matrix_f_conditional_mean():
    p = CawParams.paper()
    s = p.stationary_mean()
    rng = la.Rng(21)
    draws = np.array([draw_innovation(p, s, Innovation.MATRIX_F, rng) for _ in range(20_000)])
    assert np.max(np.abs(draws.mean(axis=0) - s)) < 0.05 * np.max(np.abs(s))


def test_iid_wishart_when_no_dynamics():
    nu = 5.0
    C = np.array([[1.0, 0.0], [0.4, 0.8]])
    p = CawParams(C=C, A=(np.zeros((2, 2)),), B=(np.zeros((2, 2)),), nu=nu)
    path = simulate_caw(p, 3000, "wishart", la.Rng(3), burn_in=0)
    cc = C @ C.T
    x11 = path.factors[:, 0, 0] * nu / cc[0, 0]
    assert stats.kstest(x11, stats.chi2(nu).cdf).pvalue > 0.01


def test_invalid_degrees_of_freedom():
    p = CawParams.paper()
    p.nu = 1.5
    with pytest.raises(InvalidDegreesOfFreedom):
        simulate_caw(p, 10, "wishart", la.Rng(0))
    p.nu2 = 4.0
    with pytest.raises(InvalidDegreesOfFreedom):
        simulate_caw(p, 10, "matrix-f", la.Rng(0))


def test_initial_scale_count_checked():
    with pytest.raises(DimensionMismatch):
        simulate_caw(CawParams.paper(), 10, "wishart", la.Rng(0), init=[np.eye(3)])


def test_embed_block_structure():
    d, r, eps = 6, 2, 1e-3
    A = np.eye(d)[:, :r]
    emb = MfaEmbedding(A, eps * np.eye(d))
    f = np.array([[[2.0, 0.5], [0.5, 1.0]]])
    x = embed_factors(f, emb).matrices[0]
    np.testing.assert_allclose(x[:r, :r], f[0] + eps * np.eye(r), atol=1e-15)
    np.testing.assert_allclose(x[r:, r:], eps * np.eye(d - r), atol=1e-15)


def test_embed_projection_identity(nprng):
    emb = make_embedding(10, 3, seed=5)
    path = simulate_caw(CawParams.paper(), 20, "wishart", la.Rng(2))
    x = embed_factors(path.factors, emb).matrices
    A = emb.loading
    back = A.T @ x @ A - A.T @ emb.sigma0 @ A
    np.testing.assert_allclose(back, path.factors, atol=1e-10)


def test_embed_high_dimension_is_spd():
    emb = make_embedding(60, 3, seed=9)
    np.testing.assert_allclose(emb.loading.T @ emb.loading, np.eye(3), atol=1e-12)
    path = simulate_caw(CawParams.paper(), 30, "wishart", la.Rng(4))
    series = embed_factors(path.factors, emb)
    for m in series.matrices:
        assert np.linalg.eigvalsh(m).min() > 0


def test_embedding_from_series_recovers_column_space():
    emb = make_embedding(12, 3, seed=3, sigma0_scale=1e-8)
    path = simulate_caw(CawParams.paper(), 300, "wishart", la.Rng(6))
    series = embed_factors(path.factors, emb)
    est = make_embedding(12, 3, source="series", series=series)
    assert np.max(subspace_angles(emb.loading, est.loading)) < 1e-6


def test_embedding_dimension_checks():
    with pytest.raises(DimensionMismatch):
        make_embedding(3, 3)
    with pytest.raises(DimensionMismatch):
        MfaEmbedding(np.ones((4, 2)), np.eye(4))
