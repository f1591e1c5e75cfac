import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import gammaln, ndtr
from scipy.stats import norm

from causalmix.distributions import (
    NotPositiveDefiniteError,
    cholesky,
    gumbel_max_categorical,
    log_multivariate_gamma,
    mvnormal_logpdf,
    sample_gamma_rate,
    sample_generalized_dirichlet,
    sample_inverse_wishart,
    sample_truncated_normal,
    sample_wishart,
    symmetrize,
)
from causalmix.rng import RngStream


# ---------------------------------------------------------------- cholesky

def test_cholesky_multiplies_back():
    a = np.array([[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]])
    c = cholesky(a)
    assert np.allclose(np.tril(c), c)
    assert np.allclose(c @ c.T, a, atol=1e-12)


def test_cholesky_reports_failing_pivot():
    bad = np.diag([1.0, -1.0, 1.0])
    with pytest.raises(NotPositiveDefiniteError) as exc:
        cholesky(bad)
    assert exc.value.pivot == 2


def test_cholesky_rejects_nonsquare():
    with pytest.raises(ValueError):
        cholesky(np.ones((2, 3)))


# ---------------------------------------------------------- mvnormal_logpdf

def test_mvnormal_logpdf_standard_origin():
    val = mvnormal_logpdf(np.zeros(2), np.zeros(2), np.eye(2))
    assert np.isclose(val, -np.log(2.0 * np.pi), atol=1e-12)


def test_mvnormal_logpdf_matches_explicit_inverse():
    mean = np.array([1.0, -1.0])
    cov = np.array([[2.0, 0.5], [0.5, 1.0]])
    z = np.array([[0.3, 0.2], [-1.0, 2.5], [1.0, -1.0]])
    det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
    inv = np.array([[cov[1, 1], -cov[0, 1]], [-cov[1, 0], cov[0, 0]]]) / det
    diff = z - mean
    quad = np.einsum("ni,ij,nj->n", diff, inv, diff)
    expected = -0.5 * (2 * np.log(2 * np.pi) + np.log(det) + quad)
    assert np.allclose(mvnormal_logpdf(z, mean, cov), expected, atol=1e-12)


def test_mvnormal_logpdf_univariate_matches_norm():
    got = mvnormal_logpdf(np.array([[0.7]]), np.array([0.2]), np.array([[2.5]]))
    assert np.allclose(got, norm.logpdf(0.7, 0.2, np.sqrt(2.5)))


def test_mvnormal_logpdf_rejects_nonpd():
    with pytest.raises(NotPositiveDefiniteError):
        mvnormal_logpdf(np.zeros(2), np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))


# ------------------------------------------------------ log multivariate gamma

def test_log_multivariate_gamma_d1_is_gammaln():
    for a in (0.7, 1.0, 3.5, 10.0):
        assert np.isclose(log_multivariate_gamma(a, 1), gammaln(a), atol=1e-12)


def test_log_multivariate_gamma_d2_recurrence():
    # Gamma_2(a) = sqrt(pi) * Gamma(a) * Gamma(a - 1/2)
    a = 3.0
    expected = 0.5 * np.log(np.pi) + gammaln(3.0) + gammaln(2.5)
    got = log_multivariate_gamma(a, 2)
    assert np.isclose(got, expected, atol=1e-12)
    assert np.isclose(got, 1.5501949941, atol=1e-9)


def test_log_multivariate_gamma_domain():
    with pytest.raises(ValueError):
        log_multivariate_gamma(0.5, 2)


# ------------------------------------------------------------- wishart family

def test_wishart_mean_monte_carlo():
    rng = RngStream(314)
    df, scale = 7.0, np.array([[2.0, 0.3], [0.3, 1.0]])
    draws = np.stack([sample_wishart(df, scale, rng) for _ in range(20000)])
    assert np.allclose(draws.mean(axis=0), df * scale, rtol=0.02)
    # every draw symmetric PD
    sub = draws[:200]
    assert np.allclose(sub, np.swapaxes(sub, 1, 2))
    assert np.all(np.linalg.eigvalsh(sub) > 0)


def test_wishart_univariate_is_scaled_chisquare():
    rng = RngStream(99)
    df, s = 5.0, 2.0
    draws = np.array([sample_wishart(df, [[s]], rng)[0, 0] for _ in range(30000)])
    assert np.isclose(draws.mean(), df * s, rtol=0.02)
    assert np.isclose(draws.var(), 2 * df * s * s, rtol=0.06)


def test_inverse_wishart_mean_monte_carlo():
    rng = RngStream(2718)
    df, scale = 9.0, np.array([[2.0, 0.4], [0.4, 1.5]])
    draws = np.stack([sample_inverse_wishart(df, scale, rng) for _ in range(30000)])
    assert np.allclose(draws.mean(axis=0), scale / (df - 2 - 1), rtol=0.02, atol=0.004)
    sub = draws[:200]
    assert np.all(np.linalg.eigvalsh(sub) > 0)


def test_inverse_wishart_inverse_is_wishart_of_inverse_scale():
    # If S ~ IW(df, Psi) then S^{-1} ~ W(df, Psi^{-1}): check the mean.
    rng = RngStream(515)
    df, scale = 8.0, np.array([[1.5, -0.2], [-0.2, 0.8]])
    inv_draws = np.stack(
        [np.linalg.inv(sample_inverse_wishart(df, scale, rng)) for _ in range(20000)]
    )
    assert np.allclose(inv_draws.mean(axis=0), df * np.linalg.inv(scale), rtol=0.025)


def test_wishart_df_guard():
    with pytest.raises(ValueError):
        sample_wishart(1.0, np.eye(2), RngStream(0))
    with pytest.raises(ValueError):
        sample_inverse_wishart(0.5, np.eye(2), RngStream(0))


# ------------------------------------------------------------------- gamma

def test_gamma_rate_parameterization():
    rng = RngStream(1234)
    draws = sample_gamma_rate(10.0, 4.0, rng, size=200000)
    assert np.isclose(draws.mean(), 2.5, rtol=0.01)
    assert np.isclose(draws.var(), 10.0 / 16.0, rtol=0.03)


# ------------------------------------------------ generalized Dirichlet sticks

def test_generalized_dirichlet_hand_weights():
    class _Fixed:
        def beta(self, a, b):
            return np.array([0.5, 0.5])

    w = sample_generalized_dirichlet([1.0, 1.0], [1.0, 1.0], _Fixed())
    assert np.allclose(w, [0.5, 0.25, 0.25], atol=1e-15)


def test_generalized_dirichlet_simplex_and_sticks():
    rng = RngStream(55)
    a = np.arange(1, 40, dtype=float)
    b = np.linspace(5, 0.1, 39)
    w, v, log_w = sample_generalized_dirichlet(a, b, rng, return_sticks=True)
    assert w.shape == (40,)
    assert np.all(w > 0)
    assert abs(w.sum() - 1.0) <= 1e-12
    assert np.allclose(np.exp(log_w) / np.exp(log_w).sum(), w, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2**31 - 1))
def test_generalized_dirichlet_simplex_property(n, seed):
    rng = RngStream(seed)
    a = rng.uniform(0.2, 5.0, size=n - 1)
    b = rng.uniform(0.2, 5.0, size=n - 1)
    w = sample_generalized_dirichlet(a, b, RngStream(seed + 1))
    assert w.shape == (n,)
    assert np.all(w >= 0)
    assert abs(w.sum() - 1.0) <= 1e-12


# ---------------------------------------------------------- truncated normal

def test_truncated_normal_half_normal_mean():
    rng = RngStream(77)
    draws = np.array([sample_truncated_normal(0.0, 1.0, 0.0, np.inf, rng) for _ in range(40000)])
    assert np.all(draws > 0)
    assert np.isclose(draws.mean(), np.sqrt(2.0 / np.pi), atol=0.01)


def test_truncated_normal_vectorized_matches_support():
    rng = RngStream(78)
    means = np.linspace(-3, 3, 1000)
    draws = sample_truncated_normal(means, 1.0, 0.0, np.inf, rng)
    assert draws.shape == means.shape
    assert np.all(draws > 0)
    draws_neg = sample_truncated_normal(means, 1.0, -np.inf, 0.0, rng)
    assert np.all(draws_neg < 0)


def test_truncated_normal_far_tail_mean():
    # E[X | X > 10] = pdf(10) / sf(10) for standard X; exercises rejection path.
    rng = RngStream(79)
    draws = sample_truncated_normal(np.zeros(20000), 1.0, 10.0, np.inf, rng)
    assert np.all(draws > 10.0)
    expected = norm.pdf(10.0) / ndtr(-10.0)
    assert np.isclose(draws.mean(), expected, atol=0.005)


def test_truncated_normal_two_sided_bounds_and_mean():
    rng = RngStream(80)
    draws = sample_truncated_normal(np.full(40000, 1.0), 2.0, -1.0, 2.5, rng)
    assert np.all((draws > -1.0) & (draws < 2.5))
    a, b = (-1.0 - 1.0) / 2.0, (2.5 - 1.0) / 2.0
    expected = 1.0 + 2.0 * (norm.pdf(a) - norm.pdf(b)) / (ndtr(b) - ndtr(a))
    assert np.isclose(draws.mean(), expected, atol=0.02)


def test_truncated_normal_two_sided_tail_window():
    rng = RngStream(81)
    draws = sample_truncated_normal(np.zeros(2000), 1.0, 5.0, 6.0, rng)
    assert np.all((draws > 5.0) & (draws < 6.0))


def test_truncated_normal_bad_interval():
    with pytest.raises(ValueError):
        sample_truncated_normal(0.0, 1.0, 1.0, 1.0, RngStream(0))


# ------------------------------------------------------------- gumbel-max

def test_gumbel_max_frequencies():
    rng = RngStream(4000)
    lw = np.log(np.array([0.2, 0.3, 0.5]))
    draws = np.array([gumbel_max_categorical(lw, rng) for _ in range(30000)])
    freqs = np.bincount(draws, minlength=3) / draws.size
    assert np.allclose(freqs, [0.2, 0.3, 0.5], atol=0.01)


def test_gumbel_max_unnormalized_and_inf():
    rng = RngStream(4001)
    lw = np.array([-np.inf, 123.0, -np.inf])
    for _ in range(20):
        assert gumbel_max_categorical(lw, rng) == 1


def test_gumbel_max_axis():
    rng = RngStream(4002)
    # column j draws over rows with probabilities (0.9, 0.1) or (0.1, 0.9)
    lw = np.log(np.tile(np.array([[0.9, 0.1], [0.1, 0.9]]), (1, 2000)))
    idx = gumbel_max_categorical(lw, rng, axis=0)
    assert idx.shape == (4000,)
    assert np.isclose(np.mean(idx[0::2] == 0), 0.9, atol=0.03)
    assert np.isclose(np.mean(idx[1::2] == 1), 0.9, atol=0.03)


def test_gumbel_max_all_inf_raises():
    with pytest.raises(ValueError):
        gumbel_max_categorical(np.array([-np.inf, -np.inf]), RngStream(0))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 20), st.integers(0, 2**31 - 1))
def test_gumbel_max_returns_valid_index(k, seed):
    rng = RngStream(seed)
    lw = rng.standard_normal(k) * 5
    idx = gumbel_max_categorical(lw, rng)
    assert 0 <= idx < k


def test_symmetrize():
    a = np.array([[1.0, 2.0], [0.0, 3.0]])
    s = symmetrize(a)
    assert np.allclose(s, s.T)
    assert np.allclose(s, [[1.0, 1.0], [1.0, 3.0]])
