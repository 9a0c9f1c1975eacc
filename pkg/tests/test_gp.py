import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from hevpmix.distributions import invgamma_logpdf
from hevpmix.errors import DomainError, NumericalError
from hevpmix.gp import (GevSurface, GpHyper, constant_priors, design_matrix, gp_conditional,
                        gp_logprior, gp_logprior_gradient, matern_cov)

H = GpHyper(beta=[0.2, 0.1, -0.05], variance=1.3, range=0.8)


def test_matern_examples():
    assert matern_cov(0.0, H) == pytest.approx(1.3)
    assert matern_cov(1.0, GpHyper([0, 0, 0], 1.0, 1.0)) == pytest.approx(np.exp(-1), rel=1e-15)
    h32 = GpHyper([0, 0, 0], 2.0, 1.5, 1.5)
    assert matern_cov(1.5, h32) == pytest.approx(2 * (1 + np.sqrt(3)) * np.exp(-np.sqrt(3)), rel=1e-14)
    assert (1 + np.sqrt(3)) * np.exp(-np.sqrt(3)) == pytest.approx(0.48335, abs=1e-5)


def test_matern_general_matches_closed_forms():
    d = np.linspace(0, 4, 30)
    for nu in (0.5, 1.5, 2.5):
        closed = matern_cov(d, GpHyper([0, 0, 0], 1.0, 1.0, nu))
        bessel = matern_cov(d, GpHyper([0, 0, 0], 1.0, 1.0, nu + 1e-9))
        np.testing.assert_allclose(bessel, closed, atol=1e-7)


@pytest.mark.parametrize("nu", [0.5, 1.5, 2.5])
def test_matern_nonincreasing(nu):
    d = np.linspace(0, 10, 200)
    assert np.all(np.diff(matern_cov(d, GpHyper([0, 0, 0], 1.0, 1.0, nu))) <= 0)


def test_hyper_validation():
    with pytest.raises(DomainError):
        GpHyper([0, 0, 0], 0.0, 1.0)
    with pytest.raises(DomainError):
        GpHyper([0, 0], 1.0, 1.0)
    with pytest.raises(DomainError):
        matern_cov(-1.0, H)


def test_logprior_single_site():
    s = np.array([[0.0, 0.0]])
    h = GpHyper([0.4, 0, 0], 2.0, 1.0)
    assert gp_logprior([0.4], s, h) == pytest.approx(-0.5 * np.log(2 * np.pi * 2.0), rel=1e-14)
    assert gp_logprior([1.4], s, h) == pytest.approx(stats.norm(0.4, np.sqrt(2)).logpdf(1.4), rel=1e-13)


def test_logprior_matches_scipy(rng):
    s = rng.uniform(0, 3, (5, 2))
    x = rng.normal(size=5)
    d = np.linalg.norm(s[:, None] - s[None], axis=-1)
    cov = 1.3 * np.exp(-d / 0.8)
    ref = stats.multivariate_normal(design_matrix(s) @ H.beta, cov).logpdf(x)
    assert gp_logprior(x, s, H) == pytest.approx(ref, rel=1e-11)


def test_duplicate_sites_singular_without_jitter():
    s = np.array([[0.0, 0.0], [0.0, 0.0]])
    with pytest.raises(NumericalError):
        gp_logprior([0.0, 0.0], s, H, jitter=False)
    assert np.isfinite(gp_logprior([0.0, 0.0], s, H, jitter=True))


def test_logprior_normalized_by_importance_sampling(rng):
    # E_q[p/q] = 1 with q a wider normal proposal
    s = rng.uniform(0, 2, (3, 2))
    mean = design_matrix(s) @ H.beta
    prop = stats.multivariate_normal(mean, 4.0 * np.eye(3))
    x = prop.rvs(size=20_000, random_state=rng)
    r = np.exp(np.array([gp_logprior(v, s, H) for v in x]) - prop.logpdf(x))
    assert abs(r.mean() - 1) < 3 * r.std() / np.sqrt(len(r))


def test_gradient_matches_finite_difference(rng):
    s = rng.uniform(0, 3, (4, 2))
    for _ in range(5):
        x = rng.normal(size=4)
        g = gp_logprior_gradient(x, s, H)
        fd = np.array([(gp_logprior(x + e, s, H) - gp_logprior(x - e, s, H)) / 2e-6 for e in 1e-6 * np.eye(4)])
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7)
    mean = design_matrix(s) @ H.beta
    np.testing.assert_allclose(gp_logprior_gradient(mean, s, H), 0, atol=1e-12)


def test_conditional_interpolates(rng):
    s = rng.uniform(0, 3, (4, 2))
    obs = rng.normal(size=4)
    mean, cov = gp_conditional(s[1:2], obs, s, H)
    assert mean[0] == pytest.approx(obs[1], abs=1e-6)
    assert cov[0, 0] == pytest.approx(0.0, abs=1e-6)


def test_conditional_far_site():
    s = np.array([[0.0, 0.0], [1.0, 0.0]])
    far = np.array([[1e4, 1e4]])
    mean, cov = gp_conditional(far, [3.0, -2.0], s, H)
    assert mean[0] == pytest.approx(design_matrix(far) @ H.beta, rel=1e-12)
    assert cov[0, 0] == pytest.approx(H.variance, rel=1e-12)


def test_conditional_hand_solve():
    s = np.array([[0.0, 0.0], [1.0, 0.0], [2.5, 0.0]])
    obs = np.array([0.3, -0.4, 1.1])
    new = np.array([[1.6, 0.0]])
    h = GpHyper([0.1, 0.2, 0.0], 1.0, 1.0)
    K = np.exp(-np.abs(s[:, 0][:, None] - s[:, 0][None]))
    k = np.exp(-np.abs(1.6 - s[:, 0]))
    m0 = 0.1 + 0.2 * s[:, 0]
    mean_ref = 0.1 + 0.2 * 1.6 + k @ np.linalg.solve(K, obs - m0)
    var_ref = 1 - k @ np.linalg.solve(K, k)
    mean, cov = gp_conditional(new, obs, s, h)
    assert mean[0] == pytest.approx(mean_ref, rel=1e-12)
    assert cov[0, 0] == pytest.approx(var_ref, rel=1e-10)


def test_constant_priors():
    p = constant_priors()
    assert p.mu(0.0) == pytest.approx(-np.log(10 * np.sqrt(2 * np.pi)), rel=1e-14)
    assert p.alpha(1.2) == -np.inf and p.q(-0.1) == -np.inf and p.alpha(0.5) == 0.0
    assert np.exp(p.tau(1.0)) == pytest.approx(0.1**0.1 / 9.513507698668732 * np.exp(-0.1), rel=1e-12)
    assert p.xi(0.0) == pytest.approx(stats.norm(0, 0.25).logpdf(0.0))
    assert p.log_sigma(1.0) == pytest.approx(stats.norm.logpdf(1.0))
    assert invgamma_logpdf(-1.0, 0.1, 0.1) == -np.inf


def test_surface():
    s = GevSurface([0.1, 0.2], [0.0, np.log(2)], [0.1, 0.1])
    np.testing.assert_allclose(s.sigma, [1, 2])
    with pytest.raises(DomainError):
        GevSurface([0.1], [0.0, 0.0], [0.1])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([0.5, 1.5, 2.5]))
def test_logprior_peaks_at_mean(seed, nu):
    r = np.random.default_rng(seed)
    s = r.uniform(0, 3, (4, 2))
    h = GpHyper(r.normal(size=3), r.uniform(0.2, 3), r.uniform(0.2, 3), nu)
    mean = design_matrix(s) @ h.beta
    x = mean + r.normal(size=4)
    assert gp_logprior(mean, s, h) >= gp_logprior(x, s, h)
