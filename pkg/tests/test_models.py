import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hevpmix import distributions as dist
from hevpmix import models as m
from hevpmix.distributions import GevParams
from hevpmix.errors import DomainError
from hevpmix.geometry import grid_sites, kernel_weight_array

ALPHA = 0.3
SITES2 = np.array([[0.0, 0.0], [1.0, 0.0]])
KNOTS3 = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 1.0]])


def residual_draws(w, alpha, a, seed):
    """X = U theta for random effects rows ``a``; test-local generator."""
    rng = dist.rng_stream(seed, 0)
    log_th = m.log_theta(a, m.kernel_powers(w, alpha), alpha)
    u = rng.uniform(size=log_th.shape)
    return np.exp(-alpha * np.log(-np.log(u)) + log_th)


def test_theta_single_knot():
    assert m.theta_field([2.0], np.ones((1, 1)), 0.5)[0] == pytest.approx(np.sqrt(2), rel=1e-15)


def test_theta_common_factor(rng):
    w = kernel_weight_array(grid_sites(3), KNOTS3, 1.0)
    a = 1.7
    expected = a**ALPHA * np.sum(w ** (1 / ALPHA), axis=1) ** ALPHA
    np.testing.assert_allclose(m.theta_field(np.full(3, a), w, ALPHA), expected, rtol=1e-13)


def test_theta_matches_scalar_loop(rng):
    sites = rng.uniform(0, 2, (6, 2))
    w = kernel_weight_array(sites, KNOTS3, 0.8)
    a = dist.ps_sample(ALPHA, rng, 3)
    loop = []
    for i in range(6):
        s = 0.0
        for l in range(3):
            s += a[l] * w[i, l] ** (1 / ALPHA)
        loop.append(s**ALPHA)
    np.testing.assert_allclose(m.theta_field(a, w, ALPHA), loop, rtol=1e-12)


def test_theta_rejects_nonpositive():
    with pytest.raises(DomainError):
        m.theta_field([0.0, 1.0], np.full((1, 2), 0.5), ALPHA)


def test_conditional_gev_fixed_point():
    g = GevParams(0.1, 1.0, 0.1)
    c = m.hevp_conditional_gev(1.0, g, ALPHA)
    assert (c.mu, c.sigma, c.xi) == pytest.approx((0.1, 0.3, 0.03), abs=1e-15)
    c1 = m.hevp_conditional_gev(1.0, g, 1.0)
    assert (c1.mu, c1.sigma, c1.xi) == pytest.approx((0.1, 1.0, 0.1), abs=1e-15)


def test_conditional_gev_value():
    c = m.hevp_conditional_gev(2.0, GevParams(0.1, 1.0, 0.1), ALPHA)
    assert c.mu == pytest.approx(0.1 + 10 * (2**0.1 - 1), rel=1e-14)
    assert c.mu == pytest.approx(0.81773, abs=1e-5)
    assert c.sigma == pytest.approx(0.32154, abs=1e-5)
    assert c.xi == pytest.approx(0.03, abs=1e-15)


def test_conditional_gev_gumbel_limit():
    c = m.hevp_conditional_gev(2.0, GevParams(0.1, 1.0, 0.0), ALPHA)
    assert c.mu == pytest.approx(0.1 + np.log(2), rel=1e-14)
    assert c.sigma == pytest.approx(ALPHA, rel=1e-14)


def test_conditional_gev_is_law_of_y_given_theta():
    # Y | theta has CDF F_GEV*(y) = exp(-(theta / x(y))^(1/alpha)) in residual terms
    g = GevParams(0.1, 1.0, 0.1)
    theta = 1.8
    c = m.hevp_conditional_gev(theta, g, ALPHA)
    x = np.array([0.5, 2.0, 7.0])
    y = m.y_from_residual_log(np.log(x), g.mu, g.sigma, g.xi)
    np.testing.assert_allclose(dist.gev_cdf(y, c), np.exp(-(theta / x) ** (1 / ALPHA)), rtol=1e-12)


def test_hevp_joint_examples():
    assert m.f_hevp_joint([1.0], np.ones((1, 1)), ALPHA) == pytest.approx(np.exp(-1), rel=1e-14)
    assert m.f_hevp_joint([1.0, 1.0], np.ones((2, 1)), ALPHA) == pytest.approx(np.exp(-(2**0.3)), rel=1e-14)
    assert m.f_hevp_joint([1.0, 1.0], np.ones((2, 1)), ALPHA) == pytest.approx(0.29196, abs=1e-5)
    w = kernel_weight_array(SITES2, KNOTS3, 1.0)
    c = np.array([1.5, 0.7])
    assert m.f_hevp_joint(c, w, 1.0) == pytest.approx(np.exp(-np.sum(1 / c)), rel=1e-13)


def test_hevp_joint_rejects_nonpositive():
    with pytest.raises(DomainError):
        m.f_hevp_joint([1.0, 0.0], np.ones((2, 1)), ALPHA)


def test_chi_hevp_examples():
    assert m.chi_hevp(0, 1, np.ones((2, 1)), ALPHA) == pytest.approx(2 - 2**0.3, rel=1e-14)
    assert m.chi_hevp(0, 1, np.ones((2, 1)), ALPHA) == pytest.approx(0.76886, abs=1e-5)
    w = kernel_weight_array(SITES2, KNOTS3, 1.0)
    assert m.chi_hevp(0, 1, w, 1.0) == pytest.approx(0.0, abs=1e-14)
    assert m.chi_hevp(0, 0, w, ALPHA) == pytest.approx(2 - 2**ALPHA, rel=1e-13)
    assert m.chi_hevp(0, 0, w, 1e-3) == pytest.approx(1.0, abs=1e-3)


def test_sb_marginal_single_atom():
    atoms = m.SbAtoms(np.ones((1, 1)), [1.0])
    for c in (0.3, 1.0, 4.0):
        assert m.f_sb_marginal(c, 0, atoms, np.ones((1, 1)), ALPHA) == pytest.approx(np.exp(-c ** (-1 / ALPHA)), rel=1e-13)


def test_sb_marginal_limits_and_monotone(rng):
    w = kernel_weight_array(SITES2, KNOTS3, 1.0)
    atoms = m.SbAtoms(dist.ps_sample(ALPHA, rng, (4, 3)), [0.4, 0.3, 0.2, 0.1])
    c = np.geomspace(1e-3, 1e6, 60)
    vals = [m.f_sb_marginal(ci, 1, atoms, w, ALPHA) for ci in c]
    assert np.all(np.diff(vals) >= 0)
    assert vals[0] < 1e-6 and vals[-1] > 1 - 1e-3


def test_sb_joint_one_site_is_marginal(rng):
    w = kernel_weight_array(SITES2, KNOTS3, 1.0)
    atoms = m.SbAtoms(dist.ps_sample(ALPHA, rng, (3, 3)), [0.5, 0.3, 0.2])
    assert m.f_sb_joint([2.0], atoms, w[:1], ALPHA) == pytest.approx(m.f_sb_marginal(2.0, 0, atoms, w, ALPHA), rel=1e-14)


def test_sb_joint_unit_atoms_alpha_one():
    w = kernel_weight_array(SITES2, KNOTS3, 1.0)
    atoms = m.SbAtoms(np.ones((1, 3)), [1.0])
    c = np.array([2.0, 3.0])
    assert m.f_sb_joint(c, atoms, w, 1.0) == pytest.approx(np.exp(-np.sum(1 / c)), rel=1e-13)


def test_sb_many_atoms_finite(rng):
    w = kernel_weight_array(grid_sites(3), KNOTS3, 0.5)
    gamma = dist.ps_sample(0.1, rng, (50, 3))
    pi = np.full(50, 0.02)
    lj = m.log_f_sb_joint(np.log(np.full(9, 3.0)), w, 0.1, gamma, pi)
    assert np.isfinite(lj) and lj <= 0


def test_sb_centering_small(rng):
    w = kernel_weight_array(SITES2, KNOTS3, 1.0)
    c = 1.5
    vals = []
    for k in range(2000):
        gamma = dist.ps_sample(ALPHA, rng, (1, 3))
        vals.append(m.f_sb_marginal(c, 0, m.SbAtoms(gamma, [1.0]), w, ALPHA))
    vals = np.array(vals)
    assert abs(vals.mean() - np.exp(-1 / c)) < 3 * vals.std() / np.sqrt(len(vals))


def test_hevp_simulation_joint_cdf():
    w = kernel_weight_array(SITES2, KNOTS3, 1.0)
    a = dist.ps_sample(ALPHA, dist.rng_stream(5, 1), (200_000, 3))
    x = residual_draws(w, ALPHA, a, 5)
    c = np.array([2.0, 3.0])
    emp = np.mean(np.all(x <= c, axis=1))
    p = m.f_hevp_joint(c, w, ALPHA)
    assert abs(emp - p) < 3 * np.sqrt(p * (1 - p) / len(x))


def test_mm_boundaries_exact(rng):
    w = kernel_weight_array(grid_sites(3), KNOTS3, 1.0)
    gamma = dist.ps_sample(ALPHA, rng, (3, 3))
    pi = np.array([0.5, 0.3, 0.2])
    hevp = m.HevpSpec(ALPHA, w)
    sb = m.SbAtoms(gamma, pi)
    c = rng.uniform(0.5, 5, 9)
    assert m.f_mm_joint(c, m.MmSpec(1.0, hevp, sb)) == m.f_hevp_joint(c, w, ALPHA)
    assert m.f_mm_joint(c, m.MmSpec(0.0, hevp, sb)) == m.f_sb_joint(c, sb, w, ALPHA)
    assert m.f_mm_marginal(2.0, 4, m.MmSpec(1.0, hevp, sb)) == pytest.approx(np.exp(-0.5), abs=1e-15)


def test_mm_product_form(rng):
    w = kernel_weight_array(SITES2, KNOTS3, 1.0)
    sb = m.SbAtoms(dist.ps_sample(ALPHA, rng, (3, 3)), [0.5, 0.3, 0.2])
    mm = m.MmSpec(0.4, m.HevpSpec(ALPHA, w), sb)
    c = np.array([1.3, 2.2])
    expect = m.f_hevp_joint((c / 0.4) ** (1 / 0.4), w, ALPHA) * m.f_sb_joint((c / 0.6) ** (1 / 0.6), sb, w, ALPHA)
    assert m.f_mm_joint(c, mm) == pytest.approx(expect, rel=1e-12)


def test_mm_rejects_bad_q():
    with pytest.raises(DomainError):
        m.MmSpec(1.2, m.HevpSpec(ALPHA, np.ones((1, 1))), m.SbAtoms(np.ones((1, 1)), [1.0]))


def test_tail_index():
    assert m.tail_index("hevp", 0.7).value == 1.0
    assert m.tail_index("sb", 0.3).value == pytest.approx(10 / 3)
    assert m.tail_index("mm", 0.3, 0.5).value == pytest.approx(2.0)
    assert m.tail_index("mm", 0.3, 0.1).value == pytest.approx(1 / (0.3 * 0.9))
    b = m.dependence_boundary(0.3)
    t = m.tail_index("mm", 0.3, b)
    assert t.at_boundary and t.value == pytest.approx(1 / b)


def test_chi_mm_and_delta():
    w = np.ones((2, 1))
    hevp, sb = m.HevpSpec(ALPHA, w), m.SbAtoms(np.ones((1, 1)), [1.0])
    assert m.chi_mm(0, 1, m.MmSpec(0.1, hevp, sb)) == (0.0, 0.0)
    assert m.delta_indicator(0.1, ALPHA) == 0
    lo, hi = m.chi_mm(0, 1, m.MmSpec(0.5, hevp, sb))
    assert lo == hi == pytest.approx(2 - 2**0.3)
    assert m.delta_indicator(0.5, ALPHA) == 1
    iv = m.chi_mm(0, 1, m.MmSpec(0.23077, hevp, sb))
    assert not iv.is_point and iv.lower == pytest.approx(2 - 2**0.3) and iv.upper == 1.0
    assert m.delta_indicator(ALPHA / (1 + ALPHA), ALPHA) == 1


def test_finite_u_chi_hevp_matches_limit():
    w = kernel_weight_array(SITES2, KNOTS3, 1.0)
    u = 1 - 1e-6
    est = m.model_chi_u("hevp", [[0, 1]], u, w, ALPHA)[0]
    assert est == pytest.approx(m.chi_hevp(0, 1, w, ALPHA), abs=1e-3)


def test_finite_u_chi_sb_small(rng):
    w = kernel_weight_array(SITES2, KNOTS3, 1.0)
    for _ in range(5):
        gamma = dist.ps_sample(ALPHA, rng, (3, 3))
        est = m.model_chi_u("sb", [[0, 1]], 1 - 1e-6, w, ALPHA, gamma, np.array([0.5, 0.3, 0.2]))[0]
        assert est < 0.02


def test_residual_quantile_inverts_cdf(rng):
    w = kernel_weight_array(grid_sites(3), KNOTS3, 1.0)
    gamma = dist.ps_sample(ALPHA, rng, (3, 3))
    pi = np.array([0.5, 0.3, 0.2])
    lv = np.array([0.1, 0.5, 0.99, 0.999])
    for kind, q in (("sb", None), ("mm", 0.4)):
        lq = m.residual_log_quantile(kind, lv, w, ALPHA, gamma, pi, q)
        for i in range(9):
            for k, u in enumerate(lv):
                lc = np.array([lq[i, k]])
                f = (m.log_f_sb_joint(lc, w[i:i + 1], ALPHA, gamma, pi) if kind == "sb"
                     else m.log_f_mm_joint(lc, w[i:i + 1], ALPHA, gamma, pi, q))
                assert np.exp(f) == pytest.approx(u, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 0.95))
def test_cdf_properties(seed, alpha):
    r = np.random.default_rng(seed)
    sites = r.uniform(0, 3, (4, 2))
    w = kernel_weight_array(sites, KNOTS3, 1.0)
    gamma = dist.ps_sample(alpha, r, (2, 3))
    pi = np.array([0.6, 0.4])
    c = r.uniform(0.2, 10, 4)
    fh = m.f_hevp_joint(c, w, alpha)
    assert 0 <= fh <= 1
    # positive association
    assert fh >= np.prod(np.exp(-1 / c)) - 1e-12
    c2 = c.copy()
    c2[r.integers(4)] *= 1.5
    assert m.f_hevp_joint(c2, w, alpha) >= fh
    sb = m.SbAtoms(gamma, pi)
    assert m.f_sb_joint(c2, sb, w, alpha) >= m.f_sb_joint(c, sb, w, alpha)
    mm = m.MmSpec(0.5, m.HevpSpec(alpha, w), sb)
    assert 0 <= m.f_mm_joint(c, mm) <= m.f_mm_joint(c2, mm) <= 1
    big = np.full(4, 1e12)
    assert m.f_hevp_joint(big, w, alpha) > 1 - 1e-9
