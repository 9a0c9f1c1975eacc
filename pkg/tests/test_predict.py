import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hevpmix import distributions as dist
from hevpmix import models
from hevpmix.errors import ConfigError, DomainError
from hevpmix.geometry import grid_sites, kernel_weight_array
from hevpmix.mcmc import ChainConfig, PosteriorSamples
from hevpmix.predict import (ChiEstimate, cross_validate, draw_quantiles, empirical_chi, mmse_chi,
                             mmse_quantiles, model_chi, predict_quantiles, site_folds)
from hevpmix.simulate import SimConfig, simulate

SITES = grid_sites(3)


def fake_samples(kind, D=20, seed=0, q=None, alpha=0.3, J=3):
    """Independent draws around fixed values, standing in for a fitted chain."""
    r = np.random.default_rng(seed)
    n = len(SITES)
    mu = np.repeat(r.normal(0.1, 0.05, D)[:, None], n, axis=1)
    ls = np.repeat(r.normal(0.0, 0.05, D)[:, None], n, axis=1)
    xi = np.repeat(r.normal(0.1, 0.02, D)[:, None], n, axis=1)
    gamma = pi = None
    if kind != "hevp":
        gamma = dist.ps_sample(alpha, r, (D, J, n))
        pi = np.tile(np.full(J, 1 / J), (D, 1))
    qv = np.full(D, 1.0 if kind == "hevp" else 0.0) if q is None else np.full(D, q)
    return PosteriorSamples(kind, SITES, SITES, np.full(D, alpha), r.uniform(0.8, 1.2, D), qv,
                            mu, ls, xi, gamma, pi)


def test_hevp_quantiles_are_gev_quantiles():
    s = fake_samples("hevp")
    lv = [0.1, 0.5, 0.95, 0.99]
    out = draw_quantiles(s, SITES[:2], lv)
    for d in range(len(s)):
        ref = dist._gev_quantile(np.array(lv), s.mu[d, 0], np.exp(s.log_sigma[d, 0]), s.xi[d, 0])
        np.testing.assert_allclose(out[d, 0], ref, atol=1e-8)


def test_mm_q_one_quantiles_match_hevp():
    a = draw_quantiles(fake_samples("hevp"), SITES, [0.5, 0.99])
    s = fake_samples("mm", q=1.0)
    b = draw_quantiles(s, SITES, [0.5, 0.99])
    np.testing.assert_allclose(a, b, atol=1e-8)


@pytest.mark.parametrize("kind,q", [("sb", None), ("mm", 0.4), ("hevp", None)])
def test_quantiles_monotone_in_level(kind, q):
    out = draw_quantiles(fake_samples(kind, q=q), SITES, [0.1, 0.3, 0.5, 0.9, 0.99, 0.995])
    assert np.all(np.diff(out, axis=-1) > 0)


def test_constant_mode_interpolation():
    s = fake_samples("hevp", D=200)
    grid = predict_quantiles(s, SITES[:1], [0.5, 0.95])
    ref = dist._gev_quantile(np.array([0.5, 0.95]), s.mu.mean(), np.exp(s.log_sigma.mean()), s.xi.mean())
    assert np.all(np.abs(grid.mean[0] - ref) < 3 * grid.sd[0] / np.sqrt(200) + 0.01)


def test_thinning_invariance():
    s = fake_samples("sb", D=400, seed=2)
    full = predict_quantiles(s, SITES[:3], [0.5, 0.9])
    half = predict_quantiles(s.thinned(2), SITES[:3], [0.5, 0.9])
    se = full.sd / np.sqrt(200)
    assert np.all(np.abs(full.mean - half.mean) < 2 * np.sqrt(2) * se + 1e-12)


def test_gp_mode_kriging_at_observed_site():
    s = fake_samples("hevp", D=5)
    n = len(SITES)
    r = np.random.default_rng(3)
    s.mu = r.normal(0.1, 0.3, (5, n))
    s.gp = {f: {"beta": np.zeros((5, 3)), "variance": np.ones(5), "range": np.ones(5),
                "smoothness": np.full(5, 0.5)} for f in ("mu", "log_sigma", "xi")}
    out = draw_quantiles(s, SITES[4:5], [np.exp(-1)])
    # GEV quantile at exp(-1) is mu; kriged mu at an observed site is the observed value
    np.testing.assert_allclose(out[:, 0, 0], s.mu[:, 4], atol=1e-5)


def test_levels_validated():
    s = fake_samples("hevp")
    for bad in ([0.0, 0.5], [0.5, 1.0], [0.9, 0.5]):
        with pytest.raises(DomainError):
            predict_quantiles(s, SITES, bad)


def test_empirical_chi_comonotone():
    y = np.random.default_rng(0).normal(size=(500, 1))
    y2 = np.hstack([y, 3 * y + 1])
    for u in (0.5, 0.9, 0.99):
        assert empirical_chi(y2, (0, 1), u).value == 1.0


def test_empirical_chi_independent():
    y = np.random.default_rng(1).normal(size=(10_000, 2))
    for u in (0.5, 0.9):
        est = empirical_chi(y, (0, 1), u).value
        assert abs(est - (1 - u)) < 3 * np.sqrt(u * (1 - u) / (10_000 * (1 - u)))


def test_empirical_chi_hevp_closed_form():
    ds = simulate(SimConfig(sites=[(1.0, 1.0), (2.0, 1.0)], T=10_000, seed=3))
    est = empirical_chi(ds.y, (0, 1), 0.99).value
    assert est == pytest.approx(models.chi_hevp(0, 1, ds.truth["weights"], 0.3), abs=0.05)


def test_empirical_chi_guards():
    y = np.random.default_rng(2).normal(size=(30, 2))
    e = empirical_chi(y, (0, 1), 0.95)
    assert e.low_count and 0 <= e.value <= 1
    with pytest.raises(DomainError):
        empirical_chi(y[:10], (0, 1), 0.9)
    with pytest.raises(DomainError):
        ChiEstimate((0, 1), 1.0, 0.5)


def test_model_chi_limits():
    s = fake_samples("hevp", D=4)
    est = model_chi(s, [[0, 1]], 1 - 1e-6)[0]
    ref = np.mean([models.chi_hevp(0, 1, kernel_weight_array(SITES[:2], SITES, t), 0.3) for t in s.tau])
    assert est == pytest.approx(ref, abs=1e-3)
    mm0 = fake_samples("mm", D=4, q=0.0)
    assert model_chi(mm0, [[0, 1]], 1 - 1e-6)[0] < 0.02
    sb = fake_samples("sb", D=4)
    vals = [model_chi(sb, [[0, 1], [3, 7]], u) for u in (0.5, 0.9, 0.99, 0.9999)]
    assert all(np.all((v >= 0) & (v <= 1)) for v in vals)
    assert np.all(np.diff(np.array(vals), axis=0) < 0)


def test_mmse_examples():
    t = np.random.default_rng(0).normal(size=(3, 4, 2))
    assert np.all(mmse_quantiles(t, t) == 0)
    assert mmse_quantiles([[2.0]], [[0.0]]) == 4.0
    e = np.zeros((1, 3))
    assert mmse_chi(e + 1, e, n_sites=3) == 1.0
    with pytest.raises(DomainError):
        mmse_chi(np.zeros((1, 4)), np.zeros((1, 4)), n_sites=3)
    with pytest.raises(DomainError):
        mmse_quantiles(np.zeros((2, 3)), np.zeros((2, 4)))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.integers(0, 2**31))
def test_mmse_nonnegative_zero_iff_exact(D, n, seed):
    r = np.random.default_rng(seed)
    t = r.normal(size=(D, n))
    assert mmse_quantiles(t, t) == 0
    e = t.copy()
    e[r.integers(D), r.integers(n)] += 0.1
    assert mmse_quantiles(e, t) > 0


def test_site_folds():
    a, b = site_folds(9, 3, 5), site_folds(9, 3, 5)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert sorted(np.concatenate(a).tolist()) == list(range(9))
    with pytest.raises(ConfigError):
        site_folds(4, 4, 0)  # leave-one-site-out has no held-out pairs
    with pytest.raises(ConfigError):
        site_folds(3, 1, 0)
    with pytest.raises(ConfigError):
        site_folds(2, 3, 0)


def test_cross_validate_smoke():
    ds = simulate(SimConfig(setting="SB", grid=3, T=25, seed=1))
    cfg = ChainConfig(iterations=30, burnin=10, thin=5)
    tab = cross_validate(ds.y, ds.sites, ["hevp", "sb"], k=3, cfg=cfg, levels=[0.5, 0.9],
                         chi_levels=[0.9], max_draws=4)
    rows = list(tab.rows())
    assert len(rows) == 2 * 3
    assert all(v >= 0 for *_, v in rows)
    again = cross_validate(ds.y, ds.sites, ["hevp"], k=3, cfg=cfg, levels=[0.5, 0.9],
                           chi_levels=[0.9], max_draws=4)
    assert np.array_equal(again.quantile["hevp"], tab.quantile["hevp"])
