"""Posterior predictive quantiles, tail-dependence estimates and MMSE scoring."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import models
from .distributions import rng_stream
from .errors import ConfigError, DomainError
from .geometry import as_coords, kernel_weight_array
from .gp import GpHyper, gp_conditional
from .mcmc import ChainConfig, PosteriorSamples, Sampler

PREDICT_LEVELS = (0.5, 0.95, 0.99)
SCORE_LEVELS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99, 0.995)
CHI_LEVELS = (0.9, 0.95, 0.99)
LOW_COUNT = 5

_STREAM_KRIGE = 21
_STREAM_FOLDS = 22


def _check_levels(levels) -> np.ndarray:
    lv = np.atleast_1d(np.asarray(levels, dtype=float))
    if lv.size == 0 or np.any((lv <= 0) | (lv >= 1)) or not np.all(np.isfinite(lv)):
        raise DomainError("levels must lie strictly inside (0, 1)")
    if np.any(np.diff(lv) <= 0):
        raise DomainError("levels must be strictly increasing")
    return lv


@dataclass
class QuantileGrid:
    """Posterior mean and sd of marginal quantiles at a set of sites."""

    sites: np.ndarray
    levels: np.ndarray
    mean: np.ndarray  # (m, K)
    sd: np.ndarray    # (m, K)

    def __post_init__(self):
        self.levels = _check_levels(self.levels)

    def rows(self):
        """Long-format rows (x, y, level, mean, sd)."""
        for i, (x, y) in enumerate(self.sites):
            for k, lv in enumerate(self.levels):
                yield float(x), float(y), float(lv), float(self.mean[i, k]), float(self.sd[i, k])


@dataclass(frozen=True)
class ChiEstimate:
    pair: tuple[int, int]
    u: float
    value: float
    n_joint: int = -1
    low_count: bool = False

    def __post_init__(self):
        if not 0 < self.u < 1:
            raise DomainError("u must lie in (0, 1)")


# ---------------------------------------------------------------------------
# Predictive quantiles
# ---------------------------------------------------------------------------

def _fields_at(samples: PosteriorSamples, d: int, new_sites: np.ndarray, rng) -> tuple:
    """GEV fields at new sites for posterior draw ``d``."""
    m = len(new_sites)
    if samples.gp is None:
        return (np.full(m, samples.mu[d, 0]), np.full(m, np.exp(samples.log_sigma[d, 0])),
                np.full(m, samples.xi[d, 0]))
    out = []
    for name in ("mu", "log_sigma", "xi"):
        g = samples.gp[name]
        h = GpHyper(g["beta"][d], g["variance"][d], g["range"][d], g["smoothness"][d])
        mean, cov = gp_conditional(new_sites, getattr(samples, name)[d], samples.sites, h)
        vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
        draw = mean + vecs @ (np.sqrt(np.clip(vals, 0.0, None)) * rng.standard_normal(m))
        out.append(draw)
    return out[0], np.exp(out[1]), out[2]


def draw_quantiles(samples: PosteriorSamples, new_sites, levels, seed: int = 0,
                   max_draws: int | None = None) -> np.ndarray:
    """(D, m, K) array of marginal quantiles, one slice per posterior draw."""
    lv = _check_levels(levels)
    new_sites = as_coords(new_sites)
    if len(new_sites) == 0:
        raise DomainError("no sites to predict at")
    idx = _draw_index(len(samples), max_draws)
    rng = rng_stream(seed, _STREAM_KRIGE)
    out = np.empty((len(idx), len(new_sites), lv.size))
    for k, d in enumerate(idx):
        mu, sigma, xi = _fields_at(samples, d, new_sites, rng)
        w = kernel_weight_array(new_sites, samples.knots, samples.tau[d])
        logx = models.residual_log_quantile(
            samples.kind, lv, w, samples.alpha[d],
            None if samples.gamma is None else samples.gamma[d],
            None if samples.pi is None else samples.pi[d], samples.q[d])
        out[k] = models.y_from_residual_log(logx, mu[:, None], sigma[:, None], xi[:, None])
    return out


def _draw_index(n: int, max_draws: int | None) -> np.ndarray:
    if n == 0:
        raise DomainError("posterior sample set is empty")
    if max_draws is None or max_draws >= n:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, max_draws).round().astype(int))


def predict_quantiles(samples: PosteriorSamples, new_sites, levels=PREDICT_LEVELS, seed: int = 0,
                      max_draws: int | None = None) -> QuantileGrid:
    """Posterior predictive mean and sd of marginal quantiles at ``new_sites``.

    In GP mode the GEV surfaces are kriged to the new sites per draw; in
    constant mode the shared values are used directly.
    """
    draws = draw_quantiles(samples, new_sites, levels, seed, max_draws)
    sd = draws.std(axis=0, ddof=1) if len(draws) > 1 else np.zeros(draws.shape[1:])
    return QuantileGrid(as_coords(new_sites), np.asarray(levels, dtype=float), draws.mean(axis=0), sd)


# ---------------------------------------------------------------------------
# Tail dependence
# ---------------------------------------------------------------------------

def pseudo_uniforms(y) -> np.ndarray:
    """Column-wise average ranks divided by T + 1."""
    y = np.asarray(y, dtype=float)
    return stats.rankdata(y, axis=0) / (y.shape[0] + 1.0)


def empirical_chi(y, pair, u: float, min_T: int = 20) -> ChiEstimate:
    """Rank-based estimate of P(F_i > u | F_j > u)."""
    y = np.asarray(y, dtype=float)
    if not 0 < u < 1:
        raise DomainError("u must lie in (0, 1)")
    if y.shape[0] < min_T:
        raise DomainError(f"empirical chi needs at least {min_T} replicates")
    i, j = (int(v) for v in pair)
    r = pseudo_uniforms(y[:, [i, j]])
    exc_j = r[:, 1] > u
    joint = int(np.sum(exc_j & (r[:, 0] > u)))
    n_j = int(np.sum(exc_j))
    value = joint / n_j if n_j else 0.0
    return ChiEstimate((i, j), float(u), float(value), joint, joint < LOW_COUNT)


def empirical_chi_pairs(y, pairs, u: float, min_T: int = 20) -> np.ndarray:
    return np.array([empirical_chi(y, p, u, min_T).value for p in np.atleast_2d(pairs)])


def model_chi(samples: PosteriorSamples, pairs, u: float, sites=None, max_draws: int | None = None) -> np.ndarray:
    """Posterior mean of the finite-level tail dependence for each pair.

    ``sites`` defaults to the fitted sites; pairs index into it.
    """
    if not 0 < u < 1:
        raise DomainError("u must lie in (0, 1)")
    sites = samples.sites if sites is None else as_coords(sites)
    pairs = np.atleast_2d(np.asarray(pairs, dtype=int))
    used = np.unique(pairs)
    local = np.searchsorted(used, pairs)
    idx = _draw_index(len(samples), max_draws)
    acc = np.zeros(len(pairs))
    for d in idx:
        w = kernel_weight_array(sites[used], samples.knots, samples.tau[d])
        acc += models.model_chi_u(
            samples.kind, local, u, w, samples.alpha[d],
            None if samples.gamma is None else samples.gamma[d],
            None if samples.pi is None else samples.pi[d], samples.q[d])
    return acc / len(idx)


# ---------------------------------------------------------------------------
# Scores
# ---------------------------------------------------------------------------

def _sq_err(estimates, truths):
    e = np.asarray(estimates, dtype=float)
    t = np.asarray(truths, dtype=float)
    if e.shape != t.shape:
        raise DomainError(f"shape mismatch {e.shape} vs {t.shape}")
    if e.ndim < 2:
        raise DomainError("expected (datasets, sites[, levels]) arrays")
    return (e - t) ** 2


def mmse_quantiles(estimates, truths):
    """Mean squared error averaged over datasets (axis 0) and sites (axis 1).

    A trailing level axis is kept, giving one score per level.
    """
    return np.mean(_sq_err(estimates, truths), axis=(0, 1))


def mmse_chi(estimates, truths, n_sites: int | None = None):
    """Mean squared error averaged over datasets and the m = n(n-1)/2 site pairs."""
    err = _sq_err(estimates, truths)
    if n_sites is not None and err.shape[1] != n_sites * (n_sites - 1) // 2:
        raise DomainError("pair axis must hold n(n-1)/2 entries")
    return np.mean(err, axis=(0, 1))


# ---------------------------------------------------------------------------
# Cross validation
# ---------------------------------------------------------------------------

@dataclass
class ScoreTable:
    """Per-model MMSE of quantiles (by level) and of chi (by u)."""

    levels: np.ndarray
    chi_levels: np.ndarray
    quantile: dict = field(default_factory=dict)
    chi: dict = field(default_factory=dict)

    def rows(self):
        for model in self.quantile:
            for lv, v in zip(self.levels, self.quantile[model]):
                yield model, "quantile", float(lv), float(v)
            for u, v in zip(self.chi_levels, self.chi[model]):
                yield model, "chi", float(u), float(v)


def site_folds(n: int, k: int, seed: int) -> list[np.ndarray]:
    """Random near-equal split of site indices into k groups."""
    if k < 2 or n < k:
        raise ConfigError(f"need 2 <= k <= n for cross validation (k={k}, n={n})")
    perm = rng_stream(seed, _STREAM_FOLDS).permutation(n)
    folds = [np.sort(f) for f in np.array_split(perm, k)]
    if min(len(f) for f in folds) < 2:
        raise ConfigError("every fold needs at least two sites so that held-out pairs exist")
    return folds


def held_out_scores(samples: PosteriorSamples, y_test, test_sites, levels, chi_levels,
                    max_draws: int | None = None, seed: int = 0):
    """Squared errors of predictions against empirical values at held-out sites."""
    y_test = np.asarray(y_test, dtype=float)
    lv = _check_levels(levels)
    grid = predict_quantiles(samples, test_sites, lv, seed=seed, max_draws=max_draws)
    emp_q = np.quantile(y_test, lv, axis=0).T
    q_err = (grid.mean - emp_q) ** 2
    pairs = models_pairs(y_test.shape[1])
    chi_err = []
    for u in chi_levels:
        emp = empirical_chi_pairs(y_test, pairs, u)
        mod = model_chi(samples, pairs, u, sites=test_sites, max_draws=max_draws)
        chi_err.append((mod - emp) ** 2)
    return q_err, np.array(chi_err).T


def models_pairs(n: int) -> np.ndarray:
    i, j = np.triu_indices(n, k=1)
    return np.column_stack([i, j])


def cross_validate(y, sites, kinds, k: int = 3, cfg: ChainConfig | None = None,
                   levels=SCORE_LEVELS, chi_levels=CHI_LEVELS, seed: int = 0,
                   max_draws: int | None = 200, knots=None) -> ScoreTable:
    """k-fold cross validation over sites; knots default to all sites."""
    y = np.asarray(y, dtype=float)
    sites = as_coords(sites)
    knots = sites if knots is None else as_coords(knots)
    cfg = cfg or ChainConfig()
    lv = _check_levels(levels)
    folds = site_folds(len(sites), k, seed)
    table = ScoreTable(lv, np.asarray(chi_levels, dtype=float))
    for kind in kinds:
        q_all, c_all = [], []
        for f, test in enumerate(folds):
            train = np.setdiff1d(np.arange(len(sites)), test)
            fold_cfg = cfg.model_copy(update={"model": kind, "seed": cfg.seed + f})
            samples = Sampler(fold_cfg, y[:, train], sites[train], knots).run().samples()
            q_err, c_err = held_out_scores(samples, y[:, test], sites[test], lv, chi_levels,
                                           max_draws, seed)
            q_all.append(q_err)
            c_all.append(c_err)
        table.quantile[kind] = np.mean(np.concatenate(q_all), axis=0)
        table.chi[kind] = np.mean(np.concatenate(c_all), axis=0)
    return table
