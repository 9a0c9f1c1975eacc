"""Exact data generators for the six simulation settings, with ground truth.

Settings
--------
MS     HEVP max-stable process
SB     stick-breaking mixture over J positive-stable atoms
GP     Gaussian process, exponential correlation
ST     skew-t process
InvMS  inverted max-stable process
MAX    max-mixture of an MS residual and a Frechet-transformed GP

Each component draws from its own RNG stream, so e.g. MAX with q = 1
reproduces the MS output for the same seed bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import integrate, special, stats

from . import distributions as dist
from . import models
from .errors import ConfigError
from .geometry import as_coords, grid_sites, kernel_weight_array, pairwise_distances

SETTINGS = ("MS", "SB", "GP", "ST", "InvMS", "MAX")

# stream ids
_S_A, _S_U, _S_ATOMS, _S_LABELS, _S_GAUSS, _S_SKEW = 1, 2, 3, 4, 5, 6


class SimConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    setting: Literal["MS", "SB", "GP", "ST", "InvMS", "MAX"] = "MS"
    grid: int = Field(7, ge=1)
    sites: list[tuple[float, float]] | None = None
    knots: list[tuple[float, float]] | None = None
    T: int = Field(50, ge=1)
    mu: float = 0.1
    sigma: float = Field(1.0, gt=0)
    xi: float = 0.1
    alpha: float = Field(0.3, gt=0, lt=1)
    tau: float = Field(1.0, gt=0)
    J: int = Field(3, ge=1)
    pi: list[float] | None = None
    q: float = Field(0.5, ge=0, le=1)
    gp_mean: float = 0.1
    gp_variance: float = Field(1.0, gt=0)
    gp_range: float = Field(1.0, gt=0)
    skew: float = 3.0
    skew_mu: float = 1.0
    ig_shape: float = Field(4.0, gt=0)
    ig_scale: float = Field(1.0, gt=0)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check(self):
        if self.setting == "SB":
            pi = self.resolved_pi()
            if len(pi) != self.J:
                raise ValueError(f"pi has {len(pi)} entries but J = {self.J}")
            if any(p < 0 for p in pi) or abs(sum(pi) - 1) > 1e-9:
                raise ValueError("pi must be a probability vector")
        return self

    def resolved_pi(self) -> list[float]:
        if self.pi is not None:
            return list(self.pi)
        if self.J == 3:
            return [0.5, 0.3, 0.2]
        return [1.0 / self.J] * self.J

    def site_coords(self) -> np.ndarray:
        if self.sites is not None:
            return as_coords(np.asarray(self.sites, dtype=float))
        return grid_sites(self.grid)

    def knot_coords(self) -> np.ndarray:
        if self.knots is not None:
            return as_coords(np.asarray(self.knots, dtype=float))
        return self.site_coords()


@dataclass
class Dataset:
    """T x n responses at n sites."""

    y: np.ndarray
    sites: np.ndarray
    provenance: SimConfig | str = "external"
    truth: dict = field(default_factory=dict)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.sites = as_coords(self.sites)
        if self.y.ndim != 2 or self.y.shape[1] != self.sites.shape[0]:
            raise ConfigError(f"data shape {self.y.shape} inconsistent with {self.sites.shape[0]} sites")

    @property
    def T(self) -> int:
        return self.y.shape[0]

    @property
    def n(self) -> int:
        return self.y.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.y[:, idx], self.sites[idx], self.provenance, dict(self.truth, site_index=idx))


# ---------------------------------------------------------------------------
# Residual-process building blocks
# ---------------------------------------------------------------------------

def _hevp_residual(cfg: SimConfig, w: np.ndarray, a: np.ndarray) -> np.ndarray:
    """X = U theta for random effects ``a`` (T, L)."""
    rng_u = dist.rng_stream(cfg.seed, _S_U)
    powers = models.kernel_powers(w, cfg.alpha)
    log_th = models.log_theta(a, powers, cfg.alpha)
    # U ~ GEV(1, alpha, alpha) is Z^alpha with Z unit Frechet
    v = dist._open_uniform(rng_u, log_th.shape)
    log_u = -cfg.alpha * np.log(-np.log(v))
    return np.exp(log_u + log_th)


def _gaussian_field(cfg: SimConfig, sites: np.ndarray) -> np.ndarray:
    """T draws of a unit-variance field with correlation exp(-d / range)."""
    rng = dist.rng_stream(cfg.seed, _S_GAUSS)
    corr = np.exp(-pairwise_distances(sites) / cfg.gp_range)
    try:
        chol = np.linalg.cholesky(corr)
    except np.linalg.LinAlgError:
        chol = np.linalg.cholesky(corr + 1e-10 * np.eye(len(corr)))
    z = rng.standard_normal((cfg.T, len(sites)))
    return z @ chol.T


def _gev_transform(cfg: SimConfig, x: np.ndarray) -> np.ndarray:
    return dist.frechet_to_gev(x, cfg.mu, cfg.sigma, cfg.xi)


def _ms_parts(cfg: SimConfig):
    sites, knots = cfg.site_coords(), cfg.knot_coords()
    w = kernel_weight_array(sites, knots, cfg.tau)
    a = dist.ps_sample(cfg.alpha, dist.rng_stream(cfg.seed, _S_A), (cfg.T, len(knots)))
    a = np.atleast_2d(a)
    return sites, w, a, _hevp_residual(cfg, w, a)


def _require(cfg: SimConfig, setting: str):
    if cfg.setting != setting:
        raise ConfigError(f"configuration is for setting {cfg.setting!r}, not {setting!r}")


def sim_hevp(cfg: SimConfig) -> Dataset:
    _require(cfg, "MS")
    sites, w, a, x = _ms_parts(cfg)
    return Dataset(_gev_transform(cfg, x), sites, cfg, {"weights": w, "A": a, "x": x})


def sim_sb(cfg: SimConfig) -> Dataset:
    _require(cfg, "SB")
    sites, knots = cfg.site_coords(), cfg.knot_coords()
    w = kernel_weight_array(sites, knots, cfg.tau)
    gamma = np.atleast_2d(dist.ps_sample(cfg.alpha, dist.rng_stream(cfg.seed, _S_ATOMS), (cfg.J, len(knots))))
    pi = np.asarray(cfg.resolved_pi(), dtype=float)
    labels = np.atleast_1d(dist.categorical_sample(pi, dist.rng_stream(cfg.seed, _S_LABELS), cfg.T))
    x = _hevp_residual(cfg, w, gamma[labels])
    truth = {"weights": w, "gamma": gamma, "pi": pi, "labels": labels, "x": x}
    return Dataset(_gev_transform(cfg, x), sites, cfg, truth)


def sim_gp(cfg: SimConfig) -> Dataset:
    _require(cfg, "GP")
    sites = cfg.site_coords()
    z = _gaussian_field(cfg, sites)
    return Dataset(cfg.gp_mean + np.sqrt(cfg.gp_variance) * z, sites, cfg)


def sim_skew_t(cfg: SimConfig) -> Dataset:
    _require(cfg, "ST")
    sites = cfg.site_coords()
    e = _gaussian_field(cfg, sites)
    rng = dist.rng_stream(cfg.seed, _S_SKEW)
    z = rng.standard_normal(cfg.T)
    sig2 = cfg.ig_scale / rng.gamma(cfg.ig_shape, 1.0, cfg.T)
    sig = np.sqrt(sig2)
    y = cfg.skew_mu + cfg.skew * (sig * np.abs(z))[:, None] + sig[:, None] * e
    return Dataset(y, sites, cfg, {"sigma2": sig2})


def sim_inverted_ms(cfg: SimConfig) -> Dataset:
    _require(cfg, "InvMS")
    sites, w, a, x = _ms_parts(cfg)
    return Dataset(_gev_transform(cfg, 1.0 / x), sites, cfg, {"weights": w, "A": a, "x": x})


def _frechet_from_gaussian(z):
    """Probability-integral transform of N(0,1) values to unit Frechet."""
    return -1.0 / special.log_ndtr(z)


def sim_max_mixture(cfg: SimConfig) -> Dataset:
    _require(cfg, "MAX")
    sites, w, a, x1 = _ms_parts(cfg)
    x2 = _frechet_from_gaussian(_gaussian_field(cfg, sites))
    q = cfg.q
    with np.errstate(divide="ignore"):
        x = np.maximum(q * x1 ** q, (1.0 - q) * x2 ** (1.0 - q))
    return Dataset(_gev_transform(cfg, x), sites, cfg, {"weights": w, "A": a, "x1": x1, "x2": x2})


_SIMULATORS = {
    "MS": sim_hevp, "SB": sim_sb, "GP": sim_gp,
    "ST": sim_skew_t, "InvMS": sim_inverted_ms, "MAX": sim_max_mixture,
}


def simulate(cfg: SimConfig) -> Dataset:
    return _SIMULATORS[cfg.setting](cfg)


# ---------------------------------------------------------------------------
# Ground truth
# ---------------------------------------------------------------------------

def bvn_upper(z: float, rho: float) -> float:
    """P(Z1 > z, Z2 > z) for a standard bivariate normal with correlation rho."""
    if rho >= 1.0:
        return float(special.ndtr(-z))
    s = np.sqrt(1.0 - rho * rho)
    f = lambda x: np.exp(-0.5 * x * x) / np.sqrt(2 * np.pi) * special.ndtr(-(z - rho * x) / s)
    val, _ = integrate.quad(f, z, np.inf, epsabs=1e-14, epsrel=1e-12, limit=200)
    return float(val)


def _max_residual_log_cdf(logc, q):
    a = (logc - np.log(q)) / q
    b = (logc - np.log1p(-q)) / (1.0 - q)
    return -np.exp(-a) - np.exp(-b)


@lru_cache(maxsize=32)
def _skew_t_mc(cfg_json: str, n_draws: int = 10**6):
    """Brute-force Monte Carlo reference draws for the skew-t margins."""
    cfg = SimConfig.model_validate_json(cfg_json)
    rng = dist.rng_stream(10**6 + cfg.seed, 99)
    z = rng.standard_normal(n_draws)
    sig = np.sqrt(cfg.ig_scale / rng.gamma(cfg.ig_shape, 1.0, n_draws))
    e1 = rng.standard_normal(n_draws)
    e2 = rng.standard_normal(n_draws)
    return z, sig, e1, e2


def true_quantiles(ds: Dataset, levels) -> np.ndarray:
    """True marginal quantiles, shape (n, K)."""
    cfg = ds.provenance
    if not isinstance(cfg, SimConfig):
        raise ConfigError("ground truth is only available for simulated data")
    levels = np.atleast_1d(np.asarray(levels, dtype=float))
    n = ds.n
    s = cfg.setting
    if s == "MS":
        out = dist._gev_quantile(levels, cfg.mu, cfg.sigma, cfg.xi)
        return np.broadcast_to(out, (n, levels.size)).copy()
    if s == "SB":
        t = ds.truth
        w = t["weights"][t.get("site_index", slice(None))]
        logx = models.residual_log_quantile("sb", levels, w, cfg.alpha, t["gamma"], t["pi"])
        return models.y_from_residual_log(logx, cfg.mu, cfg.sigma, cfg.xi)
    if s == "GP":
        out = cfg.gp_mean + np.sqrt(cfg.gp_variance) * special.ndtri(levels)
        return np.broadcast_to(out, (n, levels.size)).copy()
    if s == "InvMS":
        # Y is decreasing in X, so the kappa quantile of Y maps from the 1-kappa quantile of X
        logx = -np.log(-np.log1p(-levels))
        out = models.y_from_residual_log(-logx, cfg.mu, cfg.sigma, cfg.xi)
        return np.broadcast_to(out, (n, levels.size)).copy()
    if s == "MAX":
        if cfg.q >= 1 - models.Q_EPS:
            logx = -np.log(-np.log(levels))
        else:
            logx = models.invert_log_cdf(lambda x: _max_residual_log_cdf(x, cfg.q), np.log(levels))
        out = models.y_from_residual_log(logx, cfg.mu, cfg.sigma, cfg.xi)
        return np.broadcast_to(out, (n, levels.size)).copy()
    z, sig, e1, _ = _skew_t_mc(cfg.model_dump_json())
    y = cfg.skew_mu + cfg.skew * sig * np.abs(z) + sig * e1
    out = np.quantile(y, levels)
    return np.broadcast_to(out, (n, levels.size)).copy()


def true_chi(ds: Dataset, pairs, u: float) -> np.ndarray:
    """True finite-level tail dependence P(Y_i > q_u | Y_j > q_u) per pair."""
    cfg = ds.provenance
    if not isinstance(cfg, SimConfig):
        raise ConfigError("ground truth is only available for simulated data")
    pairs = np.atleast_2d(np.asarray(pairs, dtype=int))
    s = cfg.setting
    t = ds.truth
    idx = t.get("site_index", slice(None))
    if s == "MS":
        return models.model_chi_u("hevp", pairs, u, t["weights"][idx], cfg.alpha)
    if s == "SB":
        return models.model_chi_u("sb", pairs, u, t["weights"][idx], cfg.alpha, t["gamma"], t["pi"])
    if s == "InvMS":
        w = t["weights"][idx]
        logx = -np.log(-np.log1p(-u))
        out = [np.exp(models.log_f_hevp_joint(np.array([logx, logx]), w[[i, j]], cfg.alpha)) / (1 - u)
               for i, j in pairs]
        return np.clip(np.array(out), 0, 1)
    d = pairwise_distances(ds.sites)
    if s == "GP":
        z = special.ndtri(u)
        return np.array([bvn_upper(z, np.exp(-d[i, j] / cfg.gp_range)) / (1 - u) for i, j in pairs])
    if s == "MAX":
        w = t["weights"][idx]
        q = cfg.q
        logx = models.invert_log_cdf(lambda x: _max_residual_log_cdf(x, q), np.log([u]))[0] \
            if q < 1 - models.Q_EPS else -np.log(-np.log(u))
        out = []
        for i, j in pairs:
            if q >= 1 - models.Q_EPS:
                lj = models.log_f_hevp_joint(np.array([logx, logx]), w[[i, j]], cfg.alpha)
            else:
                a = (logx - np.log(q)) / q
                b = (logx - np.log1p(-q)) / (1 - q)
                l1 = models.log_f_hevp_joint(np.array([a, a]), w[[i, j]], cfg.alpha)
                zb = special.ndtri(np.exp(-np.exp(-b)))
                rho = np.exp(-d[i, j] / cfg.gp_range)
                p_gauss = 1.0 - 2.0 * special.ndtr(-zb) + bvn_upper(zb, rho)
                lj = l1 + np.log(p_gauss)
            out.append(models.chi_u_from_log_joint(lj, u))
        return np.clip(np.array(out), 0, 1)
    # ST: Monte Carlo on the bivariate margin
    zz, sig, e1, e2 = _skew_t_mc(cfg.model_dump_json())
    base = cfg.skew_mu + cfg.skew * sig * np.abs(zz)
    y1 = base + sig * e1
    thr = np.quantile(y1, u)
    out = []
    for i, j in pairs:
        rho = np.exp(-d[i, j] / cfg.gp_range)
        y2 = base + sig * (rho * e1 + np.sqrt(1 - rho * rho) * e2)
        out.append(np.mean((y1 > thr) & (y2 > thr)) / np.mean(y1 > thr))
    return np.array(out)


def all_pairs(n: int) -> np.ndarray:
    i, j = np.triu_indices(n, k=1)
    return np.column_stack([i, j])
