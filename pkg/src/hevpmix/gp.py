"""Gaussian-process and constant priors for the marginal GEV surfaces."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, special

from .distributions import invgamma_logpdf, normal_logpdf
from .errors import DomainError, NumericalError
from .geometry import as_coords, pairwise_distances

JITTER = 1e-10


@dataclass(frozen=True)
class GpHyper:
    """Hyperparameters of one GP surface: mean x(s)^T beta with x(s) = (1, s)."""

    beta: np.ndarray
    variance: float
    range: float
    smoothness: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))
        if self.beta.shape != (3,):
            raise DomainError("beta must have 3 entries (intercept, x, y)")
        if not (self.variance > 0 and self.range > 0 and self.smoothness > 0):
            raise DomainError("GP variance, range and smoothness must be positive")


@dataclass
class GevSurface:
    """GEV parameter fields over a set of sites."""

    mu: np.ndarray
    log_sigma: np.ndarray
    xi: np.ndarray
    mode: str = "constant"

    def __post_init__(self):
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        self.log_sigma = np.atleast_1d(np.asarray(self.log_sigma, dtype=float))
        self.xi = np.atleast_1d(np.asarray(self.xi, dtype=float))
        if self.mode not in ("constant", "gp"):
            raise DomainError(f"unknown GEV surface mode {self.mode!r}")
        if not (self.mu.shape == self.log_sigma.shape == self.xi.shape):
            raise DomainError("GEV fields must share one shape")

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma)


def design_matrix(sites) -> np.ndarray:
    s = as_coords(sites)
    return np.column_stack([np.ones(len(s)), s])


def matern_correlation(d, smoothness: float = 0.5):
    """Matern correlation at scaled distance ``d`` (= distance / range)."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise DomainError("distances must be non-negative")
    if smoothness == 0.5:
        return np.exp(-d)
    if smoothness == 1.5:
        r = np.sqrt(3.0) * d
        return (1.0 + r) * np.exp(-r)
    if smoothness == 2.5:
        r = np.sqrt(5.0) * d
        return (1.0 + r + r * r / 3.0) * np.exp(-r)
    r = np.sqrt(2.0 * smoothness) * d
    with np.errstate(invalid="ignore"):
        val = (2.0 ** (1.0 - smoothness) / special.gamma(smoothness)) * r ** smoothness * special.kv(smoothness, r)
    return np.where(d == 0, 1.0, val)


def matern_cov(d, h: GpHyper):
    out = h.variance * matern_correlation(np.asarray(d, dtype=float) / h.range, h.smoothness)
    return float(out) if np.ndim(out) == 0 else out


def _cholesky(cov: np.ndarray, jitter: bool = True, scale: float = 1.0) -> np.ndarray:
    try:
        return linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError:
        if not jitter:
            raise NumericalError("covariance matrix is not positive definite")
    try:
        return linalg.cholesky(cov + JITTER * scale * np.eye(len(cov)), lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError("covariance matrix is not positive definite after jitter") from exc


def covariance_matrix(sites, h: GpHyper, other=None) -> np.ndarray:
    return matern_cov(pairwise_distances(sites, other), h)


def gp_logprior(values, sites, h: GpHyper, jitter: bool = True) -> float:
    """Multivariate normal log-density of a field under the GP prior."""
    x = np.asarray(values, dtype=float)
    cov = covariance_matrix(sites, h)
    chol = _cholesky(cov, jitter, h.variance)
    resid = x - design_matrix(sites) @ h.beta
    z = linalg.solve_triangular(chol, resid, lower=True)
    return float(-0.5 * z @ z - np.sum(np.log(np.diag(chol))) - 0.5 * len(x) * np.log(2 * np.pi))


def gp_logprior_gradient(values, sites, h: GpHyper) -> np.ndarray:
    x = np.asarray(values, dtype=float)
    cov = covariance_matrix(sites, h)
    chol = _cholesky(cov, True, h.variance)
    resid = x - design_matrix(sites) @ h.beta
    return -linalg.cho_solve((chol, True), resid)


def gp_conditional(new_sites, observed, sites, h: GpHyper):
    """Kriging mean and covariance of the field at ``new_sites``."""
    obs = np.asarray(observed, dtype=float)
    c_oo = covariance_matrix(sites, h)
    chol = _cholesky(c_oo, True, h.variance)
    c_no = covariance_matrix(new_sites, h, sites)
    c_nn = covariance_matrix(new_sites, h)
    resid = obs - design_matrix(sites) @ h.beta
    mean = design_matrix(new_sites) @ h.beta + c_no @ linalg.cho_solve((chol, True), resid)
    v = linalg.solve_triangular(chol, c_no.T, lower=True)
    cov = c_nn - v.T @ v
    return mean, cov


@dataclass(frozen=True)
class ConstantPriors:
    """Priors for the constant-surface (simulation) mode and the dependence parameters."""

    mu_sd: float = 10.0
    log_sigma_sd: float = 1.0
    xi_sd: float = 0.25
    tau_shape: float = 0.1
    tau_scale: float = 0.1

    def mu(self, x):
        return normal_logpdf(x, 0.0, self.mu_sd)

    def log_sigma(self, x):
        return normal_logpdf(x, 0.0, self.log_sigma_sd)

    def xi(self, x):
        return normal_logpdf(x, 0.0, self.xi_sd)

    def tau(self, x):
        return invgamma_logpdf(x, self.tau_shape, self.tau_scale)

    @staticmethod
    def unit_interval(x):
        """Uniform(0, 1) log-density, used for alpha and q."""
        x = np.asarray(x, dtype=float)
        return np.where((x > 0) & (x < 1), 0.0, -np.inf)

    alpha = unit_interval
    q = unit_interval

    def field(self, name):
        return {"mu": self.mu, "log_sigma": self.log_sigma, "xi": self.xi}[name]


def constant_priors() -> ConstantPriors:
    return ConstantPriors()


@dataclass(frozen=True)
class GpHyperPriors:
    """Hyperpriors for GP surfaces.

    beta ~ N(0, beta_sd^2 I); variance ~ InvGamma(var_shape, var_scale);
    range ~ half-normal with scale ``range_scale`` (set to the domain diameter
    when left as None).
    """

    beta_sd: float = 10.0
    var_shape: float = 2.0
    var_scale: float = 1.0
    range_scale: float | None = None
    smoothness: float = 0.5
    extra: dict = field(default_factory=dict)

    def log_range(self, r, diameter):
        scale = self.range_scale or diameter
        return np.where(r > 0, normal_logpdf(r, 0.0, scale) + np.log(2.0), -np.inf)

    def log_variance(self, v):
        return invgamma_logpdf(v, self.var_shape, self.var_scale)
