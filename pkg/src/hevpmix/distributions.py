"""Densities, CDFs, quantiles and samplers used by the spatial models.

All array functions broadcast over their arguments.  Off-support GEV
log-densities are ``-inf`` rather than errors so that Metropolis steps
reject impossible proposals without special casing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DomainError

XI_EPS = 1e-8
_TINY = np.nextafter(0.0, 1.0)


# ---------------------------------------------------------------------------
# Random number streams
# ---------------------------------------------------------------------------

def rng_stream(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for ``(seed, stream)``.

    Philox is keyed from a SeedSequence over both integers, so streams with
    different ids are statistically independent and each one is
    bit-reproducible on any platform.
    """
    if seed < 0 or stream < 0:
        raise DomainError("seed and stream id must be non-negative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


def _open_uniform(rng, size=None):
    u = rng.random(size)
    return np.where(u == 0.0, _TINY, u)


# ---------------------------------------------------------------------------
# GEV
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GevParams:
    """Location, scale and shape of a GEV law; fields may be arrays."""

    mu: float | np.ndarray
    sigma: float | np.ndarray
    xi: float | np.ndarray

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=float)
        if not np.all(np.isfinite(sigma) & (sigma > 0)):
            raise DomainError("GEV scale must be strictly positive")
        if not (np.all(np.isfinite(self.mu)) and np.all(np.isfinite(self.xi))):
            raise DomainError("GEV location and shape must be finite")

    def lower_endpoint(self):
        xi = np.asarray(self.xi, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(xi > XI_EPS, self.mu - self.sigma / np.where(xi > XI_EPS, xi, 1.0), -np.inf)

    def upper_endpoint(self):
        xi = np.asarray(self.xi, dtype=float)
        return np.where(xi < -XI_EPS, self.mu - self.sigma / np.where(xi < -XI_EPS, xi, -1.0), np.inf)


def gev_log_t(y, mu, sigma, xi):
    """log of t(y) = [1 + xi (y - mu)/sigma]^(-1/xi), the GEV 'reduced' variable.

    Below the lower endpoint this is +inf (CDF 0); above the upper endpoint
    it is -inf (CDF 1).  The Gumbel limit -z is used for |xi| < XI_EPS.
    """
    y, mu, sigma, xi = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (y, mu, sigma, xi)))
    z = (y - mu) / sigma
    gumbel = np.abs(xi) < XI_EPS
    arg = xi * z
    inside = arg > -1.0
    safe_xi = np.where(gumbel, 1.0, xi)
    with np.errstate(divide="ignore", invalid="ignore"):
        logt = -np.log1p(np.where(inside, arg, 0.0)) / safe_xi
    off = np.where(xi > 0, np.inf, -np.inf)
    logt = np.where(inside, logt, off)
    return np.where(gumbel, -z, logt)


def _gev_logpdf(y, mu, sigma, xi):
    """Unchecked GEV log-density (hot path)."""
    logt = gev_log_t(y, mu, sigma, xi)
    with np.errstate(over="ignore", invalid="ignore"):
        t = np.exp(logt)
        out = -np.log(sigma) + (1.0 + xi) * logt - t
    ok = np.isfinite(logt) & np.isfinite(out)
    return np.where(ok, out, -np.inf)


def _gev_logcdf(y, mu, sigma, xi):
    logt = gev_log_t(y, mu, sigma, xi)
    with np.errstate(over="ignore"):
        return -np.exp(logt)


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def gev_cdf(y, p: GevParams):
    return _scalar(np.exp(_gev_logcdf(y, p.mu, p.sigma, p.xi)))


def gev_logcdf(y, p: GevParams):
    return _scalar(_gev_logcdf(y, p.mu, p.sigma, p.xi))


def gev_logpdf(y, p: GevParams):
    return _scalar(_gev_logpdf(y, p.mu, p.sigma, p.xi))


def _gev_quantile(u, mu, sigma, xi):
    u, mu, sigma, xi = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (u, mu, sigma, xi)))
    loglog = np.log(-np.log(u))
    gumbel = np.abs(xi) < XI_EPS
    safe_xi = np.where(gumbel, 1.0, xi)
    z = np.where(gumbel, -loglog, np.expm1(-safe_xi * loglog) / safe_xi)
    return mu + sigma * z


def gev_quantile(u, p: GevParams):
    u_arr = np.asarray(u, dtype=float)
    if not np.all((u_arr > 0) & (u_arr < 1)):
        raise DomainError("quantile level must lie strictly inside (0, 1)")
    return _scalar(_gev_quantile(u_arr, p.mu, p.sigma, p.xi))


def gev_sample(p: GevParams, rng: np.random.Generator, size=None):
    shape = size if size is not None else np.broadcast(np.asarray(p.mu), np.asarray(p.sigma), np.asarray(p.xi)).shape
    u = _open_uniform(rng, shape if shape != () else None)
    return _scalar(_gev_quantile(u, p.mu, p.sigma, p.xi))


def frechet_to_gev(x, mu, sigma, xi):
    """Map unit-Frechet values to GEV(mu, sigma, xi): mu + sigma (x^xi - 1)/xi."""
    x, mu, sigma, xi = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, mu, sigma, xi)))
    logx = np.log(x)
    return mu + sigma * expm1_over(xi, logx)


def expm1_over(xi, logx):
    """(exp(xi * logx) - 1) / xi with the xi -> 0 limit logx."""
    xi = np.asarray(xi, dtype=float)
    gumbel = np.abs(xi) < XI_EPS
    safe_xi = np.where(gumbel, 1.0, xi)
    with np.errstate(over="ignore", invalid="ignore"):
        val = np.expm1(safe_xi * logx) / safe_xi
    return np.where(gumbel, logx, val)


# ---------------------------------------------------------------------------
# Positive stable law, Laplace transform exp(-t^alpha)
# ---------------------------------------------------------------------------

def _check_alpha(alpha):
    a = np.asarray(alpha, dtype=float)
    if not np.all((a > 0) & (a < 1)):
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")


def ps_sample(alpha: float, rng: np.random.Generator, size=None):
    """Positive stable draws by Kanter's representation.

    With U ~ Uniform(0, pi) and E ~ Exp(1),
    A = sin(alpha U) / sin(U)^(1/alpha) * (sin((1 - alpha) U) / E)^((1 - alpha)/alpha)
    has Laplace transform exp(-t^alpha).  Evaluated in log space.
    """
    _check_alpha(alpha)
    u = np.pi * _open_uniform(rng, size)
    e = rng.standard_exponential(size)
    e = np.where(e == 0.0, _TINY, e)
    log_a = (np.log(np.sin(alpha * u)) - np.log(np.sin(u)) / alpha
             + (1.0 - alpha) / alpha * (np.log(np.sin((1.0 - alpha) * u)) - np.log(e)))
    return _scalar(np.exp(log_a))


def log_ps_aux_c(lam, alpha):
    """log c(lambda) for the auxiliary-variable representation of PS(alpha).

    Endpoint limits: lambda -> 0 gives alpha^(1/(1-alpha)) (1-alpha)/alpha,
    lambda -> 1 gives +inf.  Values outside [0, 1] return nan.
    """
    lam = np.asarray(lam, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    lam, alpha = np.broadcast_arrays(lam, alpha)
    one_m = 1.0 - alpha
    interior = (lam > 0) & (lam < 1)
    x = np.where(interior, lam, 0.5)
    s_ax = np.sin(alpha * np.pi * x)
    # sin(pi x) == sin(pi (1 - x)); the latter is accurate near x = 1.
    s_x = np.sin(np.pi * np.minimum(x, 1.0 - x))
    s_1ax = np.sin(one_m * np.pi * x)
    val = (np.log(s_ax) - np.log(s_x)) / one_m + np.log(s_1ax) - np.log(s_ax)
    at0 = np.log(alpha) / one_m + np.log(one_m) - np.log(alpha)
    out = np.where(interior, val, np.nan)
    out = np.where(lam == 0, at0, out)
    return np.where(lam == 1, np.inf, out)


def ps_aux_c(lam, alpha):
    _check_alpha(alpha)
    lam_arr = np.asarray(lam, dtype=float)
    if not np.all((lam_arr >= 0) & (lam_arr <= 1)):
        raise DomainError("lambda must lie in [0, 1]")
    return _scalar(np.exp(log_ps_aux_c(lam_arr, alpha)))


def _ps_aux_logpdf(gamma, lam, alpha):
    """Unchecked joint log-density p(gamma, lambda | alpha) (hot path)."""
    gamma = np.asarray(gamma, dtype=float)
    lam = np.asarray(lam, dtype=float)
    one_m = 1.0 - alpha
    ok = (gamma > 0) & (lam >= 0) & (lam < 1)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        lg = np.log(np.where(ok, gamma, 1.0))
        lc = log_ps_aux_c(np.where(ok, lam, 0.5), alpha)
        out = (np.log(alpha) - np.log(one_m) - lg / one_m + lc
               - np.exp(lc - alpha / one_m * lg))
    return np.where(ok & np.isfinite(out), out, -np.inf)


def ps_aux_joint_logdensity(gamma, lam, alpha: float):
    """Joint log-density of a positive stable variate and its auxiliary variable.

    Integrating exp() of this over lam in (0, 1) recovers the PS(alpha)
    density of gamma; the lam-marginal is Uniform(0, 1).
    """
    _check_alpha(alpha)
    return _scalar(_ps_aux_logpdf(gamma, lam, alpha))


@dataclass(frozen=True)
class PsAuxPair:
    gamma: float
    lam: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise DomainError("gamma must be positive")
        if not 0 <= self.lam <= 1:
            raise DomainError("lambda must lie in [0, 1]")

    def logdensity(self, alpha: float) -> float:
        return ps_aux_joint_logdensity(self.gamma, self.lam, alpha)


# ---------------------------------------------------------------------------
# Truncated normal
# ---------------------------------------------------------------------------

def log_normal_mass(a, b):
    """log(Phi(b) - Phi(a)) for a < b, stable in both tails."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    out = np.empty(a.shape)
    left = b <= 0
    right = a >= 0
    mid = ~(left | right)
    with np.errstate(divide="ignore"):
        lb, la = special.log_ndtr(b[left]), special.log_ndtr(a[left])
        out[left] = lb + np.log1p(-np.exp(la - lb))
        la2, lb2 = special.log_ndtr(-a[right]), special.log_ndtr(-b[right])
        out[right] = la2 + np.log1p(-np.exp(lb2 - la2))
        out[mid] = np.log1p(-special.ndtr(a[mid]) - special.ndtr(-b[mid]))
    return out


def _check_tn(sd, lo, hi):
    if not np.all(np.asarray(sd) > 0):
        raise DomainError("truncated normal sd must be positive")
    if not np.all(np.asarray(lo) < np.asarray(hi)):
        raise DomainError("truncated normal needs lo < hi")


def _tn_sample(mean, sd, lo, hi, rng, size=None):
    mean, sd, lo, hi = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (mean, sd, lo, hi)))
    shape = mean.shape if size is None else size
    a = np.broadcast_to((lo - mean) / sd, shape)
    b = np.broadcast_to((hi - mean) / sd, shape)
    flip = a > 0
    a2 = np.where(flip, -b, a)
    b2 = np.where(flip, -a, b)
    u = _open_uniform(rng, shape)
    logp = np.logaddexp(special.log_ndtr(a2), np.log(u) + log_normal_mass(a2, b2))
    z = special.ndtri_exp(np.minimum(logp, 0.0))
    z = np.clip(z, a2, b2)
    z = np.where(flip, -z, z)
    return np.clip(mean + sd * z, lo, hi)


def truncated_normal_sample(mean, sd, lo, hi, rng: np.random.Generator, size=None):
    _check_tn(sd, lo, hi)
    return _scalar(_tn_sample(mean, sd, lo, hi, rng, size))


def truncated_normal_logpdf(x, mean, sd, lo, hi):
    _check_tn(sd, lo, hi)
    x, mean, sd, lo, hi = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, mean, sd, lo, hi)))
    z = (x - mean) / sd
    out = (-0.5 * z * z - 0.5 * np.log(2 * np.pi) - np.log(sd)
           - log_normal_mass((lo - mean) / sd, (hi - mean) / sd))
    return _scalar(np.where((x >= lo) & (x <= hi), out, -np.inf))


# ---------------------------------------------------------------------------
# Categorical
# ---------------------------------------------------------------------------

def categorical_sample(pi, rng: np.random.Generator, size=None):
    """Index j with probability pi_j (renormalized)."""
    p = np.asarray(pi, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise DomainError("pi must be a non-empty vector")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise DomainError("pi entries must be finite and non-negative")
    total = p.sum()
    if total <= 0:
        raise DomainError("pi must have positive mass")
    cum = np.cumsum(p)
    u = rng.random(size) * total
    idx = np.minimum(np.searchsorted(cum, u, side="right"), p.size - 1)
    return int(idx) if np.ndim(idx) == 0 else idx


def categorical_from_logits(logits, rng: np.random.Generator):
    """Draw one index per column of a (J, T) matrix of unnormalized log-probs."""
    logits = np.asarray(logits, dtype=float)
    m = np.max(logits, axis=0, keepdims=True)
    p = np.exp(logits - m)
    cum = np.cumsum(p, axis=0)
    u = rng.random(logits.shape[1]) * cum[-1]
    idx = np.sum(cum <= u[None, :], axis=0)
    # zero-probability rows are never chosen unless rounding pushes past the end
    return np.minimum(idx, logits.shape[0] - 1)


# ---------------------------------------------------------------------------
# Misc priors
# ---------------------------------------------------------------------------

def normal_logpdf(x, mean, sd):
    z = (np.asarray(x, dtype=float) - mean) / sd
    return -0.5 * z * z - np.log(sd) - 0.5 * np.log(2 * np.pi)


def invgamma_logpdf(x, shape, scale):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = shape * np.log(scale) - special.gammaln(shape) - (shape + 1) * np.log(x) - scale / x
    return np.where(x > 0, out, -np.inf)
