"""HEVP, stick-breaking (SB) and max-mixture (MM) residual-process models.

Everything here works on the unit-Frechet residual scale X.  CDFs are
evaluated in log space and mixtures over atoms are combined with
log-sum-exp, so J = 50 atoms with extreme exponents stay finite.

Atom arrays are indexed ``gamma[j, l]`` (atom j, knot l) throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import distributions as dist
from .distributions import GevParams, expm1_over
from .errors import DomainError
from .geometry import WeightMatrix

Q_EPS = 1e-12
HEVP, SB, MM = "hevp", "sb", "mm"
MODEL_KINDS = (HEVP, SB, MM)


def _logsumexp(a, axis=None, b_log=None):
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m_safe), axis=axis, keepdims=True)) + m_safe
    return np.squeeze(out, axis=axis) if axis is not None else out.reshape(())


def _weights_array(weights) -> np.ndarray:
    return weights.w if isinstance(weights, WeightMatrix) else np.asarray(weights, dtype=float)


def _check_alpha(alpha, allow_one=True):
    ok = 0 < alpha <= 1 if allow_one else 0 < alpha < 1
    if not ok:
        raise DomainError(f"alpha must lie in (0, 1{']' if allow_one else ')'}, got {alpha}")


def _check_c(c):
    c = np.asarray(c, dtype=float)
    if not np.all(c > 0):
        raise DomainError("CDF arguments must be strictly positive")
    return c


# ---------------------------------------------------------------------------
# Spatial random effect theta
# ---------------------------------------------------------------------------

class ScaledKernelPowers(NamedTuple):
    """omega^(1/alpha) stored as ``scaled * exp(row_log_max / alpha)``.

    Scaling each row by its largest weight keeps the dominant term at 1, so
    small alpha cannot underflow theta.
    """

    scaled: np.ndarray       # (n, L), entries in [0, 1]
    row_log_max: np.ndarray  # (n,), log max_l omega_l(s)


def kernel_powers(w: np.ndarray, alpha: float) -> ScaledKernelPowers:
    w = np.asarray(w, dtype=float)
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    row_max = np.max(logw, axis=1)
    scaled = np.exp((logw - row_max[:, None]) / alpha)
    return ScaledKernelPowers(scaled, row_max)


def log_theta(a: np.ndarray, powers: ScaledKernelPowers, alpha: float) -> np.ndarray:
    """log theta for random effects ``a`` of shape (..., L); returns (..., n)."""
    s = np.asarray(a, dtype=float) @ powers.scaled.T
    with np.errstate(divide="ignore"):
        return alpha * np.log(s) + powers.row_log_max


def theta_field(a, weights, alpha: float) -> np.ndarray:
    """theta(s_i) = (sum_l a_l omega_l(s_i)^(1/alpha))^alpha per site."""
    _check_alpha(alpha)
    a = np.asarray(a, dtype=float)
    if not np.all(a > 0):
        raise DomainError("random effects must be strictly positive")
    return np.exp(log_theta(a, kernel_powers(_weights_array(weights), alpha), alpha))


def conditional_gev_arrays(mu, sigma, xi, log_th, alpha, power=1.0):
    """Conditional GEV parameters of one max-mixture component.

    The component is ``power * (U theta)^power`` pushed through the marginal
    GEV transform with U ~ GEV(1, alpha, alpha).  ``power = 1`` gives the
    plain HEVP conditional law.
    """
    lg = power * log_th + np.log(power)
    with np.errstate(over="ignore"):
        scale_fac = np.exp(xi * lg)
    mu_s = mu + sigma * expm1_over(xi, lg)
    sigma_s = alpha * power * sigma * scale_fac
    xi_s = alpha * power * xi
    return mu_s, sigma_s, xi_s


def hevp_conditional_gev(theta: float, gev: GevParams, alpha: float) -> GevParams:
    """(mu*, sigma*, xi*) of Y given the spatial random effect theta."""
    _check_alpha(alpha)
    if not np.all(np.asarray(theta) > 0):
        raise DomainError("theta must be positive")
    m, s, x = conditional_gev_arrays(gev.mu, gev.sigma, gev.xi, np.log(theta), alpha)
    return GevParams(m, s, x)


# ---------------------------------------------------------------------------
# Model containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HevpSpec:
    alpha: float
    weights: WeightMatrix
    gev: object = None  # GevSurface or GevParams; only needed on the data scale

    def __post_init__(self):
        _check_alpha(self.alpha)


@dataclass(frozen=True)
class SbAtoms:
    gamma: np.ndarray  # (J, L)
    pi: np.ndarray     # (J,)

    def __post_init__(self):
        g = np.atleast_2d(np.asarray(self.gamma, dtype=float))
        p = np.asarray(self.pi, dtype=float)
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "pi", p)
        if g.shape[0] < 1 or not np.all(g > 0):
            raise DomainError("atoms must be a non-empty matrix of positive values")
        if p.shape != (g.shape[0],) or np.any(p < 0) or abs(p.sum() - 1) > 1e-9:
            raise DomainError("pi must be a probability vector with one entry per atom")

    @property
    def J(self) -> int:
        return self.gamma.shape[0]


@dataclass(frozen=True)
class MmSpec:
    q: float
    hevp: HevpSpec
    sb: SbAtoms

    def __post_init__(self):
        if not 0 <= self.q <= 1:
            raise DomainError(f"q must lie in [0, 1], got {self.q}")

    @property
    def alpha(self):
        return self.hevp.alpha

    @property
    def weights(self):
        return self.hevp.weights


# ---------------------------------------------------------------------------
# Log-CDFs on the residual scale
# ---------------------------------------------------------------------------

def _knot_mass(logc, w, alpha):
    """sum_i (omega_l(s_i)/c_i)^(1/alpha) for each knot l, in log space.

    ``logc`` has shape (..., n); returns (..., L).
    """
    with np.errstate(divide="ignore"):
        logw = np.log(w)  # (n, L)
    terms = (logw - np.asarray(logc, dtype=float)[..., :, None]) / alpha
    return _logsumexp(terms, axis=-2)


def log_f_hevp_joint(logc, w, alpha):
    """log F_HEVP at log-thresholds ``logc`` (..., n)."""
    km = _knot_mass(logc, w, alpha)
    return -np.sum(np.exp(alpha * km), axis=-1)


def log_f_sb_joint(logc, w, alpha, gamma, pi):
    km = np.exp(_knot_mass(logc, w, alpha))         # (..., L)
    expo = km @ np.asarray(gamma).T                  # (..., J)
    with np.errstate(divide="ignore"):
        logpi = np.log(pi)
    return _logsumexp(logpi - expo, axis=-1)


def _mm_args(logc, q):
    lq, l1q = np.log(q), np.log1p(-q)
    return (logc - lq) / q, (logc - l1q) / (1.0 - q)


def log_f_mm_joint(logc, w, alpha, gamma, pi, q):
    if q >= 1 - Q_EPS:
        return log_f_hevp_joint(logc, w, alpha)
    if q <= Q_EPS:
        return log_f_sb_joint(logc, w, alpha, gamma, pi)
    a, b = _mm_args(np.asarray(logc, dtype=float), q)
    return log_f_hevp_joint(a, w, alpha) + log_f_sb_joint(b, w, alpha, gamma, pi)


def sb_site_loadings(w, alpha, gamma):
    """b_j(s_i) = sum_l omega_l(s_i)^(1/alpha) gamma_jl, shape (n, J)."""
    p = kernel_powers(w, alpha)
    return (p.scaled @ np.asarray(gamma).T), p.row_log_max


def log_f_hevp_marginal(logc):
    return -np.exp(-np.asarray(logc, dtype=float))


def log_f_sb_marginal_from_loadings(logc, loadings, row_log_max, alpha, pi):
    """Marginal SB log-CDF; ``loadings`` (n, J) from :func:`sb_site_loadings`.

    ``logc`` broadcasts against shape (n,) (append axes for multiple levels).
    """
    logc = np.asarray(logc, dtype=float)
    extra = logc.ndim - 1
    shape_pad = (slice(None),) + (None,) * extra
    rlm = row_log_max[shape_pad]
    with np.errstate(divide="ignore"):
        logpi = np.log(pi)
    # exponent_j = b_j * c^(-1/alpha), with the row scaling restored
    log_scale = (rlm - logc) / alpha
    lb = np.log(loadings)[(slice(None),) + (None,) * extra + (slice(None),)]
    expo = np.exp(lb + log_scale[..., None])
    return _logsumexp(logpi - expo, axis=-1)


def log_f_mm_marginal_from_loadings(logc, loadings, row_log_max, alpha, pi, q):
    if q >= 1 - Q_EPS:
        return log_f_hevp_marginal(logc)
    if q <= Q_EPS:
        return log_f_sb_marginal_from_loadings(logc, loadings, row_log_max, alpha, pi)
    a, b = _mm_args(np.asarray(logc, dtype=float), q)
    return log_f_hevp_marginal(a) + log_f_sb_marginal_from_loadings(b, loadings, row_log_max, alpha, pi)


# ---------------------------------------------------------------------------
# Public CDF operations
# ---------------------------------------------------------------------------

def f_hevp_joint(c, weights, alpha: float) -> float:
    _check_alpha(alpha)
    c = _check_c(c)
    return float(np.exp(log_f_hevp_joint(np.log(c), _weights_array(weights), alpha)))


def f_sb_marginal(c: float, site: int, atoms: SbAtoms, weights, alpha: float) -> float:
    _check_alpha(alpha)
    c = float(_check_c(c))
    w = _weights_array(weights)[site:site + 1]
    return float(np.exp(log_f_sb_joint(np.log([c]), w, alpha, atoms.gamma, atoms.pi)))


def f_sb_joint(c, atoms: SbAtoms, weights, alpha: float) -> float:
    _check_alpha(alpha)
    c = _check_c(c)
    return float(np.exp(log_f_sb_joint(np.log(c), _weights_array(weights), alpha, atoms.gamma, atoms.pi)))


def f_mm_joint(c, mm: MmSpec) -> float:
    c = _check_c(c)
    w = _weights_array(mm.weights)
    return float(np.exp(log_f_mm_joint(np.log(c), w, mm.alpha, mm.sb.gamma, mm.sb.pi, mm.q)))


def f_mm_marginal(c: float, site: int, mm: MmSpec) -> float:
    c = float(_check_c(c))
    w = _weights_array(mm.weights)[site:site + 1]
    return float(np.exp(log_f_mm_joint(np.log([c]), w, mm.alpha, mm.sb.gamma, mm.sb.pi, mm.q)))


# ---------------------------------------------------------------------------
# Tail summaries
# ---------------------------------------------------------------------------

class TailIndex(NamedTuple):
    value: float
    at_boundary: bool = False


def dependence_boundary(alpha: float) -> float:
    return alpha / (1.0 + alpha)


def tail_index(kind: str, alpha: float, q: float | None = None) -> TailIndex:
    if kind == HEVP:
        return TailIndex(1.0)
    _check_alpha(alpha, allow_one=False)
    if kind == SB:
        return TailIndex(1.0 / alpha)
    if kind != MM:
        raise DomainError(f"unknown model kind {kind!r}")
    if q is None or not 0 < q < 1:
        raise DomainError("MM tail index needs q in (0, 1)")
    b = dependence_boundary(alpha)
    if q > b:
        return TailIndex(1.0 / q)
    # both branches agree at q == b; flag it
    return TailIndex(1.0 / (alpha * (1.0 - q)), at_boundary=(q == b))


def chi_hevp(i: int, j: int, weights, alpha: float) -> float:
    """2 - sum_l (omega_l(s_i)^(1/alpha) + omega_l(s_j)^(1/alpha))^alpha."""
    _check_alpha(alpha)
    w = _weights_array(weights)
    with np.errstate(divide="ignore"):
        lw = np.log(w[[i, j]]) / alpha
    return float(2.0 - np.sum(np.exp(alpha * np.logaddexp(lw[0], lw[1]))))


def delta_indicator(q: float, alpha: float) -> int:
    return int(q >= dependence_boundary(alpha))


class ChiInterval(NamedTuple):
    """Tail dependence, or bounds on it where only bounds are known."""

    lower: float
    upper: float

    @property
    def is_point(self) -> bool:
        return self.lower == self.upper


def chi_mm(i: int, j: int, mm: MmSpec, boundary_tol: float = 1e-5) -> ChiInterval:
    b = dependence_boundary(mm.alpha)
    dep = chi_hevp(i, j, mm.weights, mm.alpha)
    if abs(mm.q - b) <= boundary_tol:
        return ChiInterval(dep, 1.0)
    if mm.q < b:
        return ChiInterval(0.0, 0.0)
    return ChiInterval(dep, dep)


# ---------------------------------------------------------------------------
# Quantile inversion and finite-level tail dependence
# ---------------------------------------------------------------------------

def invert_log_cdf(log_cdf, log_u, lo=-5.0, hi=5.0, rtol=1e-10, max_iter=400):
    """Solve log_cdf(x) = log_u for increasing ``log_cdf`` by bracketed bisection.

    ``x`` is the log-threshold; works elementwise on arrays of targets.
    """
    log_u = np.asarray(log_u, dtype=float)
    lo = np.full(log_u.shape, float(lo))
    hi = np.full(log_u.shape, float(hi))
    for _ in range(200):
        bad = log_cdf(lo) > log_u
        if not bad.any():
            break
        lo = np.where(bad, lo - 2.0 * (1.0 + np.abs(lo)), lo)
    for _ in range(200):
        bad = log_cdf(hi) < log_u
        if not bad.any():
            break
        hi = np.where(bad, hi + 2.0 * (1.0 + np.abs(hi)), hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        below = log_cdf(mid) < log_u
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= rtol * np.maximum(1.0, np.abs(mid))):
            break
    return 0.5 * (lo + hi)


def residual_log_quantile(kind, levels, w, alpha=None, gamma=None, pi=None, q=None):
    """log F^{-1}(level) of the residual process at every site.

    Returns an (n, K) array for K levels.
    """
    levels = np.atleast_1d(np.asarray(levels, dtype=float))
    n = w.shape[0]
    if kind == HEVP or (kind == MM and q >= 1 - Q_EPS):
        return np.broadcast_to(-np.log(-np.log(levels)), (n, levels.size)).copy()
    loadings, rlm = sb_site_loadings(w, alpha, gamma)
    if kind == SB or (kind == MM and q <= Q_EPS):
        f = lambda x: log_f_sb_marginal_from_loadings(x, loadings, rlm, alpha, pi)
    elif kind == MM:
        f = lambda x: log_f_mm_marginal_from_loadings(x, loadings, rlm, alpha, pi, q)
    else:
        raise DomainError(f"unknown model kind {kind!r}")
    target = np.broadcast_to(np.log(levels), (n, levels.size))
    return invert_log_cdf(f, target)


def chi_u_from_log_joint(log_joint, u):
    """[1 - 2u + F(x_u, x_u)] / (1 - u) written to avoid cancellation."""
    return 2.0 - (-np.expm1(log_joint)) / (1.0 - u)


def model_chi_u(kind, pairs, u, w, alpha, gamma=None, pi=None, q=None):
    """Finite-level tail dependence for each site pair under one parameter draw."""
    pairs = np.atleast_2d(np.asarray(pairs, dtype=int))
    logx = residual_log_quantile(kind, [u], w, alpha, gamma, pi, q)[:, 0]
    out = np.empty(len(pairs))
    for k, (i, j) in enumerate(pairs):
        lc = logx[[i, j]]
        ww = w[[i, j]]
        if kind == HEVP:
            lj = log_f_hevp_joint(lc, ww, alpha)
        elif kind == SB:
            lj = log_f_sb_joint(lc, ww, alpha, gamma, pi)
        else:
            lj = log_f_mm_joint(lc, ww, alpha, gamma, pi, q)
        out[k] = chi_u_from_log_joint(lj, u)
    return np.clip(out, 0.0, 1.0)


def y_from_residual_log(logx, mu, sigma, xi):
    """Apply the marginal GEV transform to log residual values."""
    return mu + sigma * expm1_over(xi, logx)
