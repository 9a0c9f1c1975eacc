"""Compiled likelihood kernels for the sampler hot loop.

Model codes: 0 = HEVP, 1 = SB, 2 = MM.  Sums run in a fixed sequential
order, so results do not depend on scheduling.
"""

import math

import numpy as np
from numba import njit

XI_EPS = 1e-8
Q_EPS = 1e-12
NEG_INF = -np.inf
KIND_CODES = {"hevp": 0, "sb": 1, "mm": 2}


@njit(cache=True)
def _log_t(y, mu, sig, xi):
    if sig <= 0.0:
        # scale underflowed: a point mass at mu
        return -np.inf if y >= mu else np.inf
    z = (y - mu) / sig
    if abs(xi) < XI_EPS:
        return -z
    a = xi * z
    if a <= -1.0:
        return np.inf if xi > 0 else -np.inf
    return -math.log1p(a) / xi


@njit(cache=True)
def _component(mu, sig, xi, lt, alpha, power, log_power):
    lg = power * lt + log_power
    if abs(xi) < XI_EPS:
        em = lg
    else:
        em = math.expm1(xi * lg) / xi
    return mu + sig * em, alpha * power * sig * math.exp(xi * lg), alpha * power * xi


@njit(cache=True)
def _logpdf_logcdf(y, mu, sig, xi):
    lt = _log_t(y, mu, sig, xi)
    if lt == np.inf:
        return NEG_INF, NEG_INF
    if lt == -np.inf:
        return NEG_INF, 0.0
    if lt > 700.0:
        return NEG_INF, NEG_INF
    t = math.exp(lt)
    lp = -math.log(sig) + (1.0 + xi) * lt - t
    if not math.isfinite(lp):
        lp = NEG_INF
    return lp, -t


@njit(cache=True)
def _logaddexp(a, b):
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@njit(cache=True)
def point_loglik(y, lt_tilde, lt_hat, mu, sig, xi, alpha, q, kind):
    """Log-density of one observation given its latent log-thetas."""
    if kind == 0 or (kind == 2 and q >= 1.0 - Q_EPS):
        m, s, x = _component(mu, sig, xi, lt_tilde, alpha, 1.0, 0.0)
        return _logpdf_logcdf(y, m, s, x)[0]
    if kind == 1 or (kind == 2 and q <= Q_EPS):
        m, s, x = _component(mu, sig, xi, lt_hat, alpha, 1.0, 0.0)
        return _logpdf_logcdf(y, m, s, x)[0]
    m1, s1, x1 = _component(mu, sig, xi, lt_tilde, alpha, q, math.log(q))
    m2, s2, x2 = _component(mu, sig, xi, lt_hat, alpha, 1.0 - q, math.log1p(-q))
    lf1, lF1 = _logpdf_logcdf(y, m1, s1, x1)
    lf2, lF2 = _logpdf_logcdf(y, m2, s2, x2)
    # density of the max of two independent variables: F1 f2 + F2 f1
    return _logaddexp(lF1 + lf2, lF2 + lf1)


@njit(cache=True)
def loglik_matrix(y, lt_tilde, lt_hat, mu, sig, xi, alpha, q, kind):
    """(T, n) matrix of observation log-densities; mu/sig/xi are per site."""
    T, n = y.shape
    out = np.empty((T, n))
    for t in range(T):
        for i in range(n):
            out[t, i] = point_loglik(y[t, i], lt_tilde[t, i], lt_hat[t, i],
                                     mu[i], sig[i], xi[i], alpha, q, kind)
    return out


@njit(cache=True)
def label_loglik(y, lt_tilde, lt_atoms, mu, sig, xi, alpha, q, kind):
    """(J, T) log-likelihood of each replicate under each atom."""
    T, n = y.shape
    J = lt_atoms.shape[0]
    out = np.zeros((J, T))
    for j in range(J):
        for t in range(T):
            acc = 0.0
            for i in range(n):
                acc += point_loglik(y[t, i], lt_tilde[t, i], lt_atoms[j, i],
                                    mu[i], sig[i], xi[i], alpha, q, kind)
            out[j, t] = acc
    return out


@njit(cache=True)
def component_terms(y, lt, mu, sig, xi, alpha, power):
    """Conditional log-density and log-CDF of one component, each (T, n)."""
    T, n = y.shape
    lf = np.empty((T, n))
    lF = np.empty((T, n))
    log_power = math.log(power)
    for t in range(T):
        for i in range(n):
            m, s, x = _component(mu[i], sig[i], xi[i], lt[t, i], alpha, power, log_power)
            a, b = _logpdf_logcdf(y[t, i], m, s, x)
            lf[t, i] = a
            lF[t, i] = b
    return lf, lF


@njit(cache=True)
def combine_terms(lf_t, lF_t, lf_h, lF_h, mode):
    """Observation log-densities from component terms.

    mode 0 uses the HEVP component alone, 1 the SB component alone and 2
    the density of the maximum of both.
    """
    if mode == 0:
        return lf_t.copy()
    if mode == 1:
        return lf_h.copy()
    T, n = lf_t.shape
    out = np.empty((T, n))
    for t in range(T):
        for i in range(n):
            out[t, i] = _logaddexp(lF_t[t, i] + lf_h[t, i], lF_h[t, i] + lf_t[t, i])
    return out


@njit(cache=True)
def label_loglik_terms(y, lt_atoms, mu, sig, xi, alpha, power, lf_t, lF_t, mode):
    """(J, T) replicate log-likelihoods under each atom, reusing HEVP-side terms."""
    T, n = y.shape
    J = lt_atoms.shape[0]
    out = np.zeros((J, T))
    log_power = math.log(power)
    for j in range(J):
        for t in range(T):
            acc = 0.0
            for i in range(n):
                m, s, x = _component(mu[i], sig[i], xi[i], lt_atoms[j, i], alpha, power, log_power)
                lf, lF = _logpdf_logcdf(y[t, i], m, s, x)
                if mode == 1:
                    acc += lf
                else:
                    acc += _logaddexp(lF_t[t, i] + lf, lF + lf_t[t, i])
            out[j, t] = acc
    return out


@njit(cache=True)
def latent_sweep(G, lc, steps, z, logu, scaled, rlm, alpha, y, mu, sig, xi, power, lik_mode,
                 lf_self, lF_self, lf_other, lF_other, ll, lt_rows, order, offsets):
    """Scalar log-normal Metropolis updates of every entry of a latent matrix.

    ``G`` (R, L) holds positive stable latents; row r drives the
    observation rows ``order[offsets[r]:offsets[r + 1]]``.  ``lt_rows``
    caches log theta per latent row.  ``lik_mode`` is 0 when the
    likelihood does not depend on G, 1 when only this component enters and
    2 for the max of both components.  Arrays are updated in place; the
    return value flags accepted proposals.
    """
    R, L = G.shape
    n = scaled.shape[0]
    acc = np.zeros((R, L), dtype=np.bool_)
    ex = alpha / (1.0 - alpha)
    inv = 1.0 / (1.0 - alpha)
    log_power = math.log(power)
    new_lt = np.empty(n)
    lo = offsets
    width = 0
    for r in range(R):
        width = max(width, lo[r + 1] - lo[r])
    new_lf = np.empty((max(width, 1), n))
    new_lF = np.empty((max(width, 1), n))
    new_ll = np.empty((max(width, 1), n))
    for l in range(L):
        for r in range(R):
            cur = G[r, l]
            prop = cur * math.exp(steps[r, l] * z[r, l])
            lg_c = math.log(cur)
            lg_p = math.log(prop)
            c = lc[r, l]
            log_r = (-lg_p * inv - math.exp(c - ex * lg_p)) - (-lg_c * inv - math.exp(c - ex * lg_c))
            log_r += lg_p - lg_c
            for i in range(n):
                s = 0.0
                for k in range(L):
                    g = prop if k == l else G[r, k]
                    s += g * scaled[i, k]
                new_lt[i] = alpha * math.log(s) + rlm[i]
            if lik_mode != 0:
                diff = 0.0
                for m in range(lo[r], lo[r + 1]):
                    t = order[m]
                    mm = m - lo[r]
                    for i in range(n):
                        ms, ss, xs = _component(mu[i], sig[i], xi[i], new_lt[i], alpha, power, log_power)
                        a, b = _logpdf_logcdf(y[t, i], ms, ss, xs)
                        new_lf[mm, i] = a
                        new_lF[mm, i] = b
                        if lik_mode == 1:
                            v = a
                        else:
                            v = _logaddexp(lF_other[t, i] + a, b + lf_other[t, i])
                        new_ll[mm, i] = v
                        diff += v - ll[t, i]
                log_r += diff
            if not math.isnan(log_r) and logu[r, l] < log_r:
                acc[r, l] = True
                G[r, l] = prop
                for i in range(n):
                    lt_rows[r, i] = new_lt[i]
                if lik_mode != 0:
                    for m in range(lo[r], lo[r + 1]):
                        t = order[m]
                        mm = m - lo[r]
                        for i in range(n):
                            lf_self[t, i] = new_lf[mm, i]
                            lF_self[t, i] = new_lF[mm, i]
                            ll[t, i] = new_ll[mm, i]
    return acc
