"""Metropolis-within-Gibbs sampler for the HEVP, SB and MM models.

One sweep updates, in order: GEV surfaces, kernel bandwidth tau, alpha,
the HEVP random effects A with auxiliaries B, the SB atoms gamma with
auxiliaries lambda, the cluster labels, the stick-breaking weights and q.

Latent entries are updated by scalar Metropolis steps.  Entries that are
conditionally independent given everything else (A[:, l] across
replicates, gamma[:, l] across atoms, all auxiliaries) are proposed and
accepted in one vectorized pass; each accept/reject decision only involves
its own likelihood terms, so this is the same kernel as a loop.

Step sizes adapt (batched Robbins-Monro toward a target acceptance rate)
during burn-in only and are frozen afterwards.
"""

from __future__ import annotations

import copy
import logging
import pickle
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, NamedTuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import linalg, special

from . import distributions as dist
from . import models
from ._kernels import combine_terms, component_terms, label_loglik_terms, latent_sweep
from .errors import DomainError, InitializationError
from .geometry import as_coords, kernel_weight_array, median_knot_spacing, pairwise_distances
from .gp import ConstantPriors, GpHyper, GpHyperPriors, design_matrix, matern_correlation

logger = logging.getLogger(__name__)

GEV_FIELDS = ("mu", "log_sigma", "xi")
EULER_GAMMA = 0.5772156649015329

# stream ids used inside a chain
_STREAM_CHAIN = 11


class _Terms(NamedTuple):
    """Cached (T, n) observation log-densities and per-component terms."""

    ll: np.ndarray
    t: tuple | None  # (log f, log F) of the HEVP component
    h: tuple | None  # (log f, log F) of the SB component


class ChainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    model: Literal["hevp", "sb", "mm"] = "mm"
    iterations: int = Field(10000, ge=1)
    burnin: int = Field(2500, ge=0)
    thin: int = Field(5, ge=1)
    seed: int = Field(0, ge=0)
    adapt_window: int = Field(50, ge=1)
    target_accept: float = Field(0.4, gt=0, lt=1)
    J: int | None = Field(None, ge=1)
    stick_concentration: float = Field(1.0, gt=0)
    gev_mode: Literal["constant", "gp"] = "constant"
    smoothness: float = Field(0.5, gt=0)
    fixed: list[str] = Field(default_factory=list)
    initial: dict[str, float] = Field(default_factory=dict)
    use_likelihood: bool = True
    adapt: bool = True
    debug: bool = False

    @model_validator(mode="after")
    def _check(self):
        if self.burnin >= self.iterations:
            raise ValueError("burnin must be smaller than iterations")
        allowed = {"mu", "log_sigma", "xi", "gev", "tau", "alpha", "A", "B", "gamma", "lam",
                   "labels", "sticks", "q", "gp_hyper"}
        unknown = set(self.fixed) - allowed
        if unknown:
            raise ValueError(f"unknown fixed blocks {sorted(unknown)}")
        return self

    @property
    def n_stored(self) -> int:
        return (self.iterations - self.burnin) // self.thin


@dataclass
class ModelState:
    """Complete latent state for one iteration."""

    mu: np.ndarray
    log_sigma: np.ndarray
    xi: np.ndarray
    alpha: float
    tau: float
    q: float = 1.0
    A: np.ndarray | None = None
    B: np.ndarray | None = None
    gamma: np.ndarray | None = None
    lam: np.ndarray | None = None
    labels: np.ndarray | None = None
    v: np.ndarray | None = None
    gp: dict | None = None

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma)

    @property
    def pi(self) -> np.ndarray | None:
        return None if self.v is None else stick_weights(self.v)

    def copy(self) -> "ModelState":
        return copy.deepcopy(self)


def stick_weights(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    rest = np.concatenate([[1.0], np.cumprod(1.0 - v[:-1])])
    return v * rest


def validate_state(state: ModelState, kind: str) -> None:
    """Raise AssertionError if any ModelState invariant is violated."""
    assert 0 < state.alpha < 1, "alpha out of range"
    assert state.tau > 0, "tau must be positive"
    assert np.all(np.isfinite(state.mu)) and np.all(np.isfinite(state.log_sigma)) and np.all(np.isfinite(state.xi))
    if kind in ("hevp", "mm"):
        assert np.all(state.A > 0), "A must be positive"
        assert np.all((state.B >= 0) & (state.B <= 1)), "B must lie in [0, 1]"
    if kind in ("sb", "mm"):
        assert np.all(state.gamma > 0), "gamma must be positive"
        assert np.all((state.lam >= 0) & (state.lam <= 1)), "lambda must lie in [0, 1]"
        assert state.v[-1] == 1.0, "last stick must be pinned to 1"
        assert abs(state.pi.sum() - 1) < 1e-9, "pi must sum to 1"
        assert state.labels.min() >= 0 and state.labels.max() < len(state.v)
    if kind == "mm":
        assert 0 <= state.q <= 1, "q out of range"


@dataclass
class PosteriorSamples:
    """Thinned post-burn-in draws plus acceptance bookkeeping."""

    kind: str
    sites: np.ndarray
    knots: np.ndarray
    alpha: np.ndarray
    tau: np.ndarray
    q: np.ndarray
    mu: np.ndarray
    log_sigma: np.ndarray
    xi: np.ndarray
    gamma: np.ndarray | None = None
    pi: np.ndarray | None = None
    gp: dict | None = None
    acceptance: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.alpha)

    @property
    def delta(self) -> np.ndarray:
        return (self.q >= self.alpha / (1.0 + self.alpha)).astype(int)

    def thinned(self, step: int) -> "PosteriorSamples":
        sl = slice(None, None, step)
        out = copy.copy(self)
        for name in ("alpha", "tau", "q", "mu", "log_sigma", "xi", "gamma", "pi"):
            val = getattr(self, name)
            if val is not None:
                setattr(out, name, val[sl])
        if self.gp is not None:
            out.gp = {k: {kk: vv[sl] for kk, vv in v.items()} for k, v in self.gp.items()}
        return out


def posterior_prob_delta(samples: PosteriorSamples) -> float:
    """Posterior probability of asymptotic dependence, P(q >= alpha/(1+alpha))."""
    if samples.kind != "mm":
        raise DomainError("P(delta = 1) is only defined for max-mixture fits")
    return float(np.mean(samples.delta))


# ---------------------------------------------------------------------------
# Sampler
# ---------------------------------------------------------------------------

class _Adapter:
    """Batched Robbins-Monro adaptation of log step sizes."""

    def __init__(self, init: float, shape=(), target: float = 0.4):
        self.log_step = np.full(shape, np.log(init), dtype=float)
        self.acc = np.zeros(shape)
        self.tries = np.zeros(shape)
        self.total_acc = np.zeros(shape)
        self.total_tries = np.zeros(shape)
        self.batches = 0
        self.target = target

    @property
    def step(self):
        return np.exp(self.log_step)

    def record(self, accepted, mask=None):
        accepted = np.asarray(accepted, dtype=float)
        tried = np.ones_like(accepted) if mask is None else np.asarray(mask, dtype=float)
        self.acc += accepted * tried
        self.tries += tried
        self.total_acc += accepted * tried
        self.total_tries += tried

    def adapt(self):
        self.batches += 1
        gain = self.batches ** -0.6
        with np.errstate(invalid="ignore"):
            rate = np.where(self.tries > 0, self.acc / np.maximum(self.tries, 1), self.target)
        self.log_step = np.clip(self.log_step + gain * (rate - self.target), -12.0, 5.0)
        self.acc[...] = 0
        self.tries[...] = 0

    def rate(self) -> float:
        t = float(np.sum(self.total_tries))
        return float(np.sum(self.total_acc)) / t if t else float("nan")


class Sampler:
    """Stateful Metropolis-within-Gibbs chain for one model and dataset.

    ``y`` may be None for prior-only runs (no likelihood term).
    """

    def __init__(self, cfg: ChainConfig, y: np.ndarray | None, sites, knots=None,
                 T: int | None = None, priors: ConstantPriors | None = None,
                 gp_priors: GpHyperPriors | None = None):
        self.cfg = cfg
        self.kind = cfg.model
        self.has_tilde = self.kind in ("hevp", "mm")
        self.has_hat = self.kind in ("sb", "mm")
        self.sites = as_coords(sites)
        self.knots = self.sites.copy() if knots is None else as_coords(knots)
        self.n = self.sites.shape[0]
        self.L = self.knots.shape[0]
        if y is None:
            if T is None:
                raise DomainError("prior-only chains need T")
            self.y = np.zeros((T, self.n))
            self.use_lik = False
        else:
            self.y = np.ascontiguousarray(np.asarray(y, dtype=float))
            if self.y.shape[1] != self.n:
                raise DomainError("data columns must match the number of sites")
            self.use_lik = cfg.use_likelihood
        self.T = self.y.shape[0]
        self.J = cfg.J or self.T
        self.priors = priors or ConstantPriors()
        self.gp_priors = gp_priors or GpHyperPriors(smoothness=cfg.smoothness)
        self.rng = dist.rng_stream(cfg.seed, _STREAM_CHAIN)
        self.iteration = 0
        self.fixed = set(cfg.fixed)
        if "gev" in self.fixed:
            self.fixed.update(GEV_FIELDS)
        self._dist = pairwise_distances(self.sites)
        self._diameter = float(self._dist.max()) if self.n > 1 else 1.0
        self._design = design_matrix(self.sites)
        self.state = self._initial_state()
        self._init_adapters()
        self.refresh()
        if not np.isfinite(self.total_loglik()):
            bad = np.argwhere(~np.isfinite(self.ll))
            raise InitializationError(
                f"non-finite log-likelihood at the initial state for {len(bad)} observations, "
                f"first (t, site) = {tuple(bad[0])}")
        self._store: list[dict] = []

    # -- initialization ---------------------------------------------------

    def _initial_state(self) -> ModelState:
        cfg, rng = self.cfg, self.rng
        if self.use_lik:
            # site-wise method of moments under the Gumbel (xi = 0) member
            with np.errstate(invalid="ignore"):
                sd = np.std(self.y, axis=0, ddof=1) if self.T > 1 else np.ones(self.n)
            sd = np.where(sd > 0, sd, 1.0)
            sigma = np.sqrt(6.0) * sd / np.pi
            mu = np.mean(self.y, axis=0) - EULER_GAMMA * sigma
            log_sigma = np.log(sigma)
            if cfg.gev_mode == "constant":
                mu = np.full(self.n, mu.mean())
                log_sigma = np.full(self.n, log_sigma.mean())
        else:
            mu = np.zeros(self.n)
            log_sigma = np.zeros(self.n)
        init = cfg.initial
        st = ModelState(
            mu=np.full(self.n, init["mu"]) if "mu" in init else mu,
            log_sigma=np.full(self.n, init["log_sigma"]) if "log_sigma" in init else log_sigma,
            xi=np.full(self.n, init.get("xi", 0.0)),
            alpha=float(init.get("alpha", 0.5)),
            tau=float(init.get("tau", 0.5 * median_knot_spacing(self.knots))),
            q=float(init.get("q", 0.5 if self.kind == "mm" else (1.0 if self.kind == "hevp" else 0.0))),
        )
        if self.has_tilde:
            st.A = np.full((self.T, self.L), float(init.get("A", 1.0)))
            st.B = np.full((self.T, self.L), 0.5)
        if self.has_hat:
            st.gamma = np.full((self.J, self.L), float(init.get("gamma", 1.0)))
            st.lam = np.full((self.J, self.L), 0.5)
            st.labels = rng.integers(0, self.J, self.T)
            v = rng.beta(1.0, cfg.stick_concentration, self.J)
            v[-1] = 1.0
            st.v = v
        if cfg.gev_mode == "gp":
            st.gp = {}
            for name in GEV_FIELDS:
                f = getattr(st, name)
                beta, *_ = np.linalg.lstsq(self._design, f, rcond=None)
                resid_var = float(np.var(f - self._design @ beta))
                st.gp[name] = GpHyper(beta, max(resid_var, 0.1), 0.5 * self._diameter or 1.0, cfg.smoothness)
        return st

    def _init_adapters(self):
        t = self.cfg.target_accept
        sd_mu = float(np.exp(np.mean(self.state.log_sigma)))
        shape_f = (self.n,) if self.cfg.gev_mode == "gp" else ()
        self.adapters = {
            "mu": _Adapter(0.1 * sd_mu, shape_f, t),
            "log_sigma": _Adapter(0.05, shape_f, t),
            "xi": _Adapter(0.02, shape_f, t),
            "tau": _Adapter(0.1, (), t),
            "alpha": _Adapter(0.2, (), t),
            "alpha_joint": _Adapter(0.2, (), t),
            "q": _Adapter(0.1, (), t),
            "gp_range": _Adapter(0.2, (len(GEV_FIELDS),), t),
        }
        if self.has_tilde:
            self.adapters["A"] = _Adapter(0.5, (self.T, self.L), t)
            self.adapters["B"] = _Adapter(0.2, (self.T, self.L), t)
        if self.has_hat:
            self.adapters["gamma"] = _Adapter(0.5, (self.J, self.L), t)
            self.adapters["lam"] = _Adapter(0.2, (self.J, self.L), t)

    # -- caches -----------------------------------------------------------

    def _powers(self, tau, alpha):
        w = kernel_weight_array(self.sites, self.knots, tau)
        return w, models.kernel_powers(w, alpha)

    def refresh(self):
        """Recompute every cached quantity from the state."""
        st = self.state
        self.w, self.powers = self._powers(st.tau, st.alpha)
        self.lt_tilde = (models.log_theta(st.A, self.powers, st.alpha) if self.has_tilde
                         else np.zeros((self.T, self.n)))
        self.lt_atoms = (models.log_theta(st.gamma, self.powers, st.alpha) if self.has_hat
                         else np.zeros((1, self.n)))
        self.terms = self._loglik(st, self.lt_tilde, self._lt_hat(self.lt_atoms, st))
        self._gp_cache = {}

    @property
    def ll(self) -> np.ndarray:
        return self.terms.ll

    def _lt_hat(self, lt_atoms, st):
        if not self.has_hat:
            return np.zeros((self.T, self.n))
        return lt_atoms[st.labels]

    def _mode(self, q) -> int:
        """0: HEVP component only, 1: SB component only, 2: both."""
        if self.kind == "hevp" or (self.kind == "mm" and q >= 1.0 - models.Q_EPS):
            return 0
        if self.kind == "sb" or (self.kind == "mm" and q <= models.Q_EPS):
            return 1
        return 2

    def _fields(self, st, cols, fields):
        out = []
        for name in GEV_FIELDS:
            v = fields.get(name)
            v = getattr(st, name) if v is None else v
            v = np.asarray(v if cols is None else v[cols], dtype=float)
            out.append(np.exp(v) if name == "log_sigma" else np.ascontiguousarray(v))
        return out

    def _side(self, st, lt, side, cols=None, **fields):
        """(log f, log F) of one component under state ``st``."""
        mode = self._mode(st.q)
        y = self.y if cols is None else self.y[:, cols]
        lt = lt if cols is None else lt[:, cols]
        mu, sig, xi = self._fields(st, cols, fields)
        if side == "tilde":
            power = 1.0 if mode == 0 else st.q
        else:
            power = 1.0 if mode == 1 else 1.0 - st.q
        return component_terms(np.ascontiguousarray(y), np.ascontiguousarray(lt), mu, sig, xi,
                               st.alpha, power)

    def _combine(self, mode, t, h) -> np.ndarray:
        t = h if t is None else t
        h = t if h is None else h
        return combine_terms(t[0], t[1], h[0], h[1], mode)

    def _loglik(self, st, lt_tilde, lt_hat, cols=None, **fields) -> _Terms:
        shape = (self.T, self.n) if cols is None else (self.T, len(np.atleast_1d(cols)))
        if not self.use_lik:
            return _Terms(np.zeros(shape), None, None)
        mode = self._mode(st.q)
        t = self._side(st, lt_tilde, "tilde", cols, **fields) if mode != 1 else None
        h = self._side(st, lt_hat, "hat", cols, **fields) if mode != 0 else None
        return _Terms(self._combine(mode, t, h), t, h)

    def _keep_rows(self, new: _Terms, rows):
        """Copy accepted rows of ``new`` into the cached terms."""
        self.terms.ll[rows] = new.ll[rows]
        for old_side, new_side in ((self.terms.t, new.t), (self.terms.h, new.h)):
            if old_side is not None and new_side is not None:
                old_side[0][rows] = new_side[0][rows]
                old_side[1][rows] = new_side[1][rows]

    def _keep_col(self, new: _Terms, i):
        self.terms.ll[:, i] = new.ll[:, 0]
        for old_side, new_side in ((self.terms.t, new.t), (self.terms.h, new.h)):
            if old_side is not None and new_side is not None:
                old_side[0][:, i] = new_side[0][:, 0]
                old_side[1][:, i] = new_side[1][:, 0]

    def _with_side(self, st, lt, side) -> _Terms:
        """Terms after recomputing one component; the other comes from the cache.

        Only the recomputed side is returned, so ``_keep_rows`` copies just it.
        """
        if not self.use_lik:
            return self.terms
        mode = self._mode(st.q)
        if (side == "tilde" and mode == 1) or (side == "hat" and mode == 0):
            return self.terms
        new = self._side(st, lt, side)
        if side == "tilde":
            return _Terms(self._combine(mode, new, self.terms.h), new, None)
        return _Terms(self._combine(mode, self.terms.t, new), None, new)

    def total_loglik(self) -> float:
        return float(np.sum(self.ll))

    def full_loglik(self) -> float:
        """Log-likelihood recomputed from scratch (for cache checks)."""
        st = self.state
        w, p = self._powers(st.tau, st.alpha)
        lt_t = models.log_theta(st.A, p, st.alpha) if self.has_tilde else np.zeros((self.T, self.n))
        lt_a = models.log_theta(st.gamma, p, st.alpha) if self.has_hat else None
        return float(np.sum(self._loglik(st, lt_t, self._lt_hat(lt_a, st)).ll))

    def _latent_logprior(self, alpha):
        st = self.state
        out = 0.0
        if self.has_tilde:
            out += float(np.sum(dist._ps_aux_logpdf(st.A, st.B, alpha)))
        if self.has_hat:
            out += float(np.sum(dist._ps_aux_logpdf(st.gamma, st.lam, alpha)))
        return out

    def _mh(self, log_ratio):
        log_ratio = np.asarray(log_ratio, dtype=float)
        u = self.rng.random(log_ratio.shape)
        return np.log(u) < np.where(np.isnan(log_ratio), -np.inf, log_ratio)

    # -- GEV surfaces -----------------------------------------------------

    def update_gev(self):
        if self.cfg.gev_mode == "gp":
            self._update_gev_gp()
            return
        st = self.state
        lt_hat = self._lt_hat(self.lt_atoms, st)
        for name in GEV_FIELDS:
            if name in self.fixed:
                continue
            ad = self.adapters[name]
            cur = getattr(st, name)[0]
            prop = cur + ad.step * self.rng.standard_normal()
            vals = np.full(self.n, prop)
            new = self._loglik(st, self.lt_tilde, lt_hat, **{name: vals})
            prior = self.priors.field(name)
            log_r = np.sum(new.ll) - np.sum(self.ll) + prior(prop) - prior(cur)
            acc = bool(self._mh(log_r))
            ad.record(acc)
            if acc:
                setattr(st, name, vals)
                self.terms = new

    def _gp_precision(self, name):
        if name not in self._gp_cache:
            h = self.state.gp[name]
            corr = matern_correlation(self._dist / h.range, h.smoothness)
            cov = h.variance * corr + 1e-10 * h.variance * np.eye(self.n)
            self._gp_cache[name] = np.linalg.inv(cov)
        return self._gp_cache[name]

    def _update_gev_gp(self):
        st = self.state
        lt_hat = self._lt_hat(self.lt_atoms, st)
        for name in GEV_FIELDS:
            if name in self.fixed:
                continue
            h = st.gp[name]
            prec = self._gp_precision(name)
            mean = self._design @ h.beta
            ad = self.adapters[name]
            steps = ad.step
            accepted = np.zeros(self.n, dtype=bool)
            for i in range(self.n):
                f = getattr(st, name)
                resid = f - mean
                cond_var = 1.0 / prec[i, i]
                cond_mean = mean[i] - cond_var * (prec[i] @ resid - prec[i, i] * resid[i])
                cur = f[i]
                prop = cur + steps[i] * self.rng.standard_normal()
                trial = f.copy()
                trial[i] = prop
                new = self._loglik(st, self.lt_tilde, lt_hat, cols=[i], **{name: trial})
                sd = np.sqrt(cond_var)
                log_r = (np.sum(new.ll) - np.sum(self.ll[:, i])
                         + dist.normal_logpdf(prop, cond_mean, sd) - dist.normal_logpdf(cur, cond_mean, sd))
                if self._mh(log_r):
                    setattr(st, name, trial)
                    self._keep_col(new, i)
                    accepted[i] = True
            ad.record(accepted)
        if "gp_hyper" not in self.fixed:
            self._update_gp_hyper()

    def _update_gp_hyper(self):
        st = self.state
        gpp = self.gp_priors
        X = self._design
        for k, name in enumerate(GEV_FIELDS):
            if name in self.fixed:
                continue
            h = st.gp[name]
            f = getattr(st, name)
            corr = matern_correlation(self._dist / h.range, h.smoothness) + 1e-10 * np.eye(self.n)
            chol = linalg.cholesky(corr, lower=True)
            # beta | f, variance: conjugate normal
            rinv_x = linalg.cho_solve((chol, True), X)
            rinv_f = linalg.cho_solve((chol, True), f)
            prec = X.T @ rinv_x / h.variance + np.eye(3) / gpp.beta_sd ** 2
            pc = linalg.cholesky(prec, lower=True)
            mean = linalg.cho_solve((pc, True), X.T @ rinv_f / h.variance)
            beta = mean + linalg.solve_triangular(pc.T, self.rng.standard_normal(3), lower=False)
            # variance | f, beta: conjugate inverse gamma
            r = f - X @ beta
            quad = float(r @ linalg.cho_solve((chol, True), r))
            shape = gpp.var_shape + 0.5 * self.n
            scale = gpp.var_scale + 0.5 * quad
            variance = scale / self.rng.gamma(shape, 1.0)
            # range: log-scale random walk
            ad = self.adapters["gp_range"]
            step = ad.step[k]
            new_range = h.range * np.exp(step * self.rng.standard_normal())

            def log_target(rng_val):
                c = matern_correlation(self._dist / rng_val, h.smoothness) + 1e-10 * np.eye(self.n)
                try:
                    ch = linalg.cholesky(c, lower=True)
                except linalg.LinAlgError:
                    return -np.inf
                z = linalg.solve_triangular(ch, r, lower=True)
                return (-0.5 * z @ z / variance - np.sum(np.log(np.diag(ch)))
                        + float(gpp.log_range(rng_val, self._diameter)) + np.log(rng_val))

            acc = bool(self._mh(log_target(new_range) - log_target(h.range)))
            rec = np.zeros(len(GEV_FIELDS))
            rec[k] = acc
            mask = np.zeros(len(GEV_FIELDS))
            mask[k] = 1
            ad.record(rec, mask)
            st.gp[name] = GpHyper(beta, variance, new_range if acc else h.range, h.smoothness)
            self._gp_cache.pop(name, None)

    # -- dependence parameters -------------------------------------------

    def update_tau(self):
        if "tau" in self.fixed:
            return
        st = self.state
        ad = self.adapters["tau"]
        prop = st.tau * np.exp(ad.step * self.rng.standard_normal())
        w, powers = self._powers(prop, st.alpha)
        lt_t = models.log_theta(st.A, powers, st.alpha) if self.has_tilde else self.lt_tilde
        lt_a = models.log_theta(st.gamma, powers, st.alpha) if self.has_hat else self.lt_atoms
        new = self._loglik(st, lt_t, self._lt_hat(lt_a, st))
        log_r = (np.sum(new.ll) - np.sum(self.ll) + self.priors.tau(prop) - self.priors.tau(st.tau)
                 + np.log(prop) - np.log(st.tau))
        acc = bool(self._mh(log_r))
        ad.record(acc)
        if acc:
            st.tau = float(prop)
            self.w, self.powers, self.lt_tilde, self.lt_atoms, self.terms = w, powers, lt_t, lt_a, new

    def update_alpha(self):
        if "alpha" in self.fixed:
            return
        st = self.state
        ad = self.adapters["alpha"]
        cur = st.alpha
        prop = float(special.expit(special.logit(cur) + ad.step * self.rng.standard_normal()))
        if not 0.0 < prop < 1.0:
            ad.record(False)
            return
        powers = models.kernel_powers(self.w, prop)
        lt_t = models.log_theta(st.A, powers, prop) if self.has_tilde else self.lt_tilde
        lt_a = models.log_theta(st.gamma, powers, prop) if self.has_hat else self.lt_atoms
        trial = copy.copy(st)
        trial.alpha = prop
        new = self._loglik(trial, lt_t, self._lt_hat(lt_a, st))
        log_r = (np.sum(new.ll) - np.sum(self.ll)
                 + self._latent_logprior(prop) - self._latent_logprior(cur)
                 + np.log(prop * (1 - prop)) - np.log(cur * (1 - cur)))
        acc = bool(self._mh(log_r))
        ad.record(acc)
        if acc:
            st.alpha = prop
            self.powers, self.lt_tilde, self.lt_atoms, self.terms = powers, lt_t, lt_a, new

    def _rescaled_latents(self, g, lam, alpha, new_alpha):
        """Map g ~ PS(alpha) to PS(new_alpha) holding (lambda, c(lambda) g^(-a/(1-a))) fixed."""
        log_e = dist.log_ps_aux_c(lam, alpha) - alpha / (1.0 - alpha) * np.log(g)
        with np.errstate(over="ignore"):
            return np.exp((1.0 - new_alpha) / new_alpha * (dist.log_ps_aux_c(lam, new_alpha) - log_e))

    def update_alpha_joint(self):
        """Move alpha together with the positive stable latents.

        Under the (lambda, exponential) parameterization of the latents the
        prior factorizes, so only the likelihood and the logit Jacobian enter.
        """
        if "alpha" in self.fixed or self.fixed & {"A", "gamma"}:
            return
        st = self.state
        ad = self.adapters["alpha_joint"]
        cur = st.alpha
        prop = float(special.expit(special.logit(cur) + ad.step * self.rng.standard_normal()))
        if not 0.0 < prop < 1.0:
            ad.record(False)
            return
        A_new = self._rescaled_latents(st.A, st.B, cur, prop) if self.has_tilde else None
        g_new = self._rescaled_latents(st.gamma, st.lam, cur, prop) if self.has_hat else None
        for arr in (A_new, g_new):
            if arr is not None and not np.all((arr > 0) & np.isfinite(arr)):
                ad.record(False)
                return
        powers = models.kernel_powers(self.w, prop)
        lt_t = models.log_theta(A_new, powers, prop) if self.has_tilde else self.lt_tilde
        lt_a = models.log_theta(g_new, powers, prop) if self.has_hat else self.lt_atoms
        trial = copy.copy(st)
        trial.alpha = prop
        new = self._loglik(trial, lt_t, self._lt_hat(lt_a, st))
        log_r = np.sum(new.ll) - np.sum(self.ll) + np.log(prop * (1 - prop)) - np.log(cur * (1 - cur))
        acc = bool(self._mh(log_r))
        ad.record(acc)
        if acc:
            st.alpha = prop
            if self.has_tilde:
                st.A = A_new
            if self.has_hat:
                st.gamma = g_new
            self.powers, self.lt_tilde, self.lt_atoms, self.terms = powers, lt_t, lt_a, new

    def update_q(self):
        if self.kind != "mm" or "q" in self.fixed:
            return
        st = self.state
        ad = self.adapters["q"]
        s = float(ad.step)
        prop = float(dist._tn_sample(st.q, s, 0.0, 1.0, self.rng))
        trial = copy.copy(st)
        trial.q = prop
        new = self._loglik(trial, self.lt_tilde, self._lt_hat(self.lt_atoms, st))
        # Hastings correction for the truncated-normal proposal on [0, 1]
        log_r = (np.sum(new.ll) - np.sum(self.ll)
                 + dist.log_normal_mass(-st.q / s, (1 - st.q) / s)
                 - dist.log_normal_mass(-prop / s, (1 - prop) / s))
        acc = bool(self._mh(log_r))
        ad.record(acc)
        if acc:
            st.q = prop
            self.terms = new

    # -- HEVP random effects ---------------------------------------------

    def update_A_B(self):
        if not self.has_tilde:
            return
        st = self.state
        if "A" not in self.fixed:
            idx = np.arange(self.T + 1)
            self._latent_block(st.A, st.B, self.lt_tilde, "tilde", idx[:-1], idx, self.adapters["A"])
        if "B" not in self.fixed:
            st.B = self._aux_update(st.A, st.B, self.adapters["B"], st.alpha)

    def _latent_block(self, G, aux, lt_rows, side, order, offsets, ad):
        """Per-entry log-normal Metropolis sweep over a latent matrix (in place)."""
        st = self.state
        R, L = G.shape
        lc = dist.log_ps_aux_c(aux, st.alpha)
        z = self.rng.standard_normal((R, L))
        logu = np.log(dist._open_uniform(self.rng, (R, L)))
        mode = self._mode(st.q)
        own = 0 if side == "tilde" else 1
        if not self.use_lik or mode == 1 - own:
            lik_mode, power = 0, 1.0
        elif mode == own:
            lik_mode, power = 1, 1.0
        else:
            lik_mode, power = 2, (st.q if side == "tilde" else 1.0 - st.q)
        empty = np.empty((0, 0))
        mine = self.terms.t if side == "tilde" else self.terms.h
        other = self.terms.h if side == "tilde" else self.terms.t
        mine = (empty, empty) if mine is None or lik_mode == 0 else mine
        other = (empty, empty) if other is None or lik_mode != 2 else other
        mu, sig, xi = self._fields(st, None, {})
        acc = latent_sweep(G, lc, np.ascontiguousarray(ad.step), z, logu, self.powers.scaled,
                           self.powers.row_log_max, st.alpha, self.y, mu, sig, xi, power, lik_mode,
                           mine[0], mine[1], other[0], other[1], self.ll, lt_rows,
                           np.ascontiguousarray(order, dtype=np.int64),
                           np.ascontiguousarray(offsets, dtype=np.int64))
        ad.record(acc)

    def _aux_update(self, g, lam, ad, alpha):
        """Prior-only truncated-normal Metropolis update of auxiliary variables."""
        s = ad.step
        prop = dist._tn_sample(lam, s, 0.0, 1.0, self.rng)
        log_r = (dist._ps_aux_logpdf(g, prop, alpha) - dist._ps_aux_logpdf(g, lam, alpha)
                 + dist.log_normal_mass(-lam / s, (1 - lam) / s)
                 - dist.log_normal_mass(-prop / s, (1 - prop) / s))
        acc = self._mh(log_r)
        ad.record(acc)
        return np.where(acc, prop, lam)

    # -- stick-breaking atoms ----------------------------------------------

    def update_gamma_lambda(self):
        if not self.has_hat:
            return
        st = self.state
        alpha = st.alpha
        if "gamma" not in self.fixed:
            order = np.argsort(st.labels, kind="stable")
            offsets = np.concatenate([[0], np.cumsum(np.bincount(st.labels, minlength=self.J))])
            self._latent_block(st.gamma, st.lam, self.lt_atoms, "hat", order, offsets,
                               self.adapters["gamma"])
        if "lam" not in self.fixed:
            st.lam = self._aux_update(st.gamma, st.lam, self.adapters["lam"], alpha)

    def label_probabilities(self) -> np.ndarray:
        """(J, T) full-conditional probabilities of the cluster labels."""
        st = self.state
        with np.errstate(divide="ignore"):
            logits = np.log(st.pi)[:, None] + self._label_loglik()
        logits -= np.max(logits, axis=0, keepdims=True)
        p = np.exp(logits)
        return p / p.sum(axis=0, keepdims=True)

    def _label_loglik(self):
        st = self.state
        if not self.use_lik:
            return np.zeros((self.J, self.T))
        mode = self._mode(st.q)
        if mode == 0:
            return np.zeros((self.J, self.T))
        t = self.terms.t if mode == 2 else (self.ll, self.ll)
        mu, sig, xi = self._fields(st, None, {})
        power = 1.0 if mode == 1 else 1.0 - st.q
        return label_loglik_terms(self.y, np.ascontiguousarray(self.lt_atoms), mu, sig, xi,
                                  st.alpha, power, t[0], t[1], mode)

    def update_labels(self):
        if not self.has_hat or "labels" in self.fixed:
            return
        st = self.state
        with np.errstate(divide="ignore"):
            logits = np.log(st.pi)[:, None] + self._label_loglik()
        st.labels = dist.categorical_from_logits(logits, self.rng)
        self._keep_rows(self._with_side(st, self._lt_hat(self.lt_atoms, st), "hat"), slice(None))

    def update_sticks(self):
        if not self.has_hat or "sticks" in self.fixed:
            return
        st = self.state
        counts = np.bincount(st.labels, minlength=self.J)
        beyond = np.concatenate([np.cumsum(counts[::-1])[::-1][1:], [0]])
        v = self.rng.beta(1.0 + counts, self.cfg.stick_concentration + beyond)
        v[-1] = 1.0
        st.v = v

    # -- driver -------------------------------------------------------------

    def sweep(self):
        self.update_gev()
        self.update_tau()
        self.update_alpha()
        self.update_alpha_joint()
        self.update_A_B()
        self.update_gamma_lambda()
        self.update_labels()
        self.update_sticks()
        self.update_q()
        if self.cfg.debug:
            validate_state(self.state, self.kind)
            assert abs(self.full_loglik() - self.total_loglik()) <= 1e-10 * max(1.0, abs(self.total_loglik()))

    def step(self):
        """One full iteration: sweep, adaptation and storage."""
        cfg = self.cfg
        self.sweep()
        it = self.iteration
        if cfg.adapt and it < cfg.burnin and (it + 1) % cfg.adapt_window == 0:
            for ad in self.adapters.values():
                ad.adapt()
        if it >= cfg.burnin and (it + 1 - cfg.burnin) % cfg.thin == 0:
            self._store.append(self._snapshot())
        self.iteration += 1

    def run(self, until: int | None = None, checkpoint: str | Path | None = None,
            checkpoint_every: int = 0):
        stop = self.cfg.iterations if until is None else min(until, self.cfg.iterations)
        while self.iteration < stop:
            self.step()
            if checkpoint and checkpoint_every and self.iteration % checkpoint_every == 0:
                self.save(checkpoint)
        if checkpoint:
            self.save(checkpoint)
        return self

    def _snapshot(self) -> dict:
        st = self.state
        snap = {"alpha": st.alpha, "tau": st.tau, "q": st.q,
                "mu": st.mu.copy(), "log_sigma": st.log_sigma.copy(), "xi": st.xi.copy()}
        if self.has_hat:
            snap["gamma"] = st.gamma.copy()
            snap["pi"] = st.pi
        if st.gp is not None:
            snap["gp"] = {k: (h.beta.copy(), h.variance, h.range) for k, h in st.gp.items()}
        return snap

    def acceptance_rates(self) -> dict:
        return {k: ad.rate() for k, ad in self.adapters.items() if np.sum(ad.total_tries) > 0}

    def samples(self) -> PosteriorSamples:
        rows = self._store
        get = lambda k: np.array([r[k] for r in rows])
        gp = None
        if rows and "gp" in rows[0]:
            gp = {name: {"beta": np.array([r["gp"][name][0] for r in rows]),
                         "variance": np.array([r["gp"][name][1] for r in rows]),
                         "range": np.array([r["gp"][name][2] for r in rows]),
                         "smoothness": np.full(len(rows), self.cfg.smoothness)}
                  for name in GEV_FIELDS}
        n = self.n
        return PosteriorSamples(
            kind=self.kind, sites=self.sites.copy(), knots=self.knots.copy(),
            alpha=get("alpha") if rows else np.empty(0), tau=get("tau") if rows else np.empty(0),
            q=get("q") if rows else np.empty(0),
            mu=get("mu") if rows else np.empty((0, n)),
            log_sigma=get("log_sigma") if rows else np.empty((0, n)),
            xi=get("xi") if rows else np.empty((0, n)),
            gamma=get("gamma") if rows and self.has_hat else None,
            pi=get("pi") if rows and self.has_hat else None,
            gp=gp, acceptance=self.acceptance_rates(), config=self.cfg.model_dump())

    # -- data replacement (Geweke-style tests) ----------------------------

    def simulate_data(self) -> np.ndarray:
        """Draw a fresh data set from the model given the current latent state."""
        st = self.state
        shape = (self.T, self.n)
        sig = st.sigma

        def draw(lt, power):
            m, s, x = models.conditional_gev_arrays(st.mu, sig, st.xi, lt, st.alpha, power)
            u = dist._open_uniform(self.rng, shape)
            return dist._gev_quantile(u, m, s, x)

        if self.kind == "hevp":
            return draw(self.lt_tilde, 1.0)
        lt_hat = self._lt_hat(self.lt_atoms, st)
        if self.kind == "sb":
            return draw(lt_hat, 1.0)
        return np.maximum(draw(self.lt_tilde, st.q), draw(lt_hat, 1.0 - st.q))

    def set_data(self, y: np.ndarray):
        self.y = np.ascontiguousarray(np.asarray(y, dtype=float))
        self.use_lik = True
        self.terms = self._loglik(self.state, self.lt_tilde, self._lt_hat(self.lt_atoms, self.state))

    # -- persistence ----------------------------------------------------------

    def save(self, path):
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "wb") as fh:
            pickle.dump(self, fh, protocol=pickle.HIGHEST_PROTOCOL)
        tmp.replace(path)

    @staticmethod
    def load(path) -> "Sampler":
        with open(path, "rb") as fh:
            obj = pickle.load(fh)
        if not isinstance(obj, Sampler):
            raise DomainError(f"{path} is not a sampler checkpoint")
        return obj


def run_chain(cfg: ChainConfig, y: np.ndarray | None, sites, knots=None, T: int | None = None,
              **kwargs) -> PosteriorSamples:
    """Run a full chain and return its thinned post-burn-in draws."""
    return Sampler(cfg, y, sites, knots, T=T, **kwargs).run().samples()
