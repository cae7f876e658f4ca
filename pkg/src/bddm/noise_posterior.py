"""Bayesian treatment of the unknown noise level.

A power-law prior over noise levels on [sigma_min, sigma_max] combines with
the mixture's noisy density into the single-observation posterior over sigma
(equivalently over the precision lambda = sigma^-2). The module exposes the
posterior on a log-spaced grid, its moments, derivative diagnostics of the
negative log posterior in lambda, and the maximum-likelihood noise estimate
with golden-section refinement.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigurationError, DomainError
from .mixture import (
    GaussianMixture,
    _as_batch,
    _comp_loglik,
    _decompose,
    conditional_sqnorm_moments,
)

_LOG_2PI = math.log(2.0 * math.pi)
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0
_SUPPORT_RTOL = 1e-9


@dataclass(frozen=True)
class NoisePrior:
    """Power-law prior with density proportional to sigma^(alpha - 3)."""

    alpha: float
    sigma_min: float
    sigma_max: float

    def __post_init__(self):
        if not (0.0 < self.sigma_min < self.sigma_max < np.inf):
            raise ConfigurationError("prior support must satisfy 0 < sigma_min < sigma_max")

    @classmethod
    def log_uniform(cls, sigma_min: float, sigma_max: float) -> "NoisePrior":
        return cls(2.0, sigma_min, sigma_max)

    @classmethod
    def inverse_cubic(cls, sigma_min: float, sigma_max: float) -> "NoisePrior":
        """Density proportional to sigma^-3, i.e. uniform in the precision."""
        return cls(0.0, sigma_min, sigma_max)

    @classmethod
    def flat(cls, sigma_min: float, sigma_max: float) -> "NoisePrior":
        return cls(3.0, sigma_min, sigma_max)

    @property
    def log_normalizer(self) -> float:
        p = self.alpha - 2.0
        if abs(p) < 1e-12:
            return math.log(math.log(self.sigma_max / self.sigma_min))
        return math.log(abs((self.sigma_max**p - self.sigma_min**p) / p))

    def contains(self, sigma) -> np.ndarray:
        s = np.asarray(sigma, dtype=np.float64)
        lo = self.sigma_min * (1.0 - _SUPPORT_RTOL)
        hi = self.sigma_max * (1.0 + _SUPPORT_RTOL)
        return (s >= lo) & (s <= hi)

    def log_density(self, sigma):
        s = np.asarray(sigma, dtype=np.float64)
        if not np.all(self.contains(s)):
            raise DomainError("noise level outside the prior support")
        out = (self.alpha - 3.0) * np.log(s) - self.log_normalizer
        return float(out) if np.isscalar(sigma) else out

    def sample(self, n: int, rng_seed) -> np.ndarray:
        rng = (
            rng_seed
            if isinstance(rng_seed, np.random.Generator)
            else np.random.default_rng(rng_seed)
        )
        u = rng.random(n)
        p = self.alpha - 2.0
        if abs(p) < 1e-12:
            return self.sigma_min * (self.sigma_max / self.sigma_min) ** u
        lo, hi = self.sigma_min**p, self.sigma_max**p
        return (lo + u * (hi - lo)) ** (1.0 / p)


@dataclass(frozen=True)
class SigmaGrid:
    """Strictly increasing log-uniform noise-level grid."""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=np.float64)
        if nodes.ndim != 1 or nodes.size < 16:
            raise ConfigurationError("grid needs at least 16 nodes")
        if nodes[0] <= 0.0 or np.any(np.diff(nodes) <= 0.0):
            raise ConfigurationError("grid nodes must be positive and strictly increasing")
        logstep = np.diff(np.log(nodes))
        if np.max(np.abs(logstep - logstep[0])) > 1e-12:
            raise ConfigurationError("grid nodes must be uniform in log scale")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def geometric(cls, sigma_min: float, sigma_max: float, count: int = 256) -> "SigmaGrid":
        return cls(np.geomspace(sigma_min, sigma_max, count))

    @classmethod
    def for_prior(cls, prior: NoisePrior, count: int = 256) -> "SigmaGrid":
        return cls.geometric(prior.sigma_min, prior.sigma_max, count)

    @property
    def count(self) -> int:
        return self.nodes.size

    def trapezoid_weights(self) -> np.ndarray:
        nodes = self.nodes
        wt = np.empty_like(nodes)
        wt[0] = 0.5 * (nodes[1] - nodes[0])
        wt[-1] = 0.5 * (nodes[-1] - nodes[-2])
        wt[1:-1] = 0.5 * (nodes[2:] - nodes[:-2])
        return wt


def _require_grid_in_support(prior: NoisePrior, grid: SigmaGrid) -> None:
    if not (prior.contains(grid.nodes[0]) and prior.contains(grid.nodes[-1])):
        raise ConfigurationError("sigma grid extends beyond the prior support")


def _rowwise_log_density(model: GaussianMixture, w2, qperp, sigmas) -> np.ndarray:
    """log p_sigma(y) with a separate sigma per row of the batch."""
    evals = model._evals
    d = model.ambient_dim
    r = evals.size
    s2 = (sigmas * sigmas)[:, None]
    quad = np.einsum("nkr,nkr->nk", w2, 1.0 / (evals[None, None, :] + s2[:, :, None])) if r else 0.0
    quad = quad + qperp / s2
    logdet = np.log(evals[None, :] + s2).sum(axis=1, keepdims=True) + (d - r) * np.log(s2)
    comp = model._log_weights[None, :] - 0.5 * (d * _LOG_2PI + logdet + quad)
    return logsumexp(comp, axis=1)


def posterior_log_density(model: GaussianMixture, prior: NoisePrior, y, sigma):
    """Log posterior density of the noise level given y, up to one constant.

    Evaluates log Theta(sigma) + log p_sigma(y); the missing constant is the
    marginal likelihood of y, shared by all sigma for fixed y.
    """
    batch, squeeze = _as_batch(y, model.ambient_dim)
    s = np.asarray(sigma, dtype=np.float64)
    scalar_sigma = s.ndim == 0
    svec = np.atleast_1d(s)
    prior_term = prior.log_density(svec)
    _, w2, qperp, _ = _decompose(model, batch)
    if scalar_sigma:
        rows = np.full(batch.shape[0], float(svec[0]))
        out = _rowwise_log_density(model, w2, qperp, rows) + prior_term[0]
        return float(out[0]) if squeeze else out
    if not squeeze:
        raise DomainError("pass either one observation or one sigma per call")
    grid_ll = logsumexp(_comp_loglik(model, w2, qperp, svec), axis=2)[0]
    return grid_ll + prior_term


def posterior_log_density_grid(
    model: GaussianMixture, prior: NoisePrior, y, grid: SigmaGrid
) -> np.ndarray:
    """Log posterior over the grid for a batch of observations; shape (n, m)."""
    _require_grid_in_support(prior, grid)
    batch, _ = _as_batch(y, model.ambient_dim)
    _, w2, qperp, _ = _decompose(model, batch)
    ll = logsumexp(_comp_loglik(model, w2, qperp, grid.nodes), axis=2)
    return ll + prior.log_density(grid.nodes)[None, :]


def posterior_masses(model: GaussianMixture, prior: NoisePrior, y, grid: SigmaGrid) -> np.ndarray:
    """Normalized posterior probability attached to each grid node (trapezoid)."""
    lp = posterior_log_density_grid(model, prior, y, grid)
    lp = lp - lp.max(axis=1, keepdims=True)
    masses = np.exp(lp) * grid.trapezoid_weights()[None, :]
    masses /= masses.sum(axis=1, keepdims=True)
    return masses


def lambda_log_density(model: GaussianMixture, prior: NoisePrior, y, lam):
    """Log posterior density of the precision lambda = sigma^-2, up to a constant.

    Uses the reparameterized form lambda^((d - alpha)/2) E_X exp(-lambda
    ||X - y||^2 / 2), evaluated through the noisy density.
    """
    _check_lambda_support(prior, lam)
    batch, squeeze = _as_batch(y, model.ambient_dim)
    lam_arr = np.asarray(lam, dtype=np.float64)
    scalar_lam = lam_arr.ndim == 0
    lam_vec = np.atleast_1d(lam_arr)
    sigmas = lam_vec**-0.5
    d = model.ambient_dim
    _, w2, qperp, _ = _decompose(model, batch)
    if scalar_lam:
        rows = np.full(batch.shape[0], float(sigmas[0]))
        ll = _rowwise_log_density(model, w2, qperp, rows)
        out = -0.5 * prior.alpha * np.log(lam_vec[0]) + 0.5 * d * _LOG_2PI + ll
        return float(out[0]) if squeeze else out
    if not squeeze:
        raise DomainError("pass either one observation or one lambda per call")
    ll = logsumexp(_comp_loglik(model, w2, qperp, sigmas), axis=2)[0]
    return -0.5 * prior.alpha * np.log(lam_vec) + 0.5 * d * _LOG_2PI + ll


def ell_derivatives(model: GaussianMixture, prior: NoisePrior, y, lam):
    """First and second derivatives of the negative log posterior in lambda.

    Both reduce to conditional moments of ||X - y||^2 at sigma = lambda^-1/2,
    which are computed from exact per-component Gaussian moment formulas.
    """
    lam = float(lam)
    _check_lambda_support(prior, lam)
    d = model.ambient_dim
    sigma = lam**-0.5
    mean, var = conditional_sqnorm_moments(model, y, sigma)
    ell_prime = -(d - prior.alpha) / (2.0 * lam) + 0.5 * mean
    ell_double_prime = (d - prior.alpha) / (2.0 * lam * lam) - 0.25 * var
    return ell_prime, ell_double_prime


def _check_lambda_support(prior: NoisePrior, lam) -> None:
    lam_arr = np.asarray(lam, dtype=np.float64)
    lo = prior.sigma_max**-2 * (1.0 - _SUPPORT_RTOL)
    hi = prior.sigma_min**-2 * (1.0 + _SUPPORT_RTOL)
    if np.any(lam_arr < lo) or np.any(lam_arr > hi):
        raise DomainError("precision outside the prior support")


def mle_sigma(model: GaussianMixture, prior: NoisePrior, y, grid: SigmaGrid):
    """Posterior-mode noise level: grid argmax plus golden-section refinement.

    Deterministic; exact grid ties resolve toward the smaller noise level.
    """
    _require_grid_in_support(prior, grid)
    batch, squeeze = _as_batch(y, model.ambient_dim)
    _, w2, qperp, _ = _decompose(model, batch)
    prior_term = prior.log_density(grid.nodes)
    lp = logsumexp(_comp_loglik(model, w2, qperp, grid.nodes), axis=2) + prior_term[None, :]
    idx = lp.argmax(axis=1)
    nodes = grid.nodes
    lo = nodes[np.maximum(idx - 1, 0)]
    hi = nodes[np.minimum(idx + 1, nodes.size - 1)]

    def objective(sig_rows):
        return (
            _rowwise_log_density(model, w2, qperp, sig_rows)
            + (prior.alpha - 3.0) * np.log(sig_rows)
        )

    a, b = lo.copy(), hi.copy()
    x1 = b - _INVPHI * (b - a)
    x2 = a + _INVPHI * (b - a)
    f1, f2 = objective(x1), objective(x2)
    for _ in range(30):
        left = f1 > f2
        b = np.where(left, x2, b)
        a = np.where(left, a, x1)
        x2_shift, f2_shift = x1, f1
        x1_shift, f1_shift = x2, f2
        h = b - a
        probe = np.where(left, b - _INVPHI * h, a + _INVPHI * h)
        f_probe = objective(probe)
        x1 = np.where(left, probe, x1_shift)
        f1 = np.where(left, f_probe, f1_shift)
        x2 = np.where(left, x2_shift, probe)
        f2 = np.where(left, f2_shift, f_probe)
    out = 0.5 * (a + b)
    return float(out[0]) if squeeze else out


def posterior_moments(model: GaussianMixture, prior: NoisePrior, y, grid: SigmaGrid):
    """Posterior mean/variance of lambda and sigma by grid quadrature."""
    masses = posterior_masses(model, prior, y, grid)
    nodes = grid.nodes
    lam = nodes**-2
    mean_lambda = masses @ lam
    var_lambda = np.maximum(masses @ lam**2 - mean_lambda**2, 0.0)
    mean_sigma = masses @ nodes
    var_sigma = np.maximum(masses @ nodes**2 - mean_sigma**2, 0.0)
    if np.ndim(y) == 1:
        return float(mean_lambda[0]), float(var_lambda[0]), float(mean_sigma[0]), float(var_sigma[0])
    return mean_lambda, var_lambda, mean_sigma, var_sigma


def export_posterior_csv(model, prior, y, grid: SigmaGrid, path) -> None:
    """Write the posterior curve for one observation: sigma, shifted log
    posterior (max 0), and grid-normalized density."""
    lp = posterior_log_density_grid(model, prior, y, grid)[0]
    lp_shift = lp - lp.max()
    dens = np.exp(lp_shift)
    dens /= dens @ grid.trapezoid_weights()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sigma", "log_post", "normalized_density"])
        for s, l, f in zip(grid.nodes, lp_shift, dens):
            writer.writerow([repr(float(s)), repr(float(l)), repr(float(f))])
