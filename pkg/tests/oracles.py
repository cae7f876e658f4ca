"""Independent brute-force implementations used as test oracles.

Everything here is deliberately naive: dense matrices, per-call Cholesky
factorizations, Monte Carlo, and finite differences. None of it shares code
with the package's spectral fast paths.
"""

import numpy as np
import scipy.linalg
from scipy.special import logsumexp


def dense_gaussian_logpdf(y, mean, cov):
    """Multivariate normal log density via a fresh Cholesky factorization."""
    d = y.shape[-1]
    chol = scipy.linalg.cholesky(cov, lower=True)
    diff = np.atleast_2d(y) - mean
    sol = scipy.linalg.solve_triangular(chol, diff.T, lower=True)
    quad = np.sum(sol * sol, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    out = -0.5 * (d * np.log(2.0 * np.pi) + logdet + quad)
    return out[0] if np.ndim(y) == 1 else out


def cholesky_log_density(model, y, sigma):
    """log p_sigma(y) from dense per-component Gaussians."""
    cov = model.base_cov + sigma**2 * np.eye(model.ambient_dim)
    comp = np.stack([dense_gaussian_logpdf(y, m, cov) for m in model.means])
    return logsumexp(comp.T + np.log(model.weights), axis=-1)


def cholesky_score(model, y, sigma):
    """Score of the noisy density from dense linear solves."""
    cov = model.base_cov + sigma**2 * np.eye(model.ambient_dim)
    logs = np.array([dense_gaussian_logpdf(y, m, cov) for m in model.means])
    logs += np.log(model.weights)
    omega = np.exp(logs - logsumexp(logs))
    resid = sum(w * (y - m) for w, m in zip(omega, model.means))
    return -np.linalg.solve(cov, resid)


def cholesky_posterior(model, y, sigma):
    """Posterior component weights, means, and shared covariance (dense)."""
    d = model.ambient_dim
    cov0 = model.base_cov
    cov = cov0 + sigma**2 * np.eye(d)
    logs = np.array([dense_gaussian_logpdf(y, m, cov) for m in model.means])
    logs += np.log(model.weights)
    omega = np.exp(logs - logsumexp(logs))
    gain = np.linalg.solve(cov, cov0).T
    means = model.means + (y - model.means) @ gain.T
    post_cov = cov0 - gain @ cov0
    return omega, means, post_cov


def finite_diff_grad(fn, x, step):
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        grad[i] = (fn(x + e) - fn(x - e)) / (2.0 * step)
    return grad


def finite_diff_jacobian(fn, x, step):
    """Central-difference Jacobian of a vector function."""
    x = np.asarray(x, dtype=np.float64)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        cols.append((fn(x + e) - fn(x - e)) / (2.0 * step))
    return np.stack(cols, axis=-1)


def finite_diff_scalar(fn, x, step):
    """Central difference of a scalar function of a scalar."""
    return (fn(x + step) - fn(x - step)) / (2.0 * step)


def mc_noisy_log_density(model, y, sigma, n_draws, seed):
    """Log of the Monte-Carlo estimate of E_X[N(y; X, sigma^2 I)].

    Draws stay in the factor coordinates so only O(n * k) memory is used.
    Returns (log_estimate, relative_standard_error).
    """
    rng = np.random.default_rng(seed)
    d = model.ambient_dim
    x = draw_factor_samples(model, n_draws, rng, y=y)
    sq = x["sqnorm"] - 2.0 * (x["coords"] @ x["proj_y"]) + float(y @ y)
    loglik = -0.5 * sq / sigma**2 - 0.5 * d * np.log(2.0 * np.pi * sigma**2)
    log_mean = logsumexp(loglik) - np.log(n_draws)
    log_sq_mean = logsumexp(2.0 * loglik) - np.log(n_draws)
    rel_var = np.expm1(log_sq_mean - 2.0 * log_mean)
    rel_se = np.sqrt(max(rel_var, 0.0) / n_draws)
    return log_mean, rel_se


def draw_factor_samples(model, n, rng, y=None):
    """Samples expressed through the covariance range basis plus mean labels.

    Returns coords in the span of [means, cov range] so squared distances to
    any fixed vector can be formed without n x d arrays.
    """
    basis_cols = [model.means.T, model.cov_evecs]
    span = np.hstack(basis_cols)
    q, _ = np.linalg.qr(span)
    idx = rng.choice(model.n_components, size=n, p=model.weights)
    noise = rng.standard_normal((n, model.cov_evals.size))
    coords = (model.means @ q)[idx] + (noise * np.sqrt(model.cov_evals)) @ (model.cov_evecs.T @ q)
    sqnorm = np.einsum("ij,ij->i", coords, coords)
    out = {"coords": coords, "sqnorm": sqnorm, "basis": q, "labels": idx}
    if y is not None:
        out["proj_y"] = q.T @ y
    return out


def mc_cross_covariance(samples, y):
    """Cov(X, ||X - y||^2) estimated from posterior samples, with max SE.

    ``samples`` is an (n, d) array; returns (w_vector, per_coordinate_se).
    """
    n = samples.shape[0]
    g = np.einsum("ij,ij->i", samples - y, samples - y)
    xc = samples - samples.mean(axis=0)
    gc = g - g.mean()
    prod = xc * gc[:, None]
    w = prod.mean(axis=0)
    se = prod.std(axis=0, ddof=1) / np.sqrt(n)
    return w, se
