"""Gaussian-mixture data model with exact noisy densities, scores, and posteriors.

The mixture shares one base covariance across components and is typically
supported on a low-dimensional subspace of the ambient space. All noise-level
dependent quantities are evaluated through a one-time spectral decomposition
of the base covariance, so sweeping many noise levels for the same input is
cheap and numerically stable even in high ambient dimension.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ._accel import grid_comp_loglik
from .errors import ConfigurationError, DomainError

WEIGHT_TOL = 1e-12
SYMMETRY_TOL = 1e-12
PSD_TOL = -1e-10
SUBSPACE_TOL = 1e-10
BASIS_TOL = 1e-10
_RANK_TOL = 1e-24  # eigenvalues of the base covariance below this count as zero


def _as_array(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class SubspaceEmbedding:
    """Affine chart of a k-dimensional subspace of R^d.

    ``basis`` has orthonormal columns; ``offset`` locates the subspace.
    """

    basis: np.ndarray  # (d, k)
    offset: np.ndarray  # (d,)

    def __post_init__(self):
        basis = _as_array(self.basis, "basis")
        offset = _as_array(self.offset, "offset")
        if basis.ndim != 2:
            raise ConfigurationError("basis must be a d x k matrix")
        d, k = basis.shape
        if offset.shape != (d,):
            raise ConfigurationError("offset length must match basis rows")
        gram = basis.T @ basis
        if np.max(np.abs(gram - np.eye(k))) > BASIS_TOL:
            raise ConfigurationError("basis columns are not orthonormal")
        basis.setflags(write=False)
        offset.setflags(write=False)
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "offset", offset)

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def subspace_dim(self) -> int:
        return self.basis.shape[1]

    def project(self, points: np.ndarray) -> np.ndarray:
        """Subspace coordinates of ambient points: B^T (x - offset)."""
        return (np.asarray(points, dtype=np.float64) - self.offset) @ self.basis

    def lift(self, coords: np.ndarray) -> np.ndarray:
        """Ambient points from subspace coordinates."""
        return np.asarray(coords, dtype=np.float64) @ self.basis.T + self.offset

    def project_ambient(self, points: np.ndarray) -> np.ndarray:
        """Nearest points on the subspace, in ambient coordinates."""
        return self.lift(self.project(points))

    @classmethod
    def identity(cls, d: int) -> "SubspaceEmbedding":
        return cls(np.eye(d), np.zeros(d))

    @classmethod
    def zero_pad(cls, k: int, d: int, offset=None) -> "SubspaceEmbedding":
        """First k coordinate axes of R^d (zero padding of the factor space)."""
        if k > d:
            raise ConfigurationError("zero_pad requires k <= d")
        basis = np.zeros((d, k))
        basis[:k, :k] = np.eye(k)
        return cls(basis, np.zeros(d) if offset is None else offset)

    @classmethod
    def random(cls, k: int, d: int, seed, offset=None) -> "SubspaceEmbedding":
        """Haar-random k-dimensional chart of R^d."""
        if k > d:
            raise ConfigurationError("random embedding requires k <= d")
        rng = np.random.default_rng(seed)
        q, r = np.linalg.qr(rng.standard_normal((d, k)))
        q = q * np.sign(np.diag(r))
        return cls(q, np.zeros(d) if offset is None else offset)


@dataclass(frozen=True)
class GaussianMixture:
    """Mixture of K Gaussians with a shared base covariance.

    The base covariance is held as a factor F with Sigma0 = F F^T; its
    spectral decomposition is precomputed so that densities, scores and
    posteriors at any noise level reduce to O(rank) arithmetic per component.
    """

    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, d)
    cov_factor: np.ndarray  # (d, r) with Sigma0 = F F^T
    intrinsic_dim: int
    embedding: SubspaceEmbedding | None = None

    def __post_init__(self):
        weights = _as_array(self.weights, "weights")
        means = _as_array(self.means, "means")
        factor = _as_array(self.cov_factor, "cov_factor")
        if weights.ndim != 1 or means.ndim != 2 or factor.ndim != 2:
            raise ConfigurationError("weights must be 1-d, means and cov_factor 2-d")
        n_comp, d = means.shape
        if weights.shape[0] != n_comp:
            raise ConfigurationError("weights and means disagree on component count")
        if factor.shape[0] != d:
            raise ConfigurationError("cov_factor rows must match ambient dimension")
        if np.any(weights < -WEIGHT_TOL) or abs(weights.sum() - 1.0) > WEIGHT_TOL:
            raise ConfigurationError("weights must be nonnegative and sum to 1")
        if not 1 <= self.intrinsic_dim <= d:
            raise ConfigurationError("intrinsic_dim must lie in [1, ambient_dim]")

        # spectral cache: Sigma0 = V diag(evals) V^T restricted to positive part
        u, s, _ = np.linalg.svd(factor, full_matrices=False)
        keep = s * s > _RANK_TOL * max(1.0, float(s[0] * s[0]) if s.size else 1.0)
        evecs = np.ascontiguousarray(u[:, keep])
        evals = np.ascontiguousarray(s[keep] ** 2)

        self._check_subspace(means, evecs)

        for arr in (weights, means, factor, evecs, evals):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "cov_factor", factor)
        object.__setattr__(self, "_evecs", evecs)
        object.__setattr__(self, "_evals", evals)
        with np.errstate(divide="ignore"):
            logw = np.log(np.clip(weights, 0.0, None))
        logw.setflags(write=False)
        object.__setattr__(self, "_log_weights", logw)

    def _check_subspace(self, means, evecs):
        offset = self.embedding.offset if self.embedding is not None else np.zeros(means.shape[1])
        span = np.vstack([means - offset, evecs.T])
        scale = max(1.0, float(np.abs(span).max()))
        if self.embedding is not None:
            if self.embedding.ambient_dim != means.shape[1]:
                raise ConfigurationError("embedding ambient dimension mismatch")
            if self.embedding.subspace_dim != self.intrinsic_dim:
                raise ConfigurationError("embedding rank must equal intrinsic_dim")
            basis = self.embedding.basis
            resid = span - (span @ basis) @ basis.T
            if np.abs(resid).max() > SUBSPACE_TOL * scale:
                raise ConfigurationError("means/covariance leave the embedding subspace")
        else:
            sv = np.linalg.svd(span, compute_uv=False)
            if sv.size > self.intrinsic_dim and sv[self.intrinsic_dim] > SUBSPACE_TOL * scale:
                raise ConfigurationError(
                    "means and covariance range do not fit a subspace of rank intrinsic_dim"
                )

    # -- constructors ------------------------------------------------------

    @classmethod
    def from_covariance(cls, weights, means, base_cov, intrinsic_dim, embedding=None):
        cov = _as_array(base_cov, "base_cov")
        scale = max(1.0, float(np.abs(cov).max()))
        if np.abs(cov - cov.T).max() > SYMMETRY_TOL * scale:
            raise ConfigurationError("base covariance is not symmetric")
        evals, evecs = np.linalg.eigh((cov + cov.T) / 2.0)
        if evals.min() < PSD_TOL * scale:
            raise ConfigurationError("base covariance is not positive semidefinite")
        pos = evals > 0.0
        factor = evecs[:, pos] * np.sqrt(evals[pos])
        if factor.shape[1] == 0:
            factor = np.zeros((cov.shape[0], 1))
        return cls(weights, means, factor, intrinsic_dim, embedding)

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def ambient_dim(self) -> int:
        return self.means.shape[1]

    @property
    def base_cov(self) -> np.ndarray:
        return self.cov_factor @ self.cov_factor.T

    @property
    def cov_evals(self) -> np.ndarray:
        """Positive eigenvalues of the base covariance."""
        return self._evals

    @property
    def cov_evecs(self) -> np.ndarray:
        """Orthonormal eigenvectors spanning the base covariance range."""
        return self._evecs

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def support_chart(self) -> SubspaceEmbedding:
        """Chart of the support subspace (stored, or derived from the model)."""
        if self.embedding is not None:
            return self.embedding
        span = np.vstack([self.means, self._evecs.T])
        u, s, _ = np.linalg.svd(span.T, full_matrices=False)
        rank = min(self.intrinsic_dim, int(np.sum(s > SUBSPACE_TOL * max(1.0, s[0]))))
        basis = u[:, :rank]
        if rank < self.intrinsic_dim:
            # extend with arbitrary orthonormal directions to reach rank k
            proj = np.eye(self.ambient_dim) - basis @ basis.T
            extra, _ = np.linalg.qr(proj[:, : self.intrinsic_dim - rank])
            basis = np.hstack([basis, extra[:, : self.intrinsic_dim - rank]])
        return SubspaceEmbedding(basis, np.zeros(self.ambient_dim))

    # -- serialization -----------------------------------------------------

    def to_json_dict(self) -> dict:
        d, k = self.ambient_dim, self.intrinsic_dim
        factor = np.zeros((d, k))
        r = min(self.cov_factor.shape[1], k)
        factor[:, :r] = self.cov_factor[:, :r]
        offset = self.embedding.offset if self.embedding is not None else np.zeros(d)
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "base_cov_factor": factor.tolist(),
            "offset": offset.tolist(),
            "k": k,
            "d": d,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "GaussianMixture":
        try:
            weights = data["weights"]
            means = np.asarray(data["means"], dtype=np.float64)
            factor = np.asarray(data["base_cov_factor"], dtype=np.float64)
            offset = np.asarray(data["offset"], dtype=np.float64)
            k = int(data["k"])
            d = int(data["d"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"malformed mixture JSON: {exc}") from None
        if means.shape[1] != d or factor.shape != (d, k):
            raise ConfigurationError("mixture JSON has inconsistent shapes")
        model = cls(weights, means, factor, k)
        if np.any(offset != 0.0):
            span = np.vstack([means - offset, factor.T])
            u, s, _ = np.linalg.svd(span.T, full_matrices=False)
            basis = u[:, : min(k, s.size)]
            if basis.shape[1] == k:
                model = cls(weights, means, factor, k, SubspaceEmbedding(basis, offset))
        return model

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=1, sort_keys=True)

    @classmethod
    def load_json(cls, path) -> "GaussianMixture":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))


def embed_mixture(low_dim_mixture: GaussianMixture, embedding: SubspaceEmbedding) -> GaussianMixture:
    """Push a full-rank mixture on R^k through an affine chart into R^d."""
    k = embedding.subspace_dim
    if low_dim_mixture.ambient_dim != k:
        raise ConfigurationError(
            f"mixture lives in R^{low_dim_mixture.ambient_dim} but embedding expects R^{k}"
        )
    means = embedding.lift(low_dim_mixture.means)
    factor = embedding.basis @ low_dim_mixture.cov_factor
    return GaussianMixture(low_dim_mixture.weights, means, factor, k, embedding)


# ---------------------------------------------------------------------------
# noisy-observation computations
# ---------------------------------------------------------------------------

def _as_batch(y, d: int):
    arr = np.asarray(y, dtype=np.float64)
    if arr.shape == (d,):
        return arr[None, :], True
    if arr.ndim == 2 and arr.shape[1] == d:
        return arr, False
    raise DomainError(f"input must have trailing dimension {d}, got shape {arr.shape}")


def _check_sigma(sigma) -> float:
    s = float(sigma)
    if not np.isfinite(s) or s <= 0.0:
        raise DomainError(f"noise level must be a positive finite scalar, got {sigma!r}")
    return s


def _decompose(model: GaussianMixture, y: np.ndarray, with_residuals: bool = False):
    """Per-component residual split into covariance eigenbasis and complement.

    Returns (w, w2, qperp, t): eigen coefficients (n, K, r), their squares,
    the squared orthogonal remainder (n, K), and the raw residuals (n, K, d)
    when requested (None otherwise, to keep large batches cheap).
    """
    if not np.all(np.isfinite(y)):
        raise DomainError("observation contains non-finite entries")
    evecs = model._evecs
    n = y.shape[0]
    n_comp = model.n_components
    r = evecs.shape[1]
    w = np.empty((n, n_comp, r))
    qperp = np.empty((n, n_comp))
    t = np.empty((n, n_comp, y.shape[1])) if with_residuals else None
    for c in range(n_comp):
        tc = y - model.means[c]
        if t is not None:
            t[:, c, :] = tc
        wc = tc @ evecs
        w[:, c, :] = wc
        qperp[:, c] = np.maximum(np.einsum("ij,ij->i", tc, tc) - np.einsum("ij,ij->i", wc, wc), 0.0)
    return w, w * w, qperp, t


def _comp_loglik(model: GaussianMixture, w2, qperp, sigmas) -> np.ndarray:
    sig = np.ascontiguousarray(np.atleast_1d(np.asarray(sigmas, dtype=np.float64)))
    if np.any(~np.isfinite(sig)) or np.any(sig <= 0.0):
        raise DomainError("noise levels must be positive and finite")
    return grid_comp_loglik(
        np.ascontiguousarray(w2),
        np.ascontiguousarray(qperp),
        model._evals,
        model._log_weights,
        sig,
        model.ambient_dim,
    )


def component_log_density_grid(model: GaussianMixture, y, sigmas) -> np.ndarray:
    """log [w_i N(y; m_i, Sigma0 + sigma^2 I)] for every (y, sigma, component).

    Shape (n, m, K) for n inputs and m noise levels.
    """
    batch, _ = _as_batch(y, model.ambient_dim)
    _, w2, qperp, _ = _decompose(model, batch)
    return _comp_loglik(model, w2, qperp, sigmas)


def log_density_grid(model: GaussianMixture, y, sigmas) -> np.ndarray:
    """log p_sigma(y) over a grid of noise levels; shape (n, m)."""
    comp = component_log_density_grid(model, y, sigmas)
    return logsumexp(comp, axis=2)


def noisy_log_density(model: GaussianMixture, y, sigma):
    """Log density of the noisy observable Y = X + sigma Z at y."""
    s = _check_sigma(sigma)
    batch, squeeze = _as_batch(y, model.ambient_dim)
    out = log_density_grid(model, batch, np.array([s]))[:, 0]
    return float(out[0]) if squeeze else out


def _softmax_rows(comp: np.ndarray) -> np.ndarray:
    comp = comp - comp.max(axis=1, keepdims=True)
    weights = np.exp(comp)
    weights /= weights.sum(axis=1, keepdims=True)
    return weights


def posterior_component_weights(model: GaussianMixture, y, sigma) -> np.ndarray:
    """Posterior probability of each component given the noisy observation."""
    s = _check_sigma(sigma)
    batch, squeeze = _as_batch(y, model.ambient_dim)
    _, w2, qperp, _ = _decompose(model, batch)
    omega = _softmax_rows(_comp_loglik(model, w2, qperp, np.array([s]))[:, 0, :])
    return omega[0] if squeeze else omega


def noisy_score(model: GaussianMixture, y, sigma):
    """Gradient of log p_sigma at y."""
    s = _check_sigma(sigma)
    batch, squeeze = _as_batch(y, model.ambient_dim)
    w, w2, qperp, t = _decompose(model, batch, with_residuals=True)
    omega = _softmax_rows(_comp_loglik(model, w2, qperp, np.array([s]))[:, 0, :])
    u = np.einsum("nc,ncd->nd", omega, t)
    wu = np.einsum("nc,ncr->nr", omega, w)
    s2 = s * s
    gain = 1.0 / (model._evals + s2) - 1.0 / s2
    score = -(wu * gain) @ model._evecs.T - u / s2
    return score[0] if squeeze else score


def posterior_mixture(model: GaussianMixture, y, sigma) -> GaussianMixture:
    """Exact law of X given Y = y when Y = X + sigma Z."""
    s = _check_sigma(sigma)
    batch, squeeze = _as_batch(y, model.ambient_dim)
    if not squeeze:
        raise DomainError("posterior_mixture expects a single observation vector")
    w, w2, qperp, _ = _decompose(model, batch)
    omega = _softmax_rows(_comp_loglik(model, w2, qperp, np.array([s]))[:, 0, :])[0]
    s2 = s * s
    evals = model._evals
    shrink = evals / (evals + s2)
    means = model.means + (w[0] * shrink) @ model._evecs.T
    post_factor = model._evecs * np.sqrt(evals * s2 / (evals + s2))
    return GaussianMixture(omega, means, post_factor, model.intrinsic_dim, model.embedding)


def mixture_mean_cov(model: GaussianMixture):
    """Overall mean and covariance of the mixture (components pooled)."""
    mu = model.mean()
    centred = model.means - mu
    cov = model.base_cov + (centred.T * model.weights) @ centred
    return mu, cov


def conditional_sqnorm_moments(model: GaussianMixture, y, sigma):
    """Mean and variance of ||X - y||^2 under the posterior X | Y = y.

    Uses exact Gaussian quadratic/quartic moment formulas per component.
    """
    s = _check_sigma(sigma)
    batch, squeeze = _as_batch(y, model.ambient_dim)
    _, w2, qperp, _ = _decompose(model, batch)
    omega = _softmax_rows(_comp_loglik(model, w2, qperp, np.array([s]))[:, 0, :])
    s2 = s * s
    evals = model._evals
    c = evals * s2 / (evals + s2)
    tr_c = c.sum()
    tr_c2 = (c * c).sum()
    shrink2 = (s2 / (evals + s2)) ** 2
    delta_sq = w2 @ shrink2 + qperp
    delta_c_delta = w2 @ (c * shrink2)
    e_comp = tr_c + delta_sq
    v_comp = 2.0 * tr_c2 + 4.0 * delta_c_delta
    mean = np.einsum("nc,nc->n", omega, e_comp)
    second = np.einsum("nc,nc->n", omega, v_comp + e_comp * e_comp)
    var = np.maximum(second - mean * mean, 0.0)
    if squeeze:
        return float(mean[0]), float(var[0])
    return mean, var


def sample(model: GaussianMixture, n: int, rng_seed) -> np.ndarray:
    """Draw n i.i.d. samples; draws happen in the covariance range so support
    membership is exact up to rounding."""
    if n < 1:
        raise DomainError("sample count must be >= 1")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    idx = rng.choice(model.n_components, size=n, p=model.weights)
    r = model._evals.shape[0]
    noise = rng.standard_normal((n, r))
    return model.means[idx] + (noise * np.sqrt(model._evals)) @ model._evecs.T
