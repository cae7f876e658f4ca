"""Dense feedforward denoiser with hand-rolled backpropagation and AdamW.

The network predicts the clean sample from a noisy input (optionally with
log sigma appended as an extra input coordinate, which turns it into the
noise-conditioned baseline). Training draws fresh synthetic batches from the
data model each step; batches come from a counter-based stream keyed by
(seed, step), so runs are reproducible and resumable bit-for-bit.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, DomainError, NumericalError
from .mixture import GaussianMixture, sample
from .noise_posterior import NoisePrior

_MAGIC = b"BDDMNET1"


@dataclass(frozen=True)
class InputStats:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def identity(cls, d: int) -> "InputStats":
        return cls(np.zeros(d), np.ones(d))

    @classmethod
    def from_data(cls, points: np.ndarray, floor_frac: float = 0.5) -> "InputStats":
        """Per-coordinate statistics with the scale floored at a fraction of
        the largest coordinate scale (degenerate coordinates stay usable)."""
        mean = points.mean(axis=0)
        std = points.std(axis=0)
        floor = max(float(std.max()) * floor_frac, 1e-6)
        return cls(mean, np.maximum(std, floor))


@dataclass(frozen=True)
class DenseNet:
    """Rectifier MLP: weights[i] has shape (fan_in, fan_out)."""

    weights: tuple
    biases: tuple
    stats: InputStats
    conditioned: bool = False

    @property
    def data_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def layer_dims(self) -> tuple:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def __call__(self, y, sigma=None):
        return forward(self, y, sigma)

    @classmethod
    def create(cls, layer_dims, seed, stats: InputStats | None = None, conditioned: bool = False):
        """Uniform init scaled by 1/sqrt(fan_in) on every layer."""
        dims = list(layer_dims)
        if len(dims) < 2:
            raise ConfigurationError("need at least input and output dimensions")
        data_dim = dims[-1]
        if conditioned and dims[0] != data_dim + 1:
            raise ConfigurationError("conditioned nets take data_dim + 1 inputs")
        if not conditioned and dims[0] != data_dim:
            raise ConfigurationError("blind nets take data_dim inputs")
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        stats = stats if stats is not None else InputStats.identity(data_dim)
        return cls(tuple(weights), tuple(biases), stats, conditioned)


def mlp_dims(d: int, width: int, depth: int, conditioned: bool) -> list:
    """Layer sizes for a depth-hidden-layer MLP on d-dimensional data."""
    return [d + (1 if conditioned else 0)] + [width] * depth + [d]


def _forward_pass(net: DenseNet, y: np.ndarray, sigma):
    """Returns (normalized inputs, per-layer activations, output)."""
    h = (y - net.stats.mean) / net.stats.scale
    if net.conditioned:
        if sigma is None:
            raise DomainError("conditioned network needs the noise level")
        sig = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (h.shape[0],))
        h = np.concatenate([h, np.log(sig)[:, None]], axis=1)
    elif sigma is not None:
        raise DomainError("blind network must not receive the noise level")
    acts = [h]
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = acts[-1] @ w + b
        acts.append(np.maximum(z, 0.0) if i < len(net.weights) - 1 else z)
    return acts


def forward(net: DenseNet, y, sigma=None) -> np.ndarray:
    """Denoised prediction in data units."""
    arr = np.asarray(y, dtype=np.float64)
    squeeze = arr.ndim == 1
    batch = arr[None, :] if squeeze else arr
    if not np.all(np.isfinite(batch)):
        raise DomainError("network input contains non-finite entries")
    if batch.shape[1] != net.data_dim:
        raise DomainError(f"expected inputs of dimension {net.data_dim}")
    acts = _forward_pass(net, batch, sigma)
    out = acts[-1] * net.stats.scale + net.stats.mean
    return out[0] if squeeze else out


def loss_and_grads(net: DenseNet, y_batch: np.ndarray, x_batch: np.ndarray, sigma=None):
    """Mean squared denoising loss and gradients for every parameter block.

    Loss is mean over the batch of the squared error norm in data units.
    """
    n = y_batch.shape[0]
    acts = _forward_pass(net, y_batch, sigma)
    pred = acts[-1] * net.stats.scale + net.stats.mean
    resid = pred - x_batch
    loss = float(np.einsum("ij,ij->", resid, resid)) / n
    # d loss / d output-layer activation
    delta = (2.0 / n) * resid * net.stats.scale
    grads_w = [None] * len(net.weights)
    grads_b = [None] * len(net.biases)
    for i in range(len(net.weights) - 1, -1, -1):
        grads_w[i] = acts[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ net.weights[i].T) * (acts[i] > 0.0)
    return loss, grads_w, grads_b


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 512
    n_steps: int = 20_000
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    prior: NoisePrior = field(default_factory=lambda: NoisePrior.log_uniform(0.01, 10.0))
    seed: int = 0
    log_every: int = 100
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if min(self.batch_size, self.n_steps, self.log_every) < 1:
            raise ConfigurationError("batch size, step count, and log interval must be >= 1")
        if self.learning_rate <= 0.0 or self.weight_decay < 0.0:
            raise ConfigurationError("bad optimizer hyperparameters")


@dataclass
class AdamState:
    m_w: list
    v_w: list
    m_b: list
    v_b: list
    step: int = 0

    @classmethod
    def fresh(cls, net: DenseNet) -> "AdamState":
        return cls(
            [np.zeros_like(w) for w in net.weights],
            [np.zeros_like(w) for w in net.weights],
            [np.zeros_like(b) for b in net.biases],
            [np.zeros_like(b) for b in net.biases],
        )


def _adamw_update(net: DenseNet, state: AdamState, grads_w, grads_b, cfg: TrainConfig) -> DenseNet:
    state.step += 1
    b1, b2, eps, lr = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.learning_rate
    corr1 = 1.0 - b1**state.step
    corr2 = 1.0 - b2**state.step
    new_w, new_b = [], []
    for i, w in enumerate(net.weights):
        state.m_w[i] = b1 * state.m_w[i] + (1.0 - b1) * grads_w[i]
        state.v_w[i] = b2 * state.v_w[i] + (1.0 - b2) * grads_w[i] ** 2
        step_dir = (state.m_w[i] / corr1) / (np.sqrt(state.v_w[i] / corr2) + eps)
        new_w.append(w - lr * step_dir - lr * cfg.weight_decay * w)
    for i, b in enumerate(net.biases):
        state.m_b[i] = b1 * state.m_b[i] + (1.0 - b1) * grads_b[i]
        state.v_b[i] = b2 * state.v_b[i] + (1.0 - b2) * grads_b[i] ** 2
        step_dir = (state.m_b[i] / corr1) / (np.sqrt(state.v_b[i] / corr2) + eps)
        new_b.append(b - lr * step_dir)  # decay applies to weights only
    return replace(net, weights=tuple(new_w), biases=tuple(new_b))


def train_blind(model: GaussianMixture, net: DenseNet, config: TrainConfig, state: AdamState | None = None):
    """Denoising training loop: x ~ model, sigma ~ prior, y = x + sigma z.

    Conditioned nets receive the true sigma (non-blind baseline); blind nets
    see only y. Returns (net, state, history) with history rows
    (step, loss) logged every config.log_every steps.
    """
    if net.data_dim != model.ambient_dim:
        raise ConfigurationError("network and model dimensions differ")
    state = state if state is not None else AdamState.fresh(net)
    history = []
    start = state.step
    for step in range(start, config.n_steps):
        rng = np.random.default_rng((config.seed, step))
        x = sample(model, config.batch_size, rng)
        sig = config.prior.sample(config.batch_size, rng)
        y = x + sig[:, None] * rng.standard_normal(x.shape)
        loss, gw, gb = loss_and_grads(net, y, x, sig if net.conditioned else None)
        if not np.isfinite(loss):
            raise NumericalError(f"training diverged at step {step}: loss={loss}")
        net = _adamw_update(net, state, gw, gb, config)
        if step % config.log_every == 0 or step == config.n_steps - 1:
            history.append((step, loss))
    return net, state, history


def denoise_mse(net_or_fn, model: GaussianMixture, sigma: float, n: int, seed: int, pass_sigma=False):
    """Monte-Carlo denoising MSE at one noise level."""
    rng = np.random.default_rng(seed)
    x = sample(model, n, rng)
    y = x + sigma * rng.standard_normal(x.shape)
    pred = net_or_fn(y, sigma) if pass_sigma else net_or_fn(y)
    err = pred - x
    return float(np.einsum("ij,ij->", err, err)) / n


def gaussian_bayes_mse(model: GaussianMixture, sigma: float) -> float:
    """tr(sigma^2 Sigma0 (Sigma0 + sigma^2 I)^-1): exact for one component."""
    if model.n_components != 1:
        raise DomainError("closed form requires a single component")
    evals = model.cov_evals
    return float(np.sum(sigma**2 * evals / (evals + sigma**2)))


def excess_risk(net_or_fn, model: GaussianMixture, prior: NoisePrior, n_mc: int, seed: int = 0, oracle=None):
    """Mean squared gap to the optimal blind denoiser over (x, sigma, z) draws.

    Returns (estimate, standard_error). ``oracle`` defaults to the
    posterior-averaged analytic blind denoiser for the same model and prior.
    """
    from .denoisers import DenoiserSpec, denoise_blind_posterior

    if oracle is None:
        spec = DenoiserSpec.analytic_blind_posterior(model, prior)
        oracle = lambda y: denoise_blind_posterior(spec, y)
    rng = np.random.default_rng(seed)
    x = sample(model, n_mc, rng)
    sig = prior.sample(n_mc, rng)
    y = x + sig[:, None] * rng.standard_normal(x.shape)
    gap = net_or_fn(y) - oracle(y)
    sq = np.einsum("ij,ij->i", gap, gap)
    return float(sq.mean()), float(sq.std(ddof=1) / np.sqrt(n_mc))


# ---------------------------------------------------------------------------
# serialization: JSON header + little-endian float64 parameter blob
# ---------------------------------------------------------------------------

def _blob_arrays(net: DenseNet, state: AdamState | None):
    arrays = list(net.weights) + list(net.biases)
    if state is not None:
        arrays += state.m_w + state.v_w + state.m_b + state.v_b
    return arrays


def save_bundle(path, net: DenseNet, state: AdamState | None = None, config: TrainConfig | None = None, extra: dict | None = None) -> None:
    header = {
        "layer_dims": list(net.layer_dims),
        "conditioned": net.conditioned,
        "stats_mean": net.stats.mean.tolist(),
        "stats_scale": net.stats.scale.tolist(),
        "has_optimizer_state": state is not None,
        "optimizer_step": 0 if state is None else state.step,
        "extra": extra or {},
    }
    if config is not None:
        header["train_config"] = {
            "batch_size": config.batch_size,
            "n_steps": config.n_steps,
            "learning_rate": config.learning_rate,
            "weight_decay": config.weight_decay,
            "seed": config.seed,
            "prior_alpha": config.prior.alpha,
            "prior_sigma_min": config.prior.sigma_min,
            "prior_sigma_max": config.prior.sigma_max,
        }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for arr in _blob_arrays(net, state):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_bundle(path):
    """Returns (net, state_or_None, header_dict)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ConfigurationError("not a network bundle")
        (head_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(head_len).decode("utf-8"))
        blob = fh.read()
    dims = header["layer_dims"]
    shapes_w = [(a, b) for a, b in zip(dims[:-1], dims[1:])]
    shapes_b = [(b,) for b in dims[1:]]
    reader = io.BytesIO(blob)

    def take(shape):
        size = int(np.prod(shape))
        arr = np.frombuffer(reader.read(size * 8), dtype="<f8").reshape(shape)
        return arr.astype(np.float64)

    weights = tuple(take(s) for s in shapes_w)
    biases = tuple(take(s) for s in shapes_b)
    stats = InputStats(np.asarray(header["stats_mean"]), np.asarray(header["stats_scale"]))
    net = DenseNet(weights, biases, stats, bool(header["conditioned"]))
    state = None
    if header.get("has_optimizer_state"):
        state = AdamState(
            [take(s) for s in shapes_w],
            [take(s) for s in shapes_w],
            [take(s) for s in shapes_b],
            [take(s) for s in shapes_b],
            step=int(header.get("optimizer_step", 0)),
        )
    return net, state, header
