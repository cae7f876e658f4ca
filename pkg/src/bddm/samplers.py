"""Sampling loops driven by blind and non-blind denoisers.

The blind loop starts from pure noise, repeatedly denoises, estimates the
remaining noise level from its own state, and stops once that estimate
crosses the target floor. Euler and exponential-Euler integrators are
supported with time-based or state-adaptive diffusion coefficients.

Injected noise is drawn from a counter-based stream keyed by (seed, step),
so runs with the same seed are bit-identical regardless of batching, and
blind/non-blind pairs can share their noise stream exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .denoisers import DenoiserSpec, blind_denoise, denoise_nonblind, residual_sigma_estimate
from .errors import ConfigurationError
from .schedules import (
    DiffusionSchedule,
    ExplicitSchedule,
    euler_inject_variance,
    exp_euler_increments,
    explicit_sigma_sequence,
)

EULER = "euler"
EXP_EULER = "exp_euler"

TERMINATED_SIGMA_MIN = "sigma_min_reached"
TERMINATED_MAX_STEPS = "max_steps"


@dataclass(frozen=True)
class AdaptiveDiffusion:
    """Closed-loop diffusion: a_k = coef * sigma_hat_k^2, frozen within a step.

    mode "std" uses coef * sigma_hat instead (alternative reading of the
    amplitude-style coefficient choice); "variance" is the default.
    """

    coef: float
    mode: str = "variance"

    def __post_init__(self):
        if self.mode not in ("variance", "std"):
            raise ConfigurationError("adaptive diffusion mode must be 'variance' or 'std'")
        if self.coef < 0.0:
            raise ConfigurationError("adaptive diffusion coefficient must be >= 0")

    def coefficient(self, sigma_hat: np.ndarray) -> np.ndarray:
        if self.mode == "variance":
            return self.coef * sigma_hat**2
        return self.coef * sigma_hat


@dataclass(frozen=True)
class SamplerConfig:
    step_size: float
    sigma_max: float
    sigma_min: float
    integrator: str = EXP_EULER
    diffusion: DiffusionSchedule | AdaptiveDiffusion | None = None
    max_steps: int | None = None
    seed: int = 0
    init_mean: np.ndarray | None = None

    def __post_init__(self):
        if self.step_size <= 0.0:
            raise ConfigurationError("step size must be positive")
        if not 0.0 < self.sigma_min < self.sigma_max:
            raise ConfigurationError("need 0 < sigma_min < sigma_max")
        if self.integrator not in (EULER, EXP_EULER):
            raise ConfigurationError(f"unknown integrator {self.integrator!r}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigurationError("max_steps must be >= 1")

    def resolved_max_steps(self) -> int:
        if self.max_steps is not None:
            return self.max_steps
        coef = 0.0
        diff = self.diffusion
        if isinstance(diff, AdaptiveDiffusion) and diff.mode == "variance":
            coef = min(diff.coef, 0.9)
        elif isinstance(diff, DiffusionSchedule) and diff.kind == "proportional":
            coef = diff.coef
        horizon = math.log(self.sigma_max / self.sigma_min) / ((1.0 - coef) * self.step_size)
        return 10 * math.ceil(horizon)


@dataclass(frozen=True)
class Trajectory:
    """Per-step record of one sampling run."""

    times: np.ndarray  # (K+1,)
    states: np.ndarray  # (K+1, d)
    sigma_hats: np.ndarray  # (K+1,)
    injected: np.ndarray  # (K, d) standard normal draws consumed by updates
    terminated_by: str
    seed: int
    sigma_scheduled: np.ndarray | None = None  # non-blind runs only

    def __post_init__(self):
        k = self.times.shape[0]
        if self.states.shape[0] != k or self.sigma_hats.shape[0] != k:
            raise ConfigurationError("trajectory arrays disagree on length")
        if self.injected.shape[0] != k - 1:
            raise ConfigurationError("need exactly one injected draw per update")
        if np.any(np.diff(self.times) <= 0.0):
            raise ConfigurationError("times must be strictly increasing")
        if np.any(self.sigma_hats < 0.0):
            raise ConfigurationError("sigma estimates must be nonnegative")

    @property
    def n_steps(self) -> int:
        return self.injected.shape[0]

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


def _step_noise(seed: int, step: int, shape) -> np.ndarray:
    """Counter-based stream: independent block per (seed, step), step 0 = init."""
    return np.random.default_rng((int(seed), int(step))).standard_normal(shape)


def _denoiser_dim(denoiser: DenoiserSpec) -> int:
    if denoiser.model is not None:
        return denoiser.model.ambient_dim
    dim = getattr(denoiser.net, "data_dim", None)
    if dim is None:
        raise ConfigurationError("trained network must expose data_dim")
    return int(dim)


def _diffusion_increments(config: SamplerConfig, sigma_hat: np.ndarray, t: float):
    """(decay, inject_var) arrays for the current step, per trajectory row."""
    h = config.step_size
    diff = config.diffusion
    ones = np.ones_like(sigma_hat)
    if diff is None:
        inject = np.zeros_like(sigma_hat)
        decay = math.exp(-h) * ones
        return decay, inject
    if isinstance(diff, AdaptiveDiffusion):
        a_k = diff.coefficient(sigma_hat)
        if config.integrator == EXP_EULER:
            return math.exp(-h) * ones, a_k * (1.0 - math.exp(-2.0 * h))
        return ones, 2.0 * a_k * h
    if config.integrator == EXP_EULER:
        decay, inject = exp_euler_increments(diff, t, h)
        return decay * ones, inject * ones
    return ones, euler_inject_variance(diff, t, h) * ones


def run_blind_batch(
    denoiser: DenoiserSpec,
    config: SamplerConfig,
    n: int,
    record_states: bool = False,
):
    """Run n independent blind trajectories (seeds config.seed + i) in lockstep.

    Returns a dict with terminal states, per-step sigma estimates (NaN padded),
    steps taken, termination labels, and optionally full state histories.
    """
    if not denoiser.blind_capable:
        raise ConfigurationError("denoiser is not blind-capable")
    d = _denoiser_dim(denoiser)
    h = config.step_size
    max_steps = config.resolved_max_steps()
    seeds = config.seed + np.arange(n)
    init_mean = np.zeros(d) if config.init_mean is None else np.asarray(config.init_mean)
    if init_mean.shape != (d,):
        raise ConfigurationError("init_mean dimension mismatch")

    states = init_mean + config.sigma_max * np.stack(
        [_step_noise(s, 0, d) for s in seeds], axis=0
    )
    sigma_hist = np.full((n, max_steps + 1), np.nan)
    active = np.ones(n, dtype=bool)
    steps_taken = np.zeros(n, dtype=np.int64)
    terminated = np.array([TERMINATED_MAX_STEPS] * n, dtype=object)
    history = [states.copy()] if record_states else None

    for k in range(max_steps + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        xhat, sigma_hat = blind_denoise(denoiser, states[idx])
        sigma_hat = np.atleast_1d(sigma_hat)
        sigma_hist[idx, k] = sigma_hat
        done = sigma_hat <= config.sigma_min
        done_rows = idx[done]
        terminated[done_rows] = TERMINATED_SIGMA_MIN
        steps_taken[done_rows] = k
        active[done_rows] = False
        move = idx[~done]
        if k == max_steps:
            steps_taken[active] = k
            break
        if move.size == 0:
            continue
        decay, inject_var = _diffusion_increments(config, sigma_hat[~done], k * h)
        noise = np.stack([_step_noise(seeds[i], k + 1, d) for i in move], axis=0)
        drift_target = xhat[~done]
        if config.integrator == EXP_EULER:
            states[move] = (
                decay[:, None] * states[move]
                + (1.0 - decay)[:, None] * drift_target
                + np.sqrt(inject_var)[:, None] * noise
            )
        else:
            states[move] = (
                states[move]
                + h * (drift_target - states[move])
                + np.sqrt(inject_var)[:, None] * noise
            )
        if record_states:
            history.append(states.copy())

    return {
        "states": states,
        "sigma_hats": sigma_hist,
        "steps": steps_taken,
        "terminated_by": terminated,
        "seeds": seeds,
        "history": np.stack(history, axis=1) if record_states else None,
    }


def run_blind(denoiser: DenoiserSpec, config: SamplerConfig) -> Trajectory:
    """Single blind trajectory with full per-step recording."""
    if not denoiser.blind_capable:
        raise ConfigurationError("denoiser is not blind-capable")
    d = _denoiser_dim(denoiser)
    h = config.step_size
    max_steps = config.resolved_max_steps()
    seed = config.seed
    init_mean = np.zeros(d) if config.init_mean is None else np.asarray(config.init_mean)
    if init_mean.shape != (d,):
        raise ConfigurationError("init_mean dimension mismatch")

    x = init_mean + config.sigma_max * _step_noise(seed, 0, d)
    states, sigma_hats, injected = [x.copy()], [], []
    terminated = TERMINATED_MAX_STEPS
    for k in range(max_steps + 1):
        xhat, sigma_hat = blind_denoise(denoiser, x)
        sigma_hat = float(sigma_hat)
        sigma_hats.append(sigma_hat)
        if sigma_hat <= config.sigma_min:
            terminated = TERMINATED_SIGMA_MIN
            break
        if k == max_steps:
            break
        decay, inject_var = _diffusion_increments(config, np.array([sigma_hat]), k * h)
        noise = _step_noise(seed, k + 1, d)
        injected.append(noise)
        if config.integrator == EXP_EULER:
            x = decay[0] * x + (1.0 - decay[0]) * xhat + math.sqrt(inject_var[0]) * noise
        else:
            x = x + h * (xhat - x) + math.sqrt(inject_var[0]) * noise
        states.append(x.copy())

    k_rec = len(states)
    return Trajectory(
        times=h * np.arange(k_rec),
        states=np.asarray(states),
        sigma_hats=np.asarray(sigma_hats[:k_rec]),
        injected=np.asarray(injected[: k_rec - 1]).reshape(k_rec - 1, d),
        terminated_by=terminated,
        seed=seed,
    )


def run_nonblind_ve(
    denoiser: DenoiserSpec,
    schedule: ExplicitSchedule | np.ndarray,
    config: SamplerConfig,
) -> Trajectory:
    """Variance-exploding reference sampler on an explicit noise ladder.

    Each step moves along the score at the scheduled level and injects the
    variance difference; the residual-based noise estimate is recorded next
    to the scheduled level for mismatch measurements.
    """
    if not denoiser.supports_sigma_conditioning:
        raise ConfigurationError("denoiser does not accept a noise-level argument")
    sigmas = (
        explicit_sigma_sequence(schedule)
        if isinstance(schedule, ExplicitSchedule)
        else np.asarray(schedule, dtype=np.float64)
    )
    if sigmas.ndim != 1 or sigmas.size < 2:
        raise ConfigurationError("need at least two scheduled noise levels")
    d = _denoiser_dim(denoiser)
    seed = config.seed
    init_mean = np.zeros(d) if config.init_mean is None else np.asarray(config.init_mean)
    if init_mean.shape != (d,):
        raise ConfigurationError("init_mean dimension mismatch")

    x = init_mean + sigmas[0] * _step_noise(seed, 0, d)
    states, sigma_resid, injected = [x.copy()], [], []
    n_steps = sigmas.size - 1
    for i in range(n_steps):
        denoised = denoise_nonblind(denoiser, x, sigmas[i])
        sigma_resid.append(float(residual_sigma_estimate(denoised, x, d)))
        delta = sigmas[i] ** 2 - sigmas[i + 1] ** 2
        score = (denoised - x) / sigmas[i] ** 2
        noise = _step_noise(seed, i + 1, d)
        injected.append(noise)
        x = x + delta * score + math.sqrt(max(delta, 0.0)) * noise
        states.append(x.copy())
    denoised = denoise_nonblind(denoiser, x, sigmas[-1])
    sigma_resid.append(float(residual_sigma_estimate(denoised, x, d)))

    return Trajectory(
        times=np.arange(sigmas.size, dtype=np.float64),
        states=np.asarray(states),
        sigma_hats=np.asarray(sigma_resid),
        injected=np.asarray(injected).reshape(n_steps, d),
        terminated_by=TERMINATED_SIGMA_MIN,
        seed=seed,
        sigma_scheduled=sigmas.copy(),
    )


def matched_pair(
    blind_denoiser: DenoiserSpec,
    blind_config: SamplerConfig,
    nonblind_denoiser: DenoiserSpec,
    nonblind_schedule: ExplicitSchedule | np.ndarray,
    shared_seed: int,
    nonblind_config: SamplerConfig | None = None,
):
    """Blind and non-blind runs consuming the identical noise stream.

    Both trajectories share the initialization draw and the per-step injected
    standard normals; the longer run simply continues the stream.
    """
    nonblind_config = nonblind_config if nonblind_config is not None else blind_config
    d_blind = _denoiser_dim(blind_denoiser)
    d_non = _denoiser_dim(nonblind_denoiser)
    if d_blind != d_non:
        raise ConfigurationError("matched pair requires equal dimensions")
    sig0 = (
        nonblind_schedule.sigma_max
        if isinstance(nonblind_schedule, ExplicitSchedule)
        else float(np.asarray(nonblind_schedule)[0])
    )
    if not math.isclose(sig0, blind_config.sigma_max, rel_tol=1e-12):
        raise ConfigurationError("matched pair requires equal starting noise levels")
    blind_traj = run_blind(blind_denoiser, replace(blind_config, seed=shared_seed))
    nonblind_traj = run_nonblind_ve(
        nonblind_denoiser, nonblind_schedule, replace(nonblind_config, seed=shared_seed)
    )
    return blind_traj, nonblind_traj


def trajectory_to_csv(traj: Trajectory, path) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        has_sched = traj.sigma_scheduled is not None
        header = ["step", "t", "sigma_hat"] + (["sigma_scheduled"] if has_sched else [])
        writer.writerow(header + ["state_norm"])
        for k in range(traj.times.size):
            row = [str(k), repr(float(traj.times[k])), repr(float(traj.sigma_hats[k]))]
            if has_sched:
                row.append(repr(float(traj.sigma_scheduled[k])))
            row.append(repr(float(np.linalg.norm(traj.states[k]))))
            writer.writerow(row)


def dump_states(traj: Trajectory, path_bin, path_meta) -> None:
    """Row-major little-endian float64 state dump plus a JSON sidecar."""
    arr = np.ascontiguousarray(traj.states, dtype="<f8")
    with open(path_bin, "wb") as fh:
        fh.write(arr.tobytes())
    meta = {
        "shape": list(arr.shape),
        "dtype": "float64",
        "byte_order": "little",
        "layout": "row_major",
        "seed": int(traj.seed),
        "terminated_by": traj.terminated_by,
    }
    with open(path_meta, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
