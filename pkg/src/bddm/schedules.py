"""Diffusion-coefficient schedules and the noise level they imply.

A diffusion schedule (a_t) drives the sampling dynamics; the corresponding
noise level obeys sigma_t^2 = sigma_0^2 e^{-2t} + 2 int_0^t a_s e^{-2(t-s)} ds,
equivalently the ODE sigma sigma' = -sigma^2 + a_t. Zero, constant, and
proportional (a_t = coef * sigma_t^2) schedules have closed forms; tabulated
schedules fall back to adaptive Simpson quadrature. Explicit noise-level
ladders for the non-blind reference sampler live here as well.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError

_SIMPSON_TOL = 1e-10


@dataclass(frozen=True)
class DiffusionSchedule:
    """Time-indexed diffusion coefficient a_t with initial noise level sigma0.

    kind: "zero", "constant" (value), "proportional" (a_t = coef * sigma_t^2
    with coef in (0,1)), or "tabulated" (piecewise-linear between nodes).
    """

    kind: str
    sigma0: float
    value: float = 0.0
    coef: float = 0.0
    times: np.ndarray | None = None
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.sigma0 <= 0.0:
            raise ConfigurationError("sigma0 must be positive")
        if self.kind == "zero":
            pass
        elif self.kind == "constant":
            if self.value < 0.0:
                raise ConfigurationError("constant coefficient must be >= 0")
        elif self.kind == "proportional":
            if not 0.0 < self.coef < 1.0:
                raise ConfigurationError("proportional coefficient must lie in (0, 1)")
        elif self.kind == "tabulated":
            times = np.asarray(self.times, dtype=np.float64)
            values = np.asarray(self.values, dtype=np.float64)
            if times.ndim != 1 or times.shape != values.shape or times.size < 2:
                raise ConfigurationError("tabulated schedule needs matching 1-d nodes")
            if np.any(np.diff(times) <= 0.0):
                raise ConfigurationError("tabulated nodes must be strictly increasing")
            if times[0] > 0.0:
                raise ConfigurationError("tabulated nodes must start at t = 0")
            if np.any(values < 0.0):
                raise ConfigurationError("diffusion coefficient must be >= 0")
            times.setflags(write=False)
            values.setflags(write=False)
            object.__setattr__(self, "times", times)
            object.__setattr__(self, "values", values)
        else:
            raise ConfigurationError(f"unknown schedule kind {self.kind!r}")

    @classmethod
    def zero(cls, sigma0: float) -> "DiffusionSchedule":
        return cls("zero", sigma0)

    @classmethod
    def constant(cls, a: float, sigma0: float) -> "DiffusionSchedule":
        return cls("constant", sigma0, value=a)

    @classmethod
    def proportional(cls, coef: float, sigma0: float) -> "DiffusionSchedule":
        return cls("proportional", sigma0, coef=coef)

    @classmethod
    def tabulated(cls, times, values, sigma0: float) -> "DiffusionSchedule":
        return cls("tabulated", sigma0, times=np.asarray(times), values=np.asarray(values))

    def coefficient(self, t):
        """a_t (vectorized in t; tabulated kinds clamp beyond the last node)."""
        tt = np.asarray(t, dtype=np.float64)
        if self.kind == "zero":
            out = np.zeros_like(tt)
        elif self.kind == "constant":
            out = np.full_like(tt, self.value)
        elif self.kind == "proportional":
            out = self.coef * implicit_sigma(self, tt) ** 2
        else:
            out = np.interp(tt, self.times, self.values)
        return float(out) if np.isscalar(t) else out


def _adaptive_simpson(f, a, b, tol):
    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def recurse(a, fa, b, fb, m, fm, whole, tol, depth):
        lm = 0.5 * (a + m)
        rm = 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        if depth > 48 or abs(left + right - whole) <= 15.0 * tol:
            return left + right + (left + right - whole) / 15.0
        return recurse(a, fa, m, fm, lm, flm, left, tol / 2.0, depth + 1) + recurse(
            m, fm, b, fb, rm, frm, right, tol / 2.0, depth + 1
        )

    return recurse(a, fa, b, fb, m, fm, whole, tol, 0)


def _tabulated_kernel_integral(schedule: DiffusionSchedule, t0: float, t1: float) -> float:
    """2 int_{t0}^{t1} a_s e^{-2(t1 - s)} ds by per-segment adaptive Simpson."""
    if t1 <= t0:
        return 0.0
    knots = schedule.times[(schedule.times > t0) & (schedule.times < t1)]
    edges = np.concatenate([[t0], knots, [t1]])
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        total += _adaptive_simpson(
            lambda s: 2.0 * schedule.coefficient(s) * math.exp(-2.0 * (t1 - s)),
            float(lo),
            float(hi),
            _SIMPSON_TOL,
        )
    return total


def implicit_sigma(schedule: DiffusionSchedule, t):
    """Noise level sigma_t implied by the schedule at time t (vectorized)."""
    tt = np.asarray(t, dtype=np.float64)
    if np.any(tt < 0.0):
        raise DomainError("time must be nonnegative")
    s0sq = schedule.sigma0**2
    if schedule.kind == "zero":
        out = np.sqrt(s0sq * np.exp(-2.0 * tt))
    elif schedule.kind == "constant":
        decay = np.exp(-2.0 * tt)
        out = np.sqrt(s0sq * decay + schedule.value * (1.0 - decay))
    elif schedule.kind == "proportional":
        out = schedule.sigma0 * np.exp(-(1.0 - schedule.coef) * tt)
    else:
        flat = np.atleast_1d(tt).ravel()
        vals = np.array(
            [s0sq * math.exp(-2.0 * ti) + _tabulated_kernel_integral(schedule, 0.0, ti) for ti in flat]
        )
        out = np.sqrt(vals).reshape(np.shape(tt))
    return float(out) if np.isscalar(t) else out


def verify_ode(schedule: DiffusionSchedule, t_max: float, n_check: int, fd_step: float = 1e-5):
    """Max residual of sigma sigma' + sigma^2 - a_t on an interior time grid."""
    if n_check < 2:
        raise ConfigurationError("need at least two checkpoints")
    ts = np.linspace(fd_step * 2.0, t_max, n_check)
    sig = implicit_sigma(schedule, ts)
    sig_dot = (implicit_sigma(schedule, ts + fd_step) - implicit_sigma(schedule, ts - fd_step)) / (
        2.0 * fd_step
    )
    resid = sig * sig_dot + sig**2 - schedule.coefficient(ts)
    return float(np.abs(resid).max())


def exp_euler_increments(schedule: DiffusionSchedule, t_start: float, h: float):
    """One-step statistics of the exponential integrator on [t, t+h].

    Returns (decay, inject_var): the state is contracted by e^{-h} toward the
    frozen drift target, and the injected Gaussian noise has per-coordinate
    variance 2 int_t^{t+h} a_s e^{-2(t+h-s)} ds.
    """
    if h <= 0.0:
        raise DomainError("step size must be positive")
    decay = math.exp(-h)
    t_end = t_start + h
    if schedule.kind == "zero":
        inject = 0.0
    elif schedule.kind == "constant":
        inject = schedule.value * (1.0 - math.exp(-2.0 * h))
    elif schedule.kind == "proportional":
        a = schedule.coef
        s0sq = schedule.sigma0**2
        inject = s0sq * (
            math.exp(-2.0 * (1.0 - a) * t_end) - math.exp(-2.0 * t_end + 2.0 * a * t_start)
        )
    else:
        inject = _tabulated_kernel_integral(schedule, t_start, t_end)
    return decay, inject


def euler_inject_variance(schedule: DiffusionSchedule, t_start: float, h: float) -> float:
    """Per-coordinate variance 2 int_t^{t+h} a_s ds of the Euler noise term."""
    if h <= 0.0:
        raise DomainError("step size must be positive")
    t_end = t_start + h
    if schedule.kind == "zero":
        return 0.0
    if schedule.kind == "constant":
        return 2.0 * schedule.value * h
    if schedule.kind == "proportional":
        a = schedule.coef
        rate = 2.0 * (1.0 - a)
        s0sq = schedule.sigma0**2
        return (2.0 * a * s0sq / rate) * (math.exp(-rate * t_start) - math.exp(-rate * t_end))
    knots = schedule.times[(schedule.times > t_start) & (schedule.times < t_end)]
    edges = np.concatenate([[t_start], knots, [t_end]])
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        total += _adaptive_simpson(
            lambda s: 2.0 * schedule.coefficient(s), float(lo), float(hi), _SIMPSON_TOL
        )
    return total


@dataclass(frozen=True)
class ExplicitSchedule:
    """Explicit noise-level ladder for the non-blind reference sampler."""

    kind: str  # "log_sigma" or "power_law"
    n_steps: int
    sigma_min: float
    sigma_max: float
    rho: float = 7.0

    def __post_init__(self):
        if self.kind not in ("log_sigma", "power_law"):
            raise ConfigurationError(f"unknown explicit schedule kind {self.kind!r}")
        if not 0.0 < self.sigma_min < self.sigma_max:
            raise ConfigurationError("need 0 < sigma_min < sigma_max")
        if self.n_steps < 1:
            raise ConfigurationError("need at least one step")
        if self.kind == "power_law" and self.rho <= 0.0:
            raise ConfigurationError("power_law exponent must be positive")


def explicit_sigma_sequence(schedule: ExplicitSchedule) -> np.ndarray:
    """Decreasing noise levels sigma_0 ... sigma_N with the exact endpoints."""
    n = schedule.n_steps
    i = np.arange(n + 1) / n
    if schedule.kind == "log_sigma":
        seq = schedule.sigma_max * (schedule.sigma_min / schedule.sigma_max) ** i
    else:
        rho = schedule.rho
        seq = (
            schedule.sigma_max ** (1.0 / rho)
            + i * (schedule.sigma_min ** (1.0 / rho) - schedule.sigma_max ** (1.0 / rho))
        ) ** rho
    seq[0] = schedule.sigma_max
    seq[-1] = schedule.sigma_min
    return seq


def schedule_to_csv(schedule: DiffusionSchedule, t_grid, path) -> None:
    """Dump (t, sigma_t, a_t) rows for plotting."""
    ts = np.asarray(t_grid, dtype=np.float64)
    sig = implicit_sigma(schedule, ts)
    coefs = schedule.coefficient(ts)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "sigma_t", "a_t"])
        for row in zip(ts, sig, coefs):
            writer.writerow([repr(float(v)) for v in row])
