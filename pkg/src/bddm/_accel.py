"""Hot numeric kernels, JIT-compiled when numba is available.

Every kernel has a pure-numpy twin with identical semantics. The active
backend is chosen once at import time: set ``BDDM_DISABLE_NUMBA=1`` to force
the numpy path (useful for debugging and for the backend benchmark in
``benchmarks/bench_kernels.py``).
"""

from __future__ import annotations

import math
import os

import numpy as np

_LOG_2PI = math.log(2.0 * math.pi)


def _numba_requested() -> bool:
    flag = os.environ.get("BDDM_DISABLE_NUMBA", "")
    return flag in ("", "0")


if _numba_requested():
    try:
        from numba import njit

        _HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a hard dependency
        _HAVE_NUMBA = False
else:
    _HAVE_NUMBA = False


def using_numba() -> bool:
    """True when the JIT backend is active."""
    return _HAVE_NUMBA


# ---------------------------------------------------------------------------
# mixture log-density sweep over a noise-level grid
# ---------------------------------------------------------------------------

def _grid_comp_loglik_np(w2, qperp, evals, log_weights, sigmas, d):
    n, n_comp = qperp.shape
    m = sigmas.shape[0]
    r = evals.shape[0]
    out = np.empty((n, m, n_comp))
    for j in range(m):
        s2 = sigmas[j] * sigmas[j]
        logdet = float(np.sum(np.log(evals + s2))) + (d - r) * math.log(s2)
        # quadratic form split into the covariance eigenbasis and its complement
        quad = w2 @ (1.0 / (evals + s2)) + qperp / s2
        out[:, j, :] = log_weights - 0.5 * (d * _LOG_2PI + logdet + quad)
    return out


def _grid_comp_loglik_jit(w2, qperp, evals, log_weights, sigmas, d):
    n, n_comp = qperp.shape
    m = sigmas.shape[0]
    r = evals.shape[0]
    out = np.empty((n, m, n_comp))
    for j in range(m):
        s2 = sigmas[j] * sigmas[j]
        logdet = (d - r) * np.log(s2)
        for q in range(r):
            logdet += np.log(evals[q] + s2)
        base = -0.5 * (d * _LOG_2PI + logdet)
        for i in range(n):
            for c in range(n_comp):
                quad = qperp[i, c] / s2
                for q in range(r):
                    quad += w2[i, c, q] / (evals[q] + s2)
                out[i, j, c] = log_weights[c] + base - 0.5 * quad
    return out


# ---------------------------------------------------------------------------
# forward auction for the assignment problem (exact transport on point sets)
# ---------------------------------------------------------------------------

def _auction_np(benefit, eps_stop):
    n = benefit.shape[0]
    owner = np.full(n, -1, dtype=np.int64)
    assigned = np.full(n, -1, dtype=np.int64)
    prices = np.zeros(n)
    spread = float(benefit.max() - benefit.min()) if n > 1 else 1.0
    eps = max(spread / 4.0, eps_stop)
    while True:
        assigned[:] = -1
        owner[:] = -1
        n_free = n
        while n_free > 0:
            for i in range(n):
                if assigned[i] >= 0:
                    continue
                values = benefit[i] - prices
                j = int(np.argmax(values))
                best = values[j]
                values[j] = -np.inf
                second = values.max() if n > 1 else best
                prices[j] += best - second + eps
                prev = owner[j]
                if prev >= 0:
                    assigned[prev] = -1
                    n_free += 1
                owner[j] = i
                assigned[i] = j
                n_free -= 1
        if eps <= eps_stop:
            return assigned
        eps = max(eps / 5.0, eps_stop)


def _auction_jit(benefit, eps_stop):
    n = benefit.shape[0]
    owner = np.full(n, -1, dtype=np.int64)
    assigned = np.full(n, -1, dtype=np.int64)
    prices = np.zeros(n)
    spread = benefit.max() - benefit.min() if n > 1 else 1.0
    eps = max(spread / 4.0, eps_stop)
    while True:
        for j in range(n):
            owner[j] = -1
            assigned[j] = -1
        n_free = n
        while n_free > 0:
            for i in range(n):
                if assigned[i] >= 0:
                    continue
                best = -np.inf
                second = -np.inf
                best_j = 0
                for j in range(n):
                    v = benefit[i, j] - prices[j]
                    if v > best:
                        second = best
                        best = v
                        best_j = j
                    elif v > second:
                        second = v
                if n == 1:
                    second = best
                prices[best_j] += best - second + eps
                prev = owner[best_j]
                if prev >= 0:
                    assigned[prev] = -1
                    n_free += 1
                owner[best_j] = i
                assigned[i] = best_j
                n_free -= 1
        if eps <= eps_stop:
            return assigned
        eps = max(eps / 5.0, eps_stop)


if _HAVE_NUMBA:
    grid_comp_loglik = njit(cache=True)(_grid_comp_loglik_jit)
    _auction = njit(cache=True)(_auction_jit)
else:
    grid_comp_loglik = _grid_comp_loglik_np
    _auction = _auction_np


def auction_assignment(cost: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Minimum-cost perfect matching of rows to columns of a square matrix.

    Forward auction with epsilon scaling; the returned assignment has total
    cost within ``n * tol`` of the optimum.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    n = cost.shape[0]
    if cost.ndim != 2 or cost.shape[1] != n:
        raise ValueError("cost matrix must be square")
    if n == 0:
        return np.empty(0, dtype=np.int64)
    return _auction(-cost, float(tol))
