"""Discrete variance-preserving noise schedule.

Tables are indexed t = 0..T.  alpha[t] is the cumulative signal scale
(alpha^2 + sigma^2 = 1), lam[t] = log(alpha^2 / sigma^2) is the log
signal-to-noise ratio.  The per-step slope of lam weights each
timestep's contribution to the preference objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

KINDS = ("linear", "cosine")

# per-step variance ramp of the default linear schedule
_VAR_START = 1e-4
_VAR_END = 2e-2


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    kind: str
    alpha: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)
    lam: np.ndarray = field(repr=False)


def build_schedule(T: int, kind: str = "linear") -> NoiseSchedule:
    if T < 2:
        raise ValueError("T must be >= 2")
    if kind not in KINDS:
        raise ValueError(f"unknown schedule kind: {kind}")

    t = np.arange(T + 1, dtype=np.float64)
    if kind == "linear":
        step_var = _VAR_START + (_VAR_END - _VAR_START) * t / T
        alpha_sq = np.cumprod(1.0 - step_var)
    else:
        s = 0.008
        f = np.cos(((t + 1.0) / (T + 1.0) + s) / (1.0 + s) * math.pi / 2.0) ** 2
        alpha_sq = np.clip(f / f[0] * (1.0 - _VAR_START), 1e-9, 1.0 - _VAR_START)
        alpha_sq = np.minimum.accumulate(alpha_sq)

    alpha = np.sqrt(alpha_sq)
    sigma = np.sqrt(1.0 - alpha_sq)
    lam = np.log(alpha_sq / (1.0 - alpha_sq))
    return NoiseSchedule(T=int(T), kind=kind, alpha=alpha, sigma=sigma, lam=lam)


def forward_noise(s: NoiseSchedule, z0: np.ndarray, t: int, eps: np.ndarray) -> np.ndarray:
    """z_t = alpha_t * z0 + sigma_t * eps."""
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z0.shape != eps.shape:
        raise ValueError("z0/eps shape mismatch")
    _check_t(s, t, low=0)
    return s.alpha[t] * z0 + s.sigma[t] * eps


def log_snr_slope(s: NoiseSchedule, t: int) -> float:
    """Backward difference lam[t] - lam[t-1]; negative since lam decreases."""
    if t == 0:
        raise ValueError("slope undefined at first step")
    _check_t(s, t, low=1)
    return float(s.lam[t] - s.lam[t - 1])


def beta_weight(s: NoiseSchedule, beta: float, t: int) -> float:
    """Time-adaptive preference weight -0.5 * beta * slope; strictly positive."""
    if beta <= 0:
        raise ValueError("beta must be > 0")
    return -0.5 * beta * log_snr_slope(s, t)


def step_signal(s: NoiseSchedule, t: int) -> float:
    """Per-step DDPM signal factor a_t = alpha_t^2 / alpha_{t-1}^2."""
    _check_t(s, t, low=1)
    return float(s.alpha[t] ** 2 / s.alpha[t - 1] ** 2)


def cumulative_signal(s: NoiseSchedule, t: int) -> float:
    """Cumulative product abar_t = alpha_t^2."""
    _check_t(s, t, low=0)
    return float(s.alpha[t] ** 2)


def posterior_variance(s: NoiseSchedule, t: int) -> float:
    """Variance of the forward-process posterior q(z_{t-1} | z_t, z_0)."""
    a_t = step_signal(s, t)
    abar_t = cumulative_signal(s, t)
    abar_prev = cumulative_signal(s, t - 1)
    return (1.0 - a_t) * (1.0 - abar_prev) / (1.0 - abar_t)


def kl_slope(s: NoiseSchedule, t: int) -> float:
    """Exact per-step KL weight (1-a_t)^2 / (var_t * a_t * (1-abar_t)).

    Multiplying half this weight by the squared-error difference of the
    two noise predictions gives the per-step KL difference between the
    equal-covariance Gaussian transitions exactly, with var_t the
    forward-posterior variance.
    """
    a_t = step_signal(s, t)
    abar_t = cumulative_signal(s, t)
    var = posterior_variance(s, t)
    return (1.0 - a_t) ** 2 / (var * a_t * (1.0 - abar_t))


def schedule_table(s: NoiseSchedule, beta: float = 1000.0):
    """Rows (t, alpha, sigma, lambda, slope, beta_t); slope/beta blank at t=0."""
    rows = []
    for t in range(s.T + 1):
        if t == 0:
            rows.append((t, s.alpha[t], s.sigma[t], s.lam[t], None, None))
        else:
            sl = log_snr_slope(s, t)
            rows.append((t, s.alpha[t], s.sigma[t], s.lam[t], sl, beta_weight(s, beta, t)))
    return rows


def _check_t(s: NoiseSchedule, t: int, low: int) -> None:
    if not (low <= t <= s.T):
        raise ValueError(f"timestep {t} outside [{low}, {s.T}]")
