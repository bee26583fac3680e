"""Log-SNR noise schedules, the variance-preserving alpha/sigma map and loss weights.

Everything here accepts python floats, numpy arrays or torch tensors and returns
the same kind. Time runs from ``t=0`` (cleanest, ``lambda_max``) to ``t=1``
(noisiest, ``lambda_min``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy.special import expit

FAMILIES = ("linear", "cosine")


def _is_torch(x):
    return isinstance(x, torch.Tensor)


def _sigmoid(x):
    if _is_torch(x):
        return torch.sigmoid(x)
    return expit(x)


def _check_finite(x, what):
    if _is_torch(x):
        ok = bool(torch.isfinite(x).all())
    else:
        ok = bool(np.all(np.isfinite(x)))
    if not ok:
        raise ValueError(f"{what} must be finite")


def _check_time(t):
    if _is_torch(t):
        bad = bool(((t < 0) | (t > 1) | ~torch.isfinite(t)).any())
    else:
        arr = np.asarray(t, dtype=np.float64)
        bad = bool(np.any((arr < 0) | (arr > 1) | ~np.isfinite(arr)))
    if bad:
        raise ValueError("t must lie in [0, 1]")


@dataclass(frozen=True)
class NoiseSchedule:
    lambda_max: float = 5.0
    lambda_min: float = -15.0
    shape: str = "linear"

    def __post_init__(self):
        if not (math.isfinite(self.lambda_max) and math.isfinite(self.lambda_min)):
            raise ValueError("schedule endpoints must be finite")
        if not self.lambda_max > self.lambda_min:
            raise ValueError(
                f"lambda_max ({self.lambda_max}) must exceed lambda_min ({self.lambda_min})")
        if self.shape not in FAMILIES:
            raise ValueError(f"unknown schedule family {self.shape!r}; expected one of {FAMILIES}")

    @property
    def span(self):
        return self.lambda_max - self.lambda_min

    def _cosine_bounds(self):
        a = math.atan(math.exp(-0.5 * self.lambda_max))
        b = math.atan(math.exp(-0.5 * self.lambda_min))
        return a, b


@dataclass(frozen=True)
class AlphaSigma:
    alpha: object
    sigma: object


@dataclass(frozen=True)
class WeightingConfig:
    """Decoder eps-MSE weighting ``loss_factor * sigmoid(bias - lambda)``."""

    bias: float = 0.0
    loss_factor: float = 1.5

    def __post_init__(self):
        if not self.loss_factor > 0:
            raise ValueError("loss_factor must be positive")
        if math.isnan(self.bias):
            raise ValueError("bias must not be NaN")


def logsnr(schedule: NoiseSchedule, t):
    _check_time(t)
    lo, hi = schedule.lambda_min, schedule.lambda_max
    if schedule.shape == "linear":
        return hi + t * (lo - hi)
    a, b = schedule._cosine_bounds()
    if _is_torch(t):
        lam = -2.0 * torch.log(torch.tan(a + t * (b - a)))
        lam = torch.where(t == 0, torch.full_like(lam, hi), lam)
        return torch.where(t == 1, torch.full_like(lam, lo), lam)
    tt = np.asarray(t, dtype=np.float64)
    lam = -2.0 * np.log(np.tan(a + tt * (b - a)))
    lam = np.where(tt == 0, hi, np.where(tt == 1, lo, lam))
    return lam if np.ndim(t) else float(lam)


def dlogsnr_dt(schedule: NoiseSchedule, t):
    _check_time(t)
    slope = schedule.lambda_min - schedule.lambda_max
    if schedule.shape == "linear":
        if _is_torch(t):
            return torch.full_like(t, slope)
        return np.full(np.shape(t), slope) if np.ndim(t) else float(slope)
    a, b = schedule._cosine_bounds()
    if _is_torch(t):
        return -4.0 * (b - a) / torch.sin(2.0 * (a + t * (b - a)))
    out = -4.0 * (b - a) / np.sin(2.0 * (a + np.asarray(t, dtype=np.float64) * (b - a)))
    return out if np.ndim(t) else float(out)


def time_of_logsnr(schedule: NoiseSchedule, lam):
    """Inverse of :func:`logsnr`."""
    lo, hi = schedule.lambda_min, schedule.lambda_max
    if schedule.shape == "linear":
        return (lam - hi) / (lo - hi)
    a, b = schedule._cosine_bounds()
    if _is_torch(lam):
        return (torch.atan(torch.exp(-0.5 * lam)) - a) / (b - a)
    return (np.arctan(np.exp(-0.5 * np.asarray(lam, dtype=np.float64))) - a) / (b - a)


def alpha_sigma(lam) -> AlphaSigma:
    _check_finite(lam, "log-SNR")
    if _is_torch(lam):
        return AlphaSigma(torch.sqrt(torch.sigmoid(lam)), torch.sqrt(torch.sigmoid(-lam)))
    lam = np.asarray(lam, dtype=np.float64) if np.ndim(lam) else float(lam)
    return AlphaSigma(np.sqrt(expit(lam)), np.sqrt(expit(-lam)))


def per_sample(v, like):
    """Reshape a scalar or per-sample vector so it broadcasts against ``like``."""
    if _is_torch(like):
        if not _is_torch(v):
            v = torch.as_tensor(v, dtype=like.dtype)
        if v.ndim == 0:
            return v
        return v.reshape(v.shape[0], *([1] * (like.ndim - 1)))
    v = np.asarray(v)
    if v.ndim == 0:
        return v
    return v.reshape(v.shape[0], *([1] * (np.ndim(like) - 1)))


def forward_diffuse(clean, lam, noise):
    if tuple(clean.shape) != tuple(noise.shape):
        raise ValueError(f"noise shape {tuple(noise.shape)} != clean shape {tuple(clean.shape)}")
    ab = alpha_sigma(lam)
    return per_sample(ab.alpha, clean) * clean + per_sample(ab.sigma, clean) * noise


def elbo_weight_x(schedule: NoiseSchedule, t):
    lam = logsnr(schedule, t)
    exp = torch.exp if _is_torch(lam) else np.exp
    return -dlogsnr_dt(schedule, t) * exp(lam) / 2


def decoder_weight_eps(lam, cfg: WeightingConfig):
    _check_finite(lam, "log-SNR")
    return cfg.loss_factor * _sigmoid(cfg.bias - lam)


@dataclass(frozen=True)
class InvarianceReport:
    estimate_a: float
    se_a: float
    estimate_b: float
    se_b: float

    @property
    def delta(self):
        return self.estimate_a - self.estimate_b

    @property
    def combined_se(self):
        return math.hypot(self.se_a, self.se_b)

    @property
    def agree(self):
        return abs(self.delta) <= 2 * self.combined_se


def _toy_denoiser(z_t, lam):
    # Bayes denoiser for unit-variance data, deliberately assuming variance 0.5
    # so that the residual is nonzero at every noise level.
    alpha, sigma = np.sqrt(expit(lam)), np.sqrt(expit(-lam))
    prior_var = 0.5
    gain = alpha * prior_var / (alpha**2 * prior_var + sigma**2)
    return gain[:, None] * z_t


def weighted_loss_estimate(schedule, cfg, n_mc, seed=0, data=None, denoiser=None):
    """Monte-Carlo estimate (mean, standard error) of the eps-weighted diffusion loss.

    Each draw picks a data row, ``t ~ U(0,1)`` and unit noise; the integrand is
    ``-dlambda/dt / 2 * w_eps(lambda) * ||eps - eps_hat||^2``.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    rng = np.random.default_rng(seed)
    if data is None:
        data = np.random.default_rng(12345).standard_normal((64, 4))
    data = np.asarray(data, dtype=np.float64)
    denoiser = denoiser or _toy_denoiser
    idx = rng.integers(0, len(data), size=n_mc)
    t = rng.uniform(0.0, 1.0, size=n_mc)
    eps = rng.standard_normal((n_mc, data.shape[1]))
    x = data[idx]
    lam = logsnr(schedule, t)
    ab = alpha_sigma(lam)
    z_t = ab.alpha[:, None] * x + ab.sigma[:, None] * eps
    x_hat = denoiser(z_t, lam)
    # ||eps - eps_hat||^2 == e^lambda ||x - x_hat||^2, written in the stable form
    eps_mse = (ab.alpha**2 / ab.sigma**2) * np.sum((x - x_hat) ** 2, axis=1)
    vals = -dlogsnr_dt(schedule, t) / 2 * decoder_weight_eps(lam, cfg) * eps_mse
    return float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(n_mc)) if n_mc > 1 else float("inf")


def weighted_loss_schedule_invariance_check(cfg, schedule_a, schedule_b, n_mc, seed=0,
                                            data=None, denoiser=None) -> InvarianceReport:
    if (schedule_a.lambda_max, schedule_a.lambda_min) != (schedule_b.lambda_max, schedule_b.lambda_min):
        raise ValueError("schedules must share lambda_max and lambda_min")
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    ea, sa = weighted_loss_estimate(schedule_a, cfg, n_mc, seed, data, denoiser)
    eb, sb = weighted_loss_estimate(schedule_b, cfg, n_mc, seed, data, denoiser)
    return InvarianceReport(ea, sa, eb, sb)
