"""Loss terms of the joint training objective and the ablation variants.

All losses are per-sample vectors in nats: summed over latent / pixel dimensions,
never averaged, so bitrates need no rescaling. Callers take the batch mean.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .netlib import ModelBundle, denoise_base, denoise_decoder, denoise_prior, reconstruct_mse
from .schedule import (NoiseSchedule, WeightingConfig, alpha_sigma, decoder_weight_eps, dlogsnr_dt,
                       elbo_weight_x, forward_diffuse, logsnr, per_sample)


class DivergenceError(RuntimeError):
    """A loss or parameter became non-finite."""

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


def _sum_dims(x):
    return x.reshape(x.shape[0], -1).sum(dim=1)


def _check_finite(loss, what):
    if not bool(torch.isfinite(loss).all()):
        raise DivergenceError(f"non-finite {what}")
    return loss


@dataclass
class LossBreakdown:
    prior_mse_term: float = 0.0
    endpoint_kl: float = 0.0
    decoder_term: float = 0.0
    entropy_term: float = 0.0
    regularizer_term: float = 0.0
    base_term: float = 0.0
    per_sample: list = field(default_factory=list)

    @property
    def total(self):
        return (self.prior_mse_term + self.endpoint_kl + self.decoder_term + self.entropy_term
                + self.regularizer_term + self.base_term)

    def as_record(self):
        rec = {k: getattr(self, k) for k in ("prior_mse_term", "endpoint_kl", "decoder_term",
                                             "entropy_term", "regularizer_term", "base_term")}
        rec["total"] = self.total
        return rec


def noise_latent(z_clean, lambda_z0, noise):
    if tuple(noise.shape) != tuple(z_clean.shape):
        raise ValueError("noise must have the shape of z_clean")
    return forward_diffuse(z_clean, lambda_z0 if isinstance(lambda_z0, torch.Tensor) else float(lambda_z0), noise)


def gaussian_kl_to_standard(mean, var):
    """Elementwise KL[N(mean, var) || N(0, 1)]."""
    log = torch.log if isinstance(var, torch.Tensor) else np.log
    return 0.5 * (mean**2 + var - 1.0 - log(var))


def endpoint_kl_prior(z_clean, schedule: NoiseSchedule):
    ab = alpha_sigma(float(schedule.lambda_min))
    var = ab.sigma**2
    # 0.5 * (var - 1 - log var) is catastrophically cancelled at var ~ 1; use log1p form.
    a2 = ab.alpha**2
    const = 0.5 * (-a2 - math.log1p(-a2))
    return _sum_dims(0.5 * a2 * z_clean**2 + const)


def prior_terms(bundle: ModelBundle, z_clean, t, noise, stop_gradient=False, model="prior"):
    """(weighted MSE term, endpoint KL) per sample for the unweighted latent ELBO."""
    schedule = bundle.config.prior_schedule
    target = z_clean.detach() if stop_gradient else z_clean
    t = torch.as_tensor(t, dtype=z_clean.dtype)
    lam = logsnr(schedule, t)
    z_t = forward_diffuse(target, lam, noise)
    denoise = denoise_prior if model == "prior" else denoise_base
    z_hat = denoise(bundle, z_t, lam)
    mse = _sum_dims((target - z_hat) ** 2)
    return elbo_weight_x(schedule, t) * mse, endpoint_kl_prior(target, schedule)


def prior_loss(bundle: ModelBundle, z_clean, t, noise, stop_gradient=False, model="prior"):
    mse_term, kl = prior_terms(bundle, z_clean, t, noise, stop_gradient, model)
    return _check_finite(mse_term + kl, "prior loss")


def eps_mse_from_x(x, x_hat, lam):
    """||eps - eps_hat||^2 with eps_hat = (x_t - alpha x_hat) / sigma, written as e^lambda ||x - x_hat||^2."""
    return torch.exp(lam) * _sum_dims((x - x_hat) ** 2)


def decoder_loss(bundle: ModelBundle, x, z0, t, noise, cfg: WeightingConfig | None = None):
    cfg = cfg or bundle.config.weighting
    schedule = bundle.config.decoder_schedule
    t = torch.as_tensor(t, dtype=x.dtype)
    lam = logsnr(schedule, t)
    x_t = forward_diffuse(x, lam, noise)
    x_hat = denoise_decoder(bundle, x_t, z0, lam)
    loss = -dlogsnr_dt(schedule, t) / 2 * decoder_weight_eps(lam, cfg) * eps_mse_from_x(x, x_hat, lam)
    return _check_finite(loss, "decoder loss")


def weighted_eps_loss(bundle: ModelBundle, z_clean, t, noise, bias, model="base"):
    """Sigmoid-weighted eps-MSE on latents over the prior schedule (stage-2 base objective)."""
    schedule = bundle.config.prior_schedule
    t = torch.as_tensor(t, dtype=z_clean.dtype)
    lam = logsnr(schedule, t)
    z_t = forward_diffuse(z_clean, lam, noise)
    denoise = denoise_base if model == "base" else denoise_prior
    z_hat = denoise(bundle, z_t, lam)
    w = decoder_weight_eps(lam, WeightingConfig(bias=bias, loss_factor=1.0))
    return _check_finite(-dlogsnr_dt(schedule, t) / 2 * w * eps_mse_from_x(z_clean, z_hat, lam), "base loss")


def learned_variance_entropy(sigma_z, lambda_z0):
    if isinstance(sigma_z, torch.Tensor):
        if bool((sigma_z < 0).any()):
            raise ValueError("sigma_z must be non-negative")
        return _sum_dims(-0.5 * torch.log1p(sigma_z**2 * math.exp(lambda_z0)))
    s = np.asarray(sigma_z, dtype=np.float64)
    if np.any(s < 0):
        raise ValueError("sigma_z must be non-negative")
    return -0.5 * np.log1p(s**2 * math.exp(lambda_z0)).reshape(s.shape[0], -1).sum(axis=1)


def mse_reconstruction_loss(bundle: ModelBundle, x, z0, loss_factor=None):
    """Per-sample mean squared error of the deterministic head, times the loss factor."""
    lf = bundle.config.weighting.loss_factor if loss_factor is None else loss_factor
    x_hat = reconstruct_mse(bundle, z0)
    if x_hat.shape != x.shape:
        raise ValueError("reconstruction shape mismatch")
    return lf * (x - x_hat).pow(2).reshape(x.shape[0], -1).mean(dim=1)


def normal_prior_kl(z_clean, lambda_z0):
    ab = alpha_sigma(float(lambda_z0))
    return _sum_dims(gaussian_kl_to_standard(ab.alpha * z_clean, torch.full_like(z_clean, ab.sigma**2)))
