"""Ancestral / deterministic sampling of latents and images on a grid uniform in log-SNR."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .netlib import (ModelBundle, ReconstructionHead, denoise_base, denoise_decoder, denoise_prior,
                     encode_distribution, reconstruct_mse)
from .objective import noise_latent
from .seeding import torch_generator

KINDS = ("ancestral", "deterministic")


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 128
    kind: str = "ancestral"
    eta: float | None = None
    seed: int = 0
    batch_size: int = 256
    return_prediction: bool = False

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("sampler steps must be >= 1")
        if self.kind not in KINDS:
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def noise_level(self):
        if self.eta is not None:
            return self.eta
        return 1.0 if self.kind == "ancestral" else 0.0


def lambda_grid(lambda_min, lambda_max, steps):
    return np.linspace(lambda_min, lambda_max, steps + 1)


def reverse_step(z_t, x_hat, lam_t, lam_s, noise=None, eta=1.0):
    """Move from log-SNR ``lam_t`` to the cleaner ``lam_s`` given an x-prediction.

    ``eta=1`` is the exact Gaussian posterior q(z_s | z_t, x=x_hat); ``eta=0`` the
    deterministic (DDIM) update.
    """
    a_t, s_t = math.sqrt(_sig(lam_t)), math.sqrt(_sig(-lam_t))
    a_s, s_s = math.sqrt(_sig(lam_s)), math.sqrt(_sig(-lam_s))
    c = -math.expm1(lam_t - lam_s)
    post_var = c * s_s**2
    extra = eta**2 * post_var
    eps_hat = (z_t - a_t * x_hat) / s_t
    z_s = a_s * x_hat + math.sqrt(max(s_s**2 - extra, 0.0)) * eps_hat
    if extra > 0:
        z_s = z_s + math.sqrt(extra) * noise
    return z_s


def _sig(x):
    return 1.0 / (1.0 + math.exp(-x)) if x >= 0 else math.exp(x) / (1.0 + math.exp(x))


def run_chain(denoise, shape, lambda_min, lambda_max, cfg: SamplerConfig, gen, dtype=torch.float32):
    """Generic reverse chain from N(0, I) at ``lambda_min`` to ``lambda_max``.

    Returns ``(final_state, last_prediction)``.
    """
    grid = lambda_grid(lambda_min, lambda_max, cfg.steps)
    z = torch.randn(shape, generator=gen, dtype=dtype)
    x_hat = None
    eta = cfg.noise_level
    for i in range(cfg.steps):
        lam_t, lam_s = float(grid[i]), float(grid[i + 1])
        lam = torch.full((shape[0],), lam_t, dtype=dtype)
        x_hat = denoise(z, lam)
        noise = torch.randn(shape, generator=gen, dtype=dtype) if eta > 0 else None
        z = reverse_step(z, x_hat, lam_t, lam_s, noise, eta)
    return z, x_hat


def _chunks(n, size):
    for start in range(0, n, size):
        yield start, min(n, start + size)


def _require_finite(bundle):
    if not bundle.all_finite():
        raise ValueError("checkpoint has non-finite parameters")


@torch.no_grad()
def sample_latent(bundle: ModelBundle, cfg: SamplerConfig, n=1, model="base"):
    """Latents z0 at log-SNR lambda_z0 from the base (or prior) diffusion model."""
    _require_finite(bundle)
    if model == "base" and bundle.base is None:
        raise ValueError("bundle has no base model; use model='prior'")
    sched = bundle.config.prior_schedule
    h, w, c = bundle.config.latent.shape
    denoise = (lambda z, lam: denoise_base(bundle, z, lam)) if model == "base" else \
        (lambda z, lam: denoise_prior(bundle, z, lam))
    gen = torch_generator(cfg.seed, "sample_latent")
    bundle.eval()
    out = []
    for lo, hi in _chunks(n, cfg.batch_size):
        z, z_hat = run_chain(denoise, (hi - lo, c, h, w), sched.lambda_min, sched.lambda_max, cfg,
                             gen, bundle.dtype)
        out.append(z_hat if cfg.return_prediction else z)
    if not out:
        return torch.zeros((0, c, h, w), dtype=bundle.dtype)
    return torch.cat(out)


@torch.no_grad()
def decode(bundle: ModelBundle, z0, cfg: SamplerConfig):
    """Images from latents at lambda_z0; clamped to [-1, 1] on output only."""
    _require_finite(bundle)
    z0 = torch.as_tensor(z0, dtype=bundle.dtype)
    h, w, c = bundle.config.latent.shape
    if z0.ndim != 4 or tuple(z0.shape[1:]) != (c, h, w):
        raise ValueError(f"latents must have shape (n, {c}, {h}, {w}), got {tuple(z0.shape)}")
    H, W, C = bundle.config.decoder.data_shape
    bundle.eval()
    if isinstance(bundle.decoder, ReconstructionHead):
        return reconstruct_mse(bundle, z0).clamp(-1, 1)
    sched = bundle.config.decoder_schedule
    gen = torch_generator(cfg.seed, "decode")
    out = []
    for lo, hi in _chunks(len(z0), cfg.batch_size):
        cond = z0[lo:hi]
        x, _ = run_chain(lambda x_t, lam: denoise_decoder(bundle, x_t, cond, lam), (hi - lo, C, H, W),
                         sched.lambda_min, sched.lambda_max, cfg, gen, bundle.dtype)
        out.append(x)
    if not out:
        return torch.zeros((0, C, H, W), dtype=bundle.dtype)
    return torch.cat(out).clamp(-1, 1)


@torch.no_grad()
def encode_noisy(bundle: ModelBundle, x, seed):
    """encode -> (learned-variance sample) -> noise to lambda_z0."""
    x = torch.as_tensor(x, dtype=bundle.dtype)
    bundle.eval()
    mean, sigma_z = encode_distribution(bundle, x)
    gen = torch_generator(seed, "reconstruct")
    z_clean = mean
    if sigma_z is not None:
        z_clean = mean + sigma_z * torch.randn(mean.shape, generator=gen, dtype=mean.dtype)
    eps = torch.randn(mean.shape, generator=gen, dtype=mean.dtype)
    return noise_latent(z_clean, bundle.config.latent.lambda_z0, eps)


@torch.no_grad()
def reconstruct(bundle: ModelBundle, x, cfg: SamplerConfig):
    return decode(bundle, encode_noisy(bundle, x, cfg.seed), cfg)


@torch.no_grad()
def generate(base_bundle: ModelBundle, decoder_bundle: ModelBundle, n, cfg: SamplerConfig, model="base"):
    if n == 0:
        H, W, C = decoder_bundle.config.decoder.data_shape
        return torch.zeros((0, C, H, W), dtype=decoder_bundle.dtype)
    z0 = sample_latent(base_bundle, cfg, n, model=model)
    return decode(decoder_bundle, z0, cfg)
