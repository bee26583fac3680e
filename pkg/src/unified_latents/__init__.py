"""Unified latents: jointly trained encoder, diffusion prior and diffusion decoder."""
from .schedule import AlphaSigma, NoiseSchedule, WeightingConfig, alpha_sigma, logsnr
from .netlib import ModelBundle, ModelConfig, build_bundle, load_checkpoint, save_checkpoint
from .datagen import DatasetSpec, generate as generate_dataset
from .sampler import SamplerConfig
from .metrics import BitrateReport, estimate_bitrate
from .trainer import RunConfig, TrainConfig, train_single_stage, train_stage1, train_stage2

__version__ = "0.1.0"
