import os

import numpy as np
import pytest
import torch

torch.set_num_threads(1)


def tiny_model_config(learned_variance=False, with_base=False, mse=False, zero_init_out=False, lambda_z0=5.0,
                      weighting=None):
    """A bundle small enough for exhaustive finite-difference checks (about 1.5k parameters)."""
    from unified_latents.netlib import DenoiserConfig, EncoderConfig, LatentSpec, ModelConfig
    from unified_latents.schedule import NoiseSchedule, WeightingConfig

    latent = LatentSpec(2, 2, 1, lambda_z0)
    enc = EncoderConfig((4, 4, 1), latent, widths=(4,), blocks=1, patch=2, learned_variance=learned_variance)
    prior = DenoiserConfig("prior", latent.shape, widths=(4,), blocks=1, heads=2, emb_dim=4,
                           zero_init_out=zero_init_out)
    if mse:
        dec = DenoiserConfig("reconstruction", (4, 4, 1), (4,), 1, 0.0, "latent", latent.shape, 2, emb_dim=4,
                             zero_init_out=False)
    else:
        dec = DenoiserConfig("decoder", (4, 4, 1), (3,), 1, 0.0, "latent", latent.shape, 2, emb_dim=4,
                             zero_init_out=zero_init_out)
    base = DenoiserConfig("base", latent.shape, widths=(4,), blocks=1, heads=2, emb_dim=4,
                          zero_init_out=zero_init_out) if with_base else None
    return ModelConfig(enc, prior, dec, base, NoiseSchedule(lambda_z0, -15.0), NoiseSchedule(15.0, -15.0),
                       weighting or WeightingConfig())


@pytest.fixture
def tiny_config():
    return tiny_model_config


@pytest.fixture
def tiny_bundle():
    from unified_latents.netlib import build_bundle

    return build_bundle(tiny_model_config(), seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def small_run_config(**over):
    """Fast stage-1 run on 8x8 blobs used by trainer and cli tests."""
    from unified_latents import config as cfgio
    from unified_latents.trainer import RunConfig

    flat = {
        "data.family": "blobs", "data.resolution": "8", "data.size": "256",
        "encoder.widths": "8", "prior.widths": "8", "prior.blocks": "1", "prior.heads": "2",
        "decoder.widths": "8, 16", "base.widths": "8", "base.blocks": "1", "base.heads": "2",
        "train.steps": "6", "train.batch_size": "8", "train.base_batch_size": "16", "train.warmup_steps": "2",
        "train.final_bitrate_n": "64", "eval.n_bitrate": "64", "eval.n_recon": "8", "eval.n_eval": "32",
        "eval.feature_steps": "5", "sampler.steps": "4", "sampler.batch_size": "64",
    }
    flat.update({k: str(v) for k, v in over.items()})
    return cfgio.loads(RunConfig, "", overrides=flat)


@pytest.fixture
def small_run():
    return small_run_config


SLOW = os.environ.get("UNIFIED_LATENTS_FAST_TESTS", "0") == "1"


# ---------------------------------------------------------------- acceptance report

_ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record ``(number, passed, detail)`` for the end-of-run acceptance summary."""

    def record(number, passed, detail):
        _ACCEPTANCE[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'}: {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
