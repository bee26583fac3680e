"""Stage-1 joint training, stage-2 base training, single-stage training and sweeps."""
from __future__ import annotations

import csv
import json
import logging
import math
import shutil
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import config as cfgio
from .datagen import Dataset, DatasetSpec
from .metrics import BitrateReport, estimate_bitrate, evaluate
from .netlib import (DenoiserConfig, EncoderConfig, LatentSpec, ModelBundle, ModelConfig, NonFiniteError,
                     build_bundle, encode_distribution, load_checkpoint, make_network, parameter_checksum,
                     save_checkpoint)
from .objective import (DivergenceError, LossBreakdown, decoder_loss, learned_variance_entropy,
                        mse_reconstruction_loss, noise_latent, normal_prior_kl, prior_loss, prior_terms,
                        weighted_eps_loss)
from .sampler import SamplerConfig
from .schedule import NoiseSchedule, WeightingConfig
from .seeding import derive_seed, numpy_rng, torch_generator

log = logging.getLogger(__name__)

STAGES = ("1", "2", "single")
HIGH_PRECISION_LAMBDA = 10.0


# ---------------------------------------------------------------- config

@dataclass(frozen=True)
class LatentSection:
    channels: int = 4
    lambda_z0: float = 5.0


@dataclass(frozen=True)
class NetSection:
    widths: tuple[int, ...] = (16, 32)
    blocks: int = 1
    heads: int = 4
    dropout: float = 0.0
    patch: int = 2
    emb_dim: int = 16
    zero_init_out: bool = True


@dataclass(frozen=True)
class ScheduleSection:
    shape: str = "linear"
    prior_lambda_min: float = -15.0
    prior_lambda_max: float | None = None
    decoder_lambda_min: float = -15.0
    decoder_lambda_max: float = 15.0


@dataclass(frozen=True)
class TrainConfig:
    stage: str = "1"
    steps: int = 2000
    batch_size: int = 32
    base_batch_size: int = 64
    lr: float = 1e-3
    warmup_steps: int = 100
    adam_b1: float = 0.9
    adam_b2: float = 0.99
    grad_clip: float = 0.0
    ema_rate: float = 0.995
    use_ema: bool = True
    stratified_t: bool = True
    stop_gradient_prior: bool = False
    high_precision_latents: bool = False
    learned_variance: bool = False
    mse_reconstruction: bool = False
    normal_prior: bool = False
    ablation_kl_weight: float = 1e-5
    mse_weight: float = 0.0
    learned_sigma_init: float = 1.0
    kl_warmup_steps: int = 0
    single_stage_shift: float = 0.0
    base_bias: float = 0.0
    log_every: int = 1
    checkpoint_every: int = 0
    eval_every: int = 0
    final_bitrate_n: int = 1024

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}")
        if self.steps < 0 or self.batch_size < 1 or self.base_batch_size < 1:
            raise ValueError("steps must be >= 0 and batch sizes >= 1")
        if self.stop_gradient_prior and self.normal_prior:
            raise ValueError("stop_gradient_prior and normal_prior are alternative regularisers; pick one")
        if self.mse_reconstruction and self.stage == "single":
            raise ValueError("mse_reconstruction has no diffusion decoder to shift in single-stage training")
        if self.mse_reconstruction and self.learned_variance:
            raise ValueError("mse_reconstruction and learned_variance are separate ablations")
        if not self.lr > 0:
            raise ValueError("lr must be positive")


@dataclass(frozen=True)
class EvalConfig:
    n_bitrate: int = 4096
    n_recon: int = 256
    n_eval: int = 512
    feature_steps: int = 300


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    data: DatasetSpec = field(default_factory=DatasetSpec)
    latent: LatentSection = field(default_factory=LatentSection)
    encoder: NetSection = field(default_factory=NetSection)
    prior: NetSection = field(default_factory=lambda: NetSection(widths=(32,), blocks=2))
    decoder: NetSection = field(default_factory=lambda: NetSection(widths=(32, 64)))
    base: NetSection = field(default_factory=lambda: NetSection(widths=(32,), blocks=2, dropout=0.1))
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    weighting: WeightingConfig = field(default_factory=WeightingConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @property
    def lambda_z0(self):
        return HIGH_PRECISION_LAMBDA if self.train.high_precision_latents else self.latent.lambda_z0

    def __post_init__(self):
        mx = self.schedule.prior_lambda_max
        if mx is not None and mx != self.lambda_z0:
            raise ValueError(f"prior schedule lambda_max ({mx}) must equal lambda_z0 ({self.lambda_z0})")


def load_run_config(path, overrides=None) -> RunConfig:
    return cfgio.load(RunConfig, path, overrides)


def model_config(run: RunConfig, with_base=None) -> ModelConfig:
    d = run.data
    image_shape = (d.resolution, d.resolution, d.channels)
    enc = run.encoder
    down = enc.patch * 2 ** (len(enc.widths) - 1)
    if d.resolution % down:
        raise ValueError(f"resolution {d.resolution} not divisible by encoder downsampling {down}")
    latent = LatentSpec(d.resolution // down, d.resolution // down, run.latent.channels, run.lambda_z0)
    t = run.train
    encoder = EncoderConfig(image_shape, latent, enc.widths, enc.blocks, enc.patch,
                            learned_variance=t.learned_variance, init_sigma=t.learned_sigma_init)
    p = run.prior
    prior = DenoiserConfig("prior", latent.shape, p.widths, p.blocks, p.dropout, heads=p.heads, emb_dim=p.emb_dim,
                           zero_init_out=p.zero_init_out)
    dc = run.decoder
    if t.mse_reconstruction:
        decoder = DenoiserConfig("reconstruction", image_shape, enc.widths, dc.blocks, 0.0, "latent",
                                 latent.shape, enc.patch, emb_dim=dc.emb_dim, zero_init_out=False)
    else:
        decoder = DenoiserConfig("decoder", image_shape, dc.widths, dc.blocks, dc.dropout, "latent",
                                 latent.shape, dc.patch, emb_dim=dc.emb_dim, zero_init_out=dc.zero_init_out)
    if with_base is None:
        with_base = t.stage in ("2", "single")
    b = run.base
    base = DenoiserConfig("base", latent.shape, b.widths, b.blocks, b.dropout, heads=b.heads,
                          emb_dim=b.emb_dim, zero_init_out=b.zero_init_out) if with_base else None
    s = run.schedule
    return ModelConfig(
        encoder=encoder, prior=prior, decoder=decoder, base=base,
        prior_schedule=NoiseSchedule(latent.lambda_z0, s.prior_lambda_min, s.shape),
        decoder_schedule=NoiseSchedule(s.decoder_lambda_max, s.decoder_lambda_min, s.shape),
        weighting=run.weighting,
    )


# ---------------------------------------------------------------- randomness per step

def batch_indices(n_data, batch_size, data_seed, step):
    """Indices for ``step``: consecutive slices of per-epoch permutations seeded by (data_seed, epoch)."""
    if n_data == 0:
        raise ValueError("empty dataset")
    start = step * batch_size
    out = []
    pos = start
    while len(out) < batch_size:
        epoch, off = divmod(pos, n_data)
        perm = numpy_rng(data_seed, "epoch", epoch).permutation(n_data)
        take = min(batch_size - len(out), n_data - off)
        out.extend(perm[off:off + take].tolist())
        pos += take
    return np.asarray(out, dtype=np.int64)


def draw_times(gen, n, stratified, dtype):
    u = torch.rand((n,), generator=gen, dtype=torch.float64)
    if stratified:
        # one shared offset, evenly spaced across the batch (mod 1)
        u = torch.remainder(u[:1] + torch.arange(n, dtype=torch.float64) / n, 1.0)
    return u.to(dtype)


@dataclass
class StepNoise:
    """Random draws for one step: two times and three noises, each from its own stream."""

    t_prior: torch.Tensor
    eps_prior: torch.Tensor
    t_decoder: torch.Tensor
    eps_latent: torch.Tensor
    eps_decoder: torch.Tensor
    eps_encoder: torch.Tensor | None = None
    t_base: torch.Tensor | None = None
    eps_base: torch.Tensor | None = None


STREAMS = ("t_prior", "eps_prior", "t_decoder", "eps_latent", "eps_decoder", "eps_encoder", "t_base", "eps_base")


def draw_step_noise(seed, step, batch, latent_shape, image_shape, dtype=torch.float32, stratified=True,
                    learned_variance=False, with_base=False):
    h, w, c = latent_shape
    H, W, C = image_shape
    g = {name: torch_generator(seed, name, step) for name in STREAMS}
    zs, xs = (batch, c, h, w), (batch, C, H, W)
    return StepNoise(
        t_prior=draw_times(g["t_prior"], batch, stratified, dtype),
        eps_prior=torch.randn(zs, generator=g["eps_prior"], dtype=dtype),
        t_decoder=draw_times(g["t_decoder"], batch, stratified, dtype),
        eps_latent=torch.randn(zs, generator=g["eps_latent"], dtype=dtype),
        eps_decoder=torch.randn(xs, generator=g["eps_decoder"], dtype=dtype),
        eps_encoder=torch.randn(zs, generator=g["eps_encoder"], dtype=dtype) if learned_variance else None,
        t_base=draw_times(g["t_base"], batch, stratified, dtype) if with_base else None,
        eps_base=torch.randn(zs, generator=g["eps_base"], dtype=dtype) if with_base else None,
    )


# ---------------------------------------------------------------- losses

def _mean(v):
    return float(v.detach().double().mean())


def stage1_losses(bundle: ModelBundle, x, noise: StepNoise, train: TrainConfig, weighting=None, step=None):
    """Per-sample loss terms of one joint step. Returns ``(total_per_sample, breakdown, extras)``.

    During the first ``train.kl_warmup_steps`` steps the prior sees detached latents, so the
    encoder is driven by the decoder alone; loss values are unchanged.
    """
    cfg = bundle.config
    lam0 = cfg.latent.lambda_z0
    mean, sigma_z = encode_distribution(bundle, x)
    z_clean = mean if sigma_z is None else mean + sigma_z * noise.eps_encoder
    warm = step is not None and step < train.kl_warmup_steps
    sg = train.stop_gradient_prior or train.normal_prior or warm
    mse_term, kl = prior_terms(bundle, z_clean, noise.t_prior, noise.eps_prior, stop_gradient=sg)
    total = mse_term + kl
    z0 = noise_latent(z_clean, lam0, noise.eps_latent)
    if train.mse_reconstruction:
        D = x[0].numel()
        scale = train.mse_weight if train.mse_weight > 0 else float(D)
        dec = scale * mse_reconstruction_loss(bundle, x, z0)
    else:
        dec = decoder_loss(bundle, x, z0, noise.t_decoder, noise.eps_decoder, weighting or cfg.weighting)
    total = total + dec
    zeros = torch.zeros_like(total)
    entropy = zeros
    if sigma_z is not None:
        # the entropy term is part of the rate, so warmup detaches it together with the prior
        entropy = learned_variance_entropy(sigma_z.detach() if warm else sigma_z, lam0)
    if train.normal_prior:
        reg = normal_prior_kl(z_clean, lam0)
    elif train.stop_gradient_prior:
        reg = train.ablation_kl_weight * normal_prior_kl(z_clean, lam0)
    else:
        reg = zeros
    base = zeros
    if noise.t_base is not None and bundle.base is not None:
        base = prior_loss(bundle, z_clean, noise.t_base, noise.eps_base, stop_gradient=True, model="base")
    total = total + entropy + reg + base
    if not bool(torch.isfinite(total).all()):
        raise DivergenceError("non-finite total loss")
    bd = LossBreakdown(
        prior_mse_term=_mean(mse_term), endpoint_kl=_mean(kl), decoder_term=_mean(dec),
        entropy_term=_mean(entropy), regularizer_term=_mean(reg), base_term=_mean(base),
        per_sample=total.detach().double().tolist())
    extras = {}
    if sigma_z is not None:
        extras["median_sigma_z"] = float(sigma_z.detach().median())
    return total, bd, extras


# ---------------------------------------------------------------- optimisation plumbing

def lr_at(train: TrainConfig, step):
    if train.warmup_steps > 0 and step < train.warmup_steps:
        return train.lr * (step + 1) / train.warmup_steps
    return train.lr


class EMA:
    def __init__(self, modules, rate):
        self.rate = rate
        self.shadow = {name: {k: v.detach().clone() for k, v in m.state_dict().items()}
                       for name, m in modules.items()}

    @torch.no_grad()
    def update(self, modules, step):
        decay = min(self.rate, (1 + step) / (10 + step))
        for name, m in modules.items():
            sh = self.shadow[name]
            for k, v in m.state_dict().items():
                if v.dtype.is_floating_point:
                    sh[k].mul_(decay).add_(v.detach(), alpha=1 - decay)
                else:
                    sh[k].copy_(v)

    def copy_to(self, bundle: ModelBundle):
        for name, m in bundle.modules().items():
            if name in self.shadow:
                m.load_state_dict(self.shadow[name])


@dataclass
class RunRecord:
    config: RunConfig
    losses: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    bitrate: BitrateReport | None = None
    bundle: ModelBundle | None = None
    run_dir: Path | None = None
    checksums: dict = field(default_factory=dict)
    evals: list = field(default_factory=list)
    wall_time: float = 0.0

    def loss_trace(self):
        return [r["total"] for r in self.losses]


def _prepare_run_dir(run_dir, run: RunConfig, overwrite):
    if run_dir is None:
        return None
    run_dir = Path(run_dir)
    if run_dir.exists() and any(run_dir.iterdir()):
        if not overwrite:
            raise FileExistsError(f"run directory {run_dir} is not empty (pass overwrite=True)")
        shutil.rmtree(run_dir)
    (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(cfgio.dumps(run))
    return run_dir


def _eval_bundle(bundle, ema, use_ema):
    """Copy of ``bundle`` holding the EMA weights (or the raw weights)."""
    if not use_ema or ema is None:
        return bundle
    import copy
    clone = copy.deepcopy(bundle)
    ema.copy_to(clone)
    return clone.eval()


class _Loop:
    """Shared step loop: optimiser, EMA, logging, checkpoints, divergence checks."""

    def __init__(self, run: RunConfig, bundle: ModelBundle, trainable, run_dir, tag):
        self.run = run
        self.train = run.train
        self.bundle = bundle
        self.trainable = trainable
        self.params = [p for m in trainable.values() for p in m.parameters()]
        self.opt = torch.optim.Adam(self.params, lr=self.train.lr, betas=(self.train.adam_b1, self.train.adam_b2))
        self.ema = EMA(trainable, self.train.ema_rate) if self.train.use_ema else None
        self.run_dir = run_dir
        self.tag = tag
        self.record = RunRecord(config=run, run_dir=run_dir)
        self.log_fh = open(run_dir / "log.jsonl", "w") if run_dir else None

    def checkpoint(self, step):
        if self.run_dir is None:
            return
        path = self.run_dir / "checkpoints" / f"{self.tag}_step{step:06d}.npz"
        ema = self.ema.shadow if self.ema else None
        save_checkpoint(path, self.bundle, meta={"step": step, "stage": self.train.stage,
                                                 "run_seed": self.run.seed, "data": cfgio.to_dict(self.run.data)},
                        ema=ema)
        self.record.checkpoints.append(path)

    def step(self, step, loss, bd: LossBreakdown, extras):
        lr = lr_at(self.train, step)
        for g in self.opt.param_groups:
            g["lr"] = lr
        self.opt.zero_grad(set_to_none=True)
        loss.backward()
        if self.train.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(self.params, self.train.grad_clip)
        self.opt.step()
        if not all(bool(torch.isfinite(p).all()) for p in self.params):
            self._abort(step, "non-finite parameters after optimizer step")
        if self.ema:
            self.ema.update(self.trainable, step)
        rec = {"step": step, **bd.as_record(), "lr": lr, "batch": len(bd.per_sample), "seed": self.run.seed, **extras}
        self.record.losses.append(rec)
        if self.log_fh and (step % max(self.train.log_every, 1) == 0 or step == self.train.steps - 1):
            self.log_fh.write(json.dumps(rec) + "\n")
        if self.train.checkpoint_every and (step + 1) % self.train.checkpoint_every == 0 \
                and step + 1 != self.train.steps:
            self.checkpoint(step + 1)

    def _abort(self, step, msg):
        if self.log_fh:
            self.log_fh.write(json.dumps({"step": step, "error": msg}) + "\n")
            self.log_fh.close()
        raise DivergenceError(msg, step)

    def guard(self, step, fn):
        try:
            return fn()
        except (DivergenceError, NonFiniteError) as exc:
            self._abort(step, str(exc))

    def finish(self):
        if self.train.steps > 0:
            self.checkpoint(self.train.steps)
        if self.log_fh:
            self.log_fh.close()
        self.record.bundle = _eval_bundle(self.bundle, self.ema, self.train.use_ema)
        return self.record


def _finalize_bitrate(record, dataset, which_model="prior"):
    n = record.config.train.final_bitrate_n
    if n > 0 and len(dataset):
        record.bitrate = estimate_bitrate(record.bundle, dataset, n, which_model=which_model,
                                          seed=derive_seed(record.config.seed, "final_bitrate"))
        if record.run_dir:
            (record.run_dir / "bitrate.json").write_text(json.dumps(record.bitrate.as_dict(), indent=1))
    return record


def _dtype_of(bundle):
    return bundle.dtype


# ---------------------------------------------------------------- stage 1

def train_stage1(run: RunConfig, dataset: Dataset, run_dir=None, overwrite=False, bundle=None) -> RunRecord:
    """Joint encoder / prior / decoder training on ``L_z + L_x``."""
    if run.train.stage != "1":
        raise ValueError("train_stage1 needs train.stage = 1")
    return _train_joint(run, dataset, run_dir, overwrite, bundle, tag="ae")


def train_single_stage(run: RunConfig, dataset: Dataset, run_dir=None, overwrite=False, bundle=None) -> RunRecord:
    """Stage 1 with the decoder bias lowered by ``single_stage_shift`` plus a concurrently trained
    base model on the (stop-gradient) latents with the unweighted ELBO."""
    if run.train.stage != "single":
        raise ValueError("train_single_stage needs train.stage = single")
    return _train_joint(run, dataset, run_dir, overwrite, bundle, tag="single")


def _train_joint(run, dataset, run_dir, overwrite, bundle, tag):
    t0 = time.time()
    train = run.train
    mc = model_config(run)
    torch.manual_seed(derive_seed(run.seed, "dropout"))
    if bundle is None:
        bundle = build_bundle(mc, run.seed)
    run_dir = _prepare_run_dir(run_dir, run, overwrite)
    trainable = bundle.modules()
    loop = _Loop(run, bundle, trainable, run_dir, tag)
    loop.checkpoint(0)
    weighting = mc.weighting
    if tag == "single":
        weighting = replace(weighting, bias=weighting.bias - train.single_stage_shift)
    dtype = _dtype_of(bundle)
    image_shape = mc.encoder.image_shape
    for step in range(train.steps):
        idx = batch_indices(len(dataset), train.batch_size, run.data.seed, step)
        x = torch.as_tensor(dataset.batch(idx), dtype=dtype)
        noise = draw_step_noise(run.seed, step, len(idx), mc.latent.shape, image_shape, dtype, train.stratified_t,
                                train.learned_variance, with_base=(tag == "single"))
        bundle.train()
        total, bd, extras = loop.guard(step, lambda: stage1_losses(bundle, x, noise, train, weighting, step))
        loop.step(step, total.mean(), bd, extras)
    bundle.eval()
    record = loop.finish()
    record.wall_time = time.time() - t0
    return _finalize_bitrate(record, dataset)


# ---------------------------------------------------------------- stage 2

def train_stage2(stage1_checkpoint, run: RunConfig, dataset: Dataset, run_dir=None, overwrite=False) -> RunRecord:
    """Base-model training on latents of the frozen stage-1 encoder with sigmoid-weighted eps-MSE."""
    t0 = time.time()
    if run.train.stage != "2":
        raise ValueError("train_stage2 needs train.stage = 2")
    if stage1_checkpoint is None or not Path(stage1_checkpoint).is_file():
        raise FileNotFoundError(f"stage-1 checkpoint not found: {stage1_checkpoint}")
    ae, info = load_checkpoint(stage1_checkpoint, use_ema=True)
    lam0 = ae.config.latent.lambda_z0
    if run.lambda_z0 != lam0:
        raise ValueError(f"stage-2 lambda_z0 ({run.lambda_z0}) differs from the stage-1 checkpoint ({lam0})")
    if run.schedule.prior_lambda_max is not None and run.schedule.prior_lambda_max != lam0:
        raise ValueError("base schedule lambda_max must equal the stage-1 lambda_z0")
    b = run.base
    base_cfg = DenoiserConfig("base", ae.config.latent.shape, b.widths, b.blocks, b.dropout, heads=b.heads,
                              emb_dim=b.emb_dim, zero_init_out=b.zero_init_out)
    mc = replace(ae.config, base=base_cfg)
    torch.manual_seed(derive_seed(run.seed, "dropout"))
    bundle = ModelBundle(mc, ae.encoder, ae.prior, ae.decoder, make_network(base_cfg, run.seed, "base"), ae.seed)
    frozen = {"encoder": bundle.encoder, "decoder": bundle.decoder, "prior": bundle.prior}
    for m in frozen.values():
        m.eval()
        for p in m.parameters():
            p.requires_grad_(False)
    before = {k: parameter_checksum(m) for k, m in frozen.items()}
    run_dir = _prepare_run_dir(run_dir, run, overwrite)
    if run_dir:
        shutil.copy(stage1_checkpoint, run_dir / "checkpoints" / "stage1.npz")
    loop = _Loop(run, bundle, {"base": bundle.base}, run_dir, "base")
    loop.checkpoint(0)
    train = run.train
    dtype = bundle.dtype
    for step in range(train.steps):
        idx = batch_indices(len(dataset), train.base_batch_size, run.data.seed, step)
        x = torch.as_tensor(dataset.batch(idx), dtype=dtype)
        with torch.no_grad():
            mean, sigma_z = encode_distribution(bundle, x)
        g_t = torch_generator(run.seed, "t_base", step)
        g_e = torch_generator(run.seed, "eps_base", step)
        z_clean = mean
        if sigma_z is not None:
            z_clean = mean + sigma_z * torch.randn(mean.shape, generator=torch_generator(run.seed, "eps_encoder", step),
                                                   dtype=dtype)
        t = draw_times(g_t, len(idx), train.stratified_t, dtype)
        eps = torch.randn(mean.shape, generator=g_e, dtype=dtype)
        bundle.base.train()
        loss = loop.guard(step, lambda: weighted_eps_loss(bundle, z_clean, t, eps, train.base_bias, model="base"))
        bd = LossBreakdown(base_term=_mean(loss), per_sample=loss.detach().double().tolist())
        loop.step(step, loss.mean(), bd, {})
    bundle.base.eval()
    after = {k: parameter_checksum(m) for k, m in frozen.items()}
    if before != after:
        raise RuntimeError("frozen stage-1 parameters changed during stage-2 training")
    record = loop.finish()
    record.checksums = {"before": before, "after": after}
    record.wall_time = time.time() - t0
    return _finalize_bitrate(record, dataset, which_model="base")


# ---------------------------------------------------------------- sweeps

def _differing_keys(runs):
    flats = [cfgio.to_flat(r) for r in runs]
    keys = [k for k in flats[0] if len({repr(f[k]) for f in flats}) > 1]
    return keys, flats


def sweep(runs, dataset: Dataset, eval_dataset: Dataset | None = None, out_csv=None, run_root=None,
          feature_net=None, trainer=None):
    """Train and evaluate each config; rows are sorted by the swept keys.

    A failing row is recorded with its error and the sweep continues.
    """
    runs = list(runs)
    if not runs:
        return []
    keys, flats = _differing_keys(runs)
    allowed = {"weighting.loss_factor", "weighting.bias", "latent.lambda_z0", "latent.channels",
               "train.high_precision_latents"}
    extra = [k for k in keys if k not in allowed and not k.startswith("sampler.")]
    if extra:
        raise ValueError(f"sweep configs differ outside the sweep axes: {extra}")
    eval_dataset = eval_dataset or dataset
    trainer = trainer or train_stage1
    rows = []
    for i, (run, flat) in enumerate(zip(runs, flats)):
        row = {k: flat[k] for k in keys}
        try:
            rd = Path(run_root) / f"run_{i:02d}" if run_root else None
            rec = trainer(run, dataset, run_dir=rd, overwrite=True)
            res = evaluate(rec.bundle, eval_dataset, run.sampler, run.eval.n_bitrate, run.eval.n_recon,
                           seed=run.seed, feature_net=feature_net)
            rep = res["bitrate"]
            row.update(bits_per_pixel=rep.bits_per_pixel, bits_per_pixel_se=rep.se_bits_per_pixel,
                       bits_per_dim=rep.bits_per_dim, psnr=res["psnr"], psnr_se=res["psnr_se"],
                       rfid=res["rfid"], rfid_se=res["rfid_se"], final_loss=rec.loss_trace()[-1] if rec.losses else None,
                       error="")
        except Exception as exc:  # noqa: BLE001 - recorded per row
            log.exception("sweep row %d failed", i)
            row.update(error=f"{type(exc).__name__}: {exc}")
        rows.append(row)
    rows.sort(key=lambda r: tuple(r[k] for k in keys))
    if out_csv:
        write_sweep_csv(out_csv, rows)
    return rows


def write_sweep_csv(path, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = list(dict.fromkeys(k for r in rows for k in r))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return path
