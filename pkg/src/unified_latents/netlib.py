"""Small networks filling the encoder / prior / decoder / base roles, plus checkpoints.

Tensors are NCHW; shapes in configs are written (height, width, channels).
Every denoiser returns an x-prediction. Internally the last layer outputs a
v-prediction and ``x_hat = alpha * x_t - sigma * v_hat``, so a zero output
layer gives the unit-variance Wiener denoiser ``alpha * x_t``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import config as cfgio
from .schedule import NoiseSchedule, WeightingConfig, alpha_sigma, per_sample
from .seeding import torch_generator


@dataclass(frozen=True)
class LatentSpec:
    h: int = 4
    w: int = 4
    c: int = 4
    lambda_z0: float = 5.0

    def __post_init__(self):
        if min(self.h, self.w, self.c) <= 0:
            raise ValueError("latent dims must be positive")
        if not math.isfinite(self.lambda_z0):
            raise ValueError("lambda_z0 must be finite")

    @property
    def shape(self):
        return (self.h, self.w, self.c)

    @property
    def dims(self):
        return self.h * self.w * self.c


@dataclass(frozen=True)
class EncoderConfig:
    image_shape: tuple[int, ...] = (16, 16, 1)
    latent: LatentSpec = field(default_factory=LatentSpec)
    widths: tuple[int, ...] = (32, 64)
    blocks: int = 1
    patch: int = 2
    learned_variance: bool = False
    init_sigma: float = 1.0

    def __post_init__(self):
        H, W, _ = self.image_shape
        down = self.downsampling
        if H % down or W % down:
            raise ValueError(f"image {H}x{W} not divisible by total downsampling {down}")
        if (H // down, W // down) != (self.latent.h, self.latent.w):
            raise ValueError(
                f"encoder maps {H}x{W} to {H // down}x{W // down}, latent spec says "
                f"{self.latent.h}x{self.latent.w}")

    @property
    def downsampling(self):
        return self.patch * 2 ** (len(self.widths) - 1)


ROLES = ("prior", "decoder", "base", "reconstruction")


@dataclass(frozen=True)
class DenoiserConfig:
    role: str = "prior"
    data_shape: tuple[int, ...] = (4, 4, 4)
    widths: tuple[int, ...] = (64,)
    blocks: int = 2
    dropout_rate: float = 0.0
    conditioning: str = "none"
    cond_shape: tuple[int, ...] = ()
    patch: int = 1
    heads: int = 4
    emb_dim: int = 16
    zero_init_out: bool = True

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.conditioning not in ("none", "latent"):
            raise ValueError(f"unknown conditioning {self.conditioning!r}")
        needs_latent = self.role in ("decoder", "reconstruction")
        if needs_latent != (self.conditioning == "latent"):
            raise ValueError(f"role {self.role} requires conditioning="
                             f"{'latent' if needs_latent else 'none'}")
        if needs_latent and len(self.cond_shape) != 3:
            raise ValueError("latent conditioning needs cond_shape (h, w, c)")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.role in ("prior", "base") and self.widths[0] % self.heads:
            raise ValueError("width must be divisible by heads")


@dataclass(frozen=True)
class LinearStackConfig:
    """Token-wise MLP; used as the FLOP-accounting reference network."""

    tokens: int = 4
    dims: tuple[int, ...] = (8, 16)


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    prior: DenoiserConfig = field(default_factory=DenoiserConfig)
    decoder: DenoiserConfig = field(default_factory=lambda: DenoiserConfig(
        role="decoder", data_shape=(16, 16, 1), widths=(32, 64), blocks=1,
        conditioning="latent", cond_shape=(4, 4, 4), patch=2))
    base: DenoiserConfig | None = None
    prior_schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    decoder_schedule: NoiseSchedule = field(default_factory=lambda: NoiseSchedule(15.0, -15.0))
    weighting: WeightingConfig = field(default_factory=WeightingConfig)

    def __post_init__(self):
        if self.prior_schedule.lambda_max != self.encoder.latent.lambda_z0:
            raise ValueError("prior schedule lambda_max must equal lambda_z0")
        if self.prior.data_shape != self.encoder.latent.shape:
            raise ValueError("prior data_shape must equal the latent shape")
        if self.decoder.cond_shape != self.encoder.latent.shape:
            raise ValueError("decoder cond_shape must equal the latent shape")
        if self.decoder.data_shape != self.encoder.image_shape:
            raise ValueError("decoder data_shape must equal the image shape")
        if self.base is not None and self.base.data_shape != self.encoder.latent.shape:
            raise ValueError("base data_shape must equal the latent shape")

    @property
    def latent(self):
        return self.encoder.latent


# ---------------------------------------------------------------- layers

def _groups(ch):
    for g in (8, 4, 2, 1):
        if ch % g == 0:
            return g
    return 1


class Conv(nn.Conv2d):
    """Conv2d that remembers the number of output positions (for FLOP counting)."""

    def __init__(self, cin, cout, k, out_hw, stride=1):
        super().__init__(cin, cout, k, stride=stride, padding=k // 2)
        self.out_tokens = out_hw[0] * out_hw[1]


class Dense(nn.Linear):
    def __init__(self, fin, fout, tokens=1):
        super().__init__(fin, fout)
        self.out_tokens = tokens


class LambdaEmbedding(nn.Module):
    def __init__(self, emb_dim, out_dim):
        super().__init__()
        half = emb_dim // 2
        self.register_buffer("freqs", torch.exp(torch.linspace(math.log(0.05), math.log(20.0), half)),
                             persistent=False)
        self.lin1 = Dense(2 * half, out_dim)
        self.lin2 = Dense(out_dim, out_dim)

    def forward(self, lam):
        arg = lam[:, None] * self.freqs.to(lam.dtype)[None, :]
        emb = torch.cat([torch.sin(arg), torch.cos(arg)], dim=1)
        return self.lin2(F.silu(self.lin1(emb)))


class ResBlock(nn.Module):
    def __init__(self, cin, cout, hw, emb_dim=None, dropout=0.0):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(cin), cin)
        self.conv1 = Conv(cin, cout, 3, hw)
        self.emb = Dense(emb_dim, cout) if emb_dim else None
        self.norm2 = nn.GroupNorm(_groups(cout), cout)
        self.drop = nn.Dropout(dropout)
        self.conv2 = Conv(cout, cout, 3, hw)
        self.skip = Conv(cin, cout, 1, hw) if cin != cout else None

    def forward(self, h, emb=None):
        out = self.conv1(F.silu(self.norm1(h)))
        if self.emb is not None:
            out = out + self.emb(emb)[:, :, None, None]
        out = self.conv2(self.drop(F.silu(self.norm2(out))))
        return out + (self.skip(h) if self.skip is not None else h)


class Attention(nn.Module):
    def __init__(self, dim, heads, tokens):
        super().__init__()
        self.heads = heads
        self.tokens = tokens
        self.dim = dim
        self.qkv = Dense(dim, 3 * dim, tokens)
        self.proj = Dense(dim, dim, tokens)

    def forward(self, h):
        B, T, D = h.shape
        q, k, v = self.qkv(h).reshape(B, T, 3, self.heads, D // self.heads).permute(2, 0, 3, 1, 4)
        att = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(D // self.heads), dim=-1)
        out = (att @ v).transpose(1, 2).reshape(B, T, D)
        return self.proj(out)


class TransformerBlock(nn.Module):
    def __init__(self, dim, heads, tokens, dropout):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads, tokens)
        self.norm2 = nn.LayerNorm(dim)
        self.fc1 = Dense(dim, 4 * dim, tokens)
        self.fc2 = Dense(4 * dim, dim, tokens)
        self.drop = nn.Dropout(dropout)

    def forward(self, h):
        h = h + self.drop(self.attn(self.norm1(h)))
        return h + self.drop(self.fc2(F.gelu(self.fc1(self.norm2(h)))))


# ---------------------------------------------------------------- networks

class Encoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        H, W, C = cfg.image_shape
        p = cfg.patch
        hw = (H // p, W // p)
        self.conv_in = Conv(C * p * p, cfg.widths[0], 3, hw)
        self.stages = nn.ModuleList()
        self.downs = nn.ModuleList()
        for i, width in enumerate(cfg.widths):
            self.stages.append(nn.ModuleList(ResBlock(width, width, hw) for _ in range(cfg.blocks)))
            if i + 1 < len(cfg.widths):
                hw = (hw[0] // 2, hw[1] // 2)
                self.downs.append(Conv(width, cfg.widths[i + 1], 3, hw, stride=2))
        self.norm_out = nn.GroupNorm(_groups(cfg.widths[-1]), cfg.widths[-1])
        out_ch = cfg.latent.c * (2 if cfg.learned_variance else 1)
        self.conv_out = Conv(cfg.widths[-1], out_ch, 1, hw)

    def forward(self, x):
        """Returns ``(mean, sigma_z)``; ``sigma_z`` is None for the fixed-noise encoder."""
        h = self.conv_in(F.pixel_unshuffle(x, self.cfg.patch))
        for i, blocks in enumerate(self.stages):
            for blk in blocks:
                h = blk(h)
            if i < len(self.downs):
                h = self.downs[i](h)
        out = self.conv_out(F.silu(self.norm_out(h)))
        if not self.cfg.learned_variance:
            return out, None
        mean, raw = out.chunk(2, dim=1)
        return mean, torch.exp(raw + math.log(self.cfg.init_sigma))


class TokenDenoiser(nn.Module):
    """Transformer over latent positions; serves as prior and base model."""

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        h, w, c = cfg.data_shape
        d = cfg.widths[0]
        T = h * w
        self.embed = Dense(c, d, T)
        self.pos = nn.Parameter(torch.zeros(1, T, d))
        self.lam_embed = LambdaEmbedding(cfg.emb_dim, d)
        self.blocks = nn.ModuleList(TransformerBlock(d, cfg.heads, T, cfg.dropout_rate)
                                    for _ in range(cfg.blocks))
        self.norm_out = nn.LayerNorm(d)
        self.out = Dense(d, c, T)

    def forward(self, z_t, lam):
        B = z_t.shape[0]
        tokens = z_t.flatten(2).transpose(1, 2)
        h = self.embed(tokens) + self.pos + self.lam_embed(lam)[:, None, :]
        for blk in self.blocks:
            h = blk(h)
        v = self.out(self.norm_out(h)).transpose(1, 2).reshape(z_t.shape)
        ab = alpha_sigma(lam)
        return per_sample(ab.alpha, z_t) * z_t - per_sample(ab.sigma, z_t) * v


class UNetDecoder(nn.Module):
    """U-shaped conv denoiser; the latent enters at the bottleneck by
    nearest-neighbour upsampling and channel concatenation."""

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        H, W, C = cfg.data_shape
        p = cfg.patch
        hw = (H // p, W // p)
        E = cfg.widths[0]
        self.lam_embed = LambdaEmbedding(cfg.emb_dim, E)
        self.conv_in = Conv(C * p * p, cfg.widths[0], 3, hw)
        self.down_blocks = nn.ModuleList()
        self.downs = nn.ModuleList()
        sizes = []
        for i, width in enumerate(cfg.widths):
            cin = cfg.widths[0] if i == 0 else cfg.widths[i - 1]
            blocks = [ResBlock(cin if j == 0 else width, width, hw, E, cfg.dropout_rate)
                      for j in range(cfg.blocks)]
            self.down_blocks.append(nn.ModuleList(blocks))
            sizes.append(hw)
            if i + 1 < len(cfg.widths):
                hw = (hw[0] // 2, hw[1] // 2)
                self.downs.append(Conv(width, width, 3, hw, stride=2))
        self.bottleneck_hw = hw
        top = cfg.widths[-1]
        lc = cfg.cond_shape[2]
        self.cond_in = Conv(top + lc, top, 1, hw)
        self.mid = ResBlock(top, top, hw, E, cfg.dropout_rate)
        self.up_blocks = nn.ModuleList()
        self.ups = nn.ModuleList()
        for i in reversed(range(len(cfg.widths))):
            width = cfg.widths[i]
            self.up_blocks.append(ResBlock(2 * width, width, sizes[i], E, cfg.dropout_rate))
            if i > 0:
                self.ups.append(Conv(width, cfg.widths[i - 1], 3, sizes[i - 1]))
        self.norm_out = nn.GroupNorm(_groups(cfg.widths[0]), cfg.widths[0])
        self.conv_out = Conv(cfg.widths[0], C * p * p, 3, sizes[0])

    def forward(self, x_t, z0, lam):
        emb = self.lam_embed(lam)
        h = self.conv_in(F.pixel_unshuffle(x_t, self.cfg.patch))
        skips = []
        for i, blocks in enumerate(self.down_blocks):
            for blk in blocks:
                h = blk(h, emb)
            skips.append(h)
            if i < len(self.downs):
                h = self.downs[i](h)
        cond = F.interpolate(z0, size=self.bottleneck_hw, mode="nearest")
        h = self.mid(self.cond_in(torch.cat([h, cond], dim=1)), emb)
        for j, blk in enumerate(self.up_blocks):
            h = blk(torch.cat([h, skips.pop()], dim=1), emb)
            if j < len(self.ups):
                h = self.ups[j](F.interpolate(h, scale_factor=2, mode="nearest"))
        v = F.pixel_shuffle(self.conv_out(F.silu(self.norm_out(h))), self.cfg.patch)
        ab = alpha_sigma(lam)
        return per_sample(ab.alpha, x_t) * x_t - per_sample(ab.sigma, x_t) * v


class ReconstructionHead(nn.Module):
    """Deterministic z0 -> image map for the MSE-reconstruction ablation."""

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        H, W, C = cfg.data_shape
        p = cfg.patch
        h, w, c = cfg.cond_shape
        n = len(cfg.widths)
        hw = (h, w)
        self.conv_in = Conv(c, cfg.widths[-1], 3, hw)
        self.stages = nn.ModuleList()
        self.ups = nn.ModuleList()
        for i in reversed(range(n)):
            self.stages.append(nn.ModuleList(ResBlock(cfg.widths[i], cfg.widths[i], hw)
                                             for _ in range(cfg.blocks)))
            if i > 0:
                hw = (hw[0] * 2, hw[1] * 2)
                self.ups.append(Conv(cfg.widths[i], cfg.widths[i - 1], 3, hw))
        if hw != (H // p, W // p):
            raise ValueError("reconstruction head cannot reach the image resolution from the latent")
        self.norm_out = nn.GroupNorm(_groups(cfg.widths[0]), cfg.widths[0])
        self.conv_out = Conv(cfg.widths[0], C * p * p, 3, hw)

    def forward(self, z0):
        h = self.conv_in(z0)
        for j, blocks in enumerate(self.stages):
            for blk in blocks:
                h = blk(h)
            if j < len(self.ups):
                h = self.ups[j](F.interpolate(h, scale_factor=2, mode="nearest"))
        return F.pixel_shuffle(self.conv_out(F.silu(self.norm_out(h))), self.cfg.patch)


class TokenMLP(nn.Module):
    def __init__(self, cfg: LinearStackConfig):
        super().__init__()
        self.layers = nn.ModuleList(Dense(a, b, cfg.tokens) for a, b in zip(cfg.dims, cfg.dims[1:]))

    def forward(self, h):
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i + 1 < len(self.layers):
                h = F.gelu(h)
        return h


def build_network(cfg):
    if isinstance(cfg, EncoderConfig):
        return Encoder(cfg)
    if isinstance(cfg, LinearStackConfig):
        return TokenMLP(cfg)
    if cfg.role in ("prior", "base"):
        return TokenDenoiser(cfg)
    if cfg.role == "decoder":
        return UNetDecoder(cfg)
    return ReconstructionHead(cfg)


def init_parameters(module: nn.Module, seed, role, zero_out=None):
    """Variance-scaling (fan-in) normal init drawn from a role-specific stream."""
    g = torch_generator(seed, "init", role)
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                fan_in = m.weight[0].numel()
                m.weight.normal_(0.0, 1.0 / math.sqrt(fan_in), generator=g)
                if m.bias is not None:
                    m.bias.zero_()
        if isinstance(module, TokenDenoiser):
            module.pos.normal_(0.0, 0.02, generator=g)
        if zero_out is not None:
            zero_out.weight.zero_()
            zero_out.bias.zero_()
    return module


def make_network(cfg, seed, role):
    net = build_network(cfg)
    zero = None
    if isinstance(cfg, DenoiserConfig) and cfg.zero_init_out:
        zero = net.out if isinstance(net, TokenDenoiser) else net.conv_out
    return init_parameters(net, seed, role, zero)


# ---------------------------------------------------------------- accounting

def layer_inventory(cfg):
    """(kind, tokens, fan_in, fan_out) for every linear map plus
    ("attention", tokens, dim, heads) entries, read off the constructed layers."""
    net = build_network(cfg)
    out = []
    for m in net.modules():
        if isinstance(m, (Conv, Dense)):
            fan_in = m.weight[0].numel()
            out.append(("linear", m.out_tokens, fan_in, m.weight.shape[0]))
        elif isinstance(m, Attention):
            out.append(("attention", m.tokens, m.dim, m.heads))
    return out


def parameter_count(cfg):
    return sum(p.numel() for p in build_network(cfg).parameters())


# ---------------------------------------------------------------- bundle

@dataclass
class ModelBundle:
    config: ModelConfig
    encoder: nn.Module
    prior: nn.Module
    decoder: nn.Module
    base: nn.Module | None = None
    seed: int = 0

    def modules(self):
        out = {"encoder": self.encoder, "prior": self.prior, "decoder": self.decoder}
        if self.base is not None:
            out["base"] = self.base
        return out

    def train(self, mode=True):
        for m in self.modules().values():
            m.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def to(self, dtype):
        for m in self.modules().values():
            m.to(dtype)
        return self

    @property
    def dtype(self):
        return next(self.encoder.parameters()).dtype

    def parameters(self):
        for m in self.modules().values():
            yield from m.parameters()

    def all_finite(self):
        return all(bool(torch.isfinite(p).all()) for p in self.parameters())


def build_bundle(config: ModelConfig, seed=0, with_base=None) -> ModelBundle:
    if with_base is None:
        with_base = config.base is not None
    base = make_network(config.base, seed, "base") if with_base and config.base is not None else None
    return ModelBundle(
        config=config,
        encoder=make_network(config.encoder, seed, "encoder"),
        prior=make_network(config.prior, seed, "prior"),
        decoder=make_network(config.decoder, seed, "decoder"),
        base=base,
        seed=seed,
    ).eval()


class NonFiniteError(ValueError):
    """An input or activation handed to a network is NaN or infinite."""


def _check_input(x, shape, what):
    H, W, C = shape
    if x.ndim != 4 or tuple(x.shape[1:]) != (C, H, W):
        raise ValueError(f"{what} must have shape (N, {C}, {H}, {W}), got {tuple(x.shape)}")
    if not bool(torch.isfinite(x).all()):
        raise NonFiniteError(f"{what} contains non-finite values")


def _check_lambda(lam, schedule, what):
    lo, hi = schedule.lambda_min - 1e-9, schedule.lambda_max + 1e-9
    if bool(((lam < lo) | (lam > hi)).any()):
        raise ValueError(f"{what}: log-SNR outside [{schedule.lambda_min}, {schedule.lambda_max}]")


def _as_lambda(lam, like):
    lam = torch.as_tensor(lam, dtype=like.dtype)
    if lam.ndim == 0:
        lam = lam.expand(like.shape[0])
    return lam


def encode_distribution(bundle: ModelBundle, x):
    _check_input(x, bundle.config.encoder.image_shape, "image batch")
    return bundle.encoder(x)


def encode(bundle: ModelBundle, x):
    return encode_distribution(bundle, x)[0]


def denoise_prior(bundle: ModelBundle, z_t, lam):
    lam = _as_lambda(lam, z_t)
    _check_lambda(lam, bundle.config.prior_schedule, "prior")
    _check_input(z_t, bundle.config.latent.shape, "latent batch")
    return bundle.prior(z_t, lam)


def denoise_base(bundle: ModelBundle, z_t, lam):
    if bundle.base is None:
        raise ValueError("bundle has no base model")
    lam = _as_lambda(lam, z_t)
    _check_lambda(lam, bundle.config.prior_schedule, "base")
    _check_input(z_t, bundle.config.latent.shape, "latent batch")
    return bundle.base(z_t, lam)


def denoise_decoder(bundle: ModelBundle, x_t, z0, lam):
    lam = _as_lambda(lam, x_t)
    _check_lambda(lam, bundle.config.decoder_schedule, "decoder")
    _check_input(x_t, bundle.config.decoder.data_shape, "noisy image batch")
    _check_input(z0, bundle.config.latent.shape, "latent batch")
    if z0.shape[0] != x_t.shape[0]:
        raise ValueError("latent and image batch sizes differ")
    return bundle.decoder(x_t, z0, lam)


def reconstruct_mse(bundle: ModelBundle, z0):
    if not isinstance(bundle.decoder, ReconstructionHead):
        raise ValueError("bundle decoder is not a deterministic reconstruction head")
    _check_input(z0, bundle.config.latent.shape, "latent batch")
    return bundle.decoder(z0)


# ---------------------------------------------------------------- checkpoints

def _model_config_from_dict(d):
    return cfgio.from_dict(ModelConfig, d)


def save_checkpoint(path, bundle: ModelBundle, meta=None, ema=None):
    """Single ``.npz`` container: named parameter arrays plus a JSON metadata blob."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for name, mod in bundle.modules().items():
        for k, v in mod.state_dict().items():
            arrays[f"{name}/{k}"] = v.detach().cpu().numpy()
    for name, state in (ema or {}).items():
        for k, v in state.items():
            arrays[f"ema/{name}/{k}"] = v.detach().cpu().numpy()
    info = {
        "format": "unified-latents-checkpoint/1",
        "model_config": cfgio.to_dict(bundle.config),
        "has_base": bundle.base is not None,
        "seed": bundle.seed,
        "lambda_z0": bundle.config.latent.lambda_z0,
        "bias": bundle.config.weighting.bias,
        "loss_factor": bundle.config.weighting.loss_factor,
        "meta": meta or {},
    }
    arrays["__meta__"] = np.frombuffer(json.dumps(info, sort_keys=True).encode(), dtype=np.uint8)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    tmp.replace(path)
    return path


def read_checkpoint_meta(path):
    with np.load(path) as data:
        return json.loads(bytes(data["__meta__"]).decode())


def load_checkpoint(path, use_ema=False):
    """Returns ``(bundle, info)``; with ``use_ema`` the EMA weights (if stored) are loaded."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path) as data:
        info = json.loads(bytes(data["__meta__"]).decode())
        arrays = {k: data[k] for k in data.files if k != "__meta__"}
    config = _model_config_from_dict(info["model_config"])
    bundle = build_bundle(config, info["seed"], with_base=info["has_base"])
    for name, mod in bundle.modules().items():
        prefix = f"ema/{name}/" if use_ema and any(k.startswith(f"ema/{name}/") for k in arrays) else f"{name}/"
        state = {k[len(prefix):]: torch.from_numpy(np.array(v)) for k, v in arrays.items() if k.startswith(prefix)}
        mod.load_state_dict(state)
    for p in bundle.parameters():
        if not bool(torch.isfinite(p).all()):
            raise ValueError(f"checkpoint {path} contains non-finite parameters")
    return bundle.eval(), info


def parameter_checksum(module: nn.Module):
    import hashlib
    h = hashlib.sha256()
    for k, v in sorted(module.state_dict().items()):
        h.update(k.encode())
        h.update(v.detach().cpu().numpy().tobytes())
    return h.hexdigest()
