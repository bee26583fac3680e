"""Latent bitrate, PSNR, a Frechet-distance surrogate for FID, and FLOP accounting."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import netlib
from .netlib import ModelBundle, encode_distribution
from .objective import learned_variance_entropy, prior_terms
from .sampler import SamplerConfig, reconstruct
from .seeding import numpy_rng, torch_generator

LN2 = math.log(2.0)
PSNR_CAP = 99.0


# ---------------------------------------------------------------- bitrate

@dataclass
class BitrateReport:
    nats_total: float
    bits_per_dim: float
    bits_per_pixel: float
    std_error: float
    n_mc: int
    latent_dims: int
    image_pixels: int
    flags: list = field(default_factory=list)

    @classmethod
    def from_nats(cls, nats, se_nats, n_mc, latent_dims, image_pixels, flags=()):
        return cls(nats_total=nats, bits_per_dim=nats / (latent_dims * LN2),
                   bits_per_pixel=nats / (image_pixels * LN2), std_error=se_nats, n_mc=n_mc,
                   latent_dims=latent_dims, image_pixels=image_pixels, flags=list(flags))

    @property
    def se_bits_per_pixel(self):
        return self.std_error / (self.image_pixels * LN2)

    def as_dict(self):
        return asdict(self)


def stratified_mean(values):
    """Mean and standard error for one draw per equal-width stratum (in stratum order).

    The SE uses the collapsed-strata estimator: adjacent strata are paired and
    each pair's squared difference estimates its summed variance.
    """
    y = np.asarray(values, dtype=np.float64)
    n = len(y)
    if n < 2:
        return float(y.mean()), float("inf")
    m = n - n % 2
    d = y[0:m:2] - y[1:m:2]
    return float(y.mean()), float(math.sqrt(np.sum(d**2)) / n)


def _looks_untrained(module):
    out = getattr(module, "out", None) or getattr(module, "conv_out", None)
    return out is not None and bool((out.weight == 0).all())


@torch.no_grad()
def latent_elbo_samples(bundle: ModelBundle, x, t, seed, which_model="prior", chunk=0):
    """Per-draw unweighted ELBO (nats) of encoded ``x`` at times ``t``."""
    gen = torch_generator(seed, "bitrate_eps", chunk)
    mean, sigma_z = encode_distribution(bundle, x)
    z_clean = mean
    if sigma_z is not None:
        z_clean = mean + sigma_z * torch.randn(mean.shape, generator=gen, dtype=mean.dtype)
    eps = torch.randn(z_clean.shape, generator=gen, dtype=z_clean.dtype)
    mse_term, kl = prior_terms(bundle, z_clean, t, eps, model=which_model)
    total = mse_term + kl
    if sigma_z is not None:
        total = total + learned_variance_entropy(sigma_z, bundle.config.latent.lambda_z0)
    return total


@torch.no_grad()
def estimate_bitrate(bundle: ModelBundle, dataset, n_mc, which_model="prior", seed=0, batch_size=1024):
    """Monte-Carlo upper bound on KL[p(z0|x) || p(z0)] per image, as a :class:`BitrateReport`.

    Time is stratified: draw ``i`` uses ``t = (i + u_i) / n_mc``.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    if which_model not in ("prior", "base"):
        raise ValueError("which_model must be 'prior' or 'base'")
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    rng = numpy_rng(seed, "bitrate")
    data_idx = rng.integers(0, len(dataset), size=n_mc)
    t = (np.arange(n_mc) + rng.uniform(size=n_mc)) / n_mc
    bundle.eval()
    vals = []
    for k, start in enumerate(range(0, n_mc, batch_size)):
        sl = slice(start, min(n_mc, start + batch_size))
        x = torch.as_tensor(dataset.batch(data_idx[sl]), dtype=bundle.dtype)
        tt = torch.as_tensor(t[sl], dtype=bundle.dtype)
        vals.append(latent_elbo_samples(bundle, x, tt, seed, which_model, k).double().numpy())
    vals = np.concatenate(vals)
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite bitrate samples")
    mean, se = stratified_mean(vals)
    model = bundle.prior if which_model == "prior" else bundle.base
    flags = ["untrained"] if _looks_untrained(model) else []
    H, W, _ = bundle.config.encoder.image_shape
    return BitrateReport.from_nats(mean, se, n_mc, bundle.config.latent.dims, H * W, flags)


# ---------------------------------------------------------------- PSNR

def psnr(x, y, peak=2.0):
    """10 log10(peak^2 / MSE) over all elements; identical inputs give ``PSNR_CAP``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak**2 / mse))


def mean_psnr(xs, ys, peak=2.0):
    """Per-image PSNR averaged over the batch; returns (mean, standard error)."""
    xs = np.asarray(xs)
    ys = np.asarray(ys)
    vals = np.array([psnr(a, b, peak) for a, b in zip(xs, ys)])
    se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else float("inf")
    return float(vals.mean()), se


# ---------------------------------------------------------------- Frechet distance

RIDGE = 1e-6


def _fit(feats):
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim == 1:
        feats = feats[:, None]
    if len(feats) < 2:
        raise ValueError("need at least 2 vectors per set")
    return feats.mean(axis=0), np.atleast_2d(np.cov(feats, rowvar=False))


def _psd_sqrt(m):
    w, v = np.linalg.eigh((m + m.T) / 2)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def frechet_from_moments(mu_a, cov_a, mu_b, cov_b):
    d = cov_a.shape[0]
    scale = max(np.trace(cov_a), np.trace(cov_b), 1e-300) / d
    if min(np.linalg.eigvalsh(cov_a).min(), np.linalg.eigvalsh(cov_b).min()) < 1e-10 * scale:
        cov_a = cov_a + RIDGE * np.eye(d)
        cov_b = cov_b + RIDGE * np.eye(d)
    ra = _psd_sqrt(cov_a)
    cross = np.linalg.eigvalsh(ra @ cov_b @ ra)
    dist = float(np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a) + np.trace(cov_b)
                 - 2.0 * np.sum(np.sqrt(np.clip(cross, 0, None))))
    return max(dist, 0.0)


def frechet_distance(features_a, features_b):
    mu_a, cov_a = _fit(features_a)
    mu_b, cov_b = _fit(features_b)
    if mu_a.shape != mu_b.shape:
        raise ValueError("feature dimensionality differs")
    return frechet_from_moments(mu_a, cov_a, mu_b, cov_b)


def frechet_bootstrap_se(features_a, features_b, n_boot=20, seed=0):
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    rng = numpy_rng(seed, "frechet_bootstrap")
    vals = []
    for _ in range(n_boot):
        i = rng.integers(0, len(a), len(a))
        # paired resampling when the sets are aligned (reconstructions vs originals)
        j = i if len(a) == len(b) else rng.integers(0, len(b), len(b))
        vals.append(frechet_distance(a[i], b[j]))
    return float(np.std(vals, ddof=1))


class FeatureNet(nn.Module):
    def __init__(self, channels, n_classes, width=16, feat_dim=32):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, width, 3, padding=1)
        self.conv2 = nn.Conv2d(width, 2 * width, 3, padding=1)
        self.fc = nn.Linear(2 * width, feat_dim)
        self.head = nn.Linear(feat_dim, n_classes)

    def features(self, x):
        h = F.avg_pool2d(F.silu(self.conv1(x)), 2)
        h = F.silu(self.conv2(h)).mean(dim=(2, 3))
        return self.fc(h)

    def forward(self, x):
        return self.head(F.silu(self.features(x)))


_FEATURE_CACHE = {}


def fit_feature_net(dataset, seed=0, steps=300, batch_size=64, lr=3e-3):
    """Small classifier trained on the dataset's labels, then frozen; cached per (spec, seed, steps)."""
    key = (getattr(dataset, "spec", id(dataset)), seed, steps)
    if key in _FEATURE_CACHE:
        return _FEATURE_CACHE[key]
    torch.manual_seed(seed)
    _, _, C = dataset.image_shape
    net = FeatureNet(C, max(dataset.num_classes, 2))
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    rng = numpy_rng(seed, "feature_net")
    for _ in range(steps):
        idx = rng.integers(0, len(dataset), batch_size)
        x = torch.as_tensor(dataset.batch(idx))
        y = torch.as_tensor(dataset.labels(idx))
        loss = F.cross_entropy(net(x), y)
        opt.zero_grad()
        loss.backward()
        opt.step()
    net.eval()
    for p in net.parameters():
        p.requires_grad_(False)
    _FEATURE_CACHE[key] = net
    return net


def random_feature_net(channels, seed=0):
    """Fixed random-projection alternative to the trained extractor."""
    torch.manual_seed(seed)
    net = FeatureNet(channels, 2).eval()
    for p in net.parameters():
        p.requires_grad_(False)
    return net


@torch.no_grad()
def extract_features(net, images, batch_size=512):
    images = torch.as_tensor(np.asarray(images), dtype=torch.float32)
    return np.concatenate([net.features(images[i:i + batch_size]).double().numpy()
                           for i in range(0, len(images), batch_size)]) if len(images) else np.zeros((0, 1))


def rfid(bundle, dataset, n, sampler_cfg: SamplerConfig, feature_net=None, reconstructor=None, seed=0,
         return_images=False):
    """Frechet distance between features of reconstructions and of the same originals.

    Returns ``(distance, bootstrap_se)`` (plus ``(originals, recons)`` if asked).
    """
    if n < 2:
        raise ValueError("rfid needs n >= 2 (covariance undefined otherwise)")
    n = min(n, len(dataset))
    idx = numpy_rng(seed, "rfid_subset").permutation(len(dataset))[:n]
    originals = dataset.batch(np.sort(idx))
    if reconstructor is None:
        recons = reconstruct(bundle, torch.as_tensor(originals), sampler_cfg).float().numpy()
    else:
        recons = np.asarray(reconstructor(originals))
    net = feature_net or fit_feature_net(dataset, seed)
    fa, fb = extract_features(net, recons), extract_features(net, originals)
    out = (frechet_distance(fa, fb), frechet_bootstrap_se(fa, fb, seed=seed))
    return out + (originals, recons) if return_images else out


# ---------------------------------------------------------------- FLOPs

def flop_count(config, mode="inference"):
    """FLOPs of one forward pass counting linear maps (2 * tokens * in * out) and
    attention score/apply products (2 * T^2 * d each); ``training`` is 3x."""
    if mode not in ("inference", "training"):
        raise ValueError("mode must be 'inference' or 'training'")
    total = 0
    for entry in netlib.layer_inventory(config):
        if entry[0] == "linear":
            _, tokens, fan_in, fan_out = entry
            total += 2 * tokens * fan_in * fan_out
        else:
            _, tokens, dim, _heads = entry
            total += 2 * (2 * tokens * tokens * dim)
    return 3 * total if mode == "training" else total


def model_flops(model_config, mode="inference"):
    nets = {"encoder": model_config.encoder, "prior": model_config.prior, "decoder": model_config.decoder}
    if model_config.base is not None:
        nets["base"] = model_config.base
    return {name: flop_count(cfg, mode) for name, cfg in nets.items()}


# ---------------------------------------------------------------- evaluation

def evaluate(bundle: ModelBundle, dataset, sampler_cfg: SamplerConfig, n_bitrate=4096, n_recon=256,
             seed=0, feature_net=None, which_model="prior"):
    """Bitrate, mean reconstruction PSNR and rFID for one bundle on one dataset."""
    report = estimate_bitrate(bundle, dataset, n_bitrate, which_model=which_model, seed=seed)
    fid, fid_se, originals, recons = rfid(bundle, dataset, n_recon, sampler_cfg, feature_net,
                                          seed=seed, return_images=True)
    p, p_se = mean_psnr(originals, recons)
    return {"bitrate": report, "psnr": p, "psnr_se": p_se, "rfid": fid, "rfid_se": fid_se,
            "n_recon": len(originals)}


METRIC_FIELDS = ("metric", "value", "std_error", "n", "seed", "checkpoint_id")


def metric_rows(result, seed, checkpoint_id):
    rep = result["bitrate"]
    return [
        {"metric": "bits_per_pixel", "value": rep.bits_per_pixel, "std_error": rep.se_bits_per_pixel,
         "n": rep.n_mc, "seed": seed, "checkpoint_id": checkpoint_id},
        {"metric": "bits_per_dim", "value": rep.bits_per_dim,
         "std_error": rep.std_error / (rep.latent_dims * LN2), "n": rep.n_mc, "seed": seed,
         "checkpoint_id": checkpoint_id},
        {"metric": "latent_nats", "value": rep.nats_total, "std_error": rep.std_error, "n": rep.n_mc,
         "seed": seed, "checkpoint_id": checkpoint_id},
        {"metric": "psnr", "value": result["psnr"], "std_error": result["psnr_se"], "n": result["n_recon"],
         "seed": seed, "checkpoint_id": checkpoint_id},
        {"metric": "rfid", "value": result["rfid"], "std_error": result["rfid_se"], "n": result["n_recon"],
         "seed": seed, "checkpoint_id": checkpoint_id},
    ]


def write_metric_rows(path, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return path
