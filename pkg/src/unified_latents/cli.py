"""Command-line entry point: ``unified-latents <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgio
from . import datagen, metrics, sampler, trainer
from .netlib import load_checkpoint

log = logging.getLogger("unified_latents")

ABLATION_FLAGS = ("stop_gradient_prior", "high_precision_latents", "learned_variance", "mse_reconstruction",
                  "normal_prior")


class CliError(Exception):
    pass


# ---------------------------------------------------------------- helpers

def _overrides(args):
    out = {}
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise CliError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value.strip()
    if getattr(args, "seed", None) is not None:
        out["seed"] = str(args.seed)
    if getattr(args, "steps", None) is not None:
        out["train.steps"] = str(args.steps)
    for flag in ABLATION_FLAGS:
        if getattr(args, flag, False):
            out[f"train.{flag}"] = "true"
    return out


def _load_config(path, args, stage=None):
    if path is None:
        raise CliError("--config is required")
    over = _overrides(args)
    if stage is not None:
        over["train.stage"] = stage
    try:
        return trainer.load_run_config(path, over)
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _run_dir_config(run_dir):
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise CliError(f"run directory not found: {run_dir}")
    cfg_path = run_dir / "config.txt"
    if not cfg_path.is_file():
        raise CliError(f"run directory {run_dir} has no config.txt")
    return trainer.load_run_config(cfg_path)


def latest_checkpoint(run_dir, prefixes=("base", "single", "ae")):
    ckdir = Path(run_dir) / "checkpoints"
    for prefix in prefixes:
        found = sorted(ckdir.glob(f"{prefix}_step*.npz"))
        if found:
            return found[-1]
    raise CliError(f"no checkpoint under {ckdir}")


def _datasets(run):
    return datagen.train_eval_split(run.data, run.eval.n_eval)


def _guard_output(path: Path, overwrite):
    if path.exists() and not overwrite:
        raise CliError(f"{path} exists (pass --overwrite to replace it)")


def _summary(record):
    last = record.losses[-1] if record.losses else None
    if last is not None:
        print("final loss: " + " ".join(f"{k}={last[k]:.6f}" for k in
                                        ("total", "prior_mse_term", "endpoint_kl", "decoder_term",
                                         "entropy_term", "regularizer_term", "base_term")))
    if record.bitrate is not None:
        b = record.bitrate
        print(f"bitrate: bits_per_pixel={b.bits_per_pixel:.6f} (se {b.se_bits_per_pixel:.6f}) "
              f"bits_per_dim={b.bits_per_dim:.6f} n_mc={b.n_mc}" + (f" flags={b.flags}" if b.flags else ""))
    print(f"run dir: {record.run_dir}")


# ---------------------------------------------------------------- commands

def cmd_train_ae(args):
    run = _load_config(args.config, args, stage="single" if args.single_stage else "1")
    train_ds, _ = _datasets(run)
    fn = trainer.train_single_stage if args.single_stage else trainer.train_stage1
    _summary(fn(run, train_ds, run_dir=args.run_dir, overwrite=args.overwrite))
    return 0


def cmd_train_base(args):
    ae_dir = Path(args.ae_run)
    if not ae_dir.is_dir():
        raise CliError(f"stage-1 run directory not found: {ae_dir}")
    ckpt = latest_checkpoint(ae_dir, ("ae", "single"))
    run = _load_config(args.config, args, stage="2")
    info = load_checkpoint(ckpt)[1]
    if run.lambda_z0 != info["lambda_z0"]:
        raise CliError(f"base schedule lambda_max {run.lambda_z0} does not match the stage-1 "
                       f"lambda_z0 {info['lambda_z0']}")
    train_ds, _ = _datasets(run)
    _summary(trainer.train_stage2(ckpt, run, train_ds, run_dir=args.run_dir, overwrite=args.overwrite))
    return 0


def _sampler_cfg(run, args):
    cfg = run.sampler
    if getattr(args, "sample_steps", None) is not None:
        cfg = replace(cfg, steps=args.sample_steps)
    if getattr(args, "sample_seed", None) is not None:
        cfg = replace(cfg, seed=args.sample_seed)
    return cfg


def _write_images(images, folder, overwrite, extra):
    folder = Path(folder)
    if folder.exists() and any(folder.iterdir()):
        if not overwrite:
            raise CliError(f"{folder} is not empty (pass --overwrite to replace it)")
        for p in folder.iterdir():
            p.unlink()
    paths = datagen.save_images(images, folder)
    manifest = {"files": [p.name for p in paths], **extra}
    (folder / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return paths


def cmd_sample(args):
    run = _run_dir_config(args.run_dir)
    ckpt = latest_checkpoint(args.run_dir)
    bundle, _ = load_checkpoint(ckpt, use_ema=True)
    cfg = _sampler_cfg(run, args)
    model = "base" if bundle.base is not None else "prior"
    images = sampler.generate(bundle, bundle, args.n, cfg, model=model).float().numpy()
    out = Path(args.run_dir) / "samples"
    _write_images(images, out, args.overwrite, {"checkpoint": ckpt.name, "model": model,
                                                 "sampler": cfgio.to_dict(cfg), "n": args.n})
    print(f"wrote {len(images)} samples to {out}")
    return 0


def cmd_reconstruct(args):
    run = _run_dir_config(args.run_dir)
    ckpt = latest_checkpoint(args.run_dir)
    bundle, _ = load_checkpoint(ckpt, use_ema=True)
    _, eval_ds = _datasets(run)
    n = min(args.n, len(eval_ds))
    x = eval_ds.batch(np.arange(n))
    recon = sampler.reconstruct(bundle, x, _sampler_cfg(run, args)).float().numpy()
    out = Path(args.run_dir) / "reconstructions"
    _write_images(np.concatenate([x, recon]), out, args.overwrite,
                  {"checkpoint": ckpt.name, "originals": n, "layout": "originals then reconstructions"})
    p, se = metrics.mean_psnr(x, recon)
    print(f"psnr={p:.4f} (se {se:.4f}) over {n} images; wrote {out}")
    return 0


def cmd_eval(args):
    run = _run_dir_config(args.run_dir)
    ckpt = latest_checkpoint(args.run_dir)
    out = Path(args.run_dir) / "metrics.csv"
    _guard_output(out, args.overwrite)
    bundle, _ = load_checkpoint(ckpt, use_ema=True)
    _, eval_ds = _datasets(run)
    n_bitrate = args.n_bitrate or run.eval.n_bitrate
    n_recon = args.n_recon or run.eval.n_recon
    fnet = metrics.fit_feature_net(eval_ds, seed=run.seed, steps=run.eval.feature_steps)
    model = args.model
    if model == "base" and bundle.base is None:
        raise CliError("checkpoint has no base model")
    res = metrics.evaluate(bundle, eval_ds, _sampler_cfg(run, args), n_bitrate, n_recon, seed=run.seed,
                           feature_net=fnet, which_model=model)
    rows = metrics.metric_rows(res, run.seed, ckpt.name)
    metrics.write_metric_rows(out, rows)
    for r in rows:
        print(f"{r['metric']},{r['value']!r},{r['std_error']!r}")
    return 0


def cmd_sweep(args):
    run = _load_config(args.config, args, stage="1")
    out = Path(args.run_dir) / "sweep.csv"
    _guard_output(out, args.overwrite)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise CliError("--values is empty")
    runs = [cfgio.loads(trainer.RunConfig, cfgio.dumps(run), overrides={args.axis: v}) for v in values]
    train_ds, eval_ds = _datasets(run)
    fnet = metrics.fit_feature_net(eval_ds, seed=run.seed, steps=run.eval.feature_steps)
    rows = trainer.sweep(runs, train_ds, eval_ds, out_csv=out, run_root=args.run_dir, feature_net=fnet)
    for r in rows:
        print(json.dumps(r))
    failed = [r for r in rows if r.get("error")]
    return 1 if failed else 0


def cmd_flops(args):
    run = _load_config(args.config, args)
    mc = trainer.model_config(run, with_base=True)
    inf = metrics.model_flops(mc, "inference")
    tr = metrics.model_flops(mc, "training")
    print("network,inference_flops,training_flops")
    for name in inf:
        print(f"{name},{inf[name]},{tr[name]}")
    print(f"total,{sum(inf.values())},{sum(tr.values())}")
    return 0


def cmd_export_data(args):
    run = _load_config(args.config, args)
    out = Path(args.out)
    ds = datagen.generate(run.data)
    _write_images(ds.all(), out, args.overwrite, {"dataset": cfgio.to_dict(run.data)})
    print(f"wrote {len(ds)} images to {out}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="unified-latents", description="Unified latents training and evaluation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True, run_dir=True):
        if config:
            sp.add_argument("--config", required=True, help="flat key = value run config")
            sp.add_argument("--seed", type=int)
            sp.add_argument("--steps", type=int)
            sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (repeatable)")
        if run_dir:
            sp.add_argument("--run-dir", required=True)
        sp.add_argument("--overwrite", action="store_true")

    def ablations(sp):
        for flag in ABLATION_FLAGS:
            sp.add_argument("--" + flag.replace("_", "-"), dest=flag, action="store_true")

    def sampling(sp):
        sp.add_argument("--sample-steps", type=int)
        sp.add_argument("--sample-seed", type=int)

    sp = sub.add_parser("train-ae", help="stage-1 joint training")
    common(sp)
    ablations(sp)
    sp.add_argument("--single-stage", action="store_true", help="train a base model concurrently")
    sp.set_defaults(func=cmd_train_ae)

    sp = sub.add_parser("train-base", help="stage-2 base model on frozen latents")
    common(sp)
    sp.add_argument("--ae-run", required=True, help="stage-1 run directory")
    sp.set_defaults(func=cmd_train_base)

    sp = sub.add_parser("sample", help="generate images from a run")
    common(sp, config=False)
    sampling(sp)
    sp.add_argument("--n", type=int, default=64)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("reconstruct", help="encode and decode held-out images")
    common(sp, config=False)
    sampling(sp)
    sp.add_argument("--n", type=int, default=16)
    sp.set_defaults(func=cmd_reconstruct)

    sp = sub.add_parser("eval", help="bitrate, PSNR and rFID rows")
    common(sp, config=False)
    sampling(sp)
    sp.add_argument("--n-bitrate", type=int)
    sp.add_argument("--n-recon", type=int)
    sp.add_argument("--model", choices=("prior", "base"), default="prior", help="bitrate model")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("sweep", help="train and evaluate along one config axis")
    common(sp)
    ablations(sp)
    sp.add_argument("--axis", default="weighting.loss_factor")
    sp.add_argument("--values", required=True, help="comma-separated values")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("flops", help="inference and training FLOPs per network")
    common(sp, run_dir=False)
    sp.set_defaults(func=cmd_flops)

    sp = sub.add_parser("export-data", help="write the configured dataset as PNG files")
    common(sp, run_dir=False)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_export_data)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, cfgio.ConfigError, FileNotFoundError, FileExistsError, ValueError,
            trainer.DivergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
