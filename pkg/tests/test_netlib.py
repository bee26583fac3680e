import numpy as np
import pytest
import torch

from unified_latents.netlib import (DenoiserConfig, EncoderConfig, LatentSpec, LinearStackConfig, ModelConfig,
                                    build_bundle, denoise_base, denoise_decoder, denoise_prior, encode,
                                    encode_distribution, layer_inventory, load_checkpoint, make_network,
                                    parameter_checksum, parameter_count, read_checkpoint_meta, save_checkpoint)
from unified_latents.schedule import NoiseSchedule, alpha_sigma

from oracles import fd_check
from conftest import tiny_model_config


def _double(cfg, seed=0):
    return build_bundle(cfg, seed).to(torch.float64)


def test_latent_and_encoder_config_validation():
    with pytest.raises(ValueError):
        LatentSpec(0, 4, 4)
    with pytest.raises(ValueError):
        LatentSpec(4, 4, 4, float("nan"))
    with pytest.raises(ValueError):
        EncoderConfig((15, 15, 1), LatentSpec(4, 4, 4), widths=(8, 8), patch=2)
    with pytest.raises(ValueError):
        EncoderConfig((16, 16, 1), LatentSpec(8, 8, 4), widths=(8, 8), patch=2)
    assert EncoderConfig((16, 16, 1), LatentSpec(4, 4, 4), widths=(8, 8), patch=2).downsampling == 4


@pytest.mark.parametrize("role,cond", [("decoder", "none"), ("prior", "latent"), ("base", "latent")])
def test_denoiser_role_conditioning_rule(role, cond):
    with pytest.raises(ValueError):
        DenoiserConfig(role, (4, 4, 4), conditioning=cond, cond_shape=(4, 4, 4))


def test_model_config_requires_matching_lambda():
    cfg = tiny_model_config()
    with pytest.raises(ValueError):
        ModelConfig(cfg.encoder, cfg.prior, cfg.decoder, None, NoiseSchedule(6.0, -15.0))


def test_encode_deterministic_and_batch_order(tiny_bundle):
    x = torch.rand(5, 1, 4, 4) * 2 - 1
    z1, z2 = encode(tiny_bundle, x), encode(tiny_bundle, x)
    assert torch.equal(z1, z2) and z1.shape == (5, 1, 2, 2)
    z_rev = encode(tiny_bundle, x.flip(0))
    torch.testing.assert_close(z_rev, z1.flip(0))


def test_encode_rejects_bad_input(tiny_bundle):
    with pytest.raises(ValueError):
        encode(tiny_bundle, torch.zeros(2, 1, 8, 8))
    bad = torch.zeros(2, 1, 4, 4)
    bad[0, 0, 0, 0] = float("nan")
    with pytest.raises(ValueError):
        encode(tiny_bundle, bad)


def test_fresh_encoder_output_scale():
    from unified_latents.trainer import RunConfig, model_config

    bundle = build_bundle(model_config(RunConfig()), seed=0)
    x = torch.randn(1000, 1, 16, 16, generator=torch.Generator().manual_seed(0))
    with torch.no_grad():
        sd = encode(bundle, x).std().item()
    assert 0.1 <= sd <= 10


def test_denoiser_shapes_and_lambda_range():
    b = build_bundle(tiny_model_config(with_base=True), 0)
    z = torch.randn(3, 1, 2, 2)
    assert denoise_prior(b, z, torch.zeros(3)).shape == z.shape
    assert denoise_base(b, z, -3.0).shape == z.shape
    x = torch.randn(3, 1, 4, 4)
    assert denoise_decoder(b, x, z, torch.zeros(3)).shape == x.shape
    with pytest.raises(ValueError):
        denoise_prior(b, z, torch.full((3,), 6.0))
    with pytest.raises(ValueError):
        denoise_decoder(b, x, z, torch.full((3,), 16.0))
    with pytest.raises(ValueError):
        denoise_decoder(b, x, z[:2], torch.zeros(3))


def test_zero_init_output_gives_signal_scaled_prediction():
    b = build_bundle(tiny_model_config(zero_init_out=True), 0)
    z = torch.randn(2, 1, 2, 2)
    lam = torch.tensor([-2.0, 3.0])
    a = alpha_sigma(lam).alpha.reshape(2, 1, 1, 1)
    torch.testing.assert_close(denoise_prior(b, z, lam), a * z)


def test_decoder_conditioning_is_live():
    b = build_bundle(tiny_model_config(zero_init_out=False), 1)
    g = torch.Generator().manual_seed(0)
    x = torch.randn(4, 1, 4, 4, generator=g)
    z = torch.randn(4, 1, 2, 2, generator=g)
    d = torch.randn(4, 1, 2, 2, generator=g)
    lam = torch.zeros(4)
    diff = (denoise_decoder(b, x, z, lam) - denoise_decoder(b, x, z + d, lam)).norm()
    assert diff > 0


def test_lambda_conditioning_changes_outputs():
    b = build_bundle(tiny_model_config(zero_init_out=False, with_base=True), 2)
    z = torch.randn(2, 1, 2, 2)
    x = torch.randn(2, 1, 4, 4)
    for fn, args in ((denoise_prior, (z,)), (denoise_base, (z,))):
        assert not torch.equal(fn(b, *args, torch.full((2,), -1.0)), fn(b, *args, torch.full((2,), 1.0)))
    assert not torch.equal(denoise_decoder(b, x, z, torch.full((2,), -1.0)),
                           denoise_decoder(b, x, z, torch.full((2,), 1.0)))


def _fd_check(loss_fn, params, eps=1e-5, tol=1e-4, floor=1e-5):
    worst = fd_check(loss_fn, params, eps, floor)
    assert worst < tol, worst
    return worst


@pytest.mark.parametrize("which", ["prior", "decoder", "base"])
def test_denoiser_gradients_match_finite_differences(which):
    b = _double(tiny_model_config(zero_init_out=False, with_base=True), 4)
    g = torch.Generator().manual_seed(1)
    z = torch.randn(3, 1, 2, 2, generator=g, dtype=torch.float64)
    x = torch.randn(3, 1, 4, 4, generator=g, dtype=torch.float64)
    lam = torch.tensor([-3.0, 0.5, 2.0], dtype=torch.float64)
    if which == "decoder":
        net = b.decoder
        fn = lambda: ((x - denoise_decoder(b, 0.7 * x, z, lam)) ** 2).sum()
    else:
        net = getattr(b, which)
        den = denoise_prior if which == "prior" else denoise_base
        fn = lambda: ((z - den(b, 0.5 * z, lam)) ** 2).sum()
    assert sum(p.numel() for p in net.parameters()) <= 1000
    _fd_check(fn, list(net.parameters()))


def test_prior_overfits_single_latent():
    torch.manual_seed(0)
    cfg = DenoiserConfig("prior", (2, 2, 2), widths=(16,), blocks=1, heads=2, emb_dim=8)
    net = make_network(cfg, 0, "prior")
    target = torch.randn(1, 2, 2, 2, generator=torch.Generator().manual_seed(3))
    opt = torch.optim.Adam(net.parameters(), lr=3e-3)
    g = torch.Generator().manual_seed(4)
    for _ in range(2000):
        lam = torch.rand(16, generator=g) * 20 - 15
        ab = alpha_sigma(lam)
        z_t = ab.alpha.reshape(-1, 1, 1, 1) * target + ab.sigma.reshape(-1, 1, 1, 1) * torch.randn(16, 2, 2, 2, generator=g)
        loss = ((net(z_t, lam) - target) ** 2).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
    with torch.no_grad():
        lam = torch.linspace(-15, 5, 64)
        ab = alpha_sigma(lam)
        z_t = ab.alpha.reshape(-1, 1, 1, 1) * target + ab.sigma.reshape(-1, 1, 1, 1) * torch.randn(64, 2, 2, 2, generator=g)
        mse = ((net(z_t, lam) - target) ** 2).mean().item()
    assert mse < 1e-3


def test_dropout_only_in_training_mode():
    cfg = DenoiserConfig("base", (2, 2, 1), widths=(8,), blocks=1, heads=2, dropout_rate=0.5, emb_dim=4,
                         zero_init_out=False)
    net = make_network(cfg, 0, "base")
    z = torch.randn(4, 1, 2, 2)
    lam = torch.zeros(4)
    net.eval()
    assert torch.equal(net(z, lam), net(z, lam))
    net.train()
    torch.manual_seed(0)
    a = net(z, lam)
    b = net(z, lam)
    assert not torch.equal(a, b)


def test_initialisation_is_seed_deterministic():
    cfg = tiny_model_config()
    a, b, c = build_bundle(cfg, 5), build_bundle(cfg, 5), build_bundle(cfg, 6)
    for name in a.modules():
        assert parameter_checksum(a.modules()[name]) == parameter_checksum(b.modules()[name])
    assert parameter_checksum(a.encoder) != parameter_checksum(c.encoder)


def test_parameter_count_without_running():
    from unified_latents.trainer import RunConfig, model_config

    mc = model_config(RunConfig(), with_base=True)
    bundle = build_bundle(mc, 0)
    for name, cfg in (("encoder", mc.encoder), ("prior", mc.prior), ("decoder", mc.decoder), ("base", mc.base)):
        assert parameter_count(cfg) == sum(p.numel() for p in bundle.modules()[name].parameters())


def test_layer_inventory_reference_stack():
    inv = layer_inventory(LinearStackConfig(tokens=4, dims=(8, 16, 4)))
    assert inv == [("linear", 4, 8, 16), ("linear", 4, 16, 4)]


def test_checkpoint_roundtrip_bit_identical(tmp_path):
    cfg = tiny_model_config(learned_variance=True, with_base=True, zero_init_out=False)
    b = build_bundle(cfg, 9)
    path = save_checkpoint(tmp_path / "c.npz", b, meta={"step": 3})
    meta = read_checkpoint_meta(path)
    assert meta["lambda_z0"] == 5.0 and meta["loss_factor"] == 1.5 and meta["bias"] == 0.0
    assert meta["seed"] == 9 and meta["meta"]["step"] == 3
    b2, info = load_checkpoint(path)
    x = torch.rand(3, 1, 4, 4) * 2 - 1
    with torch.no_grad():
        m1, s1 = encode_distribution(b, x)
        m2, s2 = encode_distribution(b2, x)
        assert torch.equal(m1, m2) and torch.equal(s1, s2)
        z = torch.randn(3, 1, 2, 2)
        assert torch.equal(denoise_decoder(b, x, z, torch.zeros(3)), denoise_decoder(b2, x, z, torch.zeros(3)))
        assert torch.equal(denoise_base(b, z, torch.zeros(3)), denoise_base(b2, z, torch.zeros(3)))


def test_checkpoint_rejects_nonfinite(tmp_path):
    b = build_bundle(tiny_model_config(), 0)
    with torch.no_grad():
        next(b.encoder.parameters()).view(-1)[0] = float("nan")
    save_checkpoint(tmp_path / "bad.npz", b)
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad.npz")
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.npz")


def test_checkpoint_ema_weights(tmp_path):
    b = build_bundle(tiny_model_config(), 0)
    ema = {n: {k: torch.zeros_like(v) for k, v in m.state_dict().items()} for n, m in b.modules().items()}
    save_checkpoint(tmp_path / "e.npz", b, ema=ema)
    raw, _ = load_checkpoint(tmp_path / "e.npz")
    avg, _ = load_checkpoint(tmp_path / "e.npz", use_ema=True)
    assert parameter_checksum(raw.encoder) == parameter_checksum(b.encoder)
    assert all(float(p.detach().abs().sum()) == 0.0 for p in avg.encoder.parameters())
