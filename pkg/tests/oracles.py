"""Independent reference implementations used to pin expected values.

Nothing here imports the package: formulas are re-derived with mpmath / plain numpy.
"""
import math

import mpmath as mp
import numpy as np
import torch

mp.mp.dps = 50


def sigma_of_lambda(lam):
    return float(mp.sqrt(1 / (1 + mp.e ** mp.mpf(lam))))


def alpha_of_lambda(lam):
    return float(mp.sqrt(1 / (1 + mp.e ** (-mp.mpf(lam)))))


def elbo_weight_linear(lmax, lmin, lam):
    return float((mp.mpf(lmax) - lmin) * mp.e ** mp.mpf(lam) / 2)


def kl_gauss(m, v):
    """KL[N(m, v) || N(0, 1)] in high precision."""
    m, v = mp.mpf(m), mp.mpf(v)
    return float((m * m + v - 1 - mp.log(v)) / 2)


def endpoint_kl(z, lam_min):
    """Sum over dims of KL[N(alpha z, sigma^2) || N(0, 1)] at lam_min."""
    a2 = 1 / (1 + mp.e ** (-mp.mpf(lam_min)))
    s2 = 1 - a2
    return float(sum((a2 * mp.mpf(float(zi)) ** 2 + s2 - 1 - mp.log(s2)) / 2 for zi in np.ravel(z)))


def gaussian_toy_expected_bitrate(s2, lam_max, lam_min):
    """Expected unweighted latent ELBO (nats per dim) for z_clean ~ N(0, s2) and the Bayes denoiser.

    The diffusion term integrates to 0.5 ln(1+s2 e^lmax) - 0.5 ln(1+s2 e^lmin); the
    endpoint KL adds 0.5 (a^2 s2 + sigma^2 - 1 - ln sigma^2) at lmin.
    """
    s2 = mp.mpf(s2)
    diff = (mp.log(1 + s2 * mp.e ** mp.mpf(lam_max)) - mp.log(1 + s2 * mp.e ** mp.mpf(lam_min))) / 2
    a2 = 1 / (1 + mp.e ** (-mp.mpf(lam_min)))
    sg2 = 1 - a2
    end = (a2 * s2 + sg2 - 1 - mp.log(sg2)) / 2
    return float(diff + end)


def gaussian_mutual_information(s2, lam):
    """I(z_clean; z_lam) for z_clean ~ N(0, s2), per dim."""
    return float(mp.log(1 + mp.mpf(s2) * mp.e ** mp.mpf(lam)) / 2)


def psnr_ref(x, y, peak):
    mse = float(np.mean((np.asarray(x, np.float64) - np.asarray(y, np.float64)) ** 2))
    return 10 * math.log10(peak * peak / mse)


def frechet_ref(mu1, c1, mu2, c2):
    """Frechet distance via the eigenvalues of c1 c2 (similar to a symmetric PSD matrix)."""
    ev = np.linalg.eigvals(np.asarray(c1) @ np.asarray(c2))
    return float(np.sum((mu1 - mu2) ** 2) + np.trace(c1) + np.trace(c2) - 2 * np.sum(np.sqrt(np.abs(ev))))


def ddpm_chain_variance(lams, s2, eta):
    """Exact variance of the final state of the reverse chain for N(0, s2) data and the Bayes
    denoiser, propagated step by step (the chain is linear-Gaussian)."""
    lams = [mp.mpf(l) for l in lams]
    var = mp.mpf(1)
    for lt, ls in zip(lams[:-1], lams[1:]):
        at, st = mp.sqrt(1 / (1 + mp.e ** -lt)), mp.sqrt(1 / (1 + mp.e ** lt))
        as_, ss = mp.sqrt(1 / (1 + mp.e ** -ls)), mp.sqrt(1 / (1 + mp.e ** ls))
        # Bayes x-prediction is linear: x_hat = g z_t with g = at s2 / (at^2 s2 + st^2)
        g = at * s2 / (at * at * s2 + st * st)
        c = 1 - mp.e ** (lt - ls)
        extra = eta * eta * c * ss * ss
        k = mp.sqrt(max(ss * ss - extra, 0))
        coef = as_ * g + k * (1 - at * g) / st
        var = coef * coef * var + extra
    return float(var)


def linear_stack_flops(tokens, dims):
    """Hand count for a token-wise MLP: one (2 * in * out) multiply-add per token per layer."""
    return sum(2 * tokens * a * b for a, b in zip(dims[:-1], dims[1:]))


def fd_check(loss_fn, params, eps=1e-5, floor=1e-5):
    """Worst per-parameter |fd - g| / max(|fd|, |g|, floor).

    The floor keeps structurally-zero gradients (attention key biases) from turning
    finite-difference round-off into a relative error of 1.
    """
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params)
    worst = 0.0
    with torch.no_grad():
        for p, g in zip(params, grads):
            flat = p.view(-1)
            gflat = g.reshape(-1)
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + eps
                up = loss_fn().item()
                flat[i] = old - eps
                dn = loss_fn().item()
                flat[i] = old
                fd = (up - dn) / (2 * eps)
                err = abs(fd - gflat[i].item()) / max(abs(fd), abs(gflat[i].item()), floor)
                worst = max(worst, err)
    return worst
