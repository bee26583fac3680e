"""Sub-seed derivation: every random stream is a stable hash of (seed, role...)."""
import hashlib

import numpy as np
import torch


def derive_seed(seed, *roles):
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed)).encode())
    for r in roles:
        h.update(b"\x1f")
        h.update(str(r).encode())
    return int.from_bytes(h.digest(), "little") & 0x7FFF_FFFF_FFFF_FFFF


def torch_generator(seed, *roles):
    g = torch.Generator(device="cpu")
    g.manual_seed(derive_seed(seed, *roles))
    return g


def numpy_rng(seed, *roles):
    return np.random.default_rng(derive_seed(seed, *roles))
