"""Per-sample rendering kernels for the synthetic corpora.

Each sample's randomness comes from a counter-based hash of (seed, index, slot),
so sample ``k`` depends on nothing but ``(seed, k)`` and batches can be rendered
in any order. Every kernel exists twice: an ``@njit`` loop version and a
vectorised numpy version. ``render_*`` dispatches on :data:`_accel.USE_NUMBA`.
"""
import numpy as np

from . import _accel
from ._accel import njit

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLD = np.uint64(0x9E3779B97F4A7C15)
_K2 = np.uint64(0xD1B54A32D192ED03)
_INV53 = 1.0 / 9007199254740992.0

# 3x5 bitmaps, rows top to bottom, 3 bits per row (msb = left column).
_GLYPH_ROWS = [
    (7, 5, 5, 5, 7), (2, 6, 2, 2, 7), (7, 1, 7, 4, 7), (7, 1, 3, 1, 7),
    (5, 5, 7, 1, 1), (7, 4, 7, 1, 7), (7, 4, 7, 5, 7), (7, 1, 2, 2, 2),
    (7, 5, 7, 5, 7), (7, 5, 7, 1, 7), (2, 5, 7, 5, 5), (7, 4, 4, 4, 7),
    (7, 4, 6, 4, 7), (5, 5, 7, 5, 5), (4, 4, 4, 4, 7), (5, 5, 5, 5, 7),
]
GLYPHS = np.array([[[(r >> (2 - c)) & 1 for c in range(3)] for r in rows] for rows in _GLYPH_ROWS],
                  dtype=np.float64)
N_GLYPHS = GLYPHS.shape[0]


# ------------------------------------------------------------------ hashing

@njit
def _hash_nb(seed, k, j):
    x = np.uint64(seed) * np.uint64(0x9E3779B97F4A7C15) + np.uint64(k) * np.uint64(0xD1B54A32D192ED03) \
        + np.uint64(j) * np.uint64(0xBF58476D1CE4E5B9)
    x = x ^ (x >> np.uint64(30))
    x = x * np.uint64(0xBF58476D1CE4E5B9)
    x = x ^ (x >> np.uint64(27))
    x = x * np.uint64(0x94D049BB133111EB)
    x = x ^ (x >> np.uint64(31))
    return (x >> np.uint64(11)) * (1.0 / 9007199254740992.0)


def uniforms_np(seed, idx, n):
    """(len(idx), n) uniforms in [0, 1)."""
    k = np.asarray(idx, dtype=np.uint64)[:, None]
    j = np.arange(n, dtype=np.uint64)[None, :]
    with np.errstate(over="ignore"):
        x = np.uint64(seed) * _GOLD + k * _K2 + j * _M1
        x = x ^ (x >> np.uint64(30))
        x = x * _M1
        x = x ^ (x >> np.uint64(27))
        x = x * _M2
        x = x ^ (x >> np.uint64(31))
    return (x >> np.uint64(11)).astype(np.float64) * _INV53


@njit
def uniforms_nb(seed, idx, n):
    out = np.empty((idx.shape[0], n))
    for a in range(idx.shape[0]):
        for j in range(n):
            out[a, j] = _hash_nb(seed, idx[a], j)
    return out


# ------------------------------------------------------------------ blobs
# slots: 0 mode, 1-2 jitter, 3 width, 4.. channel gains

def _blob_params(u, res, modes, jitter):
    mode = np.minimum((u[:, 0] * modes).astype(np.int64), modes - 1)
    ang = 2 * np.pi * mode / modes
    r = 0.3 * res
    cx = (res - 1) / 2 + r * np.cos(ang) + (u[:, 1] - 0.5) * 2 * jitter * res
    cy = (res - 1) / 2 + r * np.sin(ang) + (u[:, 2] - 0.5) * 2 * jitter * res
    width = res * (0.07 + 0.03 * u[:, 3])
    return mode, cx, cy, width


@njit
def _render_blobs_nb(seed, idx, res, channels, modes, jitter, out, labels):
    for a in range(idx.shape[0]):
        k = idx[a]
        mode = int(_hash_nb(seed, k, 0) * modes)
        if mode >= modes:
            mode = modes - 1
        ang = 2 * np.pi * mode / modes
        r = 0.3 * res
        cx = (res - 1) / 2 + r * np.cos(ang) + (_hash_nb(seed, k, 1) - 0.5) * 2 * jitter * res
        cy = (res - 1) / 2 + r * np.sin(ang) + (_hash_nb(seed, k, 2) - 0.5) * 2 * jitter * res
        width = res * (0.07 + 0.03 * _hash_nb(seed, k, 3))
        labels[a] = mode
        for c in range(channels):
            gain = 1.0 if channels == 1 else 0.4 + 0.6 * _hash_nb(seed, k, 4 + c)
            for y in range(res):
                for x in range(res):
                    d2 = (x - cx) ** 2 + (y - cy) ** 2
                    out[a, c, y, x] = -1.0 + 2.0 * gain * np.exp(-d2 / (2 * width * width))


def _render_blobs_np(seed, idx, res, channels, modes, jitter, out, labels):
    u = uniforms_np(seed, idx, 4 + channels)
    mode, cx, cy, width = _blob_params(u, res, modes, jitter)
    labels[:] = mode
    yy, xx = np.meshgrid(np.arange(res), np.arange(res), indexing="ij")
    d2 = (xx[None] - cx[:, None, None]) ** 2 + (yy[None] - cy[:, None, None]) ** 2
    bump = np.exp(-d2 / (2 * width[:, None, None] ** 2))
    for c in range(channels):
        gain = 1.0 if channels == 1 else 0.4 + 0.6 * u[:, 4 + c]
        out[:, c] = -1.0 + 2.0 * np.reshape(gain, (-1, 1, 1)) * bump


# ------------------------------------------------------------------ checkerboards
# slots: 0 frequency, 1-2 phase, 3 contrast, 4.. channel gains

@njit
def _render_checker_nb(seed, idx, res, channels, f_lo, f_hi, n_bins, out, labels):
    for a in range(idx.shape[0]):
        k = idx[a]
        uf = _hash_nb(seed, k, 0)
        freq = f_lo + (f_hi - f_lo) * uf
        b = int(uf * n_bins)
        labels[a] = b if b < n_bins else n_bins - 1
        px = _hash_nb(seed, k, 1)
        py = _hash_nb(seed, k, 2)
        contrast = 0.5 + 0.5 * _hash_nb(seed, k, 3)
        for c in range(channels):
            gain = 1.0 if channels == 1 else 0.4 + 0.6 * _hash_nb(seed, k, 4 + c)
            for y in range(res):
                for x in range(res):
                    sx = np.sin(2 * np.pi * (freq * (x + 0.5) / res + px))
                    sy = np.sin(2 * np.pi * (freq * (y + 0.5) / res + py))
                    out[a, c, y, x] = gain * contrast * np.tanh(4.0 * sx * sy)


def _render_checker_np(seed, idx, res, channels, f_lo, f_hi, n_bins, out, labels):
    u = uniforms_np(seed, idx, 4 + channels)
    freq = f_lo + (f_hi - f_lo) * u[:, 0]
    labels[:] = np.minimum((u[:, 0] * n_bins).astype(np.int64), n_bins - 1)
    grid = (np.arange(res) + 0.5) / res
    sx = np.sin(2 * np.pi * (freq[:, None] * grid[None, :] + u[:, 1:2]))
    sy = np.sin(2 * np.pi * (freq[:, None] * grid[None, :] + u[:, 2:3]))
    pattern = np.tanh(4.0 * sy[:, :, None] * sx[:, None, :])
    contrast = 0.5 + 0.5 * u[:, 3]
    for c in range(channels):
        gain = 1.0 if channels == 1 else 0.4 + 0.6 * u[:, 4 + c]
        out[:, c] = np.reshape(gain * contrast, (-1, 1, 1)) * pattern


# ------------------------------------------------------------------ sprites
# slots: 0-2 background (level, x-slope, y-slope); per glyph g: 3+4g id, x, y, intensity;
# then channel gains

@njit
def _render_sprites_nb(seed, idx, res, channels, n_glyph, glyphs, out, labels):
    G = glyphs.shape[0]
    base = 3 + 4 * n_glyph
    for a in range(idx.shape[0]):
        k = idx[a]
        level = -0.8 + 0.4 * _hash_nb(seed, k, 0)
        gx = (_hash_nb(seed, k, 1) - 0.5) * 0.4
        gy = (_hash_nb(seed, k, 2) - 0.5) * 0.4
        for c in range(channels):
            for y in range(res):
                for x in range(res):
                    out[a, c, y, x] = level + gx * (x / (res - 1) - 0.5) + gy * (y / (res - 1) - 0.5)
        for g in range(n_glyph):
            gid = int(_hash_nb(seed, k, 3 + 4 * g) * G)
            if gid >= G:
                gid = G - 1
            if g == 0:
                labels[a] = gid
            ox = int(_hash_nb(seed, k, 4 + 4 * g) * (res - 2))
            oy = int(_hash_nb(seed, k, 5 + 4 * g) * (res - 4))
            val = 0.5 + 0.5 * _hash_nb(seed, k, 6 + 4 * g)
            for c in range(channels):
                gain = 1.0 if channels == 1 else 0.4 + 0.6 * _hash_nb(seed, k, base + c)
                for gy_ in range(5):
                    for gx_ in range(3):
                        if glyphs[gid, gy_, gx_] > 0.5:
                            yy = oy + gy_
                            xx = ox + gx_
                            if yy < res and xx < res:
                                out[a, c, yy, xx] = gain * val


def _render_sprites_np(seed, idx, res, channels, n_glyph, glyphs, out, labels):
    G = glyphs.shape[0]
    base = 3 + 4 * n_glyph
    u = uniforms_np(seed, idx, base + channels)
    n = len(idx)
    lin = np.arange(res) / (res - 1) - 0.5
    bg = ((-0.8 + 0.4 * u[:, 0])[:, None, None]
          + ((u[:, 1] - 0.5) * 0.4)[:, None, None] * lin[None, None, :]
          + ((u[:, 2] - 0.5) * 0.4)[:, None, None] * lin[None, :, None])
    out[:] = bg[:, None]
    rows = np.arange(n)
    for g in range(n_glyph):
        gid = np.minimum((u[:, 3 + 4 * g] * G).astype(np.int64), G - 1)
        if g == 0:
            labels[:] = gid
        ox = (u[:, 4 + 4 * g] * (res - 2)).astype(np.int64)
        oy = (u[:, 5 + 4 * g] * (res - 4)).astype(np.int64)
        val = 0.5 + 0.5 * u[:, 6 + 4 * g]
        for gy_ in range(5):
            for gx_ in range(3):
                on = (glyphs[gid, gy_, gx_] > 0.5) & (oy + gy_ < res) & (ox + gx_ < res)
                r = rows[on]
                for c in range(channels):
                    gain = np.ones(n) if channels == 1 else 0.4 + 0.6 * u[:, base + c]
                    out[r, c, oy[r] + gy_, ox[r] + gx_] = (gain * val)[r]


# ------------------------------------------------------------------ dispatch

def _run(nb_fn, np_fn, use_numba, seed, idx, res, channels, *args):
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    out = np.empty((len(idx), channels, res, res), dtype=np.float64)
    labels = np.zeros(len(idx), dtype=np.int64)
    if len(idx):
        use = _accel.USE_NUMBA if use_numba is None else use_numba
        fn = nb_fn if use and _accel.HAVE_NUMBA else np_fn
        fn(np.uint64(seed), idx, res, channels, *args, out, labels)
    return out, labels


def render_blobs(seed, idx, res, channels, modes, jitter, use_numba=None):
    return _run(_render_blobs_nb, _render_blobs_np, use_numba, seed, idx, res, channels,
                modes, float(jitter))


def render_checkerboards(seed, idx, res, channels, f_lo, f_hi, n_bins, use_numba=None):
    return _run(_render_checker_nb, _render_checker_np, use_numba, seed, idx, res, channels,
                float(f_lo), float(f_hi), n_bins)


def render_sprites(seed, idx, res, channels, n_glyph, use_numba=None):
    return _run(_render_sprites_nb, _render_sprites_np, use_numba, seed, idx, res, channels,
                n_glyph, GLYPHS)


def uniforms(seed, idx, n, use_numba=None):
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    use = _accel.USE_NUMBA if use_numba is None else use_numba
    if use and _accel.HAVE_NUMBA:
        return uniforms_nb(np.uint64(seed), idx, n)
    return uniforms_np(seed, idx, n)
