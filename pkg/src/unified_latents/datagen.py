"""Seeded synthetic image corpora (and image-folder ingestion) in [-1, 1], NCHW."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import kernels

log = logging.getLogger(__name__)

FAMILIES = ("blobs", "checkerboards", "sprites", "folder")
IMAGE_SUFFIXES = (".png", ".bmp", ".tif", ".tiff", ".ppm", ".pgm")


@dataclass(frozen=True)
class DatasetSpec:
    family: str = "sprites"
    resolution: int = 16
    channels: int = 1
    size: int = 4096
    seed: int = 0
    offset: int = 0
    modes: int = 8
    jitter: float = 0.02
    glyphs: int = 2
    freq_lo: float = 1.0
    freq_hi: float = 4.0
    freq_bins: int = 4
    path: str = ""

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unsupported dataset family {self.family!r}; expected one of {FAMILIES}")
        if self.size < 0 or self.offset < 0:
            raise ValueError("size and offset must be non-negative")
        if self.resolution < 4 or self.channels < 1:
            raise ValueError("resolution must be >= 4 and channels >= 1")


class Dataset:
    """Random-access image collection. ``batch`` returns float32 (n, C, H, W)."""

    spec: DatasetSpec

    def __len__(self):
        raise NotImplementedError

    def batch(self, indices) -> np.ndarray:
        raise NotImplementedError

    def labels(self, indices) -> np.ndarray:
        raise NotImplementedError

    @property
    def num_classes(self):
        raise NotImplementedError

    @property
    def image_shape(self):
        return (self.spec.resolution, self.spec.resolution, self.spec.channels)

    def __getitem__(self, k):
        if not 0 <= k < len(self):
            raise IndexError(k)
        return self.batch([k])[0]

    def all(self):
        return self.batch(np.arange(len(self)))


class SyntheticDataset(Dataset):
    def __init__(self, spec: DatasetSpec, use_numba=None):
        if spec.family == "folder":
            raise ValueError("folder datasets are built with ingest_folder")
        self.spec = spec
        self.use_numba = use_numba

    def __len__(self):
        return self.spec.size

    def _render(self, indices):
        s = self.spec
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= s.size):
            raise IndexError("dataset index out of range")
        idx = idx + s.offset
        if s.family == "blobs":
            return kernels.render_blobs(s.seed, idx, s.resolution, s.channels, s.modes, s.jitter,
                                        use_numba=self.use_numba)
        if s.family == "checkerboards":
            return kernels.render_checkerboards(s.seed, idx, s.resolution, s.channels, s.freq_lo,
                                                s.freq_hi, s.freq_bins, use_numba=self.use_numba)
        return kernels.render_sprites(s.seed, idx, s.resolution, s.channels, s.glyphs,
                                      use_numba=self.use_numba)

    def batch(self, indices):
        imgs, _ = self._render(indices)
        return np.clip(imgs, -1.0, 1.0).astype(np.float32)

    def labels(self, indices):
        return self._render(indices)[1]

    @property
    def num_classes(self):
        s = self.spec
        return {"blobs": s.modes, "checkerboards": s.freq_bins, "sprites": kernels.N_GLYPHS}[s.family]

    def mode_centers(self):
        """Blob centres per mode in pixel coordinates (x, y)."""
        s = self.spec
        ang = 2 * np.pi * np.arange(s.modes) / s.modes
        c = (s.resolution - 1) / 2
        return np.stack([c + 0.3 * s.resolution * np.cos(ang), c + 0.3 * s.resolution * np.sin(ang)], 1)


class ArrayDataset(Dataset):
    def __init__(self, images, spec: DatasetSpec, labels=None, skipped=()):
        images = np.asarray(images, dtype=np.float32)
        if images.ndim != 4:
            raise ValueError("images must be (n, C, H, W)")
        if images.size and (not np.all(np.isfinite(images)) or images.min() < -1 or images.max() > 1):
            raise ValueError("images must be finite and within [-1, 1]")
        self.images = images
        self.spec = spec
        self._labels = np.zeros(len(images), np.int64) if labels is None else np.asarray(labels, np.int64)
        self.skipped = list(skipped)

    def __len__(self):
        return len(self.images)

    def batch(self, indices):
        return self.images[np.asarray(indices, dtype=np.int64)]

    def labels(self, indices):
        return self._labels[np.asarray(indices, dtype=np.int64)]

    @property
    def num_classes(self):
        return int(self._labels.max()) + 1 if len(self._labels) else 1


def generate(spec: DatasetSpec, use_numba=None) -> Dataset:
    if spec.family == "folder":
        return ingest_folder(spec.path, spec.resolution, spec.channels)
    return SyntheticDataset(spec, use_numba)


def train_eval_split(spec: DatasetSpec, n_eval: int):
    """Disjoint train/eval sets drawn from the same (seed, index) stream."""
    if spec.family == "folder":
        ds = generate(spec)
        n_eval = min(n_eval, len(ds))
        n_train = len(ds) - n_eval
        train = ArrayDataset(ds.images[:n_train], replace(spec, size=n_train))
        return train, ArrayDataset(ds.images[n_train:], replace(spec, size=n_eval, offset=n_train))
    train = generate(spec)
    return train, generate(replace(spec, size=n_eval, offset=spec.offset + spec.size))


def single_image(dataset: Dataset, k=0, copies=1):
    img = dataset.batch([k])
    return ArrayDataset(np.repeat(img, copies, axis=0), replace(dataset.spec, size=copies))


def to_uint8(images):
    return np.clip(np.rint((np.asarray(images) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def from_uint8(arr):
    return arr.astype(np.float32) / 127.5 - 1.0


def save_images(images, folder, prefix="img"):
    """Write (n, C, H, W) images in [-1, 1] as PNG files; returns the paths."""
    from PIL import Image

    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, img in enumerate(to_uint8(images)):
        arr = img[0] if img.shape[0] == 1 else np.transpose(img[:3], (1, 2, 0))
        p = folder / f"{prefix}_{i:05d}.png"
        Image.fromarray(arr).save(p)
        paths.append(p)
    return paths


def export(dataset: Dataset, folder):
    return save_images(dataset.all(), folder)


def ingest_folder(path, resolution, channels=1) -> ArrayDataset:
    """Center-crop, resize and normalise every readable image under ``path``.

    Files are taken in filename order; unreadable ones are skipped and listed in
    ``dataset.skipped``.
    """
    from PIL import Image, UnidentifiedImageError

    folder = Path(path)
    if not folder.is_dir():
        raise FileNotFoundError(f"image folder not found: {folder}")
    images, skipped = [], []
    for p in sorted(folder.iterdir()):
        if not p.is_file():
            continue
        try:
            with Image.open(p) as im:
                im = im.convert("L" if channels == 1 else "RGB")
                w, h = im.size
                s = min(w, h)
                left, top = (w - s) // 2, (h - s) // 2
                im = im.crop((left, top, left + s, top + s))
                if s != resolution:
                    im = im.resize((resolution, resolution), Image.BICUBIC)
                arr = np.asarray(im)
        except (UnidentifiedImageError, OSError) as exc:
            skipped.append({"file": p.name, "reason": str(exc)})
            log.warning("skipping unreadable image %s: %s", p, exc)
            continue
        arr = arr[None] if arr.ndim == 2 else np.transpose(arr, (2, 0, 1))
        images.append(from_uint8(arr))
    if not images:
        log.warning("no readable images in %s", folder)
    data = np.stack(images) if images else np.zeros((0, channels, resolution, resolution), np.float32)
    spec = DatasetSpec(family="folder", resolution=resolution, channels=channels, size=len(data), path=str(folder))
    return ArrayDataset(data, spec, skipped=skipped)
