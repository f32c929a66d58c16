"""Training corpora: procedural shape synthesis and image-folder ingestion.

The synthetic corpus is a class-consistent stand-in for a product-photo
collection: one colored rounded shape per image on a white background,
with randomized hue, scale and position. Adversarial training behaves
best on this kind of single-class data.
"""

from __future__ import annotations

import colorsys
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .images import center_crop_resize
from .nn import DTYPE

log = logging.getLogger(__name__)


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    """Images at one model resolution with a disjoint train/test split."""

    source: str
    resolution: int
    train: np.ndarray  # (N, H, W, 3) float32 in [-1, 1]
    test: np.ndarray

    def __post_init__(self):
        for split in (self.train, self.test):
            if split.size and split.shape[1:] != (self.resolution, self.resolution, 3):
                raise DatasetError("dataset items must match the model resolution")


def _split(items: np.ndarray, seed: int, test_fraction: float):
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(items))
    n_test = int(round(len(items) * test_fraction))
    test_idx, train_idx = order[:n_test], order[n_test:]
    return items[train_idx], items[test_idx]


def _render_shape(rng, resolution: int) -> np.ndarray:
    """One rounded superellipse blob, antialiased, on white."""
    r = resolution
    yy, xx = np.mgrid[0:r, 0:r].astype(np.float32)
    cx = r * rng.uniform(0.38, 0.62)
    cy = r * rng.uniform(0.38, 0.62)
    rx = r * rng.uniform(0.18, 0.36)
    ry = r * rng.uniform(0.18, 0.36)
    power = rng.uniform(2.0, 4.5)
    f = (np.abs((xx - cx) / rx) ** power + np.abs((yy - cy) / ry) ** power).astype(
        np.float32
    )
    # soft edge, roughly one pixel wide
    softness = power / max(min(rx, ry), 1.0)
    t = np.clip((f - 1.0) / max(softness, 1e-3), -60.0, 60.0)
    alpha = 1.0 / (1.0 + np.exp(t))

    hue = rng.uniform(0.0, 1.0)
    sat = rng.uniform(0.65, 1.0)
    val = rng.uniform(0.55, 0.95)
    color = np.array(colorsys.hsv_to_rgb(hue, sat, val), np.float32)
    # gentle vertical shading so the object is not flat
    shade = (1.0 - 0.25 * (yy - cy) / r).clip(0.6, 1.2)
    img = np.ones((r, r, 3), np.float32)
    img = img * (1 - alpha[..., None]) + (color[None, None] * shade[..., None]) * alpha[
        ..., None
    ]
    return (img.clip(0, 1) * 2.0 - 1.0).astype(DTYPE)


def synth_shapes(count: int, resolution: int, seed: int, test_fraction: float = 0.1) -> Dataset:
    """Procedural corpus of `count` single-shape images."""
    if count <= 0:
        raise DatasetError("synthetic dataset needs a positive count")
    rng = np.random.default_rng(seed)
    items = np.stack([_render_shape(rng, resolution) for _ in range(count)])
    train, test = _split(items, seed, test_fraction)
    return Dataset("synthetic-shapes", resolution, train, test)


def ingest_folder(path, resolution: int, seed: int = 0, test_fraction: float = 0.1) -> Dataset:
    """Load every decodable image under `path`, center-cropped and resized.

    Non-image files are skipped with a warning; an empty result is an error.
    """
    folder = Path(path)
    if not folder.is_dir():
        raise DatasetError(f"not a directory: {folder}")
    items = []
    for entry in sorted(folder.iterdir()):
        if not entry.is_file():
            continue
        try:
            with Image.open(entry) as img:
                items.append(center_crop_resize(img, resolution))
        except (UnidentifiedImageError, OSError):
            log.warning("skipping non-image file %s", entry)
    if not items:
        raise DatasetError(f"no decodable images in {folder}")
    stacked = np.stack(items)
    train, test = _split(stacked, seed, test_fraction)
    return Dataset("image-folder", resolution, train, test)
