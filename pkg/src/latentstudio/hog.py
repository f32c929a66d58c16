"""Differentiable oriented-gradient histograms.

Classic cell-binned gradient histograms made smooth end to end: the
orientation assignment is a temperature-controlled softmax over bin
compass directions (computed from double-angle identities, so it is well
defined even where the gradient vanishes) and the spatial assignment is
bilinear sharing between the four nearest cells. Each cell histogram is
L2-normalized with an epsilon floor.

The backward pass is hand-derived; finite-difference agreement is part of
the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import DTYPE

LUMA = np.array([0.299, 0.587, 0.114], np.float32)
_EPS_MAG = 1e-8


@dataclass(frozen=True)
class HogConfig:
    cell_size: int = 4
    bins: int = 9
    temperature: float = 0.1
    eps: float = 0.1

    def __post_init__(self):
        if self.bins < 4:
            raise ValueError("need at least 4 orientation bins")
        if self.cell_size <= 0 or self.temperature <= 0 or self.eps <= 0:
            raise ValueError("cell size, temperature and eps must be positive")


def _image_gradient(y: np.ndarray, axis: int) -> np.ndarray:
    """np.gradient-style differences: central interior, one-sided edges."""
    g = np.empty_like(y)
    if axis == 1:
        g[:, 1:-1] = (y[:, 2:] - y[:, :-2]) * 0.5
        g[:, 0] = y[:, 1] - y[:, 0]
        g[:, -1] = y[:, -1] - y[:, -2]
    else:
        g[1:-1, :] = (y[2:, :] - y[:-2, :]) * 0.5
        g[0, :] = y[1, :] - y[0, :]
        g[-1, :] = y[-1, :] - y[-2, :]
    return g


def _image_gradient_adjoint(dg: np.ndarray, axis: int) -> np.ndarray:
    """Transpose of :func:`_image_gradient`."""
    dy = np.zeros_like(dg)
    if axis == 1:
        dy[:, 2:] += dg[:, 1:-1] * 0.5
        dy[:, :-2] -= dg[:, 1:-1] * 0.5
        dy[:, 0] -= dg[:, 0]
        dy[:, 1] += dg[:, 0]
        dy[:, -1] += dg[:, -1]
        dy[:, -2] -= dg[:, -1]
    else:
        dy[2:, :] += dg[1:-1, :] * 0.5
        dy[:-2, :] -= dg[1:-1, :] * 0.5
        dy[0, :] -= dg[0, :]
        dy[1, :] += dg[0, :]
        dy[-1, :] += dg[-1, :]
        dy[-2, :] -= dg[-1, :]
    return dy


class HogComputer:
    """Histogram extractor bound to one image geometry.

    Precomputes the fixed bilinear pixel-to-cell assignment; `forward`
    caches the intermediates that `backward` consumes.
    """

    def __init__(self, cfg: HogConfig, height: int, width: int):
        if height % cfg.cell_size or width % cfg.cell_size:
            raise ValueError("cell size must divide the image extent")
        self.cfg = cfg
        self.height, self.width = height, width
        self.cells_y = height // cfg.cell_size
        self.cells_x = width // cfg.cell_size

        angles = 2.0 * np.pi * np.arange(cfg.bins) / cfg.bins
        self._cos = np.cos(angles).astype(np.float32)
        self._sin = np.sin(angles).astype(np.float32)

        def axis_assign(extent, cells):
            f = (np.arange(extent, dtype=np.float32) + 0.5) / cfg.cell_size - 0.5
            f = np.clip(f, 0.0, cells - 1.0)
            c0 = np.floor(f).astype(np.int64)
            c1 = np.minimum(c0 + 1, cells - 1)
            w1 = (f - c0).astype(np.float32)
            return c0, c1, 1.0 - w1, w1

        cy0, cy1, wy0, wy1 = axis_assign(height, self.cells_y)
        cx0, cx1, wx0, wx1 = axis_assign(width, self.cells_x)
        self._combos = []
        for cy, wy in ((cy0, wy0), (cy1, wy1)):
            for cx, wx in ((cx0, wx0), (cx1, wx1)):
                cell_idx = (cy[:, None] * self.cells_x + cx[None, :]).ravel()
                weight = (wy[:, None] * wx[None, :]).reshape(-1, 1).astype(np.float32)
                self._combos.append((cell_idx, weight))
        self._cache = None

    @property
    def shape(self):
        return (self.cells_y, self.cells_x, self.cfg.bins)

    def forward(self, img: np.ndarray) -> np.ndarray:
        if img.shape != (self.height, self.width, 3):
            raise ValueError(
                f"expected {(self.height, self.width, 3)} image, got {img.shape}"
            )
        cfg = self.cfg
        lum = (img.astype(np.float32) * LUMA).sum(axis=2)
        gx = _image_gradient(lum, axis=1)
        gy = _image_gradient(lum, axis=0)
        d = gx * gx + gy * gy + _EPS_MAG
        m = np.sqrt(d)
        c2 = (gx * gx - gy * gy) / d
        s2 = 2.0 * gx * gy / d
        scores = (c2[..., None] * self._cos + s2[..., None] * self._sin) / cfg.temperature
        scores -= scores.max(axis=2, keepdims=True)
        e = np.exp(scores)
        w = e / e.sum(axis=2, keepdims=True)
        votes = (m[..., None] * w).reshape(-1, cfg.bins)

        hist = np.zeros((self.cells_y * self.cells_x, cfg.bins), np.float64)
        for cell_idx, weight in self._combos:
            np.add.at(hist, cell_idx, weight * votes)
        norm = np.sqrt((hist * hist).sum(axis=1, keepdims=True) + cfg.eps * cfg.eps)
        out = (hist / norm).astype(DTYPE)
        self._cache = (gx, gy, d, m, w, hist, norm)
        return out.reshape(self.shape)

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        gx, gy, d, m, w, hist, norm = self._cache
        cfg = self.cfg
        up = upstream.reshape(-1, cfg.bins).astype(np.float64)

        dot = (up * hist).sum(axis=1, keepdims=True)
        dh = up / norm - hist * dot / (norm ** 3)

        dvotes = np.zeros((self.height * self.width, cfg.bins), np.float64)
        for cell_idx, weight in self._combos:
            dvotes += weight * dh[cell_idx]
        dvotes = dvotes.reshape(self.height, self.width, cfg.bins).astype(np.float32)

        dm = (w * dvotes).sum(axis=2)
        dw = m[..., None] * dvotes
        dscore = w * (dw - (w * dw).sum(axis=2, keepdims=True))
        dc2 = (dscore * self._cos).sum(axis=2) / cfg.temperature
        ds2 = (dscore * self._sin).sum(axis=2) / cfg.temperature

        d2 = d * d
        dgx = (
            dm * gx / m
            + dc2 * (2.0 * gx * (2.0 * gy * gy + _EPS_MAG)) / d2
            + ds2 * (2.0 * gy * (gy * gy - gx * gx + _EPS_MAG)) / d2
        )
        dgy = (
            dm * gy / m
            + dc2 * (-2.0 * gy * (2.0 * gx * gx + _EPS_MAG)) / d2
            + ds2 * (2.0 * gx * (gx * gx - gy * gy + _EPS_MAG)) / d2
        )
        dlum = _image_gradient_adjoint(dgx, axis=1) + _image_gradient_adjoint(dgy, axis=0)
        return (dlum[..., None] * LUMA).astype(DTYPE)


def hog_features(img: np.ndarray, cfg: HogConfig) -> np.ndarray:
    """One-shot descriptor extraction (builds a computer per call)."""
    return HogComputer(cfg, img.shape[0], img.shape[1]).forward(img)


def cell_mask_for_pixels(pixels, cfg: HogConfig, height: int, width: int) -> np.ndarray:
    """Binary (cells_y, cells_x) mask of cells containing any given pixel."""
    mask = np.zeros((height // cfg.cell_size, width // cfg.cell_size), np.float32)
    for y, x in pixels:
        if 0 <= y < height and 0 <= x < width:
            mask[int(y) // cfg.cell_size, int(x) // cfg.cell_size] = 1.0
    return mask
