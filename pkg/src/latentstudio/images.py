"""Image conventions and PNG ingress/egress.

Internally an RGB image is a float32 (H, W, 3) array in the generator
range [-1, 1]. Conversion to bytes happens only at I/O boundaries:
8-bit PNG on disk or base64-encoded PNG on the wire.
"""

from __future__ import annotations

import base64
import io

import numpy as np
from PIL import Image

from .nn import DTYPE


def clamp_image(img: np.ndarray) -> np.ndarray:
    return np.clip(img, -1.0, 1.0).astype(DTYPE)


def from_uint8(arr: np.ndarray) -> np.ndarray:
    """uint8 (H,W,3) in [0,255] -> float32 in [-1,1]."""
    return (arr.astype(np.float32) / 127.5 - 1.0).astype(DTYPE)


def to_uint8(img: np.ndarray) -> np.ndarray:
    img = clamp_image(img)
    return np.round((img + 1.0) * 127.5).clip(0, 255).astype(np.uint8)


def to_unit(img: np.ndarray) -> np.ndarray:
    """[-1,1] -> [0,1] (the range the flow solver works in)."""
    return ((np.asarray(img, np.float32) + 1.0) * 0.5).astype(DTYPE)


def from_unit(img: np.ndarray) -> np.ndarray:
    return (np.asarray(img, np.float32) * 2.0 - 1.0).astype(DTYPE)


def hwc_to_nchw(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(img.transpose(2, 0, 1)[None], dtype=DTYPE)


def nchw_to_hwc(t: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(t[0].transpose(1, 2, 0), dtype=DTYPE)


def center_crop_resize(pil_img: Image.Image, resolution: int) -> np.ndarray:
    """Square center crop, resize to the model resolution, range [-1,1]."""
    pil_img = pil_img.convert("RGB")
    w, h = pil_img.size
    side = min(w, h)
    left = (w - side) // 2
    top = (h - side) // 2
    pil_img = pil_img.crop((left, top, left + side, top + side))
    pil_img = pil_img.resize((resolution, resolution), Image.LANCZOS)
    return from_uint8(np.asarray(pil_img))


def load_image(path, resolution: int | None = None) -> np.ndarray:
    with Image.open(path) as pil_img:
        if resolution is not None:
            return center_crop_resize(pil_img, resolution)
        return from_uint8(np.asarray(pil_img.convert("RGB")))


def save_image(img: np.ndarray, path):
    Image.fromarray(to_uint8(img)).save(path)


def encode_png_b64(img: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(to_uint8(img)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_png_b64(data: str, resolution: int | None = None) -> np.ndarray:
    raw = base64.b64decode(data)
    with Image.open(io.BytesIO(raw)) as pil_img:
        if resolution is not None:
            return center_crop_resize(pil_img, resolution)
        return from_uint8(np.asarray(pil_img.convert("RGB")))


def resize_image(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of a [-1,1] image to (height, width)."""
    pil = Image.fromarray(to_uint8(img))
    pil = pil.resize((width, height), Image.BILINEAR)
    return from_uint8(np.asarray(pil))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB over the [-1,1] range (peak 2)."""
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    if mse == 0:
        return float("inf")
    return 10.0 * np.log10(4.0 / mse)
