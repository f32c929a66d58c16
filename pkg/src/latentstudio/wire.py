"""JSON wire format for brush constraints.

One schema serves both the HTTP API and CLI constraint scripts, so there
is exactly one parser. A brush arrives as its user-level description
(mask + color, stroke mask/polyline, or rectangle + displacement) at model
resolution; the server materializes the full constraint against the
session's current frame.

Masks travel as base64-encoded raw little-endian float32, row-major.
"""

from __future__ import annotations

import base64

import numpy as np

from .editing import (
    ConstraintError,
    EditConstraint,
    color_constraint_from_mask,
    make_warp_constraint,
    rasterize_polyline,
    sketch_constraint_from_pixels,
)
from .hog import HogConfig
from .nn import DTYPE

KINDS = ("color", "sketch", "warp")


def mask_to_json(mask: np.ndarray) -> dict:
    mask = np.ascontiguousarray(mask, DTYPE)
    return {
        "height": int(mask.shape[0]),
        "width": int(mask.shape[1]),
        "data": base64.b64encode(mask.tobytes()).decode("ascii"),
    }


def mask_from_json(obj) -> np.ndarray:
    try:
        h, w = int(obj["height"]), int(obj["width"])
        raw = base64.b64decode(obj["data"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConstraintError(f"malformed mask object: {exc}") from exc
    if len(raw) != 4 * h * w:
        raise ConstraintError(
            f"mask payload is {len(raw)} bytes, expected {4 * h * w}"
        )
    mask = np.frombuffer(raw, dtype="<f4").reshape(h, w).copy()
    if not np.all(np.isfinite(mask)):
        raise ConstraintError("mask contains non-finite values")
    return np.clip(mask, 0.0, 1.0)


def _pixels_from(obj, resolution):
    if "mask" in obj:
        mask = mask_from_json(obj["mask"])
        if mask.shape != (resolution, resolution):
            raise ConstraintError(
                f"mask shape {mask.shape} does not match model resolution {resolution}"
            )
        ys, xs = np.nonzero(mask > 0.5)
        return [(int(y), int(x)) for y, x in zip(ys, xs)], mask
    if "polyline" in obj:
        pts = obj["polyline"]
        if not isinstance(pts, list) or not all(len(p) == 2 for p in pts):
            raise ConstraintError("polyline must be a list of [y, x] pairs")
        return rasterize_polyline(pts, resolution), None
    raise ConstraintError("stroke needs a mask or a polyline")


def validate_spec(obj) -> dict:
    """Check a raw constraint object and return it in canonical form."""
    if not isinstance(obj, dict):
        raise ConstraintError("constraint must be a JSON object")
    kind = obj.get("kind")
    if kind not in KINDS:
        raise ConstraintError(f"unknown constraint kind {kind!r}")
    weight = float(obj.get("weight", 1.0))
    if weight < 0:
        raise ConstraintError("constraint weight must be nonnegative")
    out = {"kind": kind, "weight": weight}
    if kind == "color":
        color = obj.get("color")
        if not isinstance(color, (list, tuple)) or len(color) != 3:
            raise ConstraintError("color constraint needs a 3-element color")
        out["color"] = [float(c) for c in color]
        if "mask" not in obj and "pixels" not in obj:
            raise ConstraintError("color constraint needs a mask or pixel list")
        if "mask" in obj:
            out["mask"] = obj["mask"]
        else:
            out["pixels"] = [[int(y), int(x)] for y, x in obj["pixels"]]
    elif kind == "sketch":
        if "mask" in obj:
            out["mask"] = obj["mask"]
        elif "polyline" in obj:
            out["polyline"] = [[float(y), float(x)] for y, x in obj["polyline"]]
        else:
            raise ConstraintError("sketch constraint needs a mask or a polyline")
    else:
        rect = obj.get("rect")
        disp = obj.get("displacement")
        if not isinstance(rect, (list, tuple)) or len(rect) != 4:
            raise ConstraintError("warp constraint needs rect [y, x, h, w]")
        if not isinstance(disp, (list, tuple)) or len(disp) != 2:
            raise ConstraintError("warp constraint needs displacement [dy, dx]")
        out["rect"] = [int(v) for v in rect]
        out["displacement"] = [int(v) for v in disp]
    return out


def materialize(spec: dict, frame: np.ndarray, resolution: int,
                hog_cfg: HogConfig | None = None) -> EditConstraint:
    """Turn a validated brush spec into a live constraint.

    `frame` is the session's current generated frame; the warp brush
    samples its dragged patch from it.
    """
    spec = validate_spec(spec)
    hog_cfg = hog_cfg or HogConfig()
    kind, weight = spec["kind"], spec["weight"]
    if kind == "color":
        if "mask" in spec:
            mask = mask_from_json(spec["mask"])
            if mask.shape != (resolution, resolution):
                raise ConstraintError(
                    f"mask shape {mask.shape} does not match model resolution {resolution}"
                )
        else:
            mask = np.zeros((resolution, resolution), DTYPE)
            for y, x in spec["pixels"]:
                if not (0 <= y < resolution and 0 <= x < resolution):
                    raise ConstraintError(f"pixel ({y},{x}) outside the image")
                mask[y, x] = 1.0
        return color_constraint_from_mask(mask, np.asarray(spec["color"], DTYPE), weight)
    if kind == "sketch":
        pixels, _ = _pixels_from(spec, resolution)
        return sketch_constraint_from_pixels(pixels, hog_cfg, resolution, weight)
    return make_warp_constraint(spec["rect"], spec["displacement"], frame, hog_cfg, weight)


def materialize_all(specs, frame, resolution, hog_cfg=None):
    if not isinstance(specs, list):
        raise ConstraintError("constraints payload must be a list")
    return [materialize(s, frame, resolution, hog_cfg) for s in specs]
