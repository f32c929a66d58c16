"""Constrained latent editing: brush constraints, the real-time stepping
loop, candidate exploration and the relative-edit slider sequence.

The objective being descended is

    sum_g weight_g * ||f_g(G(z)) - v_g||^2   (masked mean over the support)
  + smooth_weight * ||z - z0||^2
  + [optional] realism_weight * log(1 - D(G(z)))

Each data term averages over its mask support so brushes of different
sizes contribute commensurate energies.

The stepper runs the adaptive-moment update on the data (+realism)
gradient only and folds the smoothness quadratic in exactly through its
proximal map (at half the data step size), then clamps to the latent box.
The proximal handling keeps the iterate pinned to the anchor when the
smoothness weight dominates, which a plain coupled update cannot
guarantee at interactive step sizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .hog import HogComputer, HogConfig, cell_mask_for_pixels, hog_features
from .images import hwc_to_nchw, nchw_to_hwc
from .models import clamp_latent, interpolate_latents
from .nn import DTYPE, Graph, adam_update

DEFAULT_SMOOTH_WEIGHT = 5.0
DEFAULT_REALISM_WEIGHT = 0.01
DEFAULT_STEP_LR = 0.05
DEFAULT_STEPS_PER_TICK = 5
WARP_COLOR_WEIGHT = 1.0
WARP_SKETCH_WEIGHT = 0.5
# adaptive-moment settings for the interactive stepper: low momentum and a
# fat epsilon so steps shrink with the gradient near convergence instead of
# ringing at a fixed magnitude
STEP_BETA1 = 0.5
STEP_BETA2 = 0.9
STEP_EPS = 1e-2
PROX_FRACTION = 0.5  # smoothness proximal step as a fraction of lr
_EPS_P = 1e-6


class ConstraintError(ValueError):
    pass


class EditDiverged(RuntimeError):
    pass


@dataclass
class EditConstraint:
    """One brush action as a masked target with a weight."""

    kind: str  # color | sketch | warp
    weight: float = 1.0
    mask: np.ndarray | None = None          # (H,W) weights in [0,1]
    color_target: np.ndarray | None = None  # (H,W,3) for color / warp
    hog_target: np.ndarray | None = None    # (cy,cx,bins) for sketch / warp
    cell_mask: np.ndarray | None = None     # (cy,cx) for sketch / warp
    hog_cfg: HogConfig | None = None
    rect: tuple | None = None               # warp source rectangle (y,x,h,w)
    displacement: tuple | None = None       # warp displacement (dy,dx)

    def __post_init__(self):
        if self.kind not in ("color", "sketch", "warp"):
            raise ConstraintError(f"unknown constraint kind {self.kind!r}")
        if self.weight < 0:
            raise ConstraintError("constraint weight must be nonnegative")
        if self.mask is not None and float(self.mask.sum()) == 0.0 and self.cell_mask is None:
            raise ConstraintError("constraint mask has empty support")
        for target in (self.color_target, self.hog_target):
            if target is not None and not np.all(np.isfinite(target)):
                raise ConstraintError("constraint target has non-finite values")


@dataclass
class EditState:
    """Per-session editing state: anchor, current latent, constraints and
    the optimizer moments that carry across interaction ticks."""

    z0: np.ndarray
    z: np.ndarray
    constraints: list = field(default_factory=list)
    smooth_weight: float = DEFAULT_SMOOTH_WEIGHT
    realism_weight: float = DEFAULT_REALISM_WEIGHT
    realism: bool = False
    step_count: int = 0
    adam_m: np.ndarray | None = None
    adam_v: np.ndarray | None = None
    adam_t: int = 0
    hog_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.z0 = clamp_latent(np.asarray(self.z0, DTYPE))
        self.z = clamp_latent(np.asarray(self.z, DTYPE))
        if self.smooth_weight < 0:
            raise ValueError("smoothness weight must be nonnegative")
        if self.adam_m is None:
            self.adam_m = np.zeros_like(self.z)
        if self.adam_v is None:
            self.adam_v = np.zeros_like(self.z)

    def with_constraints(self, constraints) -> "EditState":
        """New state with fresh optimizer moments (the objective changed)."""
        return replace(
            self,
            constraints=list(constraints),
            adam_m=np.zeros_like(self.z),
            adam_v=np.zeros_like(self.z),
            adam_t=0,
        )


def make_edit_state(z0, **kwargs) -> EditState:
    return EditState(z0=np.asarray(z0, DTYPE), z=np.asarray(z0, DTYPE).copy(), **kwargs)


# ---------------------------------------------------------------------------
# brush constructors
# ---------------------------------------------------------------------------

def make_color_constraint(stroke_pixels, color, resolution: int, weight: float = 1.0) -> EditConstraint:
    """Pin the pixels under a stroke to one palette color."""
    mask = np.zeros((resolution, resolution), DTYPE)
    for y, x in stroke_pixels:
        if 0 <= int(y) < resolution and 0 <= int(x) < resolution:
            mask[int(y), int(x)] = 1.0
    if mask.sum() == 0:
        raise ConstraintError("color stroke is empty")
    color = np.asarray(color, DTYPE)
    target = np.zeros((resolution, resolution, 3), DTYPE)
    target[mask > 0] = color
    return EditConstraint(kind="color", weight=weight, mask=mask, color_target=target)


def color_constraint_from_mask(mask, target, weight: float = 1.0) -> EditConstraint:
    """Color constraint from a dense mask and per-pixel targets."""
    mask = np.asarray(mask, DTYPE)
    target = np.asarray(target, DTYPE)
    if target.ndim == 1:
        full = np.zeros(mask.shape + (3,), DTYPE)
        full[mask > 0] = target
        target = full
    if mask.sum() == 0:
        raise ConstraintError("color mask is empty")
    return EditConstraint(kind="color", weight=weight, mask=mask, color_target=target)


def rasterize_polyline(polyline, resolution: int, thickness: int = 1):
    """Pixels covered by straight segments through the given points."""
    pixels = set()
    pts = [(float(y), float(x)) for y, x in polyline]
    if len(pts) == 1:
        pts = pts * 2
    for (y0, x0), (y1, x1) in zip(pts[:-1], pts[1:]):
        n = max(int(2 * max(abs(y1 - y0), abs(x1 - x0))) + 1, 2)
        for t in np.linspace(0.0, 1.0, n):
            y = y0 + t * (y1 - y0)
            x = x0 + t * (x1 - x0)
            for dy in range(-(thickness - 1), thickness):
                for dx in range(-(thickness - 1), thickness):
                    yy, xx = int(round(y)) + dy, int(round(x)) + dx
                    if 0 <= yy < resolution and 0 <= xx < resolution:
                        pixels.add((yy, xx))
    return sorted(pixels)


def render_stroke(pixels, resolution: int) -> np.ndarray:
    """Dark stroke on a light canvas; the sketch brush's reference image."""
    img = np.full((resolution, resolution, 3), 0.9, DTYPE)
    for y, x in pixels:
        img[y, x] = -0.9
    return img


def make_sketch_constraint(polyline, hog_cfg: HogConfig, resolution: int,
                           weight: float = 1.0, thickness: int = 1) -> EditConstraint:
    """Ask the oriented-gradient descriptor under a stroke to match the
    descriptor of the stroke drawing itself."""
    pixels = rasterize_polyline(polyline, resolution, thickness)
    if not pixels:
        raise ConstraintError("sketch stroke is empty")
    return sketch_constraint_from_pixels(pixels, hog_cfg, resolution, weight)


def sketch_constraint_from_pixels(pixels, hog_cfg: HogConfig, resolution: int,
                                  weight: float = 1.0) -> EditConstraint:
    pixels = list(pixels)
    if not pixels:
        raise ConstraintError("sketch stroke is empty")
    mask = np.zeros((resolution, resolution), DTYPE)
    for y, x in pixels:
        mask[y, x] = 1.0
    stroke_img = render_stroke(pixels, resolution)
    target = hog_features(stroke_img, hog_cfg)
    cmask = cell_mask_for_pixels(pixels, hog_cfg, resolution, resolution)
    return EditConstraint(
        kind="sketch", weight=weight, mask=mask,
        hog_target=target, cell_mask=cmask, hog_cfg=hog_cfg,
    )


def make_warp_constraint(rect, displacement, frame: np.ndarray,
                         hog_cfg: HogConfig | None = None, weight: float = 1.0) -> EditConstraint:
    """Drag a rectangle of the current frame somewhere else.

    Realized as a color constraint plus a sketch constraint on the
    displaced pixels, both targeting the dragged patch's appearance.
    """
    hog_cfg = hog_cfg or HogConfig()
    res = frame.shape[0]
    y, x, h, w = (int(v) for v in rect)
    dy, dx = (int(v) for v in displacement)
    if not (0 <= y and 0 <= x and y + h <= res and x + w <= res and h > 0 and w > 0):
        raise ConstraintError("warp source rectangle out of bounds")
    ty, tx = y + dy, x + dx
    if not (0 <= ty and 0 <= tx and ty + h <= res and tx + w <= res):
        raise ConstraintError("warp displacement leaves the image")
    synth = frame.copy()
    synth[ty : ty + h, tx : tx + w] = frame[y : y + h, x : x + w]
    mask = np.zeros((res, res), DTYPE)
    mask[ty : ty + h, tx : tx + w] = 1.0
    pixels = [(yy, xx) for yy in range(ty, ty + h) for xx in range(tx, tx + w)]
    return EditConstraint(
        kind="warp", weight=weight, mask=mask, color_target=synth,
        hog_target=hog_features(synth, hog_cfg),
        cell_mask=cell_mask_for_pixels(pixels, hog_cfg, res, res),
        hog_cfg=hog_cfg, rect=(y, x, h, w), displacement=(dy, dx),
    )


# ---------------------------------------------------------------------------
# energy
# ---------------------------------------------------------------------------

def _hogger(state: EditState, cfg: HogConfig, res: int) -> HogComputer:
    key = (cfg, res)
    if key not in state.hog_cache:
        state.hog_cache[key] = HogComputer(cfg, res, res)
    return state.hog_cache[key]


def _color_term(img, mask, target, weight):
    support = max(float(mask.sum()), 1e-12)
    w = weight / support
    diff = (img.astype(np.float64) - target.astype(np.float64)) * mask[..., None]
    energy = w * float(np.sum(diff * (img - target)))
    grad = (2.0 * w) * diff.astype(np.float32)
    return energy, grad


def _sketch_term(state, img, constraint, weight):
    support = max(float(constraint.cell_mask.sum()), 1e-12)
    w = weight / support
    hc = _hogger(state, constraint.hog_cfg, img.shape[0])
    feat = hc.forward(img)
    diff = (feat.astype(np.float64) - constraint.hog_target) * constraint.cell_mask[..., None]
    energy = w * float(np.sum(diff * (feat - constraint.hog_target)))
    grad = hc.backward((2.0 * w * diff).astype(DTYPE))
    return energy, grad


def data_energy(state: EditState, img: np.ndarray):
    """Masked data term and its gradient w.r.t. the image."""
    energy = 0.0
    grad = np.zeros_like(img)
    for c in state.constraints:
        if c.kind == "color":
            e, g = _color_term(img, c.mask, c.color_target, c.weight)
            energy += e
            grad += g
        elif c.kind == "sketch":
            e, g = _sketch_term(state, img, c, c.weight)
            energy += e
            grad += g
        else:  # warp: color + sketch sub-constraints
            e, g = _color_term(img, c.mask, c.color_target, c.weight * WARP_COLOR_WEIGHT)
            energy += e
            grad += g
            e, g = _sketch_term(state, img, c, c.weight * WARP_SKETCH_WEIGHT)
            energy += e
            grad += g
    return energy, grad


def _realism_term(img_nchw, disc: Graph, weight: float):
    p = float(np.clip(disc.forward(img_nchw, "inference")[0, 0], _EPS_P, 1.0 - _EPS_P))
    energy = weight * float(np.log1p(-p))
    upstream = np.full((1, 1), -weight / (1.0 - p), DTYPE)
    grad = disc.backward_input(upstream)
    return energy, grad


def edit_energy(state: EditState, generator: Graph, disc: Graph | None = None):
    """Full objective at state.z and its gradient w.r.t. z."""
    x = generator.forward(state.z[None], "inference")
    img = nchw_to_hwc(x)
    energy, dimg = data_energy(state, img)
    dx = hwc_to_nchw(dimg)
    if state.realism:
        if disc is None:
            raise ValueError("realism term enabled but no discriminator given")
        e, g = _realism_term(x, disc, state.realism_weight)
        energy += e
        dx = dx + g
    dz = generator.backward_input(dx)[0]
    diff = state.z.astype(np.float64) - state.z0.astype(np.float64)
    energy += state.smooth_weight * float(diff @ diff)
    dz = dz + (2.0 * state.smooth_weight * diff).astype(DTYPE)
    if not np.isfinite(energy):
        raise EditDiverged(f"non-finite edit energy: {energy}")
    return energy, dz


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------

def _data_gradient(state: EditState, generator: Graph, disc: Graph | None):
    x = generator.forward(state.z[None], "inference")
    img = nchw_to_hwc(x)
    energy, dimg = data_energy(state, img)
    dx = hwc_to_nchw(dimg)
    if state.realism:
        if disc is None:
            raise ValueError("realism term enabled but no discriminator given")
        e, g = _realism_term(x, disc, state.realism_weight)
        energy += e
        dx = dx + g
    if not np.isfinite(energy):
        raise EditDiverged(f"non-finite edit energy: {energy}")
    return generator.backward_input(dx)[0], img


def step(state: EditState, generator: Graph, disc: Graph | None = None,
         k: int = DEFAULT_STEPS_PER_TICK, lr: float = DEFAULT_STEP_LR):
    """k update steps on the latent; returns (new state, display frame).

    Data/realism gradient goes through the adaptive update; the smoothness
    quadratic is applied through its exact proximal map; the result is
    clamped to the latent box.
    """
    z = state.z.copy()
    m, v, t = state.adam_m.copy(), state.adam_v.copy(), state.adam_t
    work = replace(state, z=z, adam_m=m, adam_v=v)
    shrink = 1.0 + 2.0 * lr * PROX_FRACTION * state.smooth_weight
    for _ in range(k):
        dz, _ = _data_gradient(work, generator, disc)
        t += 1
        z, m, v = adam_update(work.z, dz, m, v, t, lr,
                              STEP_BETA1, STEP_BETA2, STEP_EPS)
        z = state.z0 + (z - state.z0) / shrink
        z = clamp_latent(z)
        work = replace(work, z=z, adam_m=m, adam_v=v, adam_t=t)
    frame = nchw_to_hwc(generator.forward(work.z[None], "inference"))
    if k == 0:
        return state, frame
    return replace(work, step_count=state.step_count + k), frame


@dataclass
class Candidate:
    z: np.ndarray
    frame: np.ndarray
    energy: float


def candidates(state: EditState, generator: Graph, disc: Graph | None = None,
               count: int = 64, keep: int = 9, perturb: float = 0.3,
               steps: int = 10, lr: float = DEFAULT_STEP_LR, seed: int = 0):
    """Optimize `count` anchor perturbations, return the best `keep`.

    Results come back sorted by full objective value, ascending; ranking is
    reproducible for a fixed seed (a stable sort breaks ties by pool order).
    """
    rng = np.random.default_rng(seed)
    dim = state.z0.shape[0]
    pool = []
    for _ in range(count):
        z_init = clamp_latent(state.z0 + rng.uniform(-perturb, perturb, dim).astype(DTYPE))
        cand_state = replace(
            state,
            z=z_init,
            adam_m=np.zeros(dim, DTYPE),
            adam_v=np.zeros(dim, DTYPE),
            adam_t=0,
        )
        cand_state, frame = step(cand_state, generator, disc, k=steps, lr=lr)
        energy, _ = edit_energy(cand_state, generator, disc)
        pool.append(Candidate(cand_state.z, frame, energy))
    order = np.argsort([c.energy for c in pool], kind="stable")
    return [pool[i] for i in order[:keep]]


def relative_sequence(state: EditState, generator: Graph, frames: int):
    """Slider frames: the anchor-to-current interpolation, rendered."""
    out = []
    for z in interpolate_latents(state.z0, state.z, frames):
        out.append(nchw_to_hwc(generator.forward(z[None], "inference")))
    return out
