"""Projecting a photo onto the learned manifold.

Three routes: iterative latent optimization from random restarts, a single
feedforward pass through the trained encoder, and the hybrid that seeds the
optimization with the encoder prediction. All three minimize the same
reconstruction loss: mean squared pixel error plus a small weight times the
mean squared distance in the discriminator's mid-level feature space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .images import hwc_to_nchw, nchw_to_hwc
from .models import clamp_latent, feature_tap_index, graph_from_params, sample_latent
from .nn import DTYPE, Graph, adam_update


class ProjectionError(RuntimeError):
    pass


class FeatureExtractor:
    """Mid-level feature tap of a discriminator, run in inference mode."""

    def __init__(self, disc_graph: Graph):
        self._graph = disc_graph.prefix(feature_tap_index(disc_graph))

    @classmethod
    def from_params(cls, disc_params) -> "FeatureExtractor":
        return cls(graph_from_params(disc_params))

    def forward(self, x_nchw: np.ndarray) -> np.ndarray:
        return self._graph.forward(x_nchw, "inference")

    def backward_input(self, upstream: np.ndarray) -> np.ndarray:
        return self._graph.backward_input(upstream)


@dataclass
class ReconLoss:
    """Weighted pixel + feature reconstruction objective."""

    pixel_weight: float = 1.0
    feature_weight: float = 0.002
    extractor: FeatureExtractor | None = None

    def __post_init__(self):
        if self.pixel_weight < 0 or self.feature_weight < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.pixel_weight == 0 and self.feature_weight == 0:
            raise ValueError("at least one loss weight must be positive")


def recon_loss_batch(x: np.ndarray, target: np.ndarray, cfg: ReconLoss):
    """Loss and gradient w.r.t. x for NCHW batches."""
    if x.shape != target.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {target.shape}")
    diff = x.astype(np.float64) - target.astype(np.float64)
    n = diff.size
    loss = cfg.pixel_weight * float(np.mean(diff * diff))
    grad = (cfg.pixel_weight * 2.0 / n) * diff
    if cfg.feature_weight > 0 and cfg.extractor is not None:
        ft = cfg.extractor.forward(target)
        fx = cfg.extractor.forward(x)
        fdiff = fx.astype(np.float64) - ft.astype(np.float64)
        m = fdiff.size
        loss += cfg.feature_weight * float(np.mean(fdiff * fdiff))
        gfeat = cfg.extractor.backward_input(((2.0 / m) * fdiff).astype(DTYPE))
        grad = grad + cfg.feature_weight * gfeat
    return loss, grad.astype(DTYPE)


def recon_loss(x: np.ndarray, target: np.ndarray, cfg: ReconLoss):
    """Loss and gradient w.r.t. x for single HWC images."""
    loss, grad = recon_loss_batch(hwc_to_nchw(x), hwc_to_nchw(target), cfg)
    return loss, nchw_to_hwc(grad)


@dataclass
class ProjectionResult:
    z: np.ndarray
    recon: np.ndarray  # HWC image
    loss: float
    method: str
    iterations: int
    trace: list = field(default_factory=list)


def _loss_at(z: np.ndarray, generator: Graph, target_nchw: np.ndarray, cfg: ReconLoss):
    x = generator.forward(z[None], "inference")
    loss, gimg = recon_loss_batch(x, target_nchw, cfg)
    gz = generator.backward_input(gimg)[0]
    return loss, gz, x


def _optimize_latent(z_init, generator, target_nchw, cfg, steps, lr, monotone):
    """Gradient-based descent on the latent, tracking the best iterate.

    monotone mode swaps the adaptive update for plain descent with
    backtracking, which guarantees a non-increasing loss trace.
    """
    z = clamp_latent(np.asarray(z_init, DTYPE))
    loss, grad, x = _loss_at(z, generator, target_nchw, cfg)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss at initialization")
    best = (loss, z.copy(), x.copy())
    trace = [loss]
    m = np.zeros_like(z)
    v = np.zeros_like(z)
    eta = lr
    for t in range(1, steps + 1):
        if monotone:
            accepted = False
            for _ in range(12):
                z_try = clamp_latent(z - eta * grad)
                l_try, g_try, x_try = _loss_at(z_try, generator, target_nchw, cfg)
                if np.isfinite(l_try) and l_try <= loss:
                    z, loss, grad, x = z_try, l_try, g_try, x_try
                    accepted = True
                    break
                eta *= 0.5
            if not accepted:
                break
        else:
            z, m, v = adam_update(z, grad, m, v, t, lr)
            z = clamp_latent(z)
            loss, grad, x = _loss_at(z, generator, target_nchw, cfg)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at step {t}")
        if loss < best[0]:
            best = (loss, z.copy(), x.copy())
        trace.append(loss)
    return best, trace


def project_opt(
    xR: np.ndarray,
    generator: Graph,
    cfg: ReconLoss,
    restarts: int = 10,
    steps: int = 100,
    lr: float = 0.1,
    seed: int = 0,
    monotone: bool = False,
) -> ProjectionResult:
    """Latent optimization from `restarts` random initializations."""
    rng = np.random.default_rng(seed)
    target = hwc_to_nchw(xR)
    dim = generator.input_shape[0]
    best = None
    best_trace = None
    for _ in range(max(restarts, 1)):
        z0 = sample_latent(rng, dim)
        try:
            (loss, z, x), trace = _optimize_latent(
                z0, generator, target, cfg, steps, lr, monotone
            )
        except FloatingPointError:
            continue  # discard diverged restart
        if best is None or loss < best[0]:
            best = (loss, z, x)
            best_trace = trace
    if best is None:
        raise ProjectionError("all restarts diverged")
    loss, z, x = best
    return ProjectionResult(z, nchw_to_hwc(x), loss, "optimization", steps, best_trace)


def project_net(xR: np.ndarray, encoder: Graph, generator: Graph, cfg: ReconLoss) -> ProjectionResult:
    """Single feedforward prediction of the latent."""
    target = hwc_to_nchw(xR)
    z = encoder.forward(target, "inference")[0]
    x = generator.forward(z[None], "inference")
    loss, _ = recon_loss_batch(x, target, cfg)
    return ProjectionResult(z.copy(), nchw_to_hwc(x), loss, "network", 0, [loss])


def project_hybrid(
    xR: np.ndarray,
    encoder: Graph,
    generator: Graph,
    cfg: ReconLoss,
    steps: int = 100,
    lr: float = 0.1,
    monotone: bool = False,
) -> ProjectionResult:
    """Feedforward prediction refined by optimization.

    The best iterate (including the initialization) is returned, so the
    result never has a higher loss than the feedforward prediction.
    """
    target = hwc_to_nchw(xR)
    z_init = encoder.forward(target, "inference")[0]
    (loss, z, x), trace = _optimize_latent(
        z_init, generator, target, cfg, steps, lr, monotone
    )
    return ProjectionResult(z, nchw_to_hwc(x), loss, "hybrid", steps, trace)
