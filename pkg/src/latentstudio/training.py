"""Adversarial training of the generator/discriminator pair and supervised
training of the encoder against a frozen generator.

Runs are fully determined by the config seed: batch composition, latent
draws and parameter init all come from one generator stream.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset
from .models import ArchDescriptor, NetworkParams, build_discriminator, build_encoder, build_generator, graph_from_params
from .nn import AdamState, DTYPE, adam_step
from .projection import FeatureExtractor, ReconLoss, recon_loss_batch
from . import weights

_EPS = 1e-6


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    iterations: int = 3000
    batch_size: int = 64
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    encoder_lr: float = 1e-3
    seed: int = 0
    checkpoint_every: int = 0  # 0 disables periodic snapshots
    out_dir: str | None = None

    def __post_init__(self):
        if self.iterations <= 0 or self.batch_size <= 0:
            raise ValueError("iterations and batch size must be positive")
        if self.lr <= 0 or self.encoder_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint cadence must be nonnegative")


def write_loss_csv(path, rows, header):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _batch(dataset: Dataset, rng, size: int) -> np.ndarray:
    idx = rng.integers(0, len(dataset.train), size)
    return np.ascontiguousarray(dataset.train[idx].transpose(0, 3, 1, 2), dtype=DTYPE)


def _check_finite(*vals):
    if not all(np.isfinite(v) for v in vals):
        raise TrainingDiverged(f"non-finite loss: {vals}")


def _merge_grads(a: dict, b: dict) -> dict:
    return {k: a[k] + b[k] for k in a}


def train_gan(dataset: Dataset, config: TrainConfig, descriptor: ArchDescriptor | None = None):
    """Alternating discriminator/generator updates.

    The discriminator maximizes log D(x) + log(1 - D(G(z))); the generator
    takes the non-saturating surrogate and minimizes -log D(G(z)).
    Returns (generator params, discriminator params, loss trace).
    """
    desc = descriptor or ArchDescriptor(resolution=dataset.resolution)
    if desc.resolution != dataset.resolution:
        raise ValueError("dataset resolution does not match the architecture")
    rng = np.random.default_rng(config.seed)
    gen = build_generator(desc, rng)
    disc = build_discriminator(desc, rng)
    gen_state = AdamState.init_like(gen.parameters())
    disc_state = AdamState.init_like(disc.parameters())

    out_dir = Path(config.out_dir) if config.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    trace = []
    for it in range(1, config.iterations + 1):
        # --- discriminator step on separate real and fake batches
        real = _batch(dataset, rng, config.batch_size)
        z = rng.uniform(-1, 1, (config.batch_size, desc.latent_dim)).astype(DTYPE)
        fake = gen.forward(z, "train")

        p_real = disc.forward(real, "train")
        p_real = np.clip(p_real, _EPS, 1 - _EPS)
        loss_real = -float(np.mean(np.log(p_real)))
        g_real = disc.backward_params(
            (-1.0 / (config.batch_size * p_real)).astype(DTYPE)
        )

        p_fake = disc.forward(fake, "train")
        p_fake = np.clip(p_fake, _EPS, 1 - _EPS)
        loss_fake = -float(np.mean(np.log(1.0 - p_fake)))
        g_fake = disc.backward_params(
            (1.0 / (config.batch_size * (1.0 - p_fake))).astype(DTYPE)
        )

        d_loss = loss_real + loss_fake
        disc_params, disc_state = adam_step(
            disc.parameters(), _merge_grads(g_real, g_fake), disc_state,
            config.lr, config.beta1, config.beta2,
        )
        disc.load_state({**disc_params, **disc.buffers()})

        # --- generator step through the updated discriminator
        z = rng.uniform(-1, 1, (config.batch_size, desc.latent_dim)).astype(DTYPE)
        fake = gen.forward(z, "train")
        p = disc.forward(fake, "train")
        p = np.clip(p, _EPS, 1 - _EPS)
        g_loss = -float(np.mean(np.log(p)))
        dfake = disc.backward_input((-1.0 / (config.batch_size * p)).astype(DTYPE))
        gen_grads = gen.backward_params(dfake)
        gen_params, gen_state = adam_step(
            gen.parameters(), gen_grads, gen_state,
            config.lr, config.beta1, config.beta2,
        )
        gen.load_state({**gen_params, **gen.buffers()})

        _check_finite(d_loss, g_loss)
        trace.append((it, d_loss, g_loss))

        if out_dir and config.checkpoint_every and it % config.checkpoint_every == 0:
            weights.save_params(
                NetworkParams.from_graph("generator", desc, gen),
                out_dir / f"generator_{it:06d}.gvmw",
            )
            weights.save_params(
                NetworkParams.from_graph("discriminator", desc, disc),
                out_dir / f"discriminator_{it:06d}.gvmw",
            )

    gen_out = NetworkParams.from_graph("generator", desc, gen)
    disc_out = NetworkParams.from_graph("discriminator", desc, disc)
    if out_dir:
        weights.save_params(gen_out, out_dir / "generator.gvmw")
        weights.save_params(disc_out, out_dir / "discriminator.gvmw")
        write_loss_csv(out_dir / "gan_loss.csv", trace, ("iteration", "d_loss", "g_loss"))
    return gen_out, disc_out, trace


def train_encoder(
    gen_params: NetworkParams,
    disc_params: NetworkParams,
    dataset: Dataset,
    config: TrainConfig,
    recon_cfg: ReconLoss | None = None,
):
    """Fit the encoder to invert a frozen generator.

    Minimizes the reconstruction loss of G(P(x)) against x over the train
    split; generator parameters receive no updates.
    Returns (encoder params, loss trace).
    """
    desc = gen_params.descriptor
    if desc.resolution != dataset.resolution:
        raise ValueError("dataset resolution does not match the architecture")
    rng = np.random.default_rng(config.seed)
    gen = graph_from_params(gen_params)
    enc = build_encoder(desc, rng)
    enc_state = AdamState.init_like(enc.parameters())
    cfg = recon_cfg or ReconLoss(extractor=FeatureExtractor.from_params(disc_params))

    out_dir = Path(config.out_dir) if config.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    trace = []
    for it in range(1, config.iterations + 1):
        x = _batch(dataset, rng, config.batch_size)
        z = enc.forward(x, "train")
        xhat = gen.forward(z, "inference")
        loss, dxhat = recon_loss_batch(xhat, x, cfg)
        _check_finite(loss)
        dz = gen.backward_input(dxhat)
        enc_grads = enc.backward_params(dz)
        enc_params, enc_state = adam_step(
            enc.parameters(), enc_grads, enc_state,
            config.encoder_lr, 0.9, config.beta2,
        )
        enc.load_state({**enc_params, **enc.buffers()})
        trace.append((it, loss))

        if out_dir and config.checkpoint_every and it % config.checkpoint_every == 0:
            weights.save_params(
                NetworkParams.from_graph("encoder", desc, enc),
                out_dir / f"encoder_{it:06d}.gvmw",
            )

    enc_out = NetworkParams.from_graph("encoder", desc, enc)
    if out_dir:
        weights.save_params(enc_out, out_dir / "encoder.gvmw")
        write_loss_csv(out_dir / "encoder_loss.csv", trace, ("iteration", "enc_loss"))
    return enc_out, trace
