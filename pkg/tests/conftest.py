import numpy as np
import pytest

from latentstudio.models import (
    ArchDescriptor,
    NetworkParams,
    build_discriminator,
    build_encoder,
    build_generator,
)

TINY_DESC = ArchDescriptor(resolution=32, latent_dim=8, base_channels=16)


def warmed_generator(desc, seed, warm_batches=100):
    """Untrained generator with populated batchnorm running statistics.

    A fresh generator is near-constant in inference mode (running stats
    still at their init); warming them up with train-mode forwards makes
    the latent-to-image map genuinely vary, which is what editing and
    projection tests need.
    """
    rng = np.random.default_rng(seed)
    g = build_generator(desc, rng)
    for _ in range(warm_batches):
        z = rng.uniform(-1, 1, (16, desc.latent_dim)).astype(np.float32)
        g.forward(z, "train")
    return g


def warmed_discriminator(desc, seed, warm_batches=30):
    rng = np.random.default_rng(seed)
    d = build_discriminator(desc, rng)
    for _ in range(warm_batches):
        x = rng.uniform(-1, 1, (8, 3, desc.resolution, desc.resolution)).astype(np.float32)
        d.forward(x, "train")
    return d


@pytest.fixture(scope="session")
def tiny_models():
    """Small untrained-but-functional G/D/P bundle shared across tests."""
    gen = warmed_generator(TINY_DESC, seed=0)
    disc = warmed_discriminator(TINY_DESC, seed=1)
    enc = build_encoder(TINY_DESC, np.random.default_rng(2))
    return {
        "desc": TINY_DESC,
        "generator": gen,
        "discriminator": disc,
        "encoder": enc,
        "gen_params": NetworkParams.from_graph("generator", TINY_DESC, gen),
        "disc_params": NetworkParams.from_graph("discriminator", TINY_DESC, disc),
        "enc_params": NetworkParams.from_graph("encoder", TINY_DESC, enc),
    }
