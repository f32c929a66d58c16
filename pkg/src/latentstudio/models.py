"""Generator / discriminator / encoder architectures and latent-space utilities.

The three networks share one convolutional family: the generator expands a
latent vector through a fully-connected reshape followed by stride-2
transposed convolutions up to the target resolution; the discriminator
mirrors it with stride-2 convolutions down to a single probability; the
encoder reuses the discriminator trunk but emits a latent-sized output
squashed by tanh so predictions stay inside the latent box.

Latent vectors live in the box [-1,1]^d; anything that updates a latent is
expected to clamp back into the box via :func:`clamp_latent`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import DTYPE, Graph

SUPPORTED_RESOLUTIONS = (32, 64)

ROLE_GENERATOR = "generator"
ROLE_DISCRIMINATOR = "discriminator"
ROLE_ENCODER = "encoder"
ROLES = (ROLE_GENERATOR, ROLE_DISCRIMINATOR, ROLE_ENCODER)


@dataclass(frozen=True)
class ArchDescriptor:
    """Resolution / width / latent configuration shared by all three nets."""

    resolution: int = 32
    latent_dim: int = 100
    base_channels: int = 64

    def __post_init__(self):
        if self.resolution not in SUPPORTED_RESOLUTIONS:
            raise ValueError(f"unsupported resolution {self.resolution}")
        if self.latent_dim <= 0 or self.base_channels <= 0:
            raise ValueError("latent_dim and base_channels must be positive")

    @property
    def up_blocks(self) -> int:
        # 4x4 seed doubling up to the resolution
        return int(math.log2(self.resolution // 4))


@dataclass
class NetworkParams:
    """Named tensor bundle for one network plus its architecture descriptor."""

    role: str
    descriptor: ArchDescriptor
    tensors: dict

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")

    @classmethod
    def from_graph(cls, role: str, descriptor: ArchDescriptor, graph: Graph):
        return cls(role, descriptor, {k: v.copy() for k, v in graph.state_dict().items()})


# ---------------------------------------------------------------------------
# architectures
# ---------------------------------------------------------------------------

def _channel_ladder(desc: ArchDescriptor):
    """Channel widths from the 4x4 seed outward: widest at 4x4."""
    return [desc.base_channels * (2 ** i) for i in range(desc.up_blocks)][::-1]


def build_generator(descriptor: ArchDescriptor, rng) -> Graph:
    """latent_dim -> resolution x resolution x 3, output range (-1,1)."""
    d = descriptor
    chans = _channel_ladder(d)  # e.g. 32px/base 64: [256, 128, 64]
    layers = [
        nn.FullyConnected("fc0", d.latent_dim, chans[0] * 16, rng),
        nn.Reshape("reshape0", (chans[0], 4, 4)),
        nn.BatchNorm2d("bn0", chans[0], rng),
        nn.ReLU("relu0"),
    ]
    for i in range(1, d.up_blocks):
        layers += [
            nn.ConvTranspose2d(f"up{i}", chans[i - 1], chans[i], rng),
            nn.BatchNorm2d(f"bn{i}", chans[i], rng),
            nn.ReLU(f"relu{i}"),
        ]
    layers += [
        nn.ConvTranspose2d(f"up{d.up_blocks}", chans[-1], 3, rng),
        nn.Tanh("tanh"),
    ]
    return Graph(layers, input_shape=(d.latent_dim,), name="generator")


def _disc_trunk(desc: ArchDescriptor, rng):
    """Shared discriminator/encoder trunk down to the 4x4 feature map."""
    chans = _channel_ladder(desc)[::-1]  # narrow -> wide
    layers = [
        nn.Conv2d("down1", 3, chans[0], rng),
        nn.LeakyReLU("lrelu1"),
    ]
    for i in range(1, desc.up_blocks):
        layers += [
            nn.Conv2d(f"down{i + 1}", chans[i - 1], chans[i], rng),
            nn.BatchNorm2d(f"bn{i + 1}", chans[i], rng),
            nn.LeakyReLU(f"lrelu{i + 1}"),
        ]
    return layers, chans[-1]


def feature_tap_index(graph: Graph) -> int:
    """Layer index of the designated feature activation (8x8 spatial map).

    The trunk halves the extent per block, so the activation after the
    block that reaches 8x8 is the tap used for perceptual reconstruction.
    """
    for i, layer in enumerate(graph.layers):
        if isinstance(layer, nn.LeakyReLU) and layer.name.startswith("lrelu"):
            block = int(layer.name.replace("lrelu", ""))
            if graph.input_shape[1] // (2 ** block) == 8:
                return i
    raise nn.GraphError(f"{graph.name}: no 8x8 feature tap in trunk")


def build_discriminator(descriptor: ArchDescriptor, rng) -> Graph:
    """resolution x resolution x 3 -> real-photo probability in (0,1)."""
    d = descriptor
    layers, c_last = _disc_trunk(d, rng)
    layers += [
        nn.Reshape("flatten", (c_last * 16,)),
        nn.FullyConnected("fc_out", c_last * 16, 1, rng),
        nn.Sigmoid("sigmoid"),
    ]
    return Graph(layers, input_shape=(3, d.resolution, d.resolution), name="discriminator")


def build_encoder(descriptor: ArchDescriptor, rng) -> Graph:
    """Discriminator trunk with a latent-sized tanh head."""
    d = descriptor
    layers, c_last = _disc_trunk(d, rng)
    layers += [
        nn.Reshape("flatten", (c_last * 16,)),
        nn.FullyConnected("fc_out", c_last * 16, d.latent_dim, rng),
        nn.Tanh("tanh"),
    ]
    return Graph(layers, input_shape=(3, d.resolution, d.resolution), name="encoder")


_BUILDERS = {
    ROLE_GENERATOR: build_generator,
    ROLE_DISCRIMINATOR: build_discriminator,
    ROLE_ENCODER: build_encoder,
}


def build_network(role: str, descriptor: ArchDescriptor, rng=None) -> Graph:
    if role not in _BUILDERS:
        raise ValueError(f"unknown role {role!r}")
    rng = rng if rng is not None else np.random.default_rng(0)
    return _BUILDERS[role](descriptor, rng)


def graph_from_params(params: NetworkParams) -> Graph:
    """Instantiate the architecture for a bundle and load its tensors."""
    graph = build_network(params.role, params.descriptor)
    graph.load_state(params.tensors)
    return graph


# ---------------------------------------------------------------------------
# latent utilities
# ---------------------------------------------------------------------------

def sample_latent(rng, dim: int = 100) -> np.ndarray:
    """One uniform draw from the latent box [-1,1]^dim."""
    return rng.uniform(-1.0, 1.0, dim).astype(DTYPE)


def clamp_latent(z: np.ndarray) -> np.ndarray:
    return np.clip(z, -1.0, 1.0).astype(DTYPE)


def interpolate_latents(z0: np.ndarray, z1: np.ndarray, n: int):
    """N+1 evenly spaced latents from z0 to z1 inclusive.

    Straight lines are shortest paths under the latent-space metric, so
    this is the traversal used for morphs and the relative-edit slider.
    """
    if n < 1:
        raise ValueError("need at least one interpolation interval")
    z0 = np.asarray(z0, DTYPE)
    z1 = np.asarray(z1, DTYPE)
    if z0.shape != z1.shape:
        raise ValueError("latent endpoints must have equal dimension")
    out = []
    for t in range(n + 1):
        a = t / n
        out.append(((1.0 - a) * z0 + a * z1).astype(DTYPE))
    return out


def latent_distance(z0: np.ndarray, z1: np.ndarray) -> float:
    """Squared Euclidean distance; the latent proxy for visual similarity."""
    diff = np.asarray(z0, np.float64) - np.asarray(z1, np.float64)
    return float(np.dot(diff, diff))
