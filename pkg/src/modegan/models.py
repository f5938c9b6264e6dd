"""The model catalog: three 1-D CNN baselines and two semi-supervised GANs.

All five models consume 70x5 kinematic segments.  The CNNs (A, B, C)
downsample with stride-1 convolutions followed by max pooling and end in a
4-way classifier.  The GANs (D, E) pair a stride-2 convolutional
discriminator with 4+1 outputs (four transport modes plus a fake class)
against a generator that projects a 100-dim uniform noise vector to a
short wide sequence and upsamples through four fractionally-strided
convolutions back to 70x5, tanh-bounded to match z-scored real segments.

Batchnorm follows every convolution except the discriminator's first
layer and the generator's output layer; one dropout (keep 0.5) sits before
each final dense layer.  Hidden activations are LeakyReLU(0.2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers as L
from . import nn
from .corpus import NUM_MODES
from .layers import LayerSpec, Network, build_network, trace_shapes
from .nn import Tensor

MODEL_IDS = ("A", "B", "C", "D", "E")
SEGMENT_SHAPE = (70, 5)
Z_DIM = 100
FAKE_OUTPUTS = NUM_MODES + 1  # 4 real modes + fake


@dataclass(frozen=True)
class ModelSpec:
    id: str
    classifier: list[LayerSpec]  # discriminator, for the GAN models
    generator: list[LayerSpec] | None = None
    num_classes: int = NUM_MODES
    num_outputs: int = NUM_MODES

    @property
    def is_gan(self) -> bool:
        return self.generator is not None


def _cnn_stack(filter_counts: list[int]) -> list[LayerSpec]:
    specs: list[LayerSpec] = []
    for f in filter_counts:
        specs += [L.conv(f, kernel=8, stride=1), L.batchnorm(), L.leaky_relu(),
                  L.pool(window=8, stride=2)]
    specs += [L.flatten(), L.dropout(0.5), L.dense(NUM_MODES)]
    return specs


def _discriminator_stack(filter_counts: list[int]) -> list[LayerSpec]:
    specs: list[LayerSpec] = []
    for i, f in enumerate(filter_counts):
        specs.append(L.conv(f, kernel=8, stride=2))
        if i > 0:
            specs.append(L.batchnorm())
        specs.append(L.leaky_relu())
    specs += [L.flatten(), L.dropout(0.5), L.dense(FAKE_OUTPUTS)]
    return specs


def _generator_stack(proj_channels: int, filter_counts: list[int]) -> list[LayerSpec]:
    # length chain 5 -> 9 -> 18 -> 35 -> 70 mirrors the discriminator's
    # 70 -> 35 -> 18 -> 9 downsampling
    targets = (9, 18, 35, 70)
    specs: list[LayerSpec] = [
        L.project_reshape(length=5, channels=proj_channels),
        L.batchnorm(), L.leaky_relu(),
    ]
    for f, t in zip(filter_counts, targets):
        specs.append(L.frac_conv(f, target_len=t, kernel=8, stride=2))
        if t != 70:
            specs += [L.batchnorm(), L.leaky_relu()]
    specs.append(L.tanh())
    return specs


def build_model(model_id: str) -> ModelSpec:
    """Return the declarative architecture for one of models A-E."""
    if model_id == "A":
        return ModelSpec("A", _cnn_stack([32, 64, 128]))
    if model_id == "B":
        return ModelSpec("B", _cnn_stack([128, 256, 512]))
    if model_id == "C":
        return ModelSpec("C", _cnn_stack([96, 256, 384, 384, 256]))
    if model_id == "D":
        return ModelSpec(
            "D",
            _discriminator_stack([32, 64, 128]),
            _generator_stack(256, [128, 64, 32, 5]),
            num_outputs=FAKE_OUTPUTS,
        )
    if model_id == "E":
        return ModelSpec(
            "E",
            _discriminator_stack([128, 256, 512]),
            _generator_stack(1024, [512, 256, 128, 5]),
            num_outputs=FAKE_OUTPUTS,
        )
    raise ValueError(f"unknown model id '{model_id}' (expected one of {MODEL_IDS})")


def build_networks(spec: ModelSpec, seed: int, salt: int = 0) -> dict[str, Network]:
    """Materialize parameters for a model's network(s), deterministically."""
    rng = np.random.default_rng([seed, 101, salt])
    if not spec.is_gan:
        return {"classifier": build_network(spec.classifier, SEGMENT_SHAPE, rng)}
    disc = build_network(spec.classifier, SEGMENT_SHAPE, rng)
    gen = build_network(spec.generator, (Z_DIM,), rng)
    return {"discriminator": disc, "generator": gen}


def classifier_trace(spec: ModelSpec) -> list[tuple[int, ...]]:
    return trace_shapes(spec.classifier, SEGMENT_SHAPE)


def generator_trace(spec: ModelSpec) -> list[tuple[int, ...]]:
    if spec.generator is None:
        raise ValueError(f"model {spec.id} has no generator")
    return trace_shapes(spec.generator, (Z_DIM,))


def sample_noise(rng: np.random.Generator, n: int) -> np.ndarray:
    """Latent batch: n vectors of length 100, uniform on [-1, 1]."""
    return rng.uniform(-1.0, 1.0, size=(n, Z_DIM)).astype(nn.get_default_dtype())


def discriminator_forward(net: Network, batch, *, train: bool = False,
                          rng=None, update_stats: bool | None = None,
                          return_features: bool = False):
    """Logits for a (B, 70, 5) batch; optionally also last-hidden features."""
    x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch))
    return net(x, train=train, rng=rng, update_stats=update_stats,
               return_features=return_features)


def generator_forward(net: Network, z, *, train: bool = False, rng=None,
                      update_stats: bool | None = None):
    """Fake segments (B, 70, 5) in (-1, 1) from a (B, 100) noise batch."""
    zt = z if isinstance(z, Tensor) else Tensor(np.asarray(z))
    return net(zt, train=train, rng=rng, update_stats=update_stats)
