"""Layer objects over the autodiff substrate, plus declarative specs.

A network is a plain sequential stack.  :class:`LayerSpec` is the
declarative form used by the model catalog and by checkpoints;
:func:`build_network` materializes parameters (Gaussian init, std 0.02,
zero biases) and infers every intermediate shape, which
:func:`trace_shapes` exposes for shape-conformance checks.

Checkpoints are a JSON manifest (layer specs, entry names and shapes,
optimizer scalars, metadata) plus a little-endian float32 blob of all
parameters and batchnorm running statistics in manifest order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from .nn import ShapeError, Tensor

INIT_STD = 0.02
BN_MOMENTUM = 0.9

LAYER_KINDS = (
    "conv1d", "maxpool1d", "frac_conv1d", "dense", "batchnorm", "dropout",
    "leaky_relu", "tanh", "flatten", "project_reshape",
)


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a sequential architecture, declaratively.

    ``kernel``/``stride``/``filters`` apply to the convolution family and
    dense layers (``filters`` is the output width); ``target_len`` is the
    output length of a fractionally-strided convolution or the sequence
    length of a projection; ``keep_prob`` and ``alpha`` parameterize
    dropout and leaky ReLU.
    """

    kind: str
    kernel: int | None = None
    stride: int | None = None
    filters: int | None = None
    target_len: int | None = None
    keep_prob: float | None = None
    alpha: float | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind '{self.kind}'")
        for name in ("kernel", "stride", "filters", "target_len"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{self.kind}: {name} must be positive")
        if self.keep_prob is not None and not 0.0 < self.keep_prob <= 1.0:
            raise ValueError(f"{self.kind}: keep_prob must be in (0, 1]")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        for name in ("kernel", "stride", "filters", "target_len", "keep_prob", "alpha"):
            v = getattr(self, name)
            if v is not None:
                d[name] = v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(**d)


# convenience constructors, so model tables read like the architecture
def conv(filters: int, kernel: int = 8, stride: int = 1) -> LayerSpec:
    return LayerSpec("conv1d", kernel=kernel, stride=stride, filters=filters)


def pool(window: int = 8, stride: int = 2) -> LayerSpec:
    return LayerSpec("maxpool1d", kernel=window, stride=stride)


def frac_conv(filters: int, target_len: int, kernel: int = 8, stride: int = 2) -> LayerSpec:
    return LayerSpec("frac_conv1d", kernel=kernel, stride=stride,
                     filters=filters, target_len=target_len)


def dense(width: int) -> LayerSpec:
    return LayerSpec("dense", filters=width)


def batchnorm() -> LayerSpec:
    return LayerSpec("batchnorm")


def dropout(keep_prob: float = 0.5) -> LayerSpec:
    return LayerSpec("dropout", keep_prob=keep_prob)


def leaky_relu(alpha: float = 0.2) -> LayerSpec:
    return LayerSpec("leaky_relu", alpha=alpha)


def tanh() -> LayerSpec:
    return LayerSpec("tanh")


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def project_reshape(length: int, channels: int) -> LayerSpec:
    return LayerSpec("project_reshape", filters=channels, target_len=length)


# ---------------------------------------------------------------------------
# materialized layers

def _gaussian(rng: np.random.Generator, shape) -> Tensor:
    data = rng.normal(0.0, INIT_STD, size=shape).astype(nn.get_default_dtype())
    return Tensor(data, requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=nn.get_default_dtype()), requires_grad=True)


class _Layer:
    spec: LayerSpec

    def named_params(self) -> list[tuple[str, Tensor]]:
        return []

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        return []

    def __call__(self, x: Tensor, train: bool, rng, update_stats: bool) -> Tensor:
        raise NotImplementedError


class Conv1d(_Layer):
    def __init__(self, spec: LayerSpec, in_ch: int, rng):
        self.spec = spec
        self.stride = spec.stride or 1
        self.w = _gaussian(rng, (spec.kernel, in_ch, spec.filters))
        self.b = _zeros((spec.filters,))

    def named_params(self):
        return [("w", self.w), ("b", self.b)]

    def __call__(self, x, train, rng, update_stats):
        return nn.conv1d(x, self.w, self.b, stride=self.stride)


class FracConv1d(_Layer):
    def __init__(self, spec: LayerSpec, in_ch: int, rng):
        self.spec = spec
        self.stride = spec.stride or 2
        self.target_len = spec.target_len
        self.w = _gaussian(rng, (spec.kernel, spec.filters, in_ch))
        self.b = _zeros((spec.filters,))

    def named_params(self):
        return [("w", self.w), ("b", self.b)]

    def __call__(self, x, train, rng, update_stats):
        return nn.frac_conv1d(x, self.w, self.b, stride=self.stride,
                              target_len=self.target_len)


class MaxPool1d(_Layer):
    def __init__(self, spec: LayerSpec):
        self.spec = spec

    def __call__(self, x, train, rng, update_stats):
        return nn.maxpool1d(x, window=self.spec.kernel, stride=self.spec.stride or 2)


class Dense(_Layer):
    def __init__(self, spec: LayerSpec, n_in: int, rng):
        self.spec = spec
        self.w = _gaussian(rng, (n_in, spec.filters))
        self.b = _zeros((spec.filters,))

    def named_params(self):
        return [("w", self.w), ("b", self.b)]

    def __call__(self, x, train, rng, update_stats):
        return nn.add(nn.matmul(x, self.w), self.b)


class BatchNorm(_Layer):
    def __init__(self, spec: LayerSpec, features: int):
        self.spec = spec
        self.gamma = Tensor(np.ones(features, dtype=nn.get_default_dtype()),
                            requires_grad=True)
        self.beta = _zeros((features,))
        self.running_mean = np.zeros(features, dtype=np.float64)
        self.running_var = np.ones(features, dtype=np.float64)

    def named_params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def named_buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def __call__(self, x, train, rng, update_stats):
        if train:
            y, m, v = nn.batchnorm_train(x, self.gamma, self.beta)
            if update_stats:
                self.running_mean *= BN_MOMENTUM
                self.running_mean += (1.0 - BN_MOMENTUM) * m
                self.running_var *= BN_MOMENTUM
                self.running_var += (1.0 - BN_MOMENTUM) * v
            return y
        rm = self.running_mean.astype(x.data.dtype)
        rv = self.running_var.astype(x.data.dtype)
        return nn.batchnorm_eval(x, self.gamma, self.beta, rm, rv)


class Dropout(_Layer):
    def __init__(self, spec: LayerSpec):
        self.spec = spec

    def __call__(self, x, train, rng, update_stats):
        if not train:
            return x
        if rng is None:
            raise ValueError("dropout in train mode needs an rng")
        return nn.dropout(x, self.spec.keep_prob, rng)


class LeakyReLU(_Layer):
    def __init__(self, spec: LayerSpec):
        self.spec = spec

    def __call__(self, x, train, rng, update_stats):
        return nn.leaky_relu(x, alpha=self.spec.alpha if self.spec.alpha is not None else 0.2)


class Tanh(_Layer):
    def __init__(self, spec: LayerSpec):
        self.spec = spec

    def __call__(self, x, train, rng, update_stats):
        return nn.tanh_act(x)


class Flatten(_Layer):
    def __init__(self, spec: LayerSpec):
        self.spec = spec

    def __call__(self, x, train, rng, update_stats):
        return nn.flatten(x)


class ProjectReshape(_Layer):
    """Dense projection of a latent vector, reshaped to (length, channels)."""

    def __init__(self, spec: LayerSpec, n_in: int, rng):
        self.spec = spec
        self.length = spec.target_len
        self.channels = spec.filters
        self.w = _gaussian(rng, (n_in, self.length * self.channels))
        self.b = _zeros((self.length * self.channels,))

    def named_params(self):
        return [("w", self.w), ("b", self.b)]

    def __call__(self, x, train, rng, update_stats):
        y = nn.add(nn.matmul(x, self.w), self.b)
        return nn.reshape(y, (x.shape[0], self.length, self.channels))


class Network:
    """A sequential stack with explicit train/eval semantics.

    ``update_stats`` controls whether batchnorm running statistics absorb
    this forward pass (defaults to ``train``); ``return_features`` also
    yields the input of the final dense layer, the feature vector used by
    feature matching.
    """

    def __init__(self, layers: list[_Layer], specs: list[LayerSpec],
                 in_shape: tuple[int, ...]):
        self.layers = layers
        self.specs = specs
        self.in_shape = in_shape
        self._feature_idx = max(
            (i for i, l in enumerate(layers) if isinstance(l, Dense)), default=None
        )

    def params(self) -> list[Tensor]:
        return [p for layer in self.layers for _, p in layer.named_params()]

    def named_params(self) -> list[tuple[str, Tensor]]:
        return [
            (f"{i}.{name}", p)
            for i, layer in enumerate(self.layers)
            for name, p in layer.named_params()
        ]

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        return [
            (f"{i}.{name}", b)
            for i, layer in enumerate(self.layers)
            for name, b in layer.named_buffers()
        ]

    def zero_grad(self) -> None:
        for p in self.params():
            p.zero_grad()

    def set_trainable(self, flag: bool) -> None:
        for p in self.params():
            p.requires_grad = flag

    def __call__(self, x: Tensor, *, train: bool = False, rng=None,
                 update_stats: bool | None = None, return_features: bool = False):
        if update_stats is None:
            update_stats = train
        features = None
        for i, layer in enumerate(self.layers):
            if return_features and i == self._feature_idx:
                features = x
            x = layer(x, train, rng, update_stats)
        if return_features:
            return x, (features if features is not None else x)
        return x


def _shape_after(spec: LayerSpec, shape: tuple[int, ...]) -> tuple[int, ...]:
    kind = spec.kind
    if kind == "conv1d":
        if len(shape) != 2:
            raise ShapeError(f"conv1d needs (L, C) input, got {shape}")
        out_len, _, _ = nn.same_ceil_geometry(shape[0], spec.kernel, spec.stride or 1)
        return (out_len, spec.filters)
    if kind == "maxpool1d":
        if len(shape) != 2:
            raise ShapeError(f"maxpool1d needs (L, C) input, got {shape}")
        out_len, _, _ = nn.same_ceil_geometry(shape[0], spec.kernel, spec.stride or 2)
        return (out_len, shape[1])
    if kind == "frac_conv1d":
        if len(shape) != 2:
            raise ShapeError(f"frac_conv1d needs (L, C) input, got {shape}")
        expect, _, _ = nn.same_ceil_geometry(spec.target_len, spec.kernel,
                                             spec.stride or 2)
        if expect != shape[0]:
            raise ShapeError(
                f"frac_conv1d target_len {spec.target_len} incompatible with "
                f"input length {shape[0]}"
            )
        return (spec.target_len, spec.filters)
    if kind == "dense":
        if len(shape) != 1:
            raise ShapeError(f"dense needs a flat input, got {shape}")
        return (spec.filters,)
    if kind == "flatten":
        return (int(np.prod(shape)),)
    if kind == "project_reshape":
        if len(shape) != 1:
            raise ShapeError(f"project_reshape needs a flat input, got {shape}")
        return (spec.target_len, spec.filters)
    return shape  # batchnorm, dropout, activations


def trace_shapes(specs: Sequence[LayerSpec],
                 in_shape: tuple[int, ...]) -> list[tuple[int, ...]]:
    """Per-layer output shapes (batch axis omitted) for a spec stack."""
    shapes = []
    shape = tuple(in_shape)
    for spec in specs:
        shape = _shape_after(spec, shape)
        shapes.append(shape)
    return shapes


def build_network(specs: Sequence[LayerSpec], in_shape: tuple[int, ...],
                  rng: np.random.Generator) -> Network:
    layers: list[_Layer] = []
    shape = tuple(in_shape)
    for spec in specs:
        kind = spec.kind
        if kind == "conv1d":
            layers.append(Conv1d(spec, shape[1], rng))
        elif kind == "frac_conv1d":
            layers.append(FracConv1d(spec, shape[1], rng))
        elif kind == "maxpool1d":
            layers.append(MaxPool1d(spec))
        elif kind == "dense":
            layers.append(Dense(spec, shape[0], rng))
        elif kind == "batchnorm":
            layers.append(BatchNorm(spec, shape[-1]))
        elif kind == "dropout":
            layers.append(Dropout(spec))
        elif kind == "leaky_relu":
            layers.append(LeakyReLU(spec))
        elif kind == "tanh":
            layers.append(Tanh(spec))
        elif kind == "flatten":
            layers.append(Flatten(spec))
        elif kind == "project_reshape":
            layers.append(ProjectReshape(spec, shape[0], rng))
        shape = _shape_after(spec, shape)
    return Network(layers, list(specs), tuple(in_shape))


def parameter_count(net: Network) -> int:
    return sum(p.data.size for p in net.params())


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_FORMAT = "modegan-checkpoint/1"


def save_checkpoint(base: str | Path, networks: dict[str, Network],
                    adam_scalars: dict | None = None,
                    meta: dict | None = None) -> tuple[Path, Path]:
    """Write ``<base>.json`` manifest + ``<base>.f32`` parameter blob."""
    base = Path(base)
    manifest: dict = {"format": CHECKPOINT_FORMAT, "networks": []}
    if adam_scalars is not None:
        manifest["adam"] = adam_scalars
    if meta:
        manifest["meta"] = meta

    chunks: list[np.ndarray] = []
    for name, net in networks.items():
        entries = []
        for pname, p in net.named_params():
            entries.append({"name": pname, "shape": list(p.data.shape),
                            "kind": "param"})
            chunks.append(np.ascontiguousarray(p.data, dtype="<f4").reshape(-1))
        for bname, buf in net.named_buffers():
            entries.append({"name": bname, "shape": list(buf.shape),
                            "kind": "buffer"})
            chunks.append(np.ascontiguousarray(buf, dtype="<f4").reshape(-1))
        manifest["networks"].append({
            "name": name,
            "in_shape": list(net.in_shape),
            "layer_specs": [s.to_dict() for s in net.specs],
            "entries": entries,
        })

    json_path = base.with_suffix(".json")
    blob_path = base.with_suffix(".f32")
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    blob = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f4")
    blob_path.write_bytes(blob.astype("<f4").tobytes())
    return json_path, blob_path


def load_checkpoint(base: str | Path) -> tuple[dict[str, Network], dict]:
    """Rebuild the stored networks; returns (networks, manifest)."""
    base = Path(base)
    manifest = json.loads(base.with_suffix(".json").read_text(encoding="utf-8"))
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unrecognized checkpoint format in {base}")
    raw = np.frombuffer(base.with_suffix(".f32").read_bytes(), dtype="<f4")

    networks: dict[str, Network] = {}
    offset = 0
    for net_entry in manifest["networks"]:
        specs = [LayerSpec.from_dict(d) for d in net_entry["layer_specs"]]
        net = build_network(specs, tuple(net_entry["in_shape"]),
                            np.random.default_rng(0))
        params = dict(net.named_params())
        buffers = dict(net.named_buffers())
        for entry in net_entry["entries"]:
            shape = tuple(entry["shape"])
            size = int(np.prod(shape)) if shape else 1
            values = raw[offset : offset + size].reshape(shape)
            offset += size
            if entry["kind"] == "param":
                p = params[entry["name"]]
                p.data = values.astype(p.data.dtype)
            else:
                buffers[entry["name"]][...] = values
        networks[net_entry["name"]] = net
    if offset != raw.size:
        raise ValueError(f"checkpoint blob size mismatch in {base}")
    return networks, manifest
