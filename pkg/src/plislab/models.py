"""Small supervised models (linear, MLP, CNN) and per-sample losses.

Parameters live in one flat vector; layers slice their blocks out of it
on the graph, so the gradient with respect to all parameters comes back
as a single flat tensor.  Inputs are always registered as graph leaves,
since every analysis in this package differentiates with respect to them.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import rng
from .autodiff import (
    Graph,
    Tensor,
    add,
    broadcast,
    conv2d,
    matmul,
    mul,
    relu,
    reshape,
    softplus,
    square,
    sub,
    tanh,
    tmean,
    tslice,
)
from .errors import ConfigError, DataFormatError, ShapeError

MSE = "mse"
CROSS_ENTROPY = "cross_entropy"

_INIT_STREAM = 1 << 40  # keep layer-init draws disjoint from other uses of a seed


@dataclass(frozen=True)
class Linear:
    in_dim: int
    out_dim: int
    bias: bool = True


@dataclass(frozen=True)
class Conv2d:
    in_ch: int
    out_ch: int
    kernel: int
    bias: bool = True


@dataclass(frozen=True)
class Relu:
    pass


@dataclass(frozen=True)
class Tanh:
    pass


@dataclass(frozen=True)
class Softplus:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


Layer = Linear | Conv2d | Relu | Tanh | Softplus | Flatten


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple[Layer, ...]
    loss: str

    def __post_init__(self):
        if self.loss not in (MSE, CROSS_ENTROPY):
            raise ConfigError(f"unknown loss '{self.loss}'")
        if not self.layers:
            raise ConfigError("model needs at least one layer")


@dataclass(frozen=True)
class ParamBlock:
    name: str
    offset: int
    shape: tuple[int, ...]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))


@dataclass
class ParamSet:
    """Flattened parameter vector plus the per-layer layout."""

    flat: np.ndarray
    layout: tuple[ParamBlock, ...]

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=np.float64)
        if self.flat.ndim != 1:
            raise ShapeError("ParamSet.flat must be one-dimensional")
        total = sum(b.size for b in self.layout)
        if total != self.flat.size:
            raise ShapeError(
                f"layout covers {total} entries but flat has {self.flat.size}"
            )

    @property
    def count(self) -> int:
        return self.flat.size

    def with_flat(self, flat: np.ndarray) -> "ParamSet":
        return ParamSet(flat, self.layout)


def layout_for(spec: ModelSpec) -> tuple[ParamBlock, ...]:
    blocks: list[ParamBlock] = []
    offset = 0
    for idx, layer in enumerate(spec.layers):
        shapes: list[tuple[str, tuple[int, ...]]] = []
        if isinstance(layer, Linear):
            shapes.append((f"{idx}.weight", (layer.out_dim, layer.in_dim)))
            if layer.bias:
                shapes.append((f"{idx}.bias", (layer.out_dim,)))
        elif isinstance(layer, Conv2d):
            shapes.append((f"{idx}.weight", (layer.out_ch, layer.in_ch, layer.kernel, layer.kernel)))
            if layer.bias:
                shapes.append((f"{idx}.bias", (layer.out_ch,)))
        for name, shape in shapes:
            block = ParamBlock(name, offset, shape)
            blocks.append(block)
            offset += block.size
    return tuple(blocks)


def param_count(spec: ModelSpec) -> int:
    return sum(b.size for b in layout_for(spec))


def init_params(spec: ModelSpec, seed: int) -> ParamSet:
    """Uniform [-a, a] weights with a = sqrt(6/(fan_in+fan_out)); zero biases."""
    layout = layout_for(spec)
    flat = np.zeros(sum(b.size for b in layout))
    for idx, layer in enumerate(spec.layers):
        if isinstance(layer, Linear):
            fan_in, fan_out = layer.in_dim, layer.out_dim
        elif isinstance(layer, Conv2d):
            fan_in = layer.in_ch * layer.kernel * layer.kernel
            fan_out = layer.out_ch * layer.kernel * layer.kernel
        else:
            continue
        a = np.sqrt(6.0 / (fan_in + fan_out))
        block = next(b for b in layout if b.name == f"{idx}.weight")
        u = rng.uniforms(seed, _INIT_STREAM + idx, block.size)
        flat[block.offset : block.offset + block.size] = (2.0 * u - 1.0) * a
    return ParamSet(flat, layout)


def unflatten(params: ParamSet) -> dict[str, np.ndarray]:
    return {
        b.name: params.flat[b.offset : b.offset + b.size].reshape(b.shape).copy()
        for b in params.layout
    }


def flatten(blocks: dict[str, np.ndarray], layout: tuple[ParamBlock, ...]) -> ParamSet:
    flat = np.zeros(sum(b.size for b in layout))
    for b in layout:
        flat[b.offset : b.offset + b.size] = np.asarray(blocks[b.name]).reshape(-1)
    return ParamSet(flat, layout)


# --------------------------------------------------------------------------
# forward pass
# --------------------------------------------------------------------------


def output_shape(spec: ModelSpec, input_shape: tuple[int, ...]) -> tuple[int, ...]:
    """Propagate a shape through the layers, validating composition."""
    shape = tuple(input_shape)
    for idx, layer in enumerate(spec.layers):
        if isinstance(layer, Linear):
            if shape != (layer.in_dim,):
                raise ShapeError(
                    f"layer {idx} linear({layer.in_dim},{layer.out_dim}) got input shape {shape}"
                )
            shape = (layer.out_dim,)
        elif isinstance(layer, Conv2d):
            if len(shape) != 3 or shape[0] != layer.in_ch:
                raise ShapeError(f"layer {idx} conv2d expects ({layer.in_ch},H,W), got {shape}")
            h, w = shape[1] - layer.kernel + 1, shape[2] - layer.kernel + 1
            if h <= 0 or w <= 0:
                raise ShapeError(f"layer {idx} conv2d kernel {layer.kernel} too large for {shape}")
            shape = (layer.out_ch, h, w)
        elif isinstance(layer, Flatten):
            shape = (int(np.prod(shape, dtype=np.int64)),)
    return shape


def _block_tensor(theta: Tensor, block: ParamBlock) -> Tensor:
    sl = tslice(theta, (slice(block.offset, block.offset + block.size),))
    return reshape(sl, block.shape)


def forward(spec: ModelSpec, theta: Tensor, layout: tuple[ParamBlock, ...], x: Tensor) -> Tensor:
    """Model output for a single sample; x and theta may be graph leaves."""
    blocks = {b.name: b for b in layout}
    h = x
    for idx, layer in enumerate(spec.layers):
        if isinstance(layer, Linear):
            w = _block_tensor(theta, blocks[f"{idx}.weight"])
            z = matmul(w, reshape(h, (layer.in_dim, 1)))
            if layer.bias:
                b = _block_tensor(theta, blocks[f"{idx}.bias"])
                z = add(z, reshape(b, (layer.out_dim, 1)))
            h = reshape(z, (layer.out_dim,))
        elif isinstance(layer, Conv2d):
            k = _block_tensor(theta, blocks[f"{idx}.weight"])
            h = conv2d(h, k)
            if layer.bias:
                b = _block_tensor(theta, blocks[f"{idx}.bias"])
                h = add(h, broadcast(reshape(b, (layer.out_ch, 1, 1)), h.shape))
        elif isinstance(layer, Relu):
            h = relu(h)
        elif isinstance(layer, Tanh):
            h = tanh(h)
        elif isinstance(layer, Softplus):
            h = softplus(h)
        elif isinstance(layer, Flatten):
            h = reshape(h, (h.size,))
    return h


def _loss_tensor(spec: ModelSpec, prediction: Tensor, y) -> Tensor:
    if spec.loss == MSE:
        target = np.asarray(y, dtype=np.float64).reshape(prediction.shape)
        return tmean(square(sub(prediction, Tensor(target))))
    # cross-entropy as log-sum-exp minus the selected logit, where
    # log-sum-exp is folded pairwise through softplus for stability:
    # lse(a, b) = a + softplus(b - a)
    label = int(y)
    k = prediction.size
    if not 0 <= label < k:
        raise ShapeError(f"label {label} out of range for {k} logits")
    acc = tslice(prediction, (0,))
    for i in range(1, k):
        zi = tslice(prediction, (i,))
        acc = add(acc, softplus(sub(zi, acc)))
    return sub(acc, tslice(prediction, (label,)))


@dataclass
class AttachedSample:
    """A per-sample loss with its graph and the two differentiable leaves."""

    graph: Graph
    theta: Tensor
    x: Tensor
    prediction: Tensor
    loss: Tensor


def attach_sample(spec: ModelSpec, params: ParamSet, x, y) -> AttachedSample:
    """Build the loss graph for one sample, with x and theta as leaves."""
    x = np.asarray(x, dtype=np.float64)
    out_shape = output_shape(spec, x.shape)
    if spec.loss == CROSS_ENTROPY and (len(out_shape) != 1 or out_shape[0] < 2):
        raise ShapeError(f"cross-entropy needs >=2 logits, model emits {out_shape}")
    graph = Graph()
    theta = graph.leaf(params.flat)
    x_leaf = graph.leaf(x)
    pred = forward(spec, theta, params.layout, x_leaf)
    loss = _loss_tensor(spec, pred, y)
    return AttachedSample(graph, theta, x_leaf, pred, loss)


def per_sample_loss(spec: ModelSpec, params: ParamSet, x, y) -> Tensor:
    """Scalar loss tensor, attached to the graph through theta and x."""
    return attach_sample(spec, params, x, y).loss


def per_sample_grad(
    spec: ModelSpec, params: ParamSet, x, y, create_graph: bool = False
) -> Tensor:
    """Flat parameter gradient for one sample; re-differentiable if asked."""
    from .autodiff import backward

    sample = attach_sample(spec, params, x, y)
    return backward(sample.loss, [sample.theta], create_graph=create_graph)[0]


def per_sample_loss_and_grad(
    spec: ModelSpec, params: ParamSet, x, y
) -> tuple[float, np.ndarray]:
    """Detached (loss value, flat gradient) pair, for training loops."""
    from .autodiff import backward

    sample = attach_sample(spec, params, x, y)
    g = backward(sample.loss, [sample.theta])[0]
    return float(sample.loss.data.reshape(())), g.data


def batch_mean_loss(spec: ModelSpec, params: ParamSet, xs, ys) -> tuple[Graph, Tensor, Tensor]:
    """Mean loss over a batch on one graph; returns (graph, theta, loss)."""
    graph = Graph()
    theta = graph.leaf(params.flat)
    total = None
    for x, y in zip(xs, ys):
        x_leaf = graph.leaf(np.asarray(x, dtype=np.float64))
        pred = forward(spec, theta, params.layout, x_leaf)
        loss = _loss_tensor(spec, pred, y)
        total = loss if total is None else add(total, loss)
    if total is None:
        raise ConfigError("batch_mean_loss: empty batch")
    return graph, theta, mul(total, 1.0 / len(xs))


# --------------------------------------------------------------------------
# checkpoint serialization (magic "PLCK")
# --------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"PLCK"
CHECKPOINT_VERSION = 1


def spec_to_text(spec: ModelSpec) -> str:
    parts = []
    for layer in spec.layers:
        if isinstance(layer, Linear):
            parts.append(f"linear:{layer.in_dim}:{layer.out_dim}:{int(layer.bias)}")
        elif isinstance(layer, Conv2d):
            parts.append(f"conv2d:{layer.in_ch}:{layer.out_ch}:{layer.kernel}:{int(layer.bias)}")
        elif isinstance(layer, Relu):
            parts.append("relu")
        elif isinstance(layer, Tanh):
            parts.append("tanh")
        elif isinstance(layer, Softplus):
            parts.append("softplus")
        elif isinstance(layer, Flatten):
            parts.append("flatten")
    return ";".join(parts) + "|" + spec.loss


def spec_from_text(text: str) -> ModelSpec:
    try:
        layers_text, loss = text.rsplit("|", 1)
    except ValueError:
        raise DataFormatError(f"model spec text lacks a loss section: {text!r}") from None
    layers: list[Layer] = []
    for part in layers_text.split(";"):
        fields = part.split(":")
        kind = fields[0]
        try:
            if kind == "linear":
                layers.append(Linear(int(fields[1]), int(fields[2]), bool(int(fields[3]))))
            elif kind == "conv2d":
                layers.append(
                    Conv2d(int(fields[1]), int(fields[2]), int(fields[3]), bool(int(fields[4])))
                )
            elif kind == "relu":
                layers.append(Relu())
            elif kind == "tanh":
                layers.append(Tanh())
            elif kind == "softplus":
                layers.append(Softplus())
            elif kind == "flatten":
                layers.append(Flatten())
            else:
                raise DataFormatError(f"unknown layer kind {kind!r}")
        except (IndexError, ValueError):
            raise DataFormatError(f"malformed layer descriptor {part!r}") from None
    return ModelSpec(tuple(layers), loss)


def save_checkpoint(path, spec: ModelSpec, params: ParamSet) -> None:
    spec_bytes = spec_to_text(spec).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(spec_bytes)))
        fh.write(spec_bytes)
        fh.write(params.flat.astype("<f8", copy=False).tobytes())


def load_checkpoint(path) -> tuple[ModelSpec, ParamSet]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise DataFormatError(f"bad checkpoint magic at byte 0: {blob[:4]!r}")
    if len(blob) < 12:
        raise DataFormatError(f"checkpoint truncated at byte {len(blob)}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise DataFormatError(f"unsupported checkpoint version {version}")
    (spec_len,) = struct.unpack_from("<I", blob, 8)
    if len(blob) < 12 + spec_len:
        raise DataFormatError(f"checkpoint truncated at byte {len(blob)}")
    spec = spec_from_text(blob[12 : 12 + spec_len].decode("utf-8"))
    layout = layout_for(spec)
    expected = sum(b.size for b in layout) * 8
    payload = blob[12 + spec_len :]
    if len(payload) != expected:
        raise DataFormatError(
            f"checkpoint parameter payload is {len(payload)} bytes at offset "
            f"{12 + spec_len}, expected {expected}"
        )
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return spec, ParamSet(flat, layout)
