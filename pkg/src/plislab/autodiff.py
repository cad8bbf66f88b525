"""Dense float64 tensors with tape-based reverse-mode differentiation.

The distinguishing requirement here is double backpropagation: we need
the gradient of a quantity that is itself built from gradients.  To get
that from one mechanism, every backward rule is written as a composition
of the forward ops, so a backward pass run in create-graph mode appends
ordinary nodes to the tape and the gradients it returns can be
differentiated again, to any order.

Conventions:
  * everything is float64 (second-order finite-difference checks need
    the headroom; sizes are desk-scale);
  * a tensor either carries a (graph, node_id) pair or is a detached
    constant that never receives gradient;
  * node inputs always reference earlier node ids, so iterating ids in
    reverse is a valid topological order, and a create-graph backward
    pass over nodes [0..k] only appends nodes with ids > k;
  * relu/max-with-scalar use subgradient 0 at the kink (the masks are
    piecewise constant, hence detached);
  * a graph lives for one analysis call and is then discarded.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from .errors import GraphError, ShapeError

Array = np.ndarray

# --------------------------------------------------------------------------
# tape structures
# --------------------------------------------------------------------------


class Node:
    """One recorded operation: kind, input node ids and a backward rule.

    The rule maps the output cotangent to one cotangent per input (None
    for inputs that are detached constants).  Rules call the public op
    functions below, which is what makes backward re-differentiable.
    """

    __slots__ = ("op", "input_ids", "rule")

    def __init__(self, op: str, input_ids: tuple, rule):
        self.op = op
        self.input_ids = input_ids
        self.rule = rule


class Graph:
    """Append-only tape of operation records."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._recording = True

    def leaf(self, data) -> "Tensor":
        """Register data as a differentiable input of this graph."""
        t = Tensor(data, graph=self, node_id=len(self.nodes))
        self.nodes.append(Node("leaf", (), None))
        return t

    @contextmanager
    def paused(self):
        """Temporarily stop recording (used for create_graph=False passes)."""
        prev = self._recording
        self._recording = False
        try:
            yield
        finally:
            self._recording = prev


class Tensor:
    """A float64 array, optionally attached to a graph node.

    Detached tensors (graph is None) act as constants: ops on them are
    computed eagerly and they never accumulate gradient.
    """

    __slots__ = ("data", "graph", "node_id")

    def __init__(self, data, graph: Graph | None = None, node_id: int | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.graph = graph
        self.node_id = node_id

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        tag = "" if self.graph is None else f", node={self.node_id}"
        return f"Tensor(shape={self.shape}{tag})"

    # operator sugar; all arithmetic routes through the op functions
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


# --------------------------------------------------------------------------
# op recording helpers
# --------------------------------------------------------------------------


def _tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _graph_of(inputs: tuple[Tensor, ...]) -> Graph | None:
    g = None
    for t in inputs:
        if t.graph is None:
            continue
        if g is None:
            g = t.graph
        elif g is not t.graph:
            raise GraphError("operands belong to different graphs")
    return g


def _record(op: str, out_data: Array, inputs: tuple[Tensor, ...], rule) -> Tensor:
    g = _graph_of(inputs)
    if g is None or not g._recording:
        return Tensor(out_data)
    ids = tuple(t.node_id if t.graph is not None else None for t in inputs)
    t = Tensor(out_data, graph=g, node_id=len(g.nodes))
    g.nodes.append(Node(op, ids, rule))
    return t


def _coerce_pair(op: str, a, b) -> tuple[Tensor, Tensor]:
    """Validate an elementwise pair; only detached size-1 operands may broadcast."""
    a, b = _tensor(a), _tensor(b)
    if a.shape != b.shape:
        a_scalar = a.size == 1 and a.graph is None
        b_scalar = b.size == 1 and b.graph is None
        if not (a_scalar or b_scalar):
            raise ShapeError(
                f"{op}: shapes {a.shape} and {b.shape} do not match"
                " (attach an explicit broadcast() if intended)"
            )
    return a, b


# --------------------------------------------------------------------------
# elementwise ops
# --------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _coerce_pair("add", a, b)

    def rule(grad: Tensor):
        return (
            grad if a.graph is not None else None,
            grad if b.graph is not None else None,
        )

    return _record("add", a.data + b.data, (a, b), rule)


def sub(a, b) -> Tensor:
    a, b = _coerce_pair("sub", a, b)

    def rule(grad: Tensor):
        return (
            grad if a.graph is not None else None,
            mul(grad, -1.0) if b.graph is not None else None,
        )

    return _record("sub", a.data - b.data, (a, b), rule)


def mul(a, b) -> Tensor:
    a, b = _coerce_pair("mul", a, b)

    def rule(grad: Tensor):
        return (
            mul(grad, b) if a.graph is not None else None,
            mul(grad, a) if b.graph is not None else None,
        )

    return _record("mul", a.data * b.data, (a, b), rule)


def div(a, b) -> Tensor:
    a, b = _coerce_pair("div", a, b)

    def rule(grad: Tensor):
        ga = div(grad, b) if a.graph is not None else None
        gb = None
        if b.graph is not None:
            gb = mul(div(mul(grad, a), square(b)), -1.0)
        return (ga, gb)

    return _record("div", a.data / b.data, (a, b), rule)


def square(a) -> Tensor:
    a = _tensor(a)

    def rule(grad: Tensor):
        return (mul(grad, mul(a, 2.0)),)

    return _record("square", a.data * a.data, (a,), rule)


def sqrt(a) -> Tensor:
    a = _tensor(a)

    def rule(grad: Tensor):
        return (div(grad, mul(sqrt(a), 2.0)),)

    return _record("sqrt", np.sqrt(a.data), (a,), rule)


def relu(a) -> Tensor:
    a = _tensor(a)

    def rule(grad: Tensor):
        # mask is piecewise constant: detached, subgradient 0 at the kink
        return (mul(grad, Tensor(a.data > 0.0)),)

    return _record("relu", np.maximum(a.data, 0.0), (a,), rule)


def max_scalar(a, c: float) -> Tensor:
    """Elementwise max(a, c) for a scalar threshold c."""
    a = _tensor(a)
    c = float(c)

    def rule(grad: Tensor):
        # at a == c the constant branch wins (derivative 0)
        return (mul(grad, Tensor(a.data > c)),)

    return _record("max-with-scalar", np.maximum(a.data, c), (a,), rule)


def tanh(a) -> Tensor:
    a = _tensor(a)

    def rule(grad: Tensor):
        return (mul(grad, sub(1.0, square(tanh(a)))),)

    return _record("tanh", np.tanh(a.data), (a,), rule)


def softplus(a) -> Tensor:
    a = _tensor(a)
    out = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))

    def rule(grad: Tensor):
        # sigmoid(a) written with in-set ops: (1 + tanh(a/2)) / 2
        sig = mul(add(tanh(mul(a, 0.5)), 1.0), 0.5)
        return (mul(grad, sig),)

    return _record("softplus", out, (a,), rule)


def gaussian_noise_add(a, noise: Array) -> Tensor:
    """Add a fixed noise array that is constant with respect to the graph."""
    a = _tensor(a)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != a.shape:
        raise ShapeError(
            f"gaussian-noise-add: noise shape {noise.shape} != tensor shape {a.shape}"
        )

    def rule(grad: Tensor):
        return (grad,)

    return _record("gaussian-noise-add", a.data + noise, (a,), rule)


# --------------------------------------------------------------------------
# reductions, shape ops
# --------------------------------------------------------------------------


def _normalize_axes(axes, ndim: int) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(sorted(ax % ndim for ax in axes))


def tsum(a, axes=None, keepdims: bool = False) -> Tensor:
    """Sum over the given axes (all axes by default)."""
    a = _tensor(a)
    ax = _normalize_axes(axes, a.data.ndim)
    out = a.data.sum(axis=ax if ax else None, keepdims=keepdims)
    kept = tuple(1 if i in ax else s for i, s in enumerate(a.shape))

    def rule(grad: Tensor):
        return (broadcast(reshape(grad, kept), a.shape),)

    return _record("sum", out, (a,), rule)


def tmean(a) -> Tensor:
    """Mean over all entries."""
    a = _tensor(a)
    n = a.size

    def rule(grad: Tensor):
        return (broadcast(mul(grad, 1.0 / n), a.shape),)

    return _record("mean", np.asarray(a.data.mean()), (a,), rule)


def broadcast(a, shape: tuple) -> Tensor:
    shape = tuple(int(s) for s in shape)
    a = _tensor(a)
    try:
        if np.broadcast_shapes(a.shape, shape) != shape:
            raise ValueError
    except ValueError:
        raise ShapeError(f"broadcast: cannot expand {a.shape} to {shape}") from None
    pad = (1,) * (len(shape) - a.data.ndim) + a.shape
    expanded = tuple(i for i, (sa, so) in enumerate(zip(pad, shape)) if sa == 1 and so != 1)

    def rule(grad: Tensor):
        return (reshape(tsum(grad, axes=expanded, keepdims=True) if expanded else grad, a.shape),)

    return _record("broadcast", np.broadcast_to(a.data, shape).copy(), (a,), rule)


def reshape(a, shape) -> Tensor:
    a = _tensor(a)
    shape = tuple(int(s) for s in shape) if not isinstance(shape, int) else (shape,)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")

    def rule(grad: Tensor):
        return (reshape(grad, a.shape),)

    return _record("reshape", a.data.reshape(shape), (a,), rule)


def transpose(a) -> Tensor:
    a = _tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected a 2-d tensor, got shape {a.shape}")

    def rule(grad: Tensor):
        return (transpose(grad),)

    return _record("transpose", a.data.T.copy(), (a,), rule)


def tslice(a, index) -> Tensor:
    """Basic slice/int indexing; the adjoint is embed()."""
    a = _tensor(a)
    if not isinstance(index, tuple):
        index = (index,)

    def rule(grad: Tensor):
        return (embed(grad, a.shape, index),)

    return _record("slice", np.array(a.data[index]), (a,), rule)


def embed(a, shape: tuple, index) -> Tensor:
    """Place a into a zero tensor of the given shape at the given index."""
    a = _tensor(a)
    if not isinstance(index, tuple):
        index = (index,)
    out = np.zeros(shape)
    out[index] = a.data

    def rule(grad: Tensor):
        return (tslice(grad, index),)

    return _record("embed", out, (a,), rule)


# --------------------------------------------------------------------------
# convolution (im2col/col2im primitive pair; conv2d is their composition)
# --------------------------------------------------------------------------

_CONV_INDEX_CACHE: dict[tuple, tuple[Array, tuple]] = {}


def _conv_geometry(c: int, h: int, w: int, k: int, pad: int):
    """Gather indices into the zero-padded image for k x k patches."""
    key = (c, h, w, k, pad)
    hit = _CONV_INDEX_CACHE.get(key)
    if hit is not None:
        return hit
    hp, wp = h + 2 * pad, w + 2 * pad
    oh, ow = hp - k + 1, wp - k + 1
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"im2col: kernel {k} too large for image {h}x{w} with pad {pad}")
    offs = (
        np.arange(c)[:, None, None] * (hp * wp)
        + np.arange(k)[None, :, None] * wp
        + np.arange(k)[None, None, :]
    ).reshape(-1)
    ii, jj = np.meshgrid(np.arange(oh), np.arange(ow), indexing="ij")
    pos = (ii * wp + jj).reshape(-1)
    idx = offs[:, None] + pos[None, :]
    result = (idx, (hp, wp, oh, ow))
    _CONV_INDEX_CACHE[key] = result
    return result


def im2col(a, kernel: int, pad: int = 0) -> Tensor:
    """(C,H,W) image -> (C*k*k, out_h*out_w) patch matrix."""
    a = _tensor(a)
    if a.data.ndim != 3:
        raise ShapeError(f"im2col: expected (C,H,W) input, got shape {a.shape}")
    c, h, w = a.shape
    idx, _ = _conv_geometry(c, h, w, kernel, pad)
    padded = np.pad(a.data, ((0, 0), (pad, pad), (pad, pad))) if pad else a.data
    out = padded.reshape(-1)[idx]

    def rule(grad: Tensor):
        return (col2im(grad, (c, h, w), kernel, pad),)

    return _record("im2col", out, (a,), rule)


def col2im(a, image_shape: tuple, kernel: int, pad: int = 0) -> Tensor:
    """Exact adjoint of im2col: scatter-add patches back into an image."""
    a = _tensor(a)
    c, h, w = image_shape
    idx, (hp, wp, oh, ow) = _conv_geometry(c, h, w, kernel, pad)
    if a.shape != (c * kernel * kernel, oh * ow):
        raise ShapeError(
            f"col2im: expected shape {(c * kernel * kernel, oh * ow)}, got {a.shape}"
        )
    flat = np.bincount(idx.reshape(-1), weights=a.data.reshape(-1), minlength=c * hp * wp)
    img = flat.reshape(c, hp, wp)
    if pad:
        img = img[:, pad : pad + h, pad : pad + w].copy()

    def rule(grad: Tensor):
        return (im2col(grad, kernel, pad),)

    return _record("col2im", img, (a,), rule)


def conv2d(x, kernel, pad: int = 0) -> Tensor:
    """Valid cross-correlation of a (C,H,W) image with (O,C,k,k) kernels.

    Realized as reshape(matmul(kernel-matrix, im2col(x))), so both
    backward and double backward come for free from the primitive rules.
    """
    x, kernel = _tensor(x), _tensor(kernel)
    if kernel.data.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise ShapeError(f"conv2d: expected (O,C,k,k) kernel, got shape {kernel.shape}")
    if x.data.ndim != 3 or x.shape[0] != kernel.shape[1]:
        raise ShapeError(
            f"conv2d: input shape {x.shape} incompatible with kernel shape {kernel.shape}"
        )
    o, c, k = kernel.shape[0], kernel.shape[1], kernel.shape[2]
    _, (_, _, oh, ow) = _conv_geometry(c, x.shape[1], x.shape[2], k, pad)
    col = im2col(x, k, pad)
    km = reshape(kernel, (o, c * k * k))
    return reshape(matmul(km, col), (o, oh, ow))


def matmul(a, b) -> Tensor:
    a, b = _tensor(a), _tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not compose")

    def rule(grad: Tensor):
        ga = matmul(grad, transpose(b)) if a.graph is not None else None
        gb = matmul(transpose(a), grad) if b.graph is not None else None
        return (ga, gb)

    return _record("matmul", a.data @ b.data, (a, b), rule)


# --------------------------------------------------------------------------
# reverse pass
# --------------------------------------------------------------------------


def backward(
    output: Tensor,
    wrt: Sequence[Tensor],
    create_graph: bool = False,
    seed: Tensor | None = None,
) -> list[Tensor]:
    """Gradients of output with respect to each tensor in wrt.

    With create_graph=True the returned gradients are graph nodes and can
    be differentiated again; with False, recording is paused and plain
    constants come back (same values either way).  Non-scalar outputs
    need an explicit seed cotangent.
    """
    graph = output.graph
    if graph is None:
        raise GraphError("backward: output is not attached to a graph")
    for t in wrt:
        if t.graph is not graph:
            raise GraphError("backward: wrt tensor is not on the output's graph")
    if seed is None:
        if output.size != 1:
            raise GraphError(
                f"backward: output has shape {output.shape}; supply a seed cotangent"
            )
        seed = Tensor(np.ones_like(output.data))
    elif seed.data.shape != output.data.shape:
        raise ShapeError(f"backward: seed shape {seed.shape} != output shape {output.shape}")

    slots: dict[int, Tensor] = {output.node_id: seed}
    start = output.node_id

    def run():
        for nid in range(start, -1, -1):
            grad = slots.get(nid)
            if grad is None:
                continue
            node = graph.nodes[nid]
            if node.rule is None:
                continue
            for iid, g in zip(node.input_ids, node.rule(grad)):
                if iid is None or g is None:
                    continue
                cur = slots.get(iid)
                slots[iid] = g if cur is None else add(cur, g)

    if create_graph:
        run()
    else:
        with graph.paused():
            run()

    out = []
    for t in wrt:
        g = slots.get(t.node_id)
        out.append(Tensor(np.zeros_like(t.data)) if g is None else g)
    return out


def finite_diff_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-5) -> float:
    """Max relative error between the analytic gradient of f and central differences.

    Relative error per coordinate is |analytic - central| / (|central| + 1e-12).
    """
    x = np.asarray(x, dtype=np.float64)
    graph = Graph()
    leaf = graph.leaf(x)
    out = f(leaf)
    if out.size != 1:
        raise GraphError("finite_diff_check: f must return a scalar")
    if out.graph is None:
        analytic = np.zeros_like(x)
    else:
        analytic = backward(out, [leaf])[0].data
    numeric = np.zeros_like(x)
    flat = x.reshape(-1)
    num_flat = numeric.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + h
        hi = float(f(Tensor(x)).data.reshape(()))
        flat[j] = orig - h
        lo = float(f(Tensor(x)).data.reshape(()))
        flat[j] = orig
        num_flat[j] = (hi - lo) / (2.0 * h)
    rel = np.abs(analytic - numeric) / (np.abs(numeric) + 1e-12)
    return float(rel.max()) if rel.size else 0.0


def dot(a, b) -> Tensor:
    """Inner product of two same-shaped tensors (sum of elementwise product)."""
    return tsum(mul(a, b))
