"""
Registry of differentiable primitives.

Every primitive declares a shape rule, a forward function and a backward rule. The
backward rule receives the upstream gradient `g`, the forward inputs and the forward
output, and returns one gradient per input (or `None` for inputs that never carry
gradient, such as labels).

Elementwise binary ops broadcast with numpy semantics; their backward rules sum-reduce
the upstream gradient over the broadcast axes (`unbroadcast`). Image tensors are
batched and channels-first: (N, C, H, W).
"""

from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from latent_forensics.autodiff.tensor import Tensor

Shape = tuple[int, ...]
Attrs = Mapping[str, Any]

NORMALIZE_EPS = 1e-10


class ShapeRuleError(ValueError):
    """
    Raised by shape rules; the engine re-raises it with the offending node name
    """


@dataclass(frozen=True)
class Primitive:
    name: str
    arity: int
    infer_shape: Callable[[Sequence[Shape], Attrs], Shape]
    forward: Callable[[Sequence[Tensor], Attrs], Tensor]
    backward: Callable[[Tensor, Sequence[Tensor], Tensor, Attrs], tuple[Tensor | None, ...]]


def unbroadcast(g: Tensor, shape: Shape) -> Tensor:
    """
    Sum-reduce `g` over the axes that were broadcast to reach its shape from `shape`
    """
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _require_rank(shape: Shape, rank: int, what: str) -> None:
    if len(shape) != rank:
        raise ShapeRuleError(f"{what} must have rank {rank}, got shape {shape}")


# ---- elementwise binary ----


def _broadcast_shape(shapes: Sequence[Shape], _attrs: Attrs) -> Shape:
    try:
        return tuple(np.broadcast_shapes(shapes[0], shapes[1]))
    except ValueError as e:
        raise ShapeRuleError(f"cannot broadcast {shapes[0]} with {shapes[1]}") from e


def _add_backward(g: Tensor, xs: Sequence[Tensor], _out: Tensor, _attrs: Attrs):
    return unbroadcast(g, xs[0].shape), unbroadcast(g, xs[1].shape)


def _sub_backward(g: Tensor, xs: Sequence[Tensor], _out: Tensor, _attrs: Attrs):
    return unbroadcast(g, xs[0].shape), unbroadcast(-g, xs[1].shape)


def _mul_backward(g: Tensor, xs: Sequence[Tensor], _out: Tensor, _attrs: Attrs):
    a, b = xs
    return unbroadcast(g * b, a.shape), unbroadcast(g * a, b.shape)


# ---- unary ----


def _same_shape(shapes: Sequence[Shape], _attrs: Attrs) -> Shape:
    return shapes[0]


def _scale_forward(xs: Sequence[Tensor], attrs: Attrs) -> Tensor:
    return xs[0] * float(attrs["factor"])


def _scale_backward(g: Tensor, _xs: Sequence[Tensor], _out: Tensor, attrs: Attrs):
    return (g * float(attrs["factor"]),)


def _relu_backward(g: Tensor, xs: Sequence[Tensor], _out: Tensor, _attrs: Attrs):
    return (g * (xs[0] > 0.0),)


def _sigmoid_backward(g: Tensor, _xs: Sequence[Tensor], out: Tensor, _attrs: Attrs):
    return (g * out * (1.0 - out),)


# ---- matmul ----


def _matmul_shape(shapes: Sequence[Shape], _attrs: Attrs) -> Shape:
    a, b = shapes
    _require_rank(a, 2, "matmul lhs")
    _require_rank(b, 2, "matmul rhs")
    if a[1] != b[0]:
        raise ShapeRuleError(f"matmul inner extents differ: {a} @ {b}")
    return (a[0], b[1])


def _matmul_backward(g: Tensor, xs: Sequence[Tensor], _out: Tensor, _attrs: Attrs):
    a, b = xs
    return g @ b.T, a.T @ g


# ---- convolution (same padding, stride 1) ----


def _conv2d_shape(shapes: Sequence[Shape], _attrs: Attrs) -> Shape:
    x, w = shapes
    _require_rank(x, 4, "conv2d input")
    _require_rank(w, 4, "conv2d kernel")
    if w[1] != x[1]:
        raise ShapeRuleError(f"conv2d kernel expects {w[1]} input channels, input has {x[1]}")
    if w[2] != w[3] or w[2] % 2 == 0:
        raise ShapeRuleError(f"conv2d kernel must be square with odd extent, got {w[2:]}")
    return (x[0], w[0], x[2], x[3])


def _windows(x: Tensor, k: int) -> Tensor:
    pad = k // 2
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    return sliding_window_view(padded, (k, k), axis=(2, 3))


def _conv2d_forward(xs: Sequence[Tensor], _attrs: Attrs) -> Tensor:
    x, w = xs
    windows = _windows(x, w.shape[2])
    out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _conv2d_backward(g: Tensor, xs: Sequence[Tensor], _out: Tensor, _attrs: Attrs):
    x, w = xs
    k = w.shape[2]
    grad_w = np.tensordot(g, _windows(x, k), axes=([0, 2, 3], [0, 2, 3]))
    flipped = w[:, :, ::-1, ::-1]
    grad_x = np.tensordot(_windows(g, k), flipped, axes=([1, 4, 5], [0, 2, 3]))
    return np.ascontiguousarray(grad_x.transpose(0, 3, 1, 2)), grad_w


# ---- resampling ----


def _upsample_shape(shapes: Sequence[Shape], _attrs: Attrs) -> Shape:
    x = shapes[0]
    _require_rank(x, 4, "upsample2 input")
    return (x[0], x[1], 2 * x[2], 2 * x[3])


def _upsample_forward(xs: Sequence[Tensor], _attrs: Attrs) -> Tensor:
    return xs[0].repeat(2, axis=2).repeat(2, axis=3)


def _upsample_backward(g: Tensor, xs: Sequence[Tensor], _out: Tensor, _attrs: Attrs):
    n, c, h, w = xs[0].shape
    return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)


def _pool_shape(shapes: Sequence[Shape], _attrs: Attrs) -> Shape:
    x = shapes[0]
    _require_rank(x, 4, "avg_pool2 input")
    if x[2] % 2 or x[3] % 2:
        raise ShapeRuleError(f"avg_pool2 needs even spatial extents, got {x[2:]}")
    return (x[0], x[1], x[2] // 2, x[3] // 2)


def _pool_forward(xs: Sequence[Tensor], _attrs: Attrs) -> Tensor:
    n, c, h, w = xs[0].shape
    return xs[0].reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def _pool_backward(g: Tensor, _xs: Sequence[Tensor], _out: Tensor, _attrs: Attrs):
    return (0.25 * g.repeat(2, axis=2).repeat(2, axis=3),)


# ---- reductions ----


def _reduce_shape(shapes: Sequence[Shape], attrs: Attrs) -> Shape:
    x = shapes[0]
    if attrs.get("per_sample"):
        if len(x) < 1:
            raise ShapeRuleError("per-sample reduction needs a batch axis")
        return (x[0],)
    return ()


def _expand_reduced(g: Tensor, shape: Shape, per_sample: bool) -> Tensor:
    if per_sample:
        return np.broadcast_to(g.reshape((shape[0],) + (1,) * (len(shape) - 1)), shape)
    return np.broadcast_to(g, shape)


def _sample_axes(x: Tensor) -> tuple[int, ...]:
    return tuple(range(1, x.ndim))


def _sum_forward(xs: Sequence[Tensor], attrs: Attrs) -> Tensor:
    x = xs[0]
    return np.asarray(x.sum(axis=_sample_axes(x)) if attrs.get("per_sample") else x.sum())


def _sum_backward(g: Tensor, xs: Sequence[Tensor], _out: Tensor, attrs: Attrs):
    return (np.array(_expand_reduced(g, xs[0].shape, bool(attrs.get("per_sample")))),)


def _count(x: Tensor, per_sample: bool) -> int:
    return int(np.prod(x.shape[1:])) if per_sample else x.size


def _mean_forward(xs: Sequence[Tensor], attrs: Attrs) -> Tensor:
    per_sample = bool(attrs.get("per_sample"))
    return _sum_forward(xs, attrs) / _count(xs[0], per_sample)


def _mean_backward(g: Tensor, xs: Sequence[Tensor], _out: Tensor, attrs: Attrs):
    per_sample = bool(attrs.get("per_sample"))
    expanded = _expand_reduced(g, xs[0].shape, per_sample)
    return (expanded / _count(xs[0], per_sample),)


def _sumsq_forward(xs: Sequence[Tensor], attrs: Attrs) -> Tensor:
    x = xs[0]
    return _sum_forward([x * x], attrs)


def _sumsq_backward(g: Tensor, xs: Sequence[Tensor], _out: Tensor, attrs: Attrs):
    expanded = _expand_reduced(g, xs[0].shape, bool(attrs.get("per_sample")))
    return (2.0 * xs[0] * expanded,)


# ---- channel normalization ----


def _rank4_same(shapes: Sequence[Shape], _attrs: Attrs) -> Shape:
    _require_rank(shapes[0], 4, "channel_normalize input")
    return shapes[0]


def _normalize_forward(xs: Sequence[Tensor], _attrs: Attrs) -> Tensor:
    x = xs[0]
    norm = np.sqrt((x * x).sum(axis=1, keepdims=True) + NORMALIZE_EPS)
    return x / norm


def _normalize_backward(g: Tensor, xs: Sequence[Tensor], out: Tensor, _attrs: Attrs):
    x = xs[0]
    norm = np.sqrt((x * x).sum(axis=1, keepdims=True) + NORMALIZE_EPS)
    radial = (g * out).sum(axis=1, keepdims=True)
    return ((g - out * radial) / norm,)


# ---- layout ----


def _reshape_shape(shapes: Sequence[Shape], attrs: Attrs) -> Shape:
    x = shapes[0]
    target = tuple(int(e) for e in attrs["shape"])
    size = int(np.prod(x))
    if target.count(-1) > 1:
        raise ShapeRuleError(f"reshape target {target} has more than one free extent")
    if -1 in target:
        known = int(np.prod([e for e in target if e != -1]))
        if known == 0 or size % known:
            raise ShapeRuleError(f"cannot reshape {x} to {target}")
        target = tuple(size // known if e == -1 else e for e in target)
    if int(np.prod(target)) != size:
        raise ShapeRuleError(f"cannot reshape {x} to {target}")
    return target


def _reshape_forward(xs: Sequence[Tensor], attrs: Attrs) -> Tensor:
    return xs[0].reshape(tuple(attrs["shape"]))


def _reshape_backward(g: Tensor, xs: Sequence[Tensor], _out: Tensor, _attrs: Attrs):
    return (g.reshape(xs[0].shape),)


def _select_shape(shapes: Sequence[Shape], attrs: Attrs) -> Shape:
    x = shapes[0]
    axis, index = int(attrs["axis"]), int(attrs["index"])
    if not 0 <= axis < len(x) or not 0 <= index < x[axis]:
        raise ShapeRuleError(f"select index {index} on axis {axis} out of range for {x}")
    return x[:axis] + x[axis + 1 :]


def _select_forward(xs: Sequence[Tensor], attrs: Attrs) -> Tensor:
    return np.take(xs[0], int(attrs["index"]), axis=int(attrs["axis"]))


def _select_backward(g: Tensor, xs: Sequence[Tensor], _out: Tensor, attrs: Attrs):
    grad = np.zeros_like(xs[0])
    slicer: list[slice | int] = [slice(None)] * xs[0].ndim
    slicer[int(attrs["axis"])] = int(attrs["index"])
    grad[tuple(slicer)] = g
    return (grad,)


# ---- losses and estimators ----


def _pair_same_shape(shapes: Sequence[Shape], _attrs: Attrs) -> Shape:
    if shapes[0] != shapes[1]:
        raise ShapeRuleError(f"operands must share a shape, got {shapes[0]} and {shapes[1]}")
    return shapes[0]


def _bce_shape(shapes: Sequence[Shape], attrs: Attrs) -> Shape:
    _pair_same_shape(shapes, attrs)
    return ()


def _bce_forward(xs: Sequence[Tensor], _attrs: Attrs) -> Tensor:
    logits, targets = xs
    losses = np.maximum(logits, 0.0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))
    return np.asarray(losses.mean())


def _bce_backward(g: Tensor, xs: Sequence[Tensor], _out: Tensor, _attrs: Attrs):
    logits, targets = xs
    return (g * (expit(logits) - targets) / logits.size, None)


def _straight_through_forward(xs: Sequence[Tensor], _attrs: Attrs) -> Tensor:
    return xs[1].copy()


def _straight_through_backward(g: Tensor, _xs: Sequence[Tensor], _out: Tensor, _attrs: Attrs):
    # the quantized operand is treated as a constant; its gradient flows to the encoder output
    return (g, None)


PRIMITIVES: dict[str, Primitive] = {
    p.name: p
    for p in (
        Primitive("add", 2, _broadcast_shape, lambda xs, _a: xs[0] + xs[1], _add_backward),
        Primitive("sub", 2, _broadcast_shape, lambda xs, _a: xs[0] - xs[1], _sub_backward),
        Primitive("mul", 2, _broadcast_shape, lambda xs, _a: xs[0] * xs[1], _mul_backward),
        Primitive("scale", 1, _same_shape, _scale_forward, _scale_backward),
        Primitive("relu", 1, _same_shape, lambda xs, _a: np.maximum(xs[0], 0.0), _relu_backward),
        Primitive("sigmoid", 1, _same_shape, lambda xs, _a: expit(xs[0]), _sigmoid_backward),
        Primitive("matmul", 2, _matmul_shape, lambda xs, _a: xs[0] @ xs[1], _matmul_backward),
        Primitive("conv2d", 2, _conv2d_shape, _conv2d_forward, _conv2d_backward),
        Primitive("upsample2", 1, _upsample_shape, _upsample_forward, _upsample_backward),
        Primitive("avg_pool2", 1, _pool_shape, _pool_forward, _pool_backward),
        Primitive("sum", 1, _reduce_shape, _sum_forward, _sum_backward),
        Primitive("mean", 1, _reduce_shape, _mean_forward, _mean_backward),
        Primitive("sum_squares", 1, _reduce_shape, _sumsq_forward, _sumsq_backward),
        Primitive("channel_normalize", 1, _rank4_same, _normalize_forward, _normalize_backward),
        Primitive("reshape", 1, _reshape_shape, _reshape_forward, _reshape_backward),
        Primitive("select", 1, _select_shape, _select_forward, _select_backward),
        Primitive("bce_with_logits", 2, _bce_shape, _bce_forward, _bce_backward),
        Primitive(
            "straight_through",
            2,
            _pair_same_shape,
            _straight_through_forward,
            _straight_through_backward,
        ),
    )
}
