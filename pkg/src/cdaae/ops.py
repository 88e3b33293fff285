"""Differentiable operations over :class:`~cdaae.tensor.Tensor`.

Each op computes its forward value with numpy and, when a graph is active
and any input is tracked, records a backward closure on the tape. Backward
closures receive the output gradient plus a per-input ``needs`` tuple and may
return ``None`` for inputs whose gradient is not needed.
"""
from __future__ import annotations

import numpy as np

from .tensor import (
    DimensionError,
    NumericError,
    Tensor,
    check_finite,
    record_op,
)

BCE_EPS = 1e-7


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"add: shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)

    def backward(gout, needs):
        return (gout if needs[0] else None, gout if needs[1] else None)

    record_op("add", (a, b), out, backward)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data)

    def backward(gout, needs):
        ga = gout * b.data if needs[0] else None
        gb = gout * a.data if needs[1] else None
        return ga, gb

    record_op("mul", (a, b), out, backward)
    return out


def scale(t: Tensor, factor: float) -> Tensor:
    t = _as_tensor(t)
    out = Tensor(t.data * t.data.dtype.type(factor))

    def backward(gout, needs):
        return (gout * t.data.dtype.type(factor),)

    record_op("scale", (t,), out, backward)
    return out


def concat(a: Tensor, b: Tensor, axis: int = 1) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != b.ndim:
        raise DimensionError(f"concat: rank mismatch {a.shape} vs {b.shape}")
    out = Tensor(np.concatenate([a.data, b.data], axis=axis))
    split = a.shape[axis]

    def backward(gout, needs):
        ga = np.take(gout, range(split), axis=axis) if needs[0] else None
        gb = np.take(gout, range(split, gout.shape[axis]), axis=axis) if needs[1] else None
        return ga, gb

    record_op("concat", (a, b), out, backward)
    return out


def reshape(t: Tensor, shape) -> Tensor:
    t = _as_tensor(t)
    out = Tensor(t.data.reshape(shape))

    def backward(gout, needs):
        return (gout.reshape(t.shape),)

    record_op("reshape", (t,), out, backward)
    return out


def clamp(t: Tensor, lo: float, hi: float) -> Tensor:
    t = _as_tensor(t)
    out_data = np.clip(t.data, lo, hi)
    out = Tensor(out_data)

    def backward(gout, needs):
        mask = (t.data > lo) & (t.data < hi)
        return (gout * mask,)

    record_op("clamp", (t,), out, backward)
    return out


def sum_elements(t: Tensor) -> Tensor:
    t = _as_tensor(t)
    out = Tensor(t.data.sum())

    def backward(gout, needs):
        return (np.broadcast_to(gout, t.shape).astype(t.data.dtype, copy=False),)

    record_op("sum", (t,), out, backward)
    return out


# ---------------------------------------------------------------------------
# activations


def leaky_relu(t: Tensor, slope: float = 0.2) -> Tensor:
    t = _as_tensor(t)
    out = Tensor(np.where(t.data >= 0, t.data, t.data * t.data.dtype.type(slope)))

    def backward(gout, needs):
        factor = np.where(t.data >= 0, gout.dtype.type(1), gout.dtype.type(slope))
        return (gout * factor,)

    record_op("leaky_relu", (t,), out, backward)
    return out


def tanh(t: Tensor) -> Tensor:
    t = _as_tensor(t)
    out_data = np.tanh(t.data)
    out = Tensor(out_data)

    def backward(gout, needs):
        return (gout * (1.0 - out_data * out_data),)

    record_op("tanh", (t,), out, backward)
    return out


def sigmoid(t: Tensor) -> Tensor:
    t = _as_tensor(t)
    z = t.data
    out_data = np.empty_like(z)
    pos = z >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out_data[~pos] = ez / (1.0 + ez)
    out = Tensor(out_data)

    def backward(gout, needs):
        return (gout * out_data * (1.0 - out_data),)

    record_op("sigmoid", (t,), out, backward)
    return out


# ---------------------------------------------------------------------------
# convolution via im2col / col2im


def _conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Unfold (N,C,H,W) into batch-flat patch columns (C*kh*kw, N*OH*OW)."""
    n, c, h, w = x.shape
    oh = _conv_out_size(h, kh, stride, pad)
    ow = _conv_out_size(w, kw, stride, pad)
    if pad:
        padded = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        padded[:, :, pad : pad + h, pad : pad + w] = x
        x = padded
    xt = x.transpose(1, 0, 2, 3)
    cols = np.empty((c, kh, kw, n, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xt[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return cols.reshape(c * kh * kw, n * oh * ow)


def _col2im(cols: np.ndarray, shape, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Scatter-add batch-flat patch columns onto an (N,C,H,W) canvas; adjoint of _im2col."""
    n, c, h, w = shape
    oh = _conv_out_size(h, kh, stride, pad)
    ow = _conv_out_size(w, kw, stride, pad)
    cols = cols.reshape(c, kh, kw, n, oh, ow)
    buf = np.zeros((c, n, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            buf[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += cols[:, i, j]
    if pad:
        buf = buf[:, :, pad : pad + h, pad : pad + w]
    return np.ascontiguousarray(buf.transpose(1, 0, 2, 3))


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlate (N,C,H,W) with (F,C,kh,kw) kernels, add per-filter bias."""
    x, kernel, bias = _as_tensor(x), _as_tensor(kernel), _as_tensor(bias)
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d: expected 4-d input/kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    f, ck, kh, kw = kernel.shape
    if ck != c:
        raise DimensionError(f"conv2d: input has {c} channels but kernel expects {ck}")
    if bias.shape != (f,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} does not match {f} filters")
    if stride < 1:
        raise DimensionError("conv2d: stride must be >= 1")
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{w + 2 * pad}")
    oh = _conv_out_size(h, kh, stride, pad)
    ow = _conv_out_size(w, kw, stride, pad)

    cols = _im2col(x.data, kh, kw, stride, pad)  # (C*kh*kw, N*OH*OW)
    w2 = kernel.data.reshape(f, -1)
    out_flat = w2 @ cols
    out_data = out_flat.reshape(f, n, oh, ow).transpose(1, 0, 2, 3) + bias.data.reshape(1, f, 1, 1)
    check_finite(out_data, "conv2d")
    out = Tensor(out_data)

    def backward(gout, needs):
        g2 = gout.transpose(1, 0, 2, 3).reshape(f, n * oh * ow)
        gx = gk = gb = None
        if needs[0]:
            gx = _col2im(w2.T @ g2, (n, c, h, w), kh, kw, stride, pad)
        if needs[1]:
            gk = (g2 @ cols.T).reshape(f, c, kh, kw)
        if needs[2]:
            gb = gout.sum(axis=(0, 2, 3))
        return gx, gk, gb

    record_op("conv2d", (x, kernel, bias), out, backward)
    return out


def conv2d_transpose(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Fractionally-strided convolution: each input scalar stamps a kernel into the output.

    Kernel layout is (C_in, C_out, kh, kw); output height is
    (H-1)*stride - 2*pad + kh. This is exactly the adjoint of :func:`conv2d`
    with matching stride/pad.
    """
    x, kernel, bias = _as_tensor(x), _as_tensor(kernel), _as_tensor(bias)
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(
            f"conv2d_transpose: expected 4-d input/kernel, got {x.shape} and {kernel.shape}"
        )
    n, c, h, w = x.shape
    ck, f, kh, kw = kernel.shape
    if ck != c:
        raise DimensionError(f"conv2d_transpose: input has {c} channels but kernel expects {ck}")
    if bias.shape != (f,):
        raise DimensionError(f"conv2d_transpose: bias shape {bias.shape} does not match {f} filters")
    if stride < 1:
        raise DimensionError("conv2d_transpose: stride must be >= 1")
    oh = (h - 1) * stride - 2 * pad + kh
    ow = (w - 1) * stride - 2 * pad + kw
    if oh < 1 or ow < 1:
        raise DimensionError(f"conv2d_transpose: output size {oh}x{ow} is empty")

    k2 = kernel.data.reshape(c, f * kh * kw)
    x2 = np.ascontiguousarray(x.data.transpose(1, 0, 2, 3)).reshape(c, n * h * w)
    cols = k2.T @ x2  # (F*kh*kw, N*H*W)
    out_data = _col2im(cols, (n, f, oh, ow), kh, kw, stride, pad) + bias.data.reshape(1, f, 1, 1)
    check_finite(out_data, "conv2d_transpose")
    out = Tensor(out_data)

    def backward(gout, needs):
        gx = gk = gb = None
        if needs[0] or needs[1]:
            gcols = _im2col(gout, kh, kw, stride, pad)  # (F*kh*kw, N*H*W)
        if needs[0]:
            gx = np.ascontiguousarray((k2 @ gcols).reshape(c, n, h, w).transpose(1, 0, 2, 3))
        if needs[1]:
            gk = (x2 @ gcols.T).reshape(c, f, kh, kw)
        if needs[2]:
            gb = gout.sum(axis=(0, 2, 3))
        return gx, gk, gb

    record_op("conv2d_transpose", (x, kernel, bias), out, backward)
    return out


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map (N,D) @ (D,K) + (K,)."""
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if x.ndim != 2 or weight.ndim != 2:
        raise DimensionError(f"dense: expected 2-d input/weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[0]:
        raise DimensionError(f"dense: inner dimensions disagree, {x.shape} vs {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise DimensionError(f"dense: bias shape {bias.shape} does not match {weight.shape[1]} outputs")
    out_data = x.data @ weight.data + bias.data
    check_finite(out_data, "dense")
    out = Tensor(out_data)

    def backward(gout, needs):
        gx = gout @ weight.data.T if needs[0] else None
        gw = x.data.T @ gout if needs[1] else None
        gb = gout.sum(axis=0) if needs[2] else None
        return gx, gw, gb

    record_op("dense", (x, weight, bias), out, backward)
    return out


# ---------------------------------------------------------------------------
# losses


def mse_loss(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared elementwise difference, as a scalar tensor."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mse_loss: shape mismatch {a.shape} vs {b.shape}")
    diff = a.data - b.data
    out_data = np.asarray(np.mean(diff * diff, dtype=a.data.dtype))
    check_finite(out_data, "mse_loss")
    out = Tensor(out_data)
    inv_n = 1.0 / diff.size

    def backward(gout, needs):
        base = (2.0 * inv_n) * gout * diff
        ga = base if needs[0] else None
        gb = -base if needs[1] else None
        return ga, gb

    record_op("mse_loss", (a, b), out, backward)
    return out


def bce_loss(predicted: Tensor, target: Tensor) -> Tensor:
    """Binary cross entropy, with predictions clamped to [eps, 1-eps]."""
    predicted, target = _as_tensor(predicted), _as_tensor(target)
    if predicted.shape != target.shape:
        raise DimensionError(f"bce_loss: shape mismatch {predicted.shape} vs {target.shape}")
    dtype = predicted.data.dtype
    eps = dtype.type(BCE_EPS)
    p = np.clip(predicted.data, eps, 1.0 - eps)
    t = target.data
    out_data = np.asarray(-np.mean(t * np.log(p) + (1.0 - t) * np.log(1.0 - p), dtype=dtype))
    check_finite(out_data, "bce_loss")
    out = Tensor(out_data)
    inv_n = 1.0 / p.size

    def backward(gout, needs):
        gp = gt = None
        if needs[0]:
            inside = (predicted.data > eps) & (predicted.data < 1.0 - eps)
            gp = gout * inv_n * inside * (p - t) / (p * (1.0 - p))
        if needs[1]:
            gt = gout * inv_n * (np.log(1.0 - p) - np.log(p))
        return gp, gt

    record_op("bce_loss", (predicted, target), out, backward)
    return out


def detach(t: Tensor) -> Tensor:
    return t.detach()
