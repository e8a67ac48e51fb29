"""Layer operations over NCHW tensors with hand-written adjoints."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


# -- convolution kernels on raw arrays ------------------------------------
# Columns are laid out (C*kh*kw, N*Ho*Wo) so that both the forward product
# and the weight gradient are single GEMMs.

def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """(N, C, Ho, Wo, kh, kw) strided view of a padded input."""
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    if stride > 1:
        win = win[:, :, ::stride, ::stride]
    return win


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=xp.dtype)
    xt = xp.transpose(1, 0, 2, 3)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xt[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(c * kh * kw, n * ho * wo)


def _col2im(cols: np.ndarray, n: int, c: int, hp: int, wp: int,
            kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Adjoint of ``_im2col``; returns (N, C, hp, wp)."""
    cols = cols.reshape(c, kh, kw, n, ho, wo)
    out = np.zeros((c, n, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, i, j]
    return out.transpose(1, 0, 2, 3)


def _to_rows(a: np.ndarray) -> np.ndarray:
    """(N, C, H, W) -> (C, N*H*W)."""
    return a.transpose(1, 0, 2, 3).reshape(a.shape[1], -1)


def _from_rows(rows: np.ndarray, n: int, h: int, w: int) -> np.ndarray:
    return np.ascontiguousarray(rows.reshape(-1, n, h, w).transpose(1, 0, 2, 3))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation, weight layout (OutC, InC, kH, kW)."""
    if x.ndim != 4:
        raise ValueError(f"conv2d expects NCHW input, got shape {x.shape}")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be >= 1 and padding >= 0")
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ValueError(f"channel mismatch: input has {c}, weight expects {ci}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ValueError(f"conv2d output would be empty for input {x.shape}")

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    w2 = weight.data.reshape(o, -1)
    out = _from_rows(w2 @ cols, n, ho, wo)
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1)
    hp, wp = xp.shape[2:]

    def backward(g):
        gx = gw = gb = None
        g_rows = _to_rows(g)
        if x.requires_grad:
            full = _col2im(w2.T @ g_rows, n, c, hp, wp, kh, kw, stride, ho, wo)
            gx = full[:, :, padding:padding + h, padding:padding + w] if padding else full
        if weight.requires_grad:
            gw = (g_rows @ cols.T).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g_rows.sum(axis=1)
        return (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out, parents, backward)


def conv2d_transpose(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                     stride: int = 1) -> Tensor:
    """Transposed convolution, weight layout (InC, OutC, kH, kW).

    Output spatial size is ``(H - 1) * stride + k``. With the same weight
    array this is the exact adjoint of ``conv2d(..., padding=0)``.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    n, c, h, w = x.shape
    ci, o, kh, kw = weight.shape
    if ci != c:
        raise ValueError(f"channel mismatch: input has {c}, weight expects {ci}")
    ho, wo = (h - 1) * stride + kh, (w - 1) * stride + kw
    w2 = weight.data.reshape(ci, -1)
    x_rows = _to_rows(x.data)
    out = np.ascontiguousarray(_col2im(w2.T @ x_rows, n, o, ho, wo, kh, kw, stride, h, w))
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1)

    def backward(g):
        gx = gw = gb = None
        gcols = _im2col(g, kh, kw, stride, h, w)
        if x.requires_grad:
            gx = _from_rows(w2 @ gcols, n, h, w)
        if weight.requires_grad:
            gw = (x_rows @ gcols.T).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out, parents, backward)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """(N, C*r*r, H, W) -> (N, C, H*r, W*r)."""
    n, c, h, w = x.shape
    if c % (r * r):
        raise ValueError(f"channels {c} not divisible by r^2={r * r}")
    oc = c // (r * r)
    out = x.data.reshape(n, oc, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, oc, h * r, w * r)

    def backward(g):
        return (g.reshape(n, oc, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c, h, w),)

    return Tensor._make(out, (x,), backward)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Inverse of ``pixel_shuffle``."""
    n, c, h, w = x.shape
    if h % r or w % r:
        raise ValueError(f"spatial dims {h}x{w} not divisible by {r}")
    oh, ow = h // r, w // r
    out = x.data.reshape(n, c, oh, r, ow, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, oh, ow)

    def backward(g):
        return (g.reshape(n, c, r, r, oh, ow).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h, w),)

    return Tensor._make(out, (x,), backward)


# -- activations ------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    live = x.data > 0
    return Tensor._make(x.data * live, (x,), lambda g: (g * live,))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    if not 0 < slope < 1:
        raise ValueError("leaky slope must lie in (0, 1)")
    live = x.data > 0
    scale = np.where(live, 1.0, slope).astype(x.dtype)
    return Tensor._make(x.data * scale, (x,), lambda g: (g * scale,))


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """Leaky ReLU with a learned slope per channel (axis 1)."""
    a = slope.data.reshape((1, -1) + (1,) * (x.ndim - 2))
    live = x.data > 0
    out = np.where(live, x.data, a * x.data)

    def backward(g):
        gx = np.where(live, g, a * g) if x.requires_grad else None
        ga = None
        if slope.requires_grad:
            axes = (0,) + tuple(range(2, x.ndim))
            ga = np.where(live, 0, g * x.data).sum(axis=axes).reshape(slope.shape)
        return (gx, ga)

    return Tensor._make(out, (x, slope), backward)


def sigmoid(x: Tensor) -> Tensor:
    a = x.data
    e = np.exp(-np.abs(a))
    out = np.where(a >= 0, 1 / (1 + e), e / (1 + e)).astype(a.dtype)
    return Tensor._make(out, (x,), lambda g: (g * out * (1 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return Tensor._make(out, (x,), lambda g: (g * (1 - out * out),))


def activation(x: Tensor, kind: str, slope=None) -> Tensor:
    """Dispatch by name: relu, leaky_relu, prelu, sigmoid, tanh."""
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, 0.2 if slope is None else slope)
    if kind == "prelu":
        if not isinstance(slope, Tensor):
            raise ValueError("prelu needs a slope tensor")
        return prelu(x, slope)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    raise ValueError(f"unknown activation {kind!r}")


# -- normalization, pooling, dense ---------------------------------------------

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = BN_MOMENTUM, eps: float = BN_EPS) -> Tensor:
    """Per-channel normalization over (N, H, W).

    In training mode the batch moments are used and the running buffers are
    updated in place (unbiased variance, as is customary).
    """
    shape = (1, -1, 1, 1)
    g_ = gamma.data.reshape(shape)
    b_ = beta.data.reshape(shape)
    if not training:
        inv = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype).reshape(shape)
        xhat = (x.data - running_mean.reshape(shape).astype(x.dtype)) * inv
        out = g_ * xhat + b_

        def backward(g):
            return (
                g * g_ * inv if x.requires_grad else None,
                (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None,
                g.sum(axis=(0, 2, 3)) if beta.requires_grad else None,
            )

        return Tensor._make(out, (x, gamma, beta), backward)

    n = x.shape[0]
    if n < 2:
        raise ValueError("batch_norm in train mode needs batch size >= 2")
    count = x.size // x.shape[1]
    mu = x.data.mean(axis=(0, 2, 3), keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=(0, 2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = g_ * xhat + b_

    running_mean *= 1 - momentum
    running_mean += momentum * mu.reshape(-1)
    running_var *= 1 - momentum
    running_var += momentum * var.reshape(-1) * count / max(count - 1, 1)

    def backward(g):
        gx = None
        if x.requires_grad:
            dxhat = g * g_
            s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
            s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            gx = inv / count * (count * dxhat - s1 - xhat * s2)
        return (
            gx,
            (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None,
            g.sum(axis=(0, 2, 3)) if beta.requires_grad else None,
        )

    return Tensor._make(out, (x, gamma, beta), backward)


def max_pool2d(x: Tensor, k: int = 2, stride: int | None = None) -> Tensor:
    """Window maximum; gradient goes to the first maximal element (row-major)."""
    stride = k if stride is None else stride
    n, c, h, w = x.shape
    if h < k or w < k:
        raise ValueError(f"input {h}x{w} smaller than pooling window {k}")
    win = _windows(x.data, k, k, stride)
    ho, wo = win.shape[2], win.shape[3]
    flat = win.reshape(n, c, ho, wo, k * k)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    # flat index of each argmax in the (N, C, H, W) input
    di, dj = np.divmod(arg, k)
    rows = np.arange(ho).reshape(1, 1, -1, 1) * stride + di
    cols = np.arange(wo).reshape(1, 1, 1, -1) * stride + dj
    plane = (np.arange(n * c).reshape(n, c, 1, 1)) * (h * w)
    idx = (plane + rows * w + cols).reshape(-1)
    overlapping = stride < k

    def backward(g):
        gx = np.zeros(n * c * h * w, dtype=g.dtype)
        if overlapping:
            np.add.at(gx, idx, g.reshape(-1))
        else:
            gx[idx] = g.reshape(-1)
        return (gx.reshape(n, c, h, w),)

    return Tensor._make(np.ascontiguousarray(out), (x,), backward)


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map on the flattened features, weight layout (Out, In)."""
    flat = x if x.ndim == 2 else x.reshape(x.shape[0], -1)
    if flat.shape[1] != weight.shape[1]:
        raise ValueError(f"dense expects {weight.shape[1]} features, got {flat.shape[1]}")
    out = flat @ weight.transpose(1, 0)
    return out + bias if bias is not None else out


def dropout(x: Tensor, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    if not training or p <= 0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1 - p)
    return Tensor._make(x.data * keep, (x,), lambda g: (g * keep,))


def global_avg_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C)."""
    return x.mean(axis=(2, 3))


def upsample_nearest(x: np.ndarray, factor: int) -> np.ndarray:
    """Nearest-neighbour upsampling of a raw NCHW array (no gradient)."""
    if factor == 1:
        return x
    return x.repeat(factor, axis=2).repeat(factor, axis=3)
