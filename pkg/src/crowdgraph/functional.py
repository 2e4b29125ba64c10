"""Differentiable neural-network ops on :class:`Tensor`.

Image-like tensors are laid out C x H x W (a single image, no batch axis).
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DimensionError
from .tensor import Tensor, as_tensor, make_op

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def relu(x: Tensor) -> Tensor:
    # subgradient at exactly 0 is 0
    mask = x.data > 0
    return make_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return make_op(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def log_sigmoid(x: Tensor, floor: float = 0.0) -> Tensor:
    """``max(log(sigmoid(x)), log(floor))`` without forming ``sigmoid(x)`` first.

    ``log(1 - sigmoid(z))`` is ``log_sigmoid(-z)``; going through the
    confidence loses every digit once it rounds towards 1.
    """
    z = x.data
    out = -(np.maximum(-z, 0.0) + np.log1p(np.exp(-np.abs(z))))
    active = out > np.log(floor) if floor > 0 else np.ones(z.shape, dtype=bool)
    if floor > 0:
        out = np.where(active, out, np.log(floor))
    e = np.exp(-np.abs(z))
    slope = np.where(z >= 0, e / (1.0 + e), 1.0 / (1.0 + e))  # sigmoid(-z)
    return make_op(out, (x,), lambda g: (np.where(active, g * slope, 0.0),), "log_sigmoid")


def log(x: Tensor, floor: float = 0.0) -> Tensor:
    """Natural log of ``max(x, floor)``; zero gradient where the floor is active."""
    a = x.data
    active = a > floor
    safe = np.where(active, a, 1.0)
    out = np.where(active, np.log(safe), np.log(floor) if floor > 0 else -np.inf)
    return make_op(out, (x,), lambda g: (np.where(active, g / safe, 0.0),), "log")


def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    span = size + 2 * pad - kernel
    if stride < 1 or pad < 0:
        raise ConfigError(f"conv needs stride >= 1 and pad >= 0, got stride={stride}, pad={pad}")
    if span < 0 or span % stride != 0:
        raise ConfigError(
            f"conv output size ({size}+2*{pad}-{kernel})/{stride}+1 is not a positive integer"
        )
    return span // stride + 1


def conv2d(
    x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, pad: int = 0
) -> Tensor:
    """2-D cross-correlation (no kernel flip) of a C_in x H x W input.

    ``weight`` is C_out x C_in x kh x kw.  Implemented as one im2col matmul
    forward; the input gradient is scattered back per kernel offset.
    """
    if x.ndim != 3 or weight.ndim != 4 or x.shape[0] != weight.shape[1]:
        raise DimensionError(f"conv2d shape mismatch: input {x.shape}, kernel {weight.shape}")
    c_in, h, w = x.shape
    c_out, _, kh, kw = weight.shape
    ho = conv_output_size(h, kh, stride, pad)
    wo = conv_output_size(w, kw, stride, pad)

    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad))) if pad else x.data
    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    # (C_in, Ho, Wo, kh, kw) -> (C_in*kh*kw, Ho*Wo)
    cols = np.ascontiguousarray(windows.transpose(0, 3, 4, 1, 2)).reshape(c_in * kh * kw, ho * wo)
    wmat = weight.data.reshape(c_out, -1)
    out = (wmat @ cols).reshape(c_out, ho, wo)
    if bias is not None:
        out = out + bias.data[:, None, None]

    def backward(g):
        g2 = g.reshape(c_out, ho * wo)
        dw = (g2 @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = (wmat.T @ g2).reshape(c_in, kh, kw, ho, wo)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, i, j]
            dx = dxp[:, pad : pad + h, pad : pad + w] if pad else dxp
        grads = [dx, dw]
        if bias is not None:
            grads.append(g.sum(axis=(1, 2)))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_op(out, parents, backward, "conv2d")


class BatchNormState:
    """Running statistics for one batch-norm layer."""

    def __init__(self, channels: int):
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Per-channel normalization over the spatial axes of a C x H x W tensor.

    Training mode uses the statistics of ``x`` and updates ``state`` in place
    (unbiased variance for the running estimate, as torch does).  Eval mode
    normalizes with the running statistics.
    """
    if x.ndim != 3:
        raise DimensionError(f"batchnorm2d expects C x H x W, got {x.shape}")
    c = x.shape[0]
    n = x.shape[1] * x.shape[2]
    if n == 0:
        raise ConfigError("batchnorm2d over zero spatial extent")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batchnorm2d affine params {gamma.shape}/{beta.shape} vs {c} channels")
    xd = x.data
    gm = gamma.data[:, None, None]

    if training:
        mu = xd.mean(axis=(1, 2))
        var = xd.var(axis=(1, 2))
        unbiased = var * n / (n - 1) if n > 1 else var
        state.running_mean = (1 - momentum) * state.running_mean + momentum * mu
        state.running_var = (1 - momentum) * state.running_var + momentum * unbiased
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (xd - mu[:, None, None]) * inv_std[:, None, None]

        def backward(g):
            dgamma = (g * xhat).sum(axis=(1, 2))
            dbeta = g.sum(axis=(1, 2))
            dx = None
            if x.requires_grad:
                dx = (gm * inv_std[:, None, None]) * (
                    g - dbeta[:, None, None] / n - xhat * dgamma[:, None, None] / n
                )
            return dx, dgamma, dbeta

    else:
        inv_std = 1.0 / np.sqrt(state.running_var + eps)
        xhat = (xd - state.running_mean[:, None, None]) * inv_std[:, None, None]

        def backward(g):
            return g * gm * inv_std[:, None, None], (g * xhat).sum(axis=(1, 2)), g.sum(axis=(1, 2))

    out = gm * xhat + beta.data[:, None, None]
    return make_op(out, (x, gamma, beta), backward, "batchnorm2d")


def maxpool2x2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties route the gradient to the first maximum."""
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ConfigError(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
    blocks = x.data.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        d = np.zeros_like(blocks)
        np.put_along_axis(d, arg[..., None], g[..., None], axis=-1)
        return (d.reshape(c, h // 2, w // 2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h, w),)

    return make_op(out, (x,), backward, "maxpool2x2")


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    if factor < 1:
        raise ConfigError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return x
    c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=1), factor, axis=2)

    def backward(g):
        return (g.reshape(c, h, factor, w, factor).sum(axis=(2, 4)),)

    return make_op(out, (x,), backward, "upsample_nearest")


def neighbor_aggregate(neighbors: np.ndarray, weights: np.ndarray, h: Tensor) -> Tensor:
    """Sparse-dense product ``A @ H`` for a fixed-width row-sparse ``A``.

    Row ``i`` of ``A`` has nonzeros ``weights[i, k]`` at columns ``neighbors[i, k]``.
    """
    if h.ndim != 2 or neighbors.shape != weights.shape or neighbors.shape[0] != h.shape[0]:
        raise DimensionError(
            f"neighbor_aggregate mismatch: neighbors {neighbors.shape}, weights {weights.shape}, H {h.shape}"
        )
    hd = h.data
    out = np.einsum("nk,nkc->nc", weights, hd[neighbors])

    def backward(g):
        dh = np.zeros_like(hd)
        contrib = weights[:, :, None] * g[:, None, :]
        np.add.at(dh, neighbors.ravel(), contrib.reshape(-1, hd.shape[1]))
        return (dh,)

    return make_op(out, (h,), backward, "neighbor_aggregate")


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """``x[index]`` along the first axis; repeated indices accumulate gradient."""
    index = np.asarray(index, dtype=np.int64)
    shape = x.shape

    def backward(g):
        d = np.zeros(shape)
        np.add.at(d, index, g)
        return (d,)

    return make_op(x.data[index], (x,), backward, "gather_rows")


def flatten_spatial(x: Tensor) -> Tensor:
    """C x H x W -> (H*W) x C, rows in row-major spatial order."""
    c, h, w = x.shape
    return x.reshape(c, h * w).permute(1, 0)


def unflatten_spatial(x: Tensor, h: int, w: int) -> Tensor:
    """Inverse of :func:`flatten_spatial`."""
    n, c = x.shape
    if n != h * w:
        raise DimensionError(f"cannot reshape {n} nodes to {h}x{w}")
    return x.permute(1, 0).reshape(c, h, w)


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    return x + as_tensor(bias).reshape(-1, 1, 1)


def pad2d(x: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    """Zero-pad the spatial axes of a C x H x W tensor."""
    if min(top, bottom, left, right) < 0:
        raise ConfigError("pad2d amounts must be >= 0")
    h, w = x.shape[1], x.shape[2]
    out = np.pad(x.data, ((0, 0), (top, bottom), (left, right)))
    return make_op(out, (x,), lambda g: (g[:, top : top + h, left : left + w],), "pad2d")
