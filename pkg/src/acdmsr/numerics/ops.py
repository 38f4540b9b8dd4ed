"""Differentiable primitives used by the denoiser and the SR conditioner.

Images are batched ``N x C x H x W``; :func:`conv2d` also takes a single
``C x H x W`` image.  There is no general broadcasting: the only mixed-shape
ops are the explicit per-channel bias helpers.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .tensor import ShapeError, Tensor, record


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape {a.shape} does not match {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return record("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return record("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return record("mul", (a, b), ad * bd, lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    c = a.dtype.type(c)
    return record("scale", (a,), a.data * c, lambda g: (g * c,))


def silu(x: Tensor) -> Tensor:
    xd = x.data
    e = np.exp(-np.abs(xd))  # never overflows
    sig = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    out = xd * sig

    def back(g):
        return (g * (sig * (1.0 + xd * (1.0 - sig))),)

    return record("silu", (x,), out.astype(xd.dtype, copy=False), back)


def abs_(x: Tensor) -> Tensor:
    xd = x.data
    return record("abs", (x,), np.abs(xd), lambda g: (g * np.sign(xd),))


def mean(x: Tensor) -> Tensor:
    n = x.size
    shape, dtype = x.shape, x.dtype

    def back(g):
        return (np.full(shape, g.reshape(-1)[0] / n, dtype=dtype),)

    # float64 accumulation keeps the reduction order-stable across batch sizes
    out = np.asarray(x.data.sum(dtype=np.float64) / n, dtype=dtype)
    return record("mean", (x,), out, back)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 4 or b.data.ndim != 4 or a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels: cannot join {a.shape} and {b.shape} along channels")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return record("concat", (a, b), out, lambda g: (g[:, :ca], g[:, ca:]))


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling."""
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def back(g):
        n, c, h, w = g.shape
        return (g.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5)),)

    return record("upsample2x", (x,), out, back)


def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """x[N,C,H,W] + b, with b of shape [C] (shared) or [N,C] (per sample)."""
    if x.data.ndim != 4:
        raise ShapeError(f"add_channel_bias: expected N x C x H x W input, got {x.shape}")
    n, c = x.shape[:2]
    if b.shape == (c,):
        bias = b.data[None, :, None, None]

        def back(g):
            return g, g.sum(axis=(0, 2, 3))

    elif b.shape == (n, c):
        bias = b.data[:, :, None, None]

        def back(g):
            return g, g.sum(axis=(2, 3))

    else:
        raise ShapeError(f"add_channel_bias: bias {b.shape} does not fit channels={c}, batch={n}")
    return record("add_channel_bias", (x, b), x.data + bias, back)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Dense layer on x[N,E] with w[O,E], b[O]."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ShapeError(f"linear: input {x.shape}, weight {w.shape}, bias {b.shape} are incompatible")
    xd, wd = x.data, w.data
    out = xd @ wd.T + b.data

    def back(g):
        return g @ wd, g.T @ xd, g.sum(axis=0)

    return record("linear", (x, w, b), out, back)


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Group normalisation over (C/groups, H, W) with per-channel affine."""
    n, c, h, w = x.shape
    if c % groups:
        raise ShapeError(f"group_norm: channels={c} not divisible by groups={groups}")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"group_norm: affine params must have shape ({c},)")
    xg = x.data.reshape(n, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(n, c, h, w)
    gd = gamma.data[None, :, None, None]
    out = xhat * gd + beta.data[None, :, None, None]
    m = xg.shape[2]

    def back(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dxhat = (g * gd).reshape(n, groups, m)
        xh = xhat.reshape(n, groups, m)
        dx = inv / m * (m * dxhat - dxhat.sum(axis=2, keepdims=True) - xh * (dxhat * xh).sum(axis=2, keepdims=True))
        return dx.reshape(n, c, h, w), dgamma, dbeta

    return record("group_norm", (x, gamma, beta), out.astype(x.dtype, copy=False), back)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: str = "reflect") -> Tensor:
    """Cross-correlation with 'same'-style padding of ``(k - 1) // 2``.

    ``x`` is ``C_in x H x W`` or ``N x C_in x H x W``; ``kernel`` is
    ``C_out x C_in x k x k`` with odd ``k``.  Output spatial size is
    ``floor((H + 2*pad - k) / stride) + 1``.
    """
    single = x.data.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.ndim != 4:
        raise ShapeError(f"conv2d: input must be C x H x W or N x C x H x W, got {x.shape}")
    if kernel.data.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be C_out x C_in x k x k, got {kernel.shape}")
    cout, cin, kh, kw = kernel.shape
    n, c, h, w = xd.shape
    if cin != c:
        raise ShapeError(f"conv2d: input has C_in={c} but kernel expects C_in={cin}")
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be square with odd size, got {kh} x {kw}")
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be positive, got {stride}")
    if padding not in ("reflect", "zero"):
        raise ValueError(f"conv2d: padding must be 'reflect' or 'zero', got {padding!r}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match C_out={cout}")
    k = kh
    pad = (k - 1) // 2
    if padding == "reflect" and pad >= min(h, w):
        raise ShapeError(f"conv2d: reflect padding {pad} needs H, W > {pad}, got H={h}, W={w}")
    xp = kernels.pad2d(xd, pad, padding)
    hp, wp = xp.shape[2:]
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    cols = kernels.im2col(xp, k, stride, ho, wo)  # (C_in*k*k, N*P)
    wmat = kernel.data.reshape(cout, -1)
    out2 = wmat @ cols  # one GEMM for the whole batch
    if bias is not None:
        out2 += bias.data[:, None]
    out = np.ascontiguousarray(out2.reshape(cout, n, ho, wo).transpose(1, 0, 2, 3))
    if single:
        out = out[0]

    def back(g):
        g4 = g[None] if single else g
        g2 = np.ascontiguousarray(g4.transpose(1, 0, 2, 3)).reshape(cout, n * ho * wo)
        gw = (g2 @ cols.T).reshape(kernel.shape)
        gcols = wmat.T @ g2
        gxp = kernels.col2im(gcols, n, c, hp, wp, k, stride, ho, wo)
        gx = kernels.unpad2d(gxp, pad, padding, h, w)
        if single:
            gx = gx[0]
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=1)

    inputs = (x, kernel, bias) if bias is not None else (x, kernel)
    return record("conv2d", inputs, out, back)


def mse(pred: Tensor, target: Tensor) -> Tensor:
    d = sub(pred, target)
    return mean(mul(d, d))


def l1(pred: Tensor, target: Tensor) -> Tensor:
    return mean(abs_(sub(pred, target)))
