"""im2col / col2im and padding kernels.

Each hot kernel exists twice: an ``@njit`` loop nest and a numpy
equivalent built from strided views.  Accumulation order in ``col2im`` is
(kernel row, kernel col) for every output pixel in both versions, which keeps
the two paths bit-identical.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .. import _accel


@njit(cache=True, boundscheck=False)
def _im2col_nb(xp, k, stride, ho, wo):
    n, c, _, _ = xp.shape
    p = ho * wo
    cols = np.empty((c * k * k, n * p), dtype=xp.dtype)
    for ch in range(c):
        for i in range(k):
            for j in range(k):
                dst = cols[(ch * k + i) * k + j]
                for b in range(n):
                    plane = xp[b, ch]
                    for oh in range(ho):
                        src = plane[i + stride * oh]
                        base = b * p + oh * wo
                        if stride == 1:  # separate loop so it vectorises
                            for ow in range(wo):
                                dst[base + ow] = src[j + ow]
                        else:
                            for ow in range(wo):
                                dst[base + ow] = src[j + stride * ow]
    return cols


@njit(cache=True, boundscheck=False)
def _col2im_nb(cols, n, c, hp, wp, k, stride, ho, wo):
    p = ho * wo
    gx = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for ch in range(c):
        for i in range(k):
            for j in range(k):
                src = cols[(ch * k + i) * k + j]
                for b in range(n):
                    plane = gx[b, ch]
                    for oh in range(ho):
                        dst = plane[i + stride * oh]
                        base = b * p + oh * wo
                        if stride == 1:
                            for ow in range(wo):
                                dst[j + ow] += src[base + ow]
                        else:
                            for ow in range(wo):
                                dst[j + stride * ow] += src[base + ow]
    return gx


def _im2col_np(xp, k, stride, ho, wo):
    n, c = xp.shape[:2]
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]
    # (n, c, ho, wo, k, k) -> (c, k, k, n, ho, wo)
    return np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(c * k * k, n * ho * wo)


def _col2im_np(cols, n, c, hp, wp, k, stride, ho, wo):
    gx = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    c6 = cols.reshape(c, k, k, n, ho, wo).transpose(3, 0, 1, 2, 4, 5)
    for i in range(k):
        for j in range(k):
            gx[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += c6[:, :, i, j]
    return gx


def im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Patch matrix of shape ``(C*k*k, N*Ho*Wo)`` from a padded ``N x C x Hp x Wp`` input."""
    if _accel.use_numba():
        return _im2col_nb(np.ascontiguousarray(xp), k, stride, ho, wo)
    return _im2col_np(xp, k, stride, ho, wo)


def col2im(cols: np.ndarray, n: int, c: int, hp: int, wp: int, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Scatter-add adjoint of :func:`im2col`; ``cols`` is ``(C*k*k, N*Ho*Wo)``."""
    if _accel.use_numba():
        return _col2im_nb(np.ascontiguousarray(cols), n, c, hp, wp, k, stride, ho, wo)
    return _col2im_np(cols, n, c, hp, wp, k, stride, ho, wo)


def _reflect_index(size: int, pad: int) -> np.ndarray:
    idx = np.arange(-pad, size + pad)
    idx = np.abs(idx)
    over = idx > size - 1
    idx[over] = 2 * (size - 1) - idx[over]
    return idx


def pad2d(x: np.ndarray, pad: int, mode: str) -> np.ndarray:
    if pad == 0:
        return x
    widths = ((0, 0), (0, 0), (pad, pad), (pad, pad))
    if mode == "reflect":
        return np.pad(x, widths, mode="reflect")
    return np.pad(x, widths, mode="constant")


def unpad2d(g: np.ndarray, pad: int, mode: str, h: int, w: int) -> np.ndarray:
    """Adjoint of :func:`pad2d`: fold the border gradient back onto the source."""
    if pad == 0:
        return g
    if mode != "reflect":
        return np.ascontiguousarray(g[:, :, pad : pad + h, pad : pad + w])
    ri = _reflect_index(h, pad)
    ci = _reflect_index(w, pad)
    rows = np.ascontiguousarray(g[:, :, pad : pad + h, :])
    for r in list(range(pad)) + list(range(pad + h, h + 2 * pad)):
        rows[:, :, ri[r], :] += g[:, :, r, :]
    out = np.ascontiguousarray(rows[:, :, :, pad : pad + w])
    for col in list(range(pad)) + list(range(pad + w, w + 2 * pad)):
        out[:, :, :, ci[col]] += rows[:, :, :, col]
    return out
