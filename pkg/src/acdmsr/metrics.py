"""PSNR, SSIM and MSE on [0, 1] images (RGB metrics, channel-averaged SSIM)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass(frozen=True)
class MetricReport:
    psnr_db: float  # math.inf for identical images
    ssim: float
    mse: float


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    """10 log10(1 / MSE) for [0, 1] images; ``math.inf`` when they are identical."""
    m = mse(a, b)
    if m == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / m)


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.shape[0]
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=-2) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=-1) @ g


def ssim(a, b) -> float:
    """Mean local SSIM (11x11 Gaussian window, sigma 1.5, valid positions only)."""
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[None], b[None]
    if min(a.shape[-2:]) < SSIM_WIN:
        raise ValueError(f"image {a.shape[-2:]} is smaller than the {SSIM_WIN}x{SSIM_WIN} SSIM window")
    g = gaussian_window()
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a * mu_a
    sbb = _filter_valid(b * b, g) - mu_b * mu_b
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * sab + SSIM_C2)
    den = (mu_a**2 + mu_b**2 + SSIM_C1) * (saa + sbb + SSIM_C2)
    smap = num / den
    per_channel = smap.reshape(-1, *smap.shape[-2:]).mean(axis=(1, 2))
    return float(per_channel.mean())


def report(a, b) -> MetricReport:
    return MetricReport(psnr(a, b), ssim(a, b), mse(a, b))
