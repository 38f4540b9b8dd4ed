"""Closed-form forward noising and the clean-image / noise conversion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import ShapeError, Tensor
from .schedule import NoiseSchedule, ScheduleError


def rng_for(*key: int) -> np.random.Generator:
    """Counter-based generator keyed by integers, e.g. (seed, sample index, timestep).

    Streams depend only on the key, never on call order or worker count.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))


def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _coef(s: NoiseSchedule, t, ndim: int, batched: bool):
    """sqrt(alpha_bar), sqrt(1 - alpha_bar) for scalar t or one t per leading row."""
    ts = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if np.any(ts < 1) or np.any(ts > s.T):
        raise ScheduleError(f"timesteps must lie in [1, {s.T}]")
    ab = np.array([s.alpha_bar_at(v) for v in ts])
    if batched:
        shape = (-1,) + (1,) * (ndim - 1)
        return np.sqrt(ab).reshape(shape), np.sqrt(1.0 - ab).reshape(shape)
    return float(np.sqrt(ab[0])), float(np.sqrt(1.0 - ab[0]))


@dataclass(frozen=True)
class NoisedSample:
    x_t: np.ndarray
    t: object
    eps: np.ndarray


def q_sample(s: NoiseSchedule, x0, t, eps) -> NoisedSample:
    """x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps.

    ``t`` is a scalar, or an array with one timestep per leading (batch) row.
    """
    x0a, ea = _arr(x0), _arr(eps)
    if x0a.shape != ea.shape:
        raise ShapeError(f"q_sample: x0 shape {x0a.shape} does not match eps shape {ea.shape}")
    batched = np.ndim(t) > 0
    if batched and len(np.atleast_1d(t)) != x0a.shape[0]:
        raise ShapeError(f"q_sample: {len(t)} timesteps for batch of {x0a.shape[0]}")
    a, b = _coef(s, t, x0a.ndim, batched)
    dtype = np.result_type(x0a.dtype, np.float32)
    x_t = (a * x0a + b * ea).astype(dtype, copy=False)
    return NoisedSample(x_t, t, ea)


def eps_from_x0(s: NoiseSchedule, x_t, x0_hat, t) -> np.ndarray:
    """Invert the noising identity: eps = (x_t - sqrt(ab) * x0_hat) / sqrt(1 - ab)."""
    xa, ha = _arr(x_t), _arr(x0_hat)
    if xa.shape != ha.shape:
        raise ShapeError(f"eps_from_x0: x_t shape {xa.shape} does not match x0_hat shape {ha.shape}")
    batched = np.ndim(t) > 0
    a, b = _coef(s, t, xa.ndim, batched)
    if np.any(np.asarray(b) == 0):
        raise ScheduleError("eps_from_x0: alpha_bar == 1, noise is undefined")
    return ((xa - a * ha) / b).astype(np.result_type(xa.dtype, np.float32), copy=False)


def x0_from_eps(s: NoiseSchedule, x_t, eps_hat, t) -> np.ndarray:
    """x0 = (x_t - sqrt(1 - ab) * eps) / sqrt(ab); used by noise-prediction models."""
    xa, ea = _arr(x_t), _arr(eps_hat)
    batched = np.ndim(t) > 0
    a, b = _coef(s, t, xa.ndim, batched)
    return ((xa - b * ea) / a).astype(np.result_type(xa.dtype, np.float32), copy=False)


def to_diffusion(img01: np.ndarray) -> np.ndarray:
    """Map pixels from [0, 1] to [-1, 1]."""
    return (2.0 * np.asarray(img01) - 1.0).astype(np.float32)


def to_unit(img: np.ndarray) -> np.ndarray:
    """Map from [-1, 1] back to [0, 1] (no clipping)."""
    return ((np.asarray(img) + 1.0) * 0.5).astype(np.float32)
