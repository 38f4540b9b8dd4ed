"""Reverse-process samplers.

* ``ancestral``: stochastic DDPM steps through the posterior q(x_to | x_from, x0_hat).
* ``first_order``: deterministic DDIM-form update; keeps the implied noise direction.
* ``second_order``: evaluates the denoiser again at the half-log-SNR midpoint of the
  step and applies the full-step DDIM-form update from x_t with that evaluation.

All samplers end at t = 0 where alpha_bar = 1, so the last update returns the
(clipped) clean-image prediction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .denoiser import Denoiser
from .forward import rng_for, to_unit
from .schedule import (
    NoiseSchedule,
    ScheduleError,
    lambda_of,
    subsample_lambda,
    subsample_timesteps,
    t_of_lambda,
    transition_coeffs,
)

KINDS = ("ancestral", "first_order", "second_order")


@dataclass
class SamplerSpec:
    kind: str = "second_order"
    steps: int = 40
    spacing: str = "t"  # "t" (integer subsequence) or "lambda" (uniform in half-log-SNR)
    clip_x0: bool = True
    seed: int = 0
    timesteps: Sequence[float] | None = field(default=None)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"sampler kind must be one of {KINDS}, got {self.kind!r}")
        if self.spacing not in ("t", "lambda"):
            raise ValueError(f"spacing must be 't' or 'lambda', got {self.spacing!r}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")


def resolve_timesteps(s: NoiseSchedule, spec: SamplerSpec) -> list[float]:
    """Descending times starting at T, ending at >= 1 (the final hop to 0 is implicit)."""
    if spec.timesteps is not None:
        ts = [float(t) for t in spec.timesteps]
    elif spec.spacing == "lambda":
        ts = subsample_lambda(s, spec.steps)
    else:
        ts = [float(t) for t in subsample_timesteps(s.T, spec.steps)]
    if not ts or ts[0] != s.T or ts[-1] < 1 or any(a <= b for a, b in zip(ts, ts[1:])):
        raise ScheduleError(f"timestep subsequence must be strictly descending from T={s.T} to >= 1")
    return ts


def _x0(model: Denoiser, x, t, cond, clip: bool) -> np.ndarray:
    x0 = model.denoise(x, t, cond)
    return np.clip(x0, -1.0, 1.0) if clip else x0


def ddim_update(s: NoiseSchedule, x_t, t_from, t_to, x0_hat) -> np.ndarray:
    """x_to = sqrt(ab_to) x0_hat + sqrt(1 - ab_to) (x_t - sqrt(ab_from) x0_hat) / sqrt(1 - ab_from)."""
    if not t_from > t_to:
        raise ScheduleError(f"need t_from > t_to, got {t_from} -> {t_to}")
    ab_f = s.alpha_bar_at(t_from)
    ab_t = s.alpha_bar_at(t_to)
    eps = (x_t - math.sqrt(ab_f) * x0_hat) / math.sqrt(1.0 - ab_f)
    return math.sqrt(ab_t) * x0_hat + math.sqrt(1.0 - ab_t) * eps


def ancestral_step(s: NoiseSchedule, model: Denoiser, x_t, t, cond, eps_t, t_to=None, clip: bool = True):
    """One stochastic step; ``t_to`` defaults to ``t - 1``.

    Mean is the posterior mean with x0 replaced by the model prediction; the
    injected noise is scaled by the posterior standard deviation, which is 0
    on the step into t = 0.
    """
    t_to = t - 1 if t_to is None else t_to
    cx0, cxt, var = transition_coeffs(s, t, t_to)
    x0 = _x0(model, x_t, t, cond, clip)
    out = cx0 * x0 + cxt * x_t
    if var > 0:
        out = out + math.sqrt(var) * eps_t
    return out


def first_order_step(s: NoiseSchedule, model: Denoiser, x_t, t_from, t_to, cond, clip: bool = True):
    if not t_from > t_to:
        raise ScheduleError(f"first_order_step needs t_from > t_to, got {t_from} -> {t_to}")
    return ddim_update(s, x_t, t_from, t_to, _x0(model, x_t, t_from, cond, clip))


def midpoint_time(s: NoiseSchedule, t_from, t_to) -> float:
    return t_of_lambda(s, 0.5 * (lambda_of(s, t_from) + lambda_of(s, t_to)))


def second_order_step(s: NoiseSchedule, model: Denoiser, x_t, t_from, t_to, cond, clip: bool = True):
    if not t_from > t_to:
        raise ScheduleError(f"second_order_step needs t_from > t_to, got {t_from} -> {t_to}")
    if t_to == 0:
        return first_order_step(s, model, x_t, t_from, 0, cond, clip)
    s_mid = midpoint_time(s, t_from, t_to)
    u = ddim_update(s, x_t, t_from, s_mid, _x0(model, x_t, t_from, cond, clip))
    x0_mid = _x0(model, u, s_mid, cond, clip)
    return ddim_update(s, x_t, t_from, t_to, x0_mid)


def initial_noise(shape, seed: int, index: int = 0) -> np.ndarray:
    return rng_for(seed, index, 0x78540000).standard_normal(shape)


def run_chain(
    s: NoiseSchedule,
    model: Denoiser,
    spec: SamplerSpec,
    x_T: np.ndarray,
    cond=None,
    noise_keys: Sequence[int] | None = None,
    on_step: Callable[[int, float, np.ndarray], None] | None = None,
) -> np.ndarray:
    """Integrate from ``x_T`` at t = T down to t = 0 and return the raw result.

    ``noise_keys`` gives one RNG key per leading row of ``x_T`` for the
    ancestral noise; when omitted the whole array is one stream.
    """
    ts = resolve_timesteps(s, spec) + [0.0]
    x = np.array(x_T, copy=True)
    for k, (tf, tt) in enumerate(zip(ts[:-1], ts[1:])):
        if spec.kind == "ancestral":
            if tt > 0:
                if noise_keys is None:
                    eps = rng_for(spec.seed, 0, k + 1).standard_normal(x.shape)
                else:
                    eps = np.stack([rng_for(spec.seed, i, k + 1).standard_normal(x.shape[1:]) for i in noise_keys])
                eps = eps.astype(x.dtype, copy=False)
            else:
                eps = np.zeros_like(x)
            x = ancestral_step(s, model, x, tf, cond, eps, t_to=tt, clip=spec.clip_x0)
        elif spec.kind == "first_order":
            x = first_order_step(s, model, x, tf, tt, cond, clip=spec.clip_x0)
        else:
            x = second_order_step(s, model, x, tf, tt, cond, clip=spec.clip_x0)
        if on_step is not None:
            on_step(k, tt, x)
    return x


def sample(
    s: NoiseSchedule,
    model: Denoiser,
    spec: SamplerSpec,
    cond: np.ndarray,
    indices: Sequence[int] | None = None,
    on_step=None,
) -> np.ndarray:
    """Super-resolve a batch: start from per-image seeded noise, return [0, 1] images.

    ``cond`` is ``N x C x H x W`` (or a single ``C x H x W``) in the diffusion
    domain; image ``i`` of the batch uses RNG key ``(seed, indices[i])``.
    """
    cond = np.asarray(cond, dtype=np.float32)
    single = cond.ndim == 3
    if single:
        cond = cond[None]
    idx = list(range(cond.shape[0])) if indices is None else list(indices)
    if len(idx) != cond.shape[0]:
        raise ValueError(f"{len(idx)} indices for a batch of {cond.shape[0]}")
    x_T = np.stack([initial_noise(cond.shape[1:], spec.seed, i) for i in idx]).astype(np.float32)
    out = run_chain(s, model, spec, x_T, cond, noise_keys=idx, on_step=on_step)
    out = np.clip(to_unit(out), 0.0, 1.0).astype(np.float32)
    return out[0] if single else out
