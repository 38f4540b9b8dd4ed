"""Noise schedules and per-timestep quantities.

Arrays are indexed by timestep with a slot for ``t = 0`` so that
``alpha_bar[0] == 1``; that convention makes the last sampler step land on the
predicted clean image and zeroes the posterior variance at ``t = 1``.

Continuous time is handled through the half-log-SNR
``lambda(t) = 0.5 * ln(alpha_bar / (1 - alpha_bar))``, linearly interpolated
between integer grid points; ``alpha_bar`` at a non-integer time is
``sigmoid(2 * lambda(t))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class ScheduleError(ValueError):
    pass


class PosteriorCoeffs(NamedTuple):
    coef_x0: float
    coef_xt: float
    variance: float


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta: np.ndarray  # [T+1], beta[0] = 0
    alpha: np.ndarray  # [T+1], alpha[0] = 1
    alpha_bar: np.ndarray  # [T+1], alpha_bar[0] = 1
    sigma: np.ndarray  # [T+1], sqrt(1 - alpha_bar)
    lam: np.ndarray  # [T+1], lam[0] = +inf
    beta_start: float = 1e-4
    beta_end: float = 0.02
    kind: str = "linear"

    def config(self) -> dict[str, str]:
        return {
            "schedule.kind": self.kind,
            "schedule.T": str(self.T),
            "schedule.beta_start": repr(self.beta_start),
            "schedule.beta_end": repr(self.beta_end),
        }

    def alpha_bar_at(self, t) -> float:
        """alpha_bar at a (possibly non-integer) time; exact table value on the grid."""
        t = float(t)
        if t < 0 or t > self.T:
            raise ScheduleError(f"time {t} outside [0, {self.T}]")
        if t == 0:
            return 1.0
        if t.is_integer():
            return float(self.alpha_bar[int(t)])
        lam = lambda_of(self, t)
        return 1.0 / (1.0 + math.exp(-2.0 * lam))


def _from_betas(beta: np.ndarray, beta_start: float, beta_end: float) -> NoiseSchedule:
    T = beta.shape[0]
    b = np.concatenate([[0.0], beta]).astype(np.float64)
    a = 1.0 - b
    ab = np.cumprod(a)
    ab[0] = 1.0
    if not np.all(np.diff(ab) < 0):
        raise ScheduleError("alpha_bar must be strictly decreasing")
    sig = np.sqrt(1.0 - ab)
    with np.errstate(divide="ignore"):
        lam = 0.5 * (np.log(ab) - np.log1p(-ab))
    lam[0] = np.inf
    for arr in (b, a, ab, sig, lam):
        arr.flags.writeable = False
    return NoiseSchedule(T, b, a, ab, sig, lam, beta_start, beta_end)


def make_linear_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Betas interpolated linearly from ``beta_start`` (t=1) to ``beta_end`` (t=T)."""
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ScheduleError(f"T must be a positive integer, got {T!r}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ScheduleError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    beta = np.linspace(beta_start, beta_end, int(T), dtype=np.float64)
    return _from_betas(beta, float(beta_start), float(beta_end))


def schedule_from_config(cfg: dict) -> NoiseSchedule:
    kind = cfg.get("schedule.kind", "linear")
    if kind != "linear":
        raise ScheduleError(f"unsupported schedule.kind {kind!r}")
    return make_linear_schedule(
        int(cfg.get("schedule.T", 1000)),
        float(cfg.get("schedule.beta_start", 1e-4)),
        float(cfg.get("schedule.beta_end", 0.02)),
    )


def lambda_of(s: NoiseSchedule, t) -> float:
    """Half-log-SNR at continuous time ``t`` in (0, T].

    Between grid points the value is interpolated linearly; on (0, 1) the
    first segment is extended, which keeps the map strictly decreasing.
    """
    t = float(t)
    if not (0.0 < t <= s.T):
        raise ScheduleError(f"lambda is defined for t in (0, {s.T}], got {t}")
    if t.is_integer():
        return float(s.lam[int(t)])
    if t < 1.0:
        if s.T < 2:
            raise ScheduleError("lambda below t=1 needs at least two grid points")
        lo, hi = 1, 2
    else:
        lo = int(math.floor(t))
        hi = lo + 1
    w = t - lo
    return float((1.0 - w) * s.lam[lo] + w * s.lam[hi])


def t_of_lambda(s: NoiseSchedule, lam: float) -> float:
    """Inverse of :func:`lambda_of` on [lambda(T), lambda(1)]."""
    lam = float(lam)
    top, bottom = float(s.lam[1]), float(s.lam[s.T])
    if not (bottom <= lam <= top):
        raise ScheduleError(f"lambda {lam} outside [{bottom}, {top}]")
    if s.T == 1:
        return 1.0
    # lam[1:] is strictly decreasing; search on the negated, increasing copy
    neg = -s.lam[1:]
    i = int(np.searchsorted(neg, -lam, side="left"))
    if i == 0:
        return 1.0
    lo = i  # timestep index of the upper-lambda end is i, lower is i + 1
    l_hi, l_lo = float(s.lam[lo]), float(s.lam[lo + 1])
    if lam == l_lo:
        return float(lo + 1)
    w = (l_hi - lam) / (l_hi - l_lo)
    return lo + w


def subsample_timesteps(T: int, N: int) -> list[int]:
    """Descending ``round(i*T/N)`` for i = N..1 (ties rounded half up), deduplicated."""
    if N < 1 or N > T:
        raise ScheduleError(f"need 1 <= N <= T, got N={N}, T={T}")
    seq: list[int] = []
    for i in range(N, 0, -1):
        v = max(1, int(math.floor(i * T / N + 0.5)))
        if not seq or v != seq[-1]:
            seq.append(v)
    return seq


def subsample_lambda(s: NoiseSchedule, N: int) -> list[float]:
    """N continuous times from T down to 1, uniformly spaced in lambda."""
    if N < 1:
        raise ScheduleError(f"need N >= 1, got {N}")
    if N == 1:
        return [float(s.T)]
    lams = np.linspace(float(s.lam[s.T]), float(s.lam[1]), N)
    ts = [t_of_lambda(s, float(x)) for x in lams]
    ts[0], ts[-1] = float(s.T), 1.0
    return ts


def posterior_coeffs(s: NoiseSchedule, t: int) -> PosteriorCoeffs:
    """Coefficients of q(x_{t-1} | x_t, x_0)."""
    if not (1 <= t <= s.T) or int(t) != t:
        raise ScheduleError(f"posterior_coeffs needs integer t in [1, {s.T}], got {t}")
    return transition_coeffs(s, int(t), int(t) - 1)


def transition_coeffs(s: NoiseSchedule, t_from, t_to) -> PosteriorCoeffs:
    """Coefficients of q(x_{t_to} | x_{t_from}, x_0) for any t_from > t_to >= 0.

    With ``t_to = t_from - 1`` this is exactly :func:`posterior_coeffs`; for
    larger gaps the skipped steps are merged into one effective beta.
    """
    if not (t_from > t_to >= 0):
        raise ScheduleError(f"need t_from > t_to >= 0, got {t_from}, {t_to}")
    ab_f = s.alpha_bar_at(t_from)
    ab_t = s.alpha_bar_at(t_to)
    if float(t_from).is_integer() and t_to == t_from - 1:
        beta = float(s.beta[int(t_from)])
        alpha = float(s.alpha[int(t_from)])
    else:
        alpha = ab_f / ab_t
        beta = 1.0 - alpha
    denom = 1.0 - ab_f
    coef_x0 = math.sqrt(ab_t) * beta / denom
    coef_xt = math.sqrt(alpha) * (1.0 - ab_t) / denom
    var = (1.0 - ab_t) / denom * beta
    return PosteriorCoeffs(coef_x0, coef_xt, var)
