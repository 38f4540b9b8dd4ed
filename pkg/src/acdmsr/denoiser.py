"""Denoisers mapping (x_t, t, condition) to a clean-image estimate.

Two implementations share the :class:`Denoiser` protocol:

* :class:`AnalyticGaussianDenoiser` is the exact posterior mean E[x0 | x_t]
  for Gaussian data, used to validate samplers against closed forms.
* :class:`CondUNet` is a small encoder-decoder CNN whose input is the channel
  concatenation of x_t and the condition image.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Protocol

import numpy as np

from . import numerics as nx
from .forward import rng_for, x0_from_eps
from .numerics import ShapeError, Tensor
from .schedule import NoiseSchedule


class Denoiser(Protocol):
    def denoise(self, x_t: np.ndarray, t, cond: np.ndarray | None = None) -> np.ndarray: ...


def time_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding ``[sin(t*w_k)..., cos(t*w_k)...]``.

    Frequencies form a geometric ladder from 1 down to 1/10000.  ``t`` may be
    a scalar (returns ``[dim]``) or a 1-D array (returns ``[len(t), dim]``).
    """
    if dim < 2 or dim % 2:
        raise ValueError(f"embedding dimension must be a positive even number, got {dim}")
    half = dim // 2
    if half == 1:
        freqs = np.ones(1)
    else:
        freqs = np.exp(-math.log(10000.0) * np.arange(half) / (half - 1))
    tt = np.asarray(t, dtype=np.float64)
    ang = tt[..., None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


@dataclass
class AnalyticGaussianDenoiser:
    """Bayes-optimal x0 estimate for x0 ~ N(mu, s2 I) under the forward marginal.

    ``mu`` may be a scalar or an array broadcastable to the sample shape.
    """

    schedule: NoiseSchedule
    mu: float | np.ndarray = 0.0
    s2: float = 1.0

    def __post_init__(self):
        if not self.s2 > 0:
            raise ValueError(f"data variance must be positive, got {self.s2}")

    def denoise(self, x_t, t, cond=None) -> np.ndarray:
        return analytic_denoise(self, self.schedule, x_t, t)


def analytic_denoise(d: AnalyticGaussianDenoiser, s: NoiseSchedule, x_t, t) -> np.ndarray:
    x = np.asarray(x_t.data if isinstance(x_t, Tensor) else x_t, dtype=np.float64)
    if np.ndim(t) == 0:
        ab = s.alpha_bar_at(t)
    else:  # one time per leading-axis sample
        ab = np.array([s.alpha_bar_at(v) for v in np.ravel(t)]).reshape((-1,) + (1,) * (x.ndim - 1))
    num = np.sqrt(ab) * d.s2 * x + (1.0 - ab) * np.asarray(d.mu, dtype=np.float64)
    return num / (ab * d.s2 + (1.0 - ab))


@dataclass
class UNetConfig:
    in_channels: int = 3
    cond_channels: int = 3
    base_width: int = 32
    time_dim: int = 64
    objective: str = "image"  # "image" predicts x0, "noise" predicts eps
    groups: int = 0  # 0 disables group normalisation
    seed: int = 0

    def to_text(self) -> str:
        return "".join(f"model.{k}={v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_mapping(cls, kv: dict) -> "UNetConfig":
        out = {}
        for f in fields(cls):
            key = f"model.{f.name}"
            if key in kv:
                out[f.name] = str(kv[key]) if f.name == "objective" else int(kv[key])
        return cls(**out)


def _conv_param(rng, cout, cin, k, gain=1.0):
    std = gain * math.sqrt(2.0 / (cin * k * k))
    return rng.standard_normal((cout, cin, k, k)) * std


def init_unet_params(cfg: UNetConfig) -> dict[str, np.ndarray]:
    """Seeded He-normal initialisation; the last conv of each branch is scaled down."""
    if cfg.objective not in ("image", "noise"):
        raise ValueError(f"objective must be 'image' or 'noise', got {cfg.objective!r}")
    rng = rng_for(cfg.seed, 0x554E4554)
    C, E = cfg.base_width, 4 * cfg.base_width
    p: dict[str, np.ndarray] = {}

    def conv(name, cout, cin, k=3, gain=1.0):
        p[f"{name}.w"] = _conv_param(rng, cout, cin, k, gain)
        p[f"{name}.b"] = np.zeros(cout)

    def dense(name, cout, cin):
        p[f"{name}.w"] = rng.standard_normal((cout, cin)) * math.sqrt(1.0 / cin)
        p[f"{name}.b"] = np.zeros(cout)

    def resblock(name, cin, cout):
        if cfg.groups:
            p[f"{name}.n1.g"], p[f"{name}.n1.b"] = np.ones(cin), np.zeros(cin)
            p[f"{name}.n2.g"], p[f"{name}.n2.b"] = np.ones(cout), np.zeros(cout)
        conv(f"{name}.c1", cout, cin)
        dense(f"{name}.t", cout, E)
        conv(f"{name}.c2", cout, cout, gain=0.2)
        if cin != cout:
            conv(f"{name}.skip", cout, cin, k=1)

    dense("temb.0", E, cfg.time_dim)
    dense("temb.1", E, E)
    conv("in", C, cfg.in_channels + cfg.cond_channels)
    resblock("res0", C, C)
    conv("down0", 2 * C, C)
    resblock("res1", 2 * C, 2 * C)
    conv("down1", 2 * C, 2 * C)
    resblock("mid0", 2 * C, 2 * C)
    resblock("mid1", 2 * C, 2 * C)
    conv("up1", 2 * C, 2 * C)
    resblock("dec1", 4 * C, 2 * C)
    conv("up0", C, 2 * C)
    resblock("dec0", 2 * C, C)
    conv("out", cfg.in_channels, C, gain=0.1)
    return p


def unet_forward(params: dict[str, Tensor], cfg: UNetConfig, x_t: Tensor, t, cond: Tensor) -> Tensor:
    """Raw network output (x0 or eps depending on the objective) for a batch."""
    if x_t.data.ndim != 4 or cond.data.ndim != 4:
        raise ShapeError(f"unet: expected N x C x H x W inputs, got {x_t.shape} and {cond.shape}")
    n, c, h, w = x_t.shape
    if cond.shape[0] != n or cond.shape[2:] != (h, w):
        raise ShapeError(f"unet: condition shape {cond.shape} does not match x_t shape {x_t.shape}")
    if c != cfg.in_channels or cond.shape[1] != cfg.cond_channels:
        raise ShapeError(
            f"unet: channels (x_t={c}, cond={cond.shape[1]}) but model built for "
            f"(x_t={cfg.in_channels}, cond={cfg.cond_channels})"
        )
    if h % 4 or w % 4:
        raise ShapeError(f"unet: H and W must be divisible by 4, got {h} x {w}")
    P = params
    dt = x_t.dtype
    tt = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
    emb = Tensor._wrap(time_embedding(tt, cfg.time_dim).astype(dt))
    temb = nx.linear(emb, P["temb.0.w"], P["temb.0.b"])
    temb = nx.linear(nx.silu(temb), P["temb.1.w"], P["temb.1.b"])
    temb_act = nx.silu(temb)

    def conv(name, x, stride=1):
        return nx.conv2d(x, P[f"{name}.w"], P[f"{name}.b"], stride=stride)

    def norm_act(name, x):
        if cfg.groups:
            x = nx.group_norm(x, cfg.groups, P[f"{name}.g"], P[f"{name}.b"])
        return nx.silu(x)

    def resblock(name, x):
        hdn = conv(f"{name}.c1", norm_act(f"{name}.n1", x))
        hdn = nx.add_channel_bias(hdn, nx.linear(temb_act, P[f"{name}.t.w"], P[f"{name}.t.b"]))
        hdn = conv(f"{name}.c2", norm_act(f"{name}.n2", hdn))
        skip = conv(f"{name}.skip", x) if f"{name}.skip.w" in P else x
        return nx.add(hdn, skip)

    h0 = resblock("res0", conv("in", nx.concat_channels(x_t, cond)))
    h1 = resblock("res1", conv("down0", h0, stride=2))
    m = conv("down1", h1, stride=2)
    m = resblock("mid1", resblock("mid0", m))
    u1 = conv("up1", nx.upsample2x(m))
    u1 = resblock("dec1", nx.concat_channels(u1, h1))
    u0 = conv("up0", nx.upsample2x(u1))
    u0 = resblock("dec0", nx.concat_channels(u0, h0))
    return conv("out", nx.silu(u0))


class CondUNet:
    """Trainable conditional denoiser; :meth:`denoise` always returns x0."""

    def __init__(self, cfg: UNetConfig, schedule: NoiseSchedule, params: dict[str, np.ndarray] | None = None,
                 dtype=np.float32):
        self.cfg = cfg
        self.schedule = schedule
        raw = init_unet_params(cfg) if params is None else params
        self.params = {k: Tensor(v, requires_grad=True, name=k, dtype=dtype) for k, v in raw.items()}

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def forward(self, x_t: Tensor, t, cond: Tensor, params: dict[str, Tensor] | None = None) -> Tensor:
        return unet_forward(self.params if params is None else params, self.cfg, x_t, t, cond)

    def denoise(self, x_t, t, cond=None) -> np.ndarray:
        if cond is None:
            raise ShapeError("CondUNet needs a condition image")
        x = np.asarray(x_t, dtype=np.float32)
        c = np.asarray(cond, dtype=np.float32)
        single = x.ndim == 3
        if single:
            x, c = x[None], c[None]
        if c.ndim != 4:
            raise ShapeError(f"condition must be C x H x W or N x C x H x W, got {c.shape}")
        if c.shape[0] == 1 and x.shape[0] > 1:
            c = np.broadcast_to(c, (x.shape[0],) + c.shape[1:])
        out = self.forward(Tensor._wrap(x.copy()), t, Tensor._wrap(np.ascontiguousarray(c))).data
        if self.cfg.objective == "noise":
            out = x0_from_eps(self.schedule, x, out, float(t) if np.ndim(t) == 0 else t)
        return out[0] if single else out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def save(self, path) -> None:
        path = Path(path)
        nx.save_tensors(path, self.state_dict())
        text = self.cfg.to_text() + "".join(f"{k}={v}\n" for k, v in self.schedule.config().items())
        Path(str(path) + ".arch").write_text(text, encoding="utf-8")

    @classmethod
    def load(cls, path) -> "CondUNet":
        from .harness.config import parse_kv_text
        from .schedule import schedule_from_config

        path = Path(path)
        arch = parse_kv_text(Path(str(path) + ".arch").read_text(encoding="utf-8"))
        cfg = UNetConfig.from_mapping(arch)
        sched = schedule_from_config(arch)
        params = nx.load_tensors(path)
        expected = init_unet_params(cfg)
        if set(expected) != set(params):
            missing = sorted(set(expected) ^ set(params))
            raise nx.CheckpointError(f"{path}: parameter set does not match architecture ({missing[:4]}...)")
        for k, v in expected.items():
            if params[k].shape != v.shape:
                raise nx.CheckpointError(f"{path}: {k} has shape {params[k].shape}, expected {v.shape}")
        return cls(cfg, sched, params)


def unet_denoise(m: CondUNet, x_t, t, cond) -> np.ndarray:
    return m.denoise(x_t, t, cond)
