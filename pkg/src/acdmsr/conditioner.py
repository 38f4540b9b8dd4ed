"""Condition images x^C built from a low-resolution input.

Modes:

``bicubic``  bicubic upsampling of the LR image.
``nearest``  pixel replication of the LR image (the raw-LR condition).
``file``     a precomputed SR image ``<dir>/<id>.{ppm,pgm,png}`` from any external model.
``learned``  a small residual CNN on top of the bicubic upsample.

Inputs are [0, 1] images; every mode returns an HR-sized diffusion-domain
([-1, 1]) float32 array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import numerics as nx
from .forward import rng_for, to_diffusion
from .harness.config import parse_kv_text
from .imaging import ImageFormatError, bicubic_resize, nearest_upsample, read_image
from .numerics import Graph, ShapeError, Tensor

MODES = ("bicubic", "nearest", "file", "learned")
SCALES = (2, 3, 4, 8)
N_LAYERS = 5


class ConditionError(ValueError):
    """Missing or mis-sized condition source."""


@dataclass(frozen=True)
class ConditionerSpec:
    mode: str = "bicubic"
    scale: int = 4
    directory: str = ""  # file mode
    checkpoint: str = ""  # learned mode

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"conditioner mode must be one of {MODES}, got {self.mode!r}")
        if self.scale not in SCALES:
            raise ValueError(f"scale must be one of {SCALES}, got {self.scale}")
        if self.mode == "file" and not self.directory:
            raise ValueError("file mode needs a directory of precomputed SR images")
        if self.mode == "learned" and not self.checkpoint:
            raise ValueError("learned mode needs a checkpoint path")


# --- learned SR network ---------------------------------------------------


def init_srnet_params(width: int, channels: int = 3, seed: int = 0) -> dict[str, np.ndarray]:
    rng = rng_for(seed, 0x53524E54)
    chans = [channels] + [width] * (N_LAYERS - 1) + [channels]
    p = {}
    for i in range(N_LAYERS):
        cin, cout = chans[i], chans[i + 1]
        gain = 0.1 if i == N_LAYERS - 1 else 1.0
        p[f"c{i}.w"] = rng.standard_normal((cout, cin, 3, 3)) * gain * math.sqrt(2.0 / (cin * 9))
        p[f"c{i}.b"] = np.zeros(cout)
    return p


def srnet_forward(params: dict[str, Tensor], up: Tensor) -> Tensor:
    """Residual correction of a bicubic upsample ``up`` (N x C x H x W, diffusion domain)."""
    h = up
    for i in range(N_LAYERS):
        h = nx.conv2d(h, params[f"c{i}.w"], params[f"c{i}.b"])
        if i < N_LAYERS - 1:
            h = nx.silu(h)
    return nx.add(up, h)


class SRNet:
    def __init__(self, width: int = 32, scale: int = 4, channels: int = 3, seed: int = 0, params=None):
        self.width, self.scale, self.channels, self.seed = width, scale, channels, seed
        raw = init_srnet_params(width, channels, seed) if params is None else params
        self.params = {k: Tensor(v, requires_grad=True, name=k) for k, v in raw.items()}

    def upsample(self, lr01: np.ndarray) -> np.ndarray:
        h, w = lr01.shape[-2:]
        return to_diffusion(bicubic_resize(lr01, h * self.scale, w * self.scale))

    def apply(self, lr01: np.ndarray) -> np.ndarray:
        """LR [0, 1] image(s) to diffusion-domain HR estimate(s)."""
        lr01 = np.asarray(lr01, dtype=np.float32)
        single = lr01.ndim == 3
        up = self.upsample(lr01[None] if single else lr01)
        out = srnet_forward(self.params, Tensor._wrap(up)).data
        return out[0] if single else out

    def save(self, path) -> None:
        path = Path(path)
        nx.save_tensors(path, {k: v.data for k, v in self.params.items()})
        arch = f"cond.width={self.width}\ndata.scale={self.scale}\nmodel.in_channels={self.channels}\nseed={self.seed}\n"
        Path(str(path) + ".arch").write_text(arch, encoding="utf-8")

    @classmethod
    def load(cls, path) -> "SRNet":
        path = Path(path)
        try:
            arch = parse_kv_text(Path(str(path) + ".arch").read_text(encoding="utf-8"))
        except OSError as exc:
            raise nx.CheckpointError(f"{path}: missing architecture sidecar") from exc
        width, scale = int(arch["cond.width"]), int(arch["data.scale"])
        channels, seed = int(arch.get("model.in_channels", 3)), int(arch.get("seed", 0))
        params = nx.load_tensors(path)
        expected = init_srnet_params(width, channels, seed)
        if set(params) != set(expected) or any(params[k].shape != v.shape for k, v in expected.items()):
            raise nx.CheckpointError(f"{path}: tensors do not match a width-{width} SR network")
        return cls(width, scale, channels, seed, params)


@dataclass
class CondTrainConfig:
    scale: int = 4
    width: int = 32
    steps: int = 2000
    lr: float = 1e-3
    batch: int = 16
    seed: int = 0


def train_conditioner(hr_patches: np.ndarray, cfg: CondTrainConfig) -> tuple[SRNet, list[float]]:
    """Fit an :class:`SRNet` to ``hr_patches`` (N x C x P x P in [0, 1]) with squared error.

    LR inputs are the bicubic degradations of the patches; batches are drawn
    from a generator keyed by (seed, step).  Returns the network and the
    per-step losses.
    """
    hr = np.asarray(hr_patches, dtype=np.float32)
    if hr.ndim != 4 or hr.shape[0] == 0:
        raise ConditionError("conditioner training needs a non-empty N x C x P x P patch array")
    p = hr.shape[-1]
    if hr.shape[-2] != p or p % cfg.scale:
        raise ShapeError(f"patches must be square with size divisible by {cfg.scale}, got {hr.shape[-2:]}")
    net = SRNet(cfg.width, cfg.scale, hr.shape[1], cfg.seed)
    lr01 = bicubic_resize(hr, p // cfg.scale, p // cfg.scale)
    up_all = net.upsample(lr01)
    target_all = to_diffusion(hr)
    state = nx.AdamState(lr=cfg.lr)
    params = net.params
    losses = []
    for step in range(1, cfg.steps + 1):
        idx = rng_for(cfg.seed, 0x434F4E44, step).integers(0, hr.shape[0], size=min(cfg.batch, hr.shape[0]))
        with Graph() as g:
            loss = nx.mse(srnet_forward(params, Tensor._wrap(up_all[idx])), Tensor._wrap(target_all[idx]))
        grads = nx.reverse_gradients(g, loss)
        params, state = nx.adam_step(params, {k: grads[v] for k, v in params.items() if v in grads}, state)
        losses.append(loss.item())
    net.params = params
    return net, losses


# --- conditions -----------------------------------------------------------


class Conditioner:
    """A loaded :class:`ConditionerSpec`; immutable after construction."""

    def __init__(self, spec: ConditionerSpec, net: SRNet | None = None):
        self.spec = spec
        self.net = net
        if spec.mode == "learned" and net is None:
            self.net = SRNet.load(spec.checkpoint)
        if self.net is not None and self.net.scale != spec.scale:
            raise ConditionError(f"SR network was trained for x{self.net.scale}, spec asks for x{spec.scale}")

    def __call__(self, lr01: np.ndarray, sample_id: str = "") -> np.ndarray:
        lr01 = np.asarray(lr01, dtype=np.float32)
        sc = self.spec.scale
        h, w = lr01.shape[-2:]
        mode = self.spec.mode
        if mode == "bicubic":
            return to_diffusion(bicubic_resize(lr01, h * sc, w * sc))
        if mode == "nearest":
            return to_diffusion(nearest_upsample(lr01, sc))
        if mode == "learned":
            return self.net.apply(lr01).astype(np.float32)
        return self._from_file(lr01, sample_id)

    def _from_file(self, lr01, sample_id: str) -> np.ndarray:
        if lr01.ndim != 3:
            raise ConditionError("file mode conditions one image at a time")
        d = Path(self.spec.directory)
        hits = [d / f"{sample_id}{ext}" for ext in (".ppm", ".pgm", ".png") if (d / f"{sample_id}{ext}").is_file()]
        if not sample_id or not hits:
            raise ConditionError(f"no precomputed condition for id {sample_id!r} in {d}")
        try:
            img = read_image(hits[0])
        except (ImageFormatError, OSError) as exc:
            raise ConditionError(f"condition for id {sample_id!r}: {exc}") from exc
        want = (lr01.shape[0], lr01.shape[1] * self.spec.scale, lr01.shape[2] * self.spec.scale)
        if img.pixels.shape != want:
            raise ConditionError(f"condition for id {sample_id!r} has shape {img.pixels.shape}, expected {want}")
        return to_diffusion(img.to_float())


@lru_cache(maxsize=8)
def _cached(spec: ConditionerSpec) -> Conditioner:
    return Conditioner(spec)


def make_condition(spec: ConditionerSpec, lr01: np.ndarray, sample_id: str = "") -> np.ndarray:
    return _cached(spec)(lr01, sample_id)
