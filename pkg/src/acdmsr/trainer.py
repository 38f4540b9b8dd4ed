"""Denoiser training: regress x0 (or eps) from noised HR patches and their conditions."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .denoiser import CondUNet, UNetConfig
from .forward import eps_from_x0, q_sample, rng_for
from .numerics import Graph, ShapeError, Tensor
from .schedule import NoiseSchedule


class DataError(ValueError):
    """Training data missing or unusable."""


@dataclass
class TrainConfig:
    steps: int = 5000
    batch: int = 16
    lr: float = 1e-4
    loss: str = "l2"  # "l2" squared error, "l1" absolute error
    seed: int = 0
    checkpoint_every: int = 0  # 0: only at the end
    model: UNetConfig = field(default_factory=UNetConfig)

    def __post_init__(self):
        if self.steps < 1 or self.batch < 1:
            raise ValueError(f"steps and batch must be >= 1, got {self.steps}, {self.batch}")
        if self.loss not in ("l2", "l1"):
            raise ValueError(f"loss must be 'l2' or 'l1', got {self.loss!r}")


@dataclass(frozen=True)
class TrainingPool:
    """Aligned HR targets and conditions, both N x C x P x P in the diffusion domain."""

    x0: np.ndarray
    cond: np.ndarray

    def __post_init__(self):
        if self.x0.ndim != 4 or self.x0.shape[0] == 0:
            raise DataError("training pool is empty")
        if self.x0.shape[0] != self.cond.shape[0] or self.x0.shape[2:] != self.cond.shape[2:]:
            raise ShapeError(f"pool targets {self.x0.shape} and conditions {self.cond.shape} are misaligned")


def draw_batch(pool: TrainingPool, s: NoiseSchedule, seed: int, step: int, batch: int):
    """Indices, per-sample t uniform on {1..T}, and standard-normal eps for one step."""
    rng = rng_for(seed, 0x54524E, step)
    idx = rng.integers(0, pool.x0.shape[0], size=batch)
    t = rng.integers(1, s.T + 1, size=batch)
    eps = rng.standard_normal((batch,) + pool.x0.shape[1:]).astype(np.float32)
    return idx, t, eps


def compute_loss(model, s: NoiseSchedule, x0, cond, t, eps, objective: str = "image", loss: str = "l2",
                 params: dict[str, Tensor] | None = None) -> Tensor:
    """Mean residual over the batch between the model output and x0 (or eps).

    A :class:`CondUNet` is evaluated on the autodiff graph (with ``params``
    overriding its own); any other denoiser is evaluated numerically and the
    result carries no gradient.
    """
    x0 = np.asarray(x0, dtype=np.float32)
    eps = np.asarray(eps, dtype=np.float32)
    if x0.shape != eps.shape:
        raise ShapeError(f"compute_loss: x0 {x0.shape} and eps {eps.shape} differ")
    if objective not in ("image", "noise"):
        raise ValueError(f"objective must be 'image' or 'noise', got {objective!r}")
    x_t = q_sample(s, x0, t, eps).x_t
    target = x0 if objective == "image" else eps
    if isinstance(model, CondUNet):
        if model.cfg.objective != objective:
            raise ValueError(f"model predicts {model.cfg.objective!r} but the loss targets {objective!r}")
        pred = model.forward(Tensor._wrap(x_t), t, Tensor._wrap(np.asarray(cond, dtype=np.float32)), params)
    else:
        x0_hat = np.asarray(model.denoise(x_t, t, cond), dtype=np.float32)
        out = x0_hat if objective == "image" else eps_from_x0(s, x_t, x0_hat, t)
        pred = Tensor(out)
    if pred.shape != target.shape:
        raise ShapeError(f"compute_loss: prediction {pred.shape} vs target {target.shape}")
    tgt = Tensor._wrap(target)
    return nx.mse(pred, tgt) if loss == "l2" else nx.l1(pred, tgt)


def train(model: CondUNet, pool: TrainingPool, cfg: TrainConfig, out_dir=None, log=None) -> tuple[CondUNet, list[float]]:
    """Adam on the sampled objective; deterministic given ``cfg.seed``.

    With ``out_dir`` set, writes ``model.acdt`` (plus its ``.arch`` sidecar)
    and ``loss.csv`` with header ``step,loss``.
    """
    s = model.schedule
    if pool.x0.shape[1] != model.cfg.in_channels or pool.cond.shape[1] != model.cfg.cond_channels:
        raise ShapeError("pool channel counts do not match the model")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    state = nx.AdamState(lr=cfg.lr)
    params = model.params
    losses: list[float] = []
    for step in range(1, cfg.steps + 1):
        idx, t, eps = draw_batch(pool, s, cfg.seed, step, cfg.batch)
        with Graph() as g:
            loss = compute_loss(model, s, pool.x0[idx], pool.cond[idx], t, eps, model.cfg.objective, cfg.loss, params)
        if not np.isfinite(loss.item()):
            raise FloatingPointError(f"non-finite training loss at step {step}")
        grads = nx.reverse_gradients(g, loss)
        params, state = nx.adam_step(params, {k: grads[p] for k, p in params.items() if p in grads}, state)
        losses.append(loss.item())
        if log is not None:
            log(step, losses[-1])
        if out is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0 and step < cfg.steps:
            model.params = params
            model.save(out / "model.acdt")
    model.params = params
    if out is not None:
        model.save(out / "model.acdt")
        write_loss_csv(out / "loss.csv", losses)
    return model, losses


def write_loss_csv(path, losses) -> None:
    rows = ["step,loss"] + [f"{i},{v:.9g}" for i, v in enumerate(losses, 1)]
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def smoothed(losses, window: int = 50) -> np.ndarray:
    """Trailing moving average used by the overfit smoke checks."""
    a = np.asarray(losses, dtype=np.float64)
    w = max(1, min(window, a.size))
    c = np.cumsum(np.concatenate([[0.0], a]))
    return (c[w:] - c[:-w]) / w
