"""Dataset assembly: HR sources, seeded patch pools and the held-out evaluation set."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .._accel import worker_count
from ..conditioner import Conditioner
from ..forward import to_diffusion
from ..imaging import ImageFormatError, degrade, extract_patches, list_images, read_image, synth_texture
from ..trainer import DataError, TrainingPool

SYNTH_TRAIN_BASE = 1_000
SYNTH_HELDOUT_BASE = 900_000


@dataclass(frozen=True)
class Sample:
    ident: str
    hr: np.ndarray  # C x H x W in [0, 1]


def synth_set(count: int, size: int, base: int) -> list[Sample]:
    return [Sample(f"synth{base + i:07d}", synth_texture(size, size, base + i)) for i in range(count)]


def load_dir(directory) -> list[Sample]:
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"image directory {d} does not exist")
    out = []
    for p in list_images(d):
        try:
            out.append(Sample(p.stem, read_image(p).to_float()))
        except ImageFormatError as exc:
            raise DataError(str(exc)) from exc
    if not out:
        raise DataError(f"no images found in {d}")
    return out


def training_images(cfg: dict) -> list[Sample]:
    """``<data.root>/hr`` when a root is configured, else procedural textures."""
    if cfg["data.root"]:
        return load_dir(Path(cfg["data.root"]) / "hr")
    return synth_set(cfg["data.synth_train"], cfg["data.synth_size"], SYNTH_TRAIN_BASE)


def _map(fn, items):
    n = worker_count()
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))  # results in input order


def hr_patches(images: list[Sample], patch: int, count: int, seed: int) -> np.ndarray:
    """``count`` patches spread round-robin over the images, N x C x P x P in [0, 1]."""
    if not images:
        raise DataError("no training images")
    per = [count // len(images) + (1 if i < count % len(images) else 0) for i in range(len(images))]
    jobs = [(i, im, k) for i, (im, k) in enumerate(zip(images, per)) if k > 0]
    chunks = _map(lambda j: extract_patches(j[1].hr, patch, j[2], seed * 1_000_003 + j[0]), jobs)
    return np.stack([p for ch in chunks for p in ch]).astype(np.float32)


def conditions(cond: Conditioner, hr: np.ndarray, scale: int, batch: int = 64) -> np.ndarray:
    """Diffusion-domain conditions for HR patches (degrade, then condition)."""
    starts = list(range(0, hr.shape[0], batch))

    def one(i):
        lr = degrade(hr[i : i + batch], scale)
        return cond(lr)

    return np.concatenate(_map(one, starts)).astype(np.float32)


def build_pool(images: list[Sample], cond: Conditioner, patch: int, count: int, scale: int, seed: int) -> TrainingPool:
    hr = hr_patches(images, patch, count, seed)
    return TrainingPool(to_diffusion(hr), conditions(cond, hr, scale))


def heldout_patches(cfg: dict, patch: int) -> np.ndarray:
    """One seeded patch per held-out image, N x C x P x P in [0, 1]."""
    n = cfg["data.synth_heldout"]
    images = synth_set(n, cfg["data.synth_size"], SYNTH_HELDOUT_BASE)
    return hr_patches(images, patch, len(images), seed=7)
