"""Quality versus step count, and condition / objective ablations."""

from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .._accel import worker_count
from ..metrics import psnr, ssim
from ..samplers import KINDS, SamplerSpec, sample
from . import oracle

BENCH_COLUMNS = ("sampler", "N", "psnr", "ssim", "wall_ms", "psnr_gt", "lpips", "niqe")
CHUNK = 8  # images per batch; fixed so results do not depend on the worker count


def sample_images(s, model, spec: SamplerSpec, cond: np.ndarray, on_step=None, indices=None) -> np.ndarray:
    """Sample every condition in fixed-size chunks, spread over ``ACDMSR_THREADS`` workers.

    Image ``i`` uses RNG key ``(seed, indices[i])`` (default ``i``) and always
    lands in the same chunk, so the output does not depend on how many
    workers run.
    """
    keys = list(range(cond.shape[0])) if indices is None else list(indices)
    starts = list(range(0, cond.shape[0], CHUNK))

    def one(a):
        pos = list(range(a, min(a + CHUNK, cond.shape[0])))
        ids = [keys[i] for i in pos]
        cb = None if on_step is None else (lambda k, t, x: on_step(ids, k, t, x))
        return sample(s, model, spec, cond[pos], indices=ids, on_step=cb)

    n = worker_count()
    if n == 1 or len(starts) == 1:
        parts = [one(a) for a in starts]
    else:
        with ThreadPoolExecutor(max_workers=n) as ex:
            parts = list(ex.map(one, starts))
    return np.concatenate(parts)


def image_scores(out: np.ndarray, hr: np.ndarray) -> tuple[float, float]:
    return (float(np.mean([psnr(o, h) for o, h in zip(out, hr)])),
            float(np.mean([ssim(o, h) for o, h in zip(out, hr)])))


def _sorted(rows: list[dict]) -> list[dict]:
    order = {k: i for i, k in enumerate(KINDS)}
    return sorted(rows, key=lambda r: (order.get(r["sampler"], len(order)), r["sampler"], int(r["N"])))


def bench_steps(s, model, hr: np.ndarray, cond: np.ndarray, steps_list, kinds, seed: int = 0,
                spacing: str = "t") -> list[dict]:
    rows = []
    for kind in kinds:
        for n in steps_list:
            t0 = time.perf_counter()
            out = sample_images(s, model, SamplerSpec(kind, n, spacing=spacing, seed=seed), cond)
            ms = (time.perf_counter() - t0) * 1e3
            p, q = image_scores(out, hr)
            rows.append({"sampler": kind, "N": n, "psnr": p, "ssim": q, "wall_ms": ms, "psnr_gt": ""})
    return _sorted(rows)


def bench_steps_analytic(steps_list, kinds, chains: int = 1000, seed: int = 0) -> list[dict]:
    """Analytic Gaussian problem: ``psnr`` is against the dense deterministic
    reference from the same x_T, ``psnr_gt`` against the data draws behind x_T."""
    p = oracle.gaussian_problem(chains, seed=seed)
    ref = oracle.reference(p)
    rows = []
    for kind in kinds:
        for n in steps_list:
            t0 = time.perf_counter()
            x = oracle.run(p, kind, n, seed=seed)
            ms = (time.perf_counter() - t0) * 1e3
            rows.append({"sampler": kind, "N": n, "psnr": oracle.psnr_db(x, ref), "ssim": "", "wall_ms": ms,
                         "psnr_gt": oracle.psnr_db(x, p.x0)})
    return _sorted(rows)


def _fmt(v) -> str:
    if isinstance(v, float):
        return "inf" if v == float("inf") else f"{v:.6f}"
    return str(v)


def to_csv(rows: list[dict], columns=BENCH_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in columns])
    return buf.getvalue()


ABLATE_COLUMNS = ("variant", "psnr", "ssim", "lpips", "niqe")
