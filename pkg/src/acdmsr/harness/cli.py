"""``acdmsr`` command line.

Exit codes: 0 success, 1 usage error, 2 data error, 3 check failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from ..conditioner import CondTrainConfig, ConditionError, Conditioner, ConditionerSpec, train_conditioner
from ..denoiser import AnalyticGaussianDenoiser, CondUNet, UNetConfig
from ..forward import to_unit
from ..imaging import ImageFormatError, degrade, list_images, read_image, write_image
from ..numerics import CheckpointError, ShapeError
from ..samplers import KINDS, SamplerSpec
from ..schedule import ScheduleError, schedule_from_config
from ..trainer import DataError, TrainConfig, train, write_loss_csv
from . import bench, data, oracle
from .config import load_config, resolve, write_snapshot

log = logging.getLogger("acdmsr")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- config -> objects ----------------------------------------------------


def _config(args) -> dict:
    cfg = load_config(args.config) if getattr(args, "config", None) else resolve({})
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    return cfg


def unet_config(cfg: dict) -> UNetConfig:
    return UNetConfig.from_mapping(cfg)


def cond_spec(cfg: dict, mode: str | None = None) -> ConditionerSpec:
    return ConditionerSpec(mode or cfg["cond.mode"], cfg["data.scale"], cfg["cond.dir"], cfg["cond.checkpoint"])


def sampler_spec(cfg: dict, args=None) -> SamplerSpec:
    kind = getattr(args, "sampler", None) or cfg["sampler.kind"]
    steps = getattr(args, "steps", None) or cfg["sampler.steps"]
    seed = getattr(args, "seed", None)
    return SamplerSpec(kind, steps, spacing=cfg["sampler.spacing"], clip_x0=cfg["sampler.clip_x0"],
                       seed=cfg["sampler.seed"] if seed is None else seed)


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(cfg["train.steps"], cfg["train.batch"], cfg["train.lr"], cfg["train.loss"], cfg["seed"],
                       cfg["train.checkpoint_every"], unet_config(cfg))


def training_pool(cfg: dict, conditioner: Conditioner):
    images = data.training_images(cfg)
    return data.build_pool(images, conditioner, cfg["train.patch"], cfg["train.pool"], cfg["data.scale"], cfg["seed"])


# --- commands -------------------------------------------------------------


def cmd_degrade(args) -> int:
    root = Path(args.root)
    hr_dir = root / "hr"
    if not hr_dir.is_dir():
        raise DataError(f"{hr_dir} does not exist")
    out = root / f"lrX{args.scale}"
    out.mkdir(exist_ok=True)
    failed = 0
    files = list_images(hr_dir)
    for p in files:
        try:
            lr = degrade(read_image(p).to_float(), args.scale)
        except (ImageFormatError, ValueError) as exc:
            failed += 1
            print(f"error: {p.name}: {exc}", file=sys.stderr)
            continue
        write_image(lr, out / f"{p.stem}.ppm" if lr.shape[0] == 3 else out / f"{p.stem}.pgm")
    print(f"degraded {len(files) - failed} of {len(files)} images into {out}")
    return EXIT_DATA if failed else EXIT_OK


def cmd_synth(args) -> int:
    out = Path(args.root) / "hr"
    out.mkdir(parents=True, exist_ok=True)
    for smp in data.synth_set(args.count, args.size, args.base):
        write_image(smp.hr, out / f"{smp.ident}.ppm")
    print(f"wrote {args.count} textures to {out}")
    return EXIT_OK


def cmd_train_conditioner(args) -> int:
    cfg = _config(args)
    out = Path(args.out or cfg["out.dir"])
    write_snapshot(cfg, out)
    images = data.training_images(cfg)
    hr = data.hr_patches(images, cfg["train.patch"], cfg["train.pool"], cfg["seed"])
    tc = CondTrainConfig(cfg["data.scale"], cfg["cond.width"], cfg["cond.steps"], cfg["cond.lr"], cfg["cond.batch"],
                         cfg["seed"])
    net, losses = train_conditioner(hr, tc)
    net.save(out / "conditioner.acdt")
    write_loss_csv(out / "conditioner_loss.csv", losses)
    print(f"conditioner loss {losses[0]:.5f} -> {losses[-1]:.5f}; wrote {out / 'conditioner.acdt'}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    out = Path(args.out or cfg["out.dir"])
    write_snapshot(cfg, out)
    pool = training_pool(cfg, Conditioner(cond_spec(cfg)))
    model = CondUNet(unet_config(cfg), schedule_from_config(cfg))
    tc = train_config(cfg)
    every = max(1, cfg["train.log_every"])

    def progress(step, loss):
        if step % every == 0 or step == tc.steps:
            log.info("step %d loss %.6f", step, loss)

    log.info("training %d parameters for %d steps", model.n_params, tc.steps)
    train(model, pool, tc, out, progress)
    print(f"wrote {out / 'model.acdt'} and {out / 'loss.csv'}")
    return EXIT_OK


def _load_model(args, cfg):
    if getattr(args, "analytic", False):
        return AnalyticGaussianDenoiser(schedule_from_config(cfg), args.mu, args.s2)
    if not args.checkpoint:
        raise UsageError("--checkpoint is required unless --analytic is given")
    return CondUNet.load(args.checkpoint)


def cmd_sample(args) -> int:
    cfg = _config(args)
    model = _load_model(args, cfg)
    s = model.schedule
    spec = sampler_spec(cfg, args)
    cond = Conditioner(cond_spec(cfg))
    out = Path(args.out)
    write_snapshot(cfg, out)
    files = list_images(Path(args.inp)) if Path(args.inp).is_dir() else []
    if not files:
        raise DataError(f"no LR images in {args.inp}")
    frames = Path(args.dump_frames) if args.dump_frames else None
    for i, p in enumerate(files):
        lr = read_image(p).to_float()
        c = cond(lr, p.stem)[None]
        on_step = None
        if frames is not None:
            frames.mkdir(parents=True, exist_ok=True)

            def on_step(idx, k, t, x, stem=p.stem):
                write_image(np.clip(to_unit(x[0]), 0, 1), frames / f"{stem}_{k:04d}.ppm")

        img = bench.sample_images(s, model, spec, c, on_step=on_step, indices=[i])[0]
        write_image(img, out / f"{p.stem}.ppm")
    print(f"wrote {len(files)} images to {out}")
    return EXIT_OK


def _csv_list(text, conv=str):
    return [conv(x) for x in text.split(",") if x.strip()]


def cmd_bench_steps(args) -> int:
    cfg = _config(args)
    steps = _csv_list(args.steps_list, int)
    kinds = _csv_list(args.samplers)
    bad = [k for k in kinds if k not in KINDS]
    if bad or not steps or any(n < 1 for n in steps):
        raise UsageError(f"bad --samplers {bad} or --steps-list {args.steps_list!r}")
    seed = cfg["sampler.seed"] if args.seed is None else args.seed
    if args.analytic:
        rows = bench.bench_steps_analytic(steps, kinds, args.chains, seed)
    else:
        model = _load_model(args, cfg)
        hr = data.heldout_patches(cfg, cfg["train.patch"])
        cond = Conditioner(cond_spec(cfg))(degrade(hr, cfg["data.scale"]))
        rows = bench.bench_steps(model.schedule, model, hr, cond, steps, kinds, seed, cfg["sampler.spacing"])
    text = bench.to_csv(rows)
    if args.out:
        out = Path(args.out)
        write_snapshot(cfg, out.parent)
        out.write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    only = _csv_list(args.only) if args.only else None
    results = oracle.run_suite(only, flip_lambda=args.flip_lambda)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name:<22} {r.seconds:6.1f}s  {r.detail}")
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_CHECK if failed else EXIT_OK


def ablate_conditions(model, cfg, hr, modes=("nearest", "bicubic", "learned"), spec=None) -> list[dict]:
    lr = degrade(hr, cfg["data.scale"])
    spec = spec or sampler_spec(cfg)
    rows = []
    for mode in modes:
        cond = Conditioner(cond_spec(cfg, mode))(lr)
        out = bench.sample_images(model.schedule, model, spec, cond)
        p, q = bench.image_scores(out, hr)
        rows.append({"variant": f"condition={mode}", "psnr": p, "ssim": q})
    return rows


def cmd_ablate(args) -> int:
    cfg = _config(args)
    hr = data.heldout_patches(cfg, cfg["train.patch"])
    if args.mode == "condition":
        if not args.checkpoint:
            raise UsageError("condition mode needs --checkpoint of a trained denoiser")
        rows = ablate_conditions(CondUNet.load(args.checkpoint), cfg, hr)
        ps = [r["psnr"] for r in rows]
        holds = all(a <= b + 0.05 for a, b in zip(ps, ps[1:]))
        note = f"ordering raw-LR <= bicubic <= learned: {'holds' if holds else 'violated'}"
    else:
        rows = []
        cond = Conditioner(cond_spec(cfg))
        pool = training_pool(cfg, cond)
        lr = degrade(hr, cfg["data.scale"])
        c = cond(lr)
        for objective in ("image", "noise"):
            cfg_o = {**cfg, "model.objective": objective}
            model = CondUNet(unet_config(cfg_o), schedule_from_config(cfg_o))
            train(model, pool, train_config(cfg_o))
            out = bench.sample_images(model.schedule, model, sampler_spec(cfg), c)
            p, q = bench.image_scores(out, hr)
            rows.append({"variant": f"objective={objective}", "psnr": p, "ssim": q})
        note = f"image - noise PSNR: {rows[0]['psnr'] - rows[1]['psnr']:+.3f} dB (reported, not asserted)"
    text = bench.to_csv(rows, bench.ABLATE_COLUMNS)
    if args.out:
        out = Path(args.out)
        write_snapshot(cfg, out.parent)
        out.write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    print(f"# {note}")
    return EXIT_OK


# --- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="acdmsr", description="Desk-scale conditional diffusion super-resolution.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("degrade", help="bicubic-downsample <root>/hr into <root>/lrX<scale>")
    p.add_argument("--root", required=True)
    p.add_argument("--scale", type=int, required=True)
    p.set_defaults(fn=cmd_degrade)

    p = sub.add_parser("synth", help="write procedural HR textures to <root>/hr")
    p.add_argument("--root", required=True)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--size", type=int, default=96)
    p.add_argument("--base", type=int, default=data.SYNTH_TRAIN_BASE, help="seed of the first texture")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train-conditioner", help="train the small learned SR conditioner")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_train_conditioner)

    p = sub.add_parser("train", help="train the conditional denoiser")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_train)

    def model_flags(p):
        p.add_argument("--checkpoint")
        p.add_argument("--analytic", action="store_true", help="use the analytic Gaussian denoiser")
        p.add_argument("--mu", type=float, default=oracle.MU)
        p.add_argument("--s2", type=float, default=oracle.S2)

    p = sub.add_parser("sample", help="super-resolve a directory of LR images")
    p.add_argument("--config")
    model_flags(p)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sampler", choices=KINDS)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--dump-frames", help="directory for per-step PPM frames")
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("bench-steps", help="quality versus step count")
    p.add_argument("--config")
    model_flags(p)
    p.add_argument("--steps-list", default="5,10,20,40")
    p.add_argument("--samplers", default=",".join(KINDS))
    p.add_argument("--chains", type=int, default=1000)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_bench_steps)

    p = sub.add_parser("oracle-check", help="run the analytic-oracle validation suite")
    p.add_argument("--only", help="comma-separated check names")
    p.add_argument("--flip-lambda", action="store_true", help="sensitivity canary: invert the lambda sign")
    p.set_defaults(fn=cmd_oracle_check)

    p = sub.add_parser("ablate", help="condition or objective ablation")
    p.add_argument("--config")
    p.add_argument("--checkpoint")
    p.add_argument("--mode", choices=("condition", "objective"), required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_ablate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        with threadpool_limits(limits=1, user_api="blas"):  # one BLAS thread per worker keeps results reproducible
            return args.fn(args)
    except (DataError, ImageFormatError, ConditionError, CheckpointError, ShapeError, ScheduleError,
            FileNotFoundError) as exc:
        print(f"acdmsr: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (UsageError, ValueError) as exc:  # includes ConfigError and invalid spec values
        print(f"acdmsr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
