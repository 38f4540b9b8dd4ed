import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from acdmsr.denoiser import AnalyticGaussianDenoiser, analytic_denoise
from acdmsr.forward import to_unit
from acdmsr.harness import bench, config, data, oracle
from acdmsr.harness.cli import EXIT_CHECK, EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from acdmsr.imaging import read_image, synth_texture, write_image
from acdmsr.samplers import initial_noise
from acdmsr.schedule import make_linear_schedule

TINY = """
seed = 3
model.base_width = 4
model.time_dim = 8
train.steps = 4
train.batch = 2
train.patch = 16
train.pool = 8
data.synth_train = 2
data.synth_heldout = 2
data.synth_size = 32
cond.width = 4
cond.steps = 3
sampler.steps = 3
"""


@pytest.fixture
def tiny_cfg(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(TINY)
    return p


# --- config ---------------------------------------------------------------


def test_config_parse_and_resolve():
    cfg = config.resolve(config.parse_kv_text("seed = 4  # comment\nsampler.clip_x0 = off\ntrain.lr=3e-4\n"))
    assert cfg["seed"] == 4 and cfg["sampler.clip_x0"] is False and cfg["train.lr"] == 3e-4
    assert cfg["train.batch"] == 16


@pytest.mark.parametrize("text", ["nokey", "seed=1\nseed=2", "=3", "train.lrr=1", "seed=abc", "sampler.clip_x0=maybe"])
def test_config_rejects(text):
    with pytest.raises(config.ConfigError):
        config.resolve(config.parse_kv_text(text))


def test_snapshot_round_trip(tmp_path):
    cfg = config.resolve({"seed": "9"})
    config.write_snapshot(cfg, tmp_path)
    assert config.load_config(tmp_path / "resolved_config.txt") == cfg


# --- degrade --------------------------------------------------------------


def _hr_dir(root, sizes):
    (root / "hr").mkdir(parents=True)
    for i, s in enumerate(sizes):
        write_image(synth_texture(s, s, i), root / "hr" / f"im{i}.ppm")


def test_degrade_counts_and_idempotence(tmp_path):
    _hr_dir(tmp_path, [32] * 10)
    assert main(["degrade", "--root", str(tmp_path), "--scale", "4"]) == EXIT_OK
    out = sorted((tmp_path / "lrX4").iterdir())
    assert len(out) == 10 and all(read_image(p).pixels.shape == (3, 8, 8) for p in out)
    first = [p.read_bytes() for p in out]
    assert main(["degrade", "--root", str(tmp_path), "--scale", "4"]) == EXIT_OK
    assert [p.read_bytes() for p in sorted((tmp_path / "lrX4").iterdir())] == first


def test_degrade_partial_failure(tmp_path, capsys):
    _hr_dir(tmp_path, [24, 32, 48])
    assert main(["degrade", "--root", str(tmp_path), "--scale", "3"]) == EXIT_DATA
    assert "im1.ppm" in capsys.readouterr().err
    assert sorted(p.name for p in (tmp_path / "lrX3").iterdir()) == ["im0.ppm", "im2.ppm"]


def test_degrade_missing_root(tmp_path):
    assert main(["degrade", "--root", str(tmp_path / "nope"), "--scale", "4"]) == EXIT_DATA


# --- usage ----------------------------------------------------------------


def test_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == EXIT_USAGE
    bad = tmp_path / "bad.cfg"
    bad.write_text("model.widht = 3\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert main(["bench-steps", "--analytic", "--samplers", "euler"]) == EXIT_USAGE
    assert main(["oracle-check", "--only", "nonsense"]) == EXIT_USAGE
    assert main(["sample", "--in", str(tmp_path), "--out", str(tmp_path / "o")]) == EXIT_USAGE


# --- train / sample -------------------------------------------------------


def test_train_smoke_and_determinism(tmp_path, tiny_cfg):
    for name in ("a", "b"):
        assert main(["train", "--config", str(tiny_cfg), "--out", str(tmp_path / name)]) == EXIT_OK
    for f in ("model.acdt", "loss.csv", "resolved_config.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert (tmp_path / "a" / "loss.csv").read_text().splitlines()[0] == "step,loss"


def _lr_dir(root, n=3):
    root.mkdir(parents=True)
    for i in range(n):
        write_image(synth_texture(4, 4, 50 + i), root / f"lr{i}.ppm")
    return root


def test_sample_analytic_single_step(tmp_path):
    inp = _lr_dir(tmp_path / "in")
    out = tmp_path / "out"
    args = ["sample", "--analytic", "--in", str(inp), "--out", str(out), "--steps", "1",
            "--sampler", "first_order", "--seed", "5"]
    assert main(args) == EXIT_OK
    s = make_linear_schedule()
    d = AnalyticGaussianDenoiser(s, oracle.MU, oracle.S2)
    for i in range(3):
        x_T = initial_noise((3, 16, 16), 5, i)
        want = np.clip(to_unit(np.clip(analytic_denoise(d, s, x_T, s.T), -1, 1)), 0, 1)
        got = read_image(out / f"lr{i}.ppm").pixels
        assert np.max(np.abs(got.astype(int) - np.floor(want * 255 + 0.5))) <= 1
    assert (out / "resolved_config.txt").exists()


def test_sample_dump_frames(tmp_path):
    inp = _lr_dir(tmp_path / "in", 1)
    frames = tmp_path / "frames"
    assert main(["sample", "--analytic", "--in", str(inp), "--out", str(tmp_path / "o"), "--steps", "4",
                 "--dump-frames", str(frames)]) == EXIT_OK
    assert len(list(frames.iterdir())) == 4


def _cli(args, threads):
    env = {**os.environ, "ACDMSR_THREADS": str(threads)}
    r = subprocess.run([sys.executable, "-m", "acdmsr.harness.cli", *args], env=env, capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    return r


@pytest.mark.parametrize("sampler", ["ancestral", "second_order"])
def test_sample_deterministic_across_threads(tmp_path, sampler):
    inp = _lr_dir(tmp_path / "in")
    outs = []
    for i, threads in enumerate((1, 4, 1)):
        out = tmp_path / f"o{i}"
        _cli(["sample", "--analytic", "--in", str(inp), "--out", str(out), "--steps", "6", "--sampler", sampler], threads)
        outs.append([p.read_bytes() for p in sorted(out.glob("*.ppm"))])
    assert outs[0] == outs[1] == outs[2]


def test_chunked_sampling_independent_of_threads(monkeypatch):
    s = make_linear_schedule()
    d = AnalyticGaussianDenoiser(s, 0.0, 0.25)
    cond = np.zeros((19, 3, 4, 4), np.float32)
    from acdmsr.samplers import SamplerSpec

    spec = SamplerSpec("ancestral", 5, seed=1)
    monkeypatch.setenv("ACDMSR_THREADS", "1")
    a = bench.sample_images(s, d, spec, cond)
    monkeypatch.setenv("ACDMSR_THREADS", "4")
    b = bench.sample_images(s, d, spec, cond)
    assert a.tobytes() == b.tobytes()


# --- bench / oracle / ablate ----------------------------------------------


def test_bench_steps_rows(tmp_path, capsys):
    out = tmp_path / "b" / "bench.csv"
    assert main(["bench-steps", "--analytic", "--chains", "200", "--out", str(out)]) == EXIT_OK
    lines = out.read_text().splitlines()
    assert lines[0].split(",") == list(bench.BENCH_COLUMNS)
    assert len(lines) == 13
    kinds = [l.split(",")[0] for l in lines[1:]]
    assert kinds == sorted(kinds, key=["ancestral", "first_order", "second_order"].index)
    assert (out.parent / "resolved_config.txt").exists()


def test_bench_analytic_direction():
    rows = bench.bench_steps_analytic([40, 1000], ["ancestral", "first_order", "second_order"], 1000, 0)
    at = {(r["sampler"], r["N"]): r for r in rows}
    assert at["ancestral", 40]["psnr"] < at["first_order", 40]["psnr"]
    assert abs(at["second_order", 40]["psnr_gt"] - at["second_order", 1000]["psnr_gt"]) <= 0.1


def test_oracle_check_cli(capsys):
    assert main(["oracle-check", "--only", "schedule,convergence-order,metrics"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "first_order=" in out and "second_order=" in out and "3/3 checks passed" in out


def test_oracle_canary(capsys):
    assert main(["oracle-check", "--only", "convergence-order", "--flip-lambda"]) == EXIT_CHECK
    assert "FAIL convergence-order" in capsys.readouterr().out


def test_ablate_condition_rows(tmp_path, tiny_cfg, capsys):
    assert main(["train-conditioner", "--config", str(tiny_cfg), "--out", str(tmp_path / "c")]) == EXIT_OK
    cfg = tiny_cfg.read_text() + f"cond.checkpoint = {tmp_path / 'c' / 'conditioner.acdt'}\n"
    tiny_cfg.write_text(cfg)
    assert main(["train", "--config", str(tiny_cfg), "--out", str(tmp_path / "m")]) == EXIT_OK
    capsys.readouterr()
    out = tmp_path / "ab" / "cond.csv"
    assert main(["ablate", "--mode", "condition", "--config", str(tiny_cfg), "--checkpoint",
                 str(tmp_path / "m" / "model.acdt"), "--out", str(out)]) == EXIT_OK
    variants = [l.split(",")[0] for l in out.read_text().splitlines()[1:]]
    assert variants == ["condition=nearest", "condition=bicubic", "condition=learned"]
    assert "ordering raw-LR <= bicubic <= learned" in capsys.readouterr().out


def test_ablate_objective_rows(tmp_path, tiny_cfg, capsys):
    assert main(["ablate", "--mode", "objective", "--config", str(tiny_cfg)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "objective=image" in out and "objective=noise" in out and "reported, not asserted" in out


def test_ablate_condition_needs_checkpoint(tiny_cfg):
    assert main(["ablate", "--mode", "condition", "--config", str(tiny_cfg)]) == EXIT_USAGE


# --- data -----------------------------------------------------------------


def test_hr_patches_round_robin_and_threads(monkeypatch):
    imgs = data.synth_set(3, 32, 0)
    a = data.hr_patches(imgs, 8, 7, seed=2)
    monkeypatch.setenv("ACDMSR_THREADS", "3")
    b = data.hr_patches(imgs, 8, 7, seed=2)
    assert a.shape == (7, 3, 8, 8) and a.tobytes() == b.tobytes()


def test_training_images_from_dir(tmp_path):
    _hr_dir(tmp_path, [16, 16])
    cfg = config.resolve({"data.root": str(tmp_path)})
    assert [s.ident for s in data.training_images(cfg)] == ["im0", "im1"]
    with pytest.raises(data.DataError):
        data.load_dir(tmp_path / "missing")
