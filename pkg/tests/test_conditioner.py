import numpy as np
import pytest

from acdmsr.conditioner import (
    CondTrainConfig,
    ConditionError,
    Conditioner,
    ConditionerSpec,
    SRNet,
    make_condition,
    train_conditioner,
)
from acdmsr.forward import to_diffusion, to_unit
from acdmsr.harness import data
from acdmsr.imaging import bicubic_resize, degrade, write_image
from acdmsr.numerics import CheckpointError, ShapeError


def test_bicubic_constant():
    c = make_condition(ConditionerSpec("bicubic", 4), np.full((3, 5, 6), 0.25, np.float32))
    assert c.shape == (3, 20, 24)
    np.testing.assert_allclose(c, -0.5, atol=1e-6)


def test_nearest_is_replication():
    lr = np.arange(12, dtype=np.float32).reshape(3, 2, 2) / 12
    c = make_condition(ConditionerSpec("nearest", 2), lr)
    np.testing.assert_allclose(to_unit(c)[:, ::2, ::2], lr, atol=1e-6)
    np.testing.assert_allclose(to_unit(c)[:, 1::2, 1::2], lr, atol=1e-6)


def test_file_mode_pass_through(tmp_path, rng):
    hr = rng.integers(0, 256, (3, 8, 8)).astype(np.float32) / 255
    write_image(hr, tmp_path / "img7.ppm")
    c = make_condition(ConditionerSpec("file", 4, directory=str(tmp_path)), np.zeros((3, 2, 2), np.float32), "img7")
    np.testing.assert_allclose(c, to_diffusion(hr), atol=1e-6)


def test_file_mode_missing_names_id(tmp_path):
    cond = Conditioner(ConditionerSpec("file", 4, directory=str(tmp_path)))
    with pytest.raises(ConditionError, match="ghost"):
        cond(np.zeros((3, 2, 2), np.float32), "ghost")


def test_file_mode_wrong_size(tmp_path):
    write_image(np.zeros((3, 6, 6)), tmp_path / "a.ppm")
    cond = Conditioner(ConditionerSpec("file", 4, directory=str(tmp_path)))
    with pytest.raises(ConditionError, match="'a'"):
        cond(np.zeros((3, 2, 2), np.float32), "a")


@pytest.mark.parametrize("kw", [dict(mode="swinir"), dict(scale=5), dict(mode="file"), dict(mode="learned")])
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        ConditionerSpec(**kw)


def test_untrained_net_is_near_bicubic(rng):
    net = SRNet(width=8, scale=2, seed=1)
    lr = rng.uniform(size=(3, 6, 6)).astype(np.float32)
    up = to_diffusion(bicubic_resize(lr, 12, 12))
    assert np.max(np.abs(net.apply(lr) - up)) < 0.5


def test_overfit_one_patch(rng):
    hr = data.synth_set(1, 16, 5)[0].hr[None]
    _, losses = train_conditioner(hr, CondTrainConfig(scale=2, width=8, steps=200, lr=3e-3, batch=1))
    assert losses[-1] < 0.25 * losses[0]


def test_zero_lr_keeps_params():
    hr = data.synth_set(2, 16, 5)
    hr = np.stack([s.hr for s in hr])
    net, _ = train_conditioner(hr, CondTrainConfig(scale=2, width=4, steps=3, lr=0.0))
    fresh = SRNet(4, 2, 3, 0)
    for k, v in fresh.params.items():
        np.testing.assert_array_equal(net.params[k].data, v.data)


def test_training_deterministic(tmp_path):
    hr = np.stack([s.hr for s in data.synth_set(3, 16, 5)])
    for name in ("a", "b"):
        net, _ = train_conditioner(hr, CondTrainConfig(scale=2, width=4, steps=5, seed=3))
        net.save(tmp_path / f"{name}.acdt")
    assert (tmp_path / "a.acdt").read_bytes() == (tmp_path / "b.acdt").read_bytes()


def test_empty_dataset():
    with pytest.raises(ConditionError):
        train_conditioner(np.zeros((0, 3, 16, 16)), CondTrainConfig())
    with pytest.raises(ShapeError):
        train_conditioner(np.zeros((2, 3, 18, 18)), CondTrainConfig(scale=4))


def test_learned_beats_bicubic_on_heldout(tmp_path):
    hr = data.hr_patches(data.synth_set(16, 64, data.SYNTH_TRAIN_BASE), 16, 512, seed=0)
    net, losses = train_conditioner(hr, CondTrainConfig(scale=2, width=16, steps=300, lr=2e-3))
    net.save(tmp_path / "sr.acdt")
    held = np.stack([s.hr for s in data.synth_set(16, 16, data.SYNTH_HELDOUT_BASE)])
    lr = degrade(held, 2)
    target = to_diffusion(held)
    learned = Conditioner(ConditionerSpec("learned", 2, checkpoint=str(tmp_path / "sr.acdt")))(lr)
    bic = Conditioner(ConditionerSpec("bicubic", 2))(lr)
    assert np.mean((learned - target) ** 2) < np.mean((bic - target) ** 2)


def test_checkpoint_round_trip_and_scale_check(tmp_path, rng):
    net = SRNet(width=4, scale=2, seed=2)
    net.save(tmp_path / "n.acdt")
    back = SRNet.load(tmp_path / "n.acdt")
    lr = rng.uniform(size=(3, 4, 4)).astype(np.float32)
    assert back.apply(lr).tobytes() == net.apply(lr).tobytes()
    with pytest.raises(ConditionError):
        Conditioner(ConditionerSpec("learned", 4, checkpoint=str(tmp_path / "n.acdt")))
    (tmp_path / "n.acdt.arch").unlink()
    with pytest.raises(CheckpointError):
        SRNet.load(tmp_path / "n.acdt")


def test_batched_matches_single(rng):
    net = SRNet(width=4, scale=2, seed=2)
    lr = rng.uniform(size=(2, 3, 4, 4)).astype(np.float32)
    np.testing.assert_allclose(net.apply(lr)[1], net.apply(lr[1]), atol=1e-6)
