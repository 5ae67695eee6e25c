import csv
import math

import numpy as np
import pytest
import torch

from ptsr.data import PairSampler
from ptsr.training import (CheckpointError, NumericError, fit, init_state, load_checkpoint,
                           load_generator, plateau_schedule, read_checkpoint, save_checkpoint,
                           train_step, training_target, validation_loss)


def batches(n, size=16, scale=2, seed=0):
    g = torch.Generator().manual_seed(seed)
    out = []
    for _ in range(n):
        hr = torch.rand(2, 3, size * scale, size * scale, generator=g)
        lr = torch.nn.functional.interpolate(hr, scale_factor=1 / scale, mode="bicubic",
                                             antialias=True).clamp(0, 1)
        out.append((lr, hr))
    return out


def params(module):
    return {n: p.detach().clone() for n, p in module.named_parameters()}


def same(a, b):
    return all(torch.equal(a[k], b[k]) for k in a)


def test_step_updates_both_models(tiny_config):
    st = init_state(tiny_config)
    g0, d0 = params(st.generator), params(st.discriminator)
    row = train_step(st, *batches(1)[0])
    assert set(row) == {"step", "L_D", "L_G", "L_R", "lr"} and row["step"] == 1
    assert not same(g0, params(st.generator))
    assert not same(d0, params(st.discriminator))
    assert st.opt_d.param_groups[0]["betas"] == (0.0, 0.999)
    assert st.opt_g.param_groups[0]["eps"] == 1e-8


def test_gradient_isolation(tiny_config):
    st = init_state(tiny_config)
    seen = {}
    d_step, g_step = st.opt_d.step, st.opt_g.step

    def on_d_step(*a, **k):
        seen["g_at_d"] = [p.grad for p in st.generator.parameters()]
        seen["d_grads"] = [p.grad.clone() for p in st.discriminator.parameters()]
        return d_step(*a, **k)

    def on_g_step(*a, **k):
        seen["d_at_g"] = [p.grad for p in st.discriminator.parameters()]
        seen["g_grads"] = [p.grad for p in st.generator.parameters()]
        return g_step(*a, **k)

    st.opt_d.step, st.opt_g.step = on_d_step, on_g_step
    train_step(st, *batches(1)[0])
    # the D update saw no generator gradient; the G backward left D gradients untouched
    assert all(g is None for g in seen["g_at_d"])
    assert all(torch.equal(a, b) for a, b in zip(seen["d_grads"], seen["d_at_g"]))
    assert any(g is not None and g.abs().sum() > 0 for g in seen["g_grads"])
    assert all(p.requires_grad for p in st.discriminator.parameters())


def test_pure_reconstruction_descends(tiny_config):
    cfg = tiny_config.apply_overrides(["loss.w_adv=0", "loss.w_rec=1", "train.batch_size=1"])
    st = init_state(cfg)
    lr, hr = batches(1)[0]
    lr, hr = lr[:1], hr[:1]
    losses = [train_step(st, lr, hr)["L_R"] for _ in range(100)]
    assert np.mean(losses[-10:]) < np.mean(losses[:10])
    assert losses[-1] < losses[0]


def test_determinism(tiny_config):
    runs = []
    for _ in range(2):
        st = init_state(tiny_config)
        for lr, hr in batches(3):
            train_step(st, lr, hr)
        runs.append((params(st.generator), params(st.discriminator)))
    assert same(runs[0][0], runs[1][0]) and same(runs[0][1], runs[1][1])


def test_nonfinite_loss_aborts(tiny_config, tmp_path):
    st = init_state(tiny_config)
    lr, hr = batches(1)[0]
    hr[0, 0, 0, 0] = float("nan")
    with pytest.raises(NumericError, match="batch b7"):
        train_step(st, lr, hr, batch_id="b7")


def test_fit_dumps_offending_batch(tiny_config, tmp_path):
    class BadSampler:
        def batch(self, n):
            lr, hr = batches(1)[0]
            return lr, hr * float("nan")

    st = init_state(tiny_config.apply_overrides(["train.steps_per_epoch=1"]))
    with pytest.raises(NumericError):
        fit(st, BadSampler(), batches(1), tmp_path, max_epochs=1)
    dump = torch.load(tmp_path / "nonfinite_batch.pt")
    assert dump["batch_id"] == "epoch0-step0"


def make_state(**over):
    from ptsr.config import Config
    cfg = Config().apply_overrides([f"{k}={v}" for k, v in over.items()])
    return init_state(cfg)


def test_plateau_trigger_epochs():
    st = make_state(**{"model.depth": 1, "disc.depth": 1, "train.crop_lr": 16})
    lrs = []
    for _ in range(70):
        plateau_schedule(st, 1.0)
        lrs.append(st.lr)
    # lrs[e] is the rate after epoch e (0-indexed); epoch 0 improves on +inf
    assert lrs[29] == 2e-4 and math.isclose(lrs[30], 4e-5, rel_tol=1e-12)
    assert math.isclose(lrs[59], 4e-5, rel_tol=1e-12) and math.isclose(lrs[60], 8e-6, rel_tol=1e-12)
    assert st.triggers == 2 and st.epoch == 70
    assert all(g["lr"] == st.lr for g in st.opt_g.param_groups + st.opt_d.param_groups)


def test_plateau_improvement_resets():
    st = make_state(**{"model.depth": 1, "disc.depth": 1, "train.crop_lr": 16})
    plateau_schedule(st, 1.0)
    for _ in range(29):
        plateau_schedule(st, 1.0)
    plateau_schedule(st, 0.5)  # improves on the 30th bad-epoch slot
    assert st.bad_epochs == 0 and st.lr == 2e-4
    plateau_schedule(st, 0.5 - 1e-7)  # within tolerance, not an improvement
    assert st.bad_epochs == 1 and st.best_val == 0.5


def test_validation_loss(tiny_config):
    st = init_state(tiny_config)
    v = validation_loss(st, batches(2))
    assert v > 0 and math.isfinite(v)
    assert st.generator.training


def test_checkpoint_roundtrip_bytes(tiny_config, tmp_path):
    st = init_state(tiny_config, "model.depth = 1\n")
    for lr, hr in batches(2):
        train_step(st, lr, hr)
    plateau_schedule(st, 0.3)
    save_checkpoint(st, tmp_path / "a.ckpt")
    st2 = load_checkpoint(tmp_path / "a.ckpt")
    save_checkpoint(st2, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert (st2.step, st2.epoch, st2.best_val, st2.config_text) == (2, 1, 0.3, "model.depth = 1\n")
    header, tensors = read_checkpoint(tmp_path / "a.ckpt")
    assert header["format_version"] == 1 and header["config_hash"] == tiny_config.arch_hash()
    assert {e["name"] for e in header["tensors"]} == set(tensors)
    assert not list(tmp_path.glob("*.tmp"))


def test_checkpoint_depth_mismatch(tiny_config, tmp_path):
    save_checkpoint(init_state(tiny_config), tmp_path / "a.ckpt")
    deeper = tiny_config.with_value("model.depth", 2)
    with pytest.raises(CheckpointError, match="model.depth.*shape mismatch|shape mismatch"):
        load_checkpoint(tmp_path / "a.ckpt", deeper)


def test_checkpoint_bad_files(tmp_path, tiny_config):
    (tmp_path / "junk.ckpt").write_bytes(b"hello")
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        read_checkpoint(tmp_path / "junk.ckpt")
    save_checkpoint(init_state(tiny_config), tmp_path / "a.ckpt")
    raw = bytearray((tmp_path / "a.ckpt").read_bytes())
    raw[8] = 9  # version field
    (tmp_path / "v.ckpt").write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="version 9"):
        read_checkpoint(tmp_path / "v.ckpt")


def test_resume_matches_uninterrupted(tiny_config, tmp_path):
    data = batches(10, seed=4)
    ref = init_state(tiny_config)
    for lr, hr in data:
        train_step(ref, lr, hr)
    st = init_state(tiny_config)
    for lr, hr in data[:5]:
        train_step(st, lr, hr)
    save_checkpoint(st, tmp_path / "mid.ckpt")
    del st
    st = load_checkpoint(tmp_path / "mid.ckpt")
    for lr, hr in data[5:]:
        train_step(st, lr, hr)
    assert same(params(ref.generator), params(st.generator))
    assert same(params(ref.discriminator), params(st.discriminator))


def test_fit_outputs_and_resume(tiny_config, tmp_path):
    cfg = tiny_config.apply_overrides(["train.steps_per_epoch=2", "train.checkpoint_every=1"])
    images = [torch.rand(3, 48, 48, generator=torch.Generator().manual_seed(i)) for i in range(2)]

    def run(state, epochs, out):
        sampler = PairSampler(images, 2, 16, state.rng)
        return fit(state, sampler, batches(1), out, max_epochs=epochs)

    full = init_state(cfg)
    run(full, 3, tmp_path / "full")
    part = init_state(cfg)
    run(part, 2, tmp_path / "part")
    resumed = load_checkpoint(tmp_path / "part" / "last.ckpt")
    paths = run(resumed, 3, tmp_path / "part")
    assert same(params(full.generator), params(resumed.generator))
    with open(paths["log"]) as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["step"]) for r in rows] == list(range(1, 7))
    assert paths["best"].exists()
    gen, cfg2 = load_generator(paths["last"])
    assert cfg2.model.depth == 1 and not gen.training


def test_frozen_4x_target(tiny_config):
    cfg = tiny_config.apply_overrides(["train.scale=4"])
    st = init_state(cfg)
    lr, hr = batches(1, scale=4)[0]
    assert training_target(st, hr).shape[-1] == 32
    row = train_step(st, lr, hr)
    assert math.isfinite(row["L_R"])


def test_joint_4x(tiny_config):
    cfg = tiny_config.apply_overrides(["train.scale=4", "train.compose=joint", "train.crop_lr=16"])
    st = init_state(cfg)
    assert st.discriminator.cfg.height == 64
    lr, hr = batches(1, scale=4)[0]
    assert math.isfinite(train_step(st, lr, hr)["L_R"])
