"""Alternating adversarial training, learning-rate plateau schedule and checkpoints."""

import csv
import hashlib
import json
import logging
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import Config
from .data import synthesize_lr
from .discriminator import Discriminator, DiscriminatorConfig, concat_condition
from .generator import Generator, GeneratorConfig, upsample
from .losses import (discriminator_loss, generator_adv_loss, reconstruction_loss,
                     total_generator_loss)

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"PTSRCKPT"
CHECKPOINT_VERSION = 1
LOG_FIELDS = ["step", "L_D", "L_G", "L_R", "lr"]


class NumericError(RuntimeError):
    """A loss or gradient became non-finite."""


class CheckpointError(ValueError):
    """Checkpoint is unreadable or incompatible with the requested config."""


def lr_geometry(cfg: Config) -> tuple[int, int]:
    """LR input size the generator is built for."""
    return cfg.train.crop_lr, cfg.train.crop_lr


def output_scale(cfg: Config) -> int:
    """Scale of the generator output seen by the losses during training."""
    if cfg.train.scale == 4 and cfg.train.compose == "joint":
        return 4
    return 2


def build_generator(cfg: Config) -> Generator:
    h, w = lr_geometry(cfg)
    m = cfg.model
    return Generator(GeneratorConfig(height=h, width=w, k=m.k, depth=m.depth, heads=m.heads,
                                     mlp_ratio=m.mlp_ratio, dropout=m.dropout,
                                     residual_mode=m.residual_mode, seed=cfg.train.seed))


def build_discriminator(cfg: Config) -> Discriminator:
    h, w = lr_geometry(cfg)
    s = output_scale(cfg)
    d = cfg.disc
    return Discriminator(DiscriminatorConfig(height=h * s, width=w * s, k=cfg.model.k, d=d.d,
                                             depth=d.depth, heads=d.heads,
                                             mlp_ratio=d.mlp_ratio, dropout=d.dropout))


@dataclass
class TrainState:
    config: Config
    generator: Generator
    discriminator: Discriminator
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    rng: np.random.Generator
    epoch: int = 0
    step: int = 0
    lr: float = 2e-4
    best_val: float = math.inf
    bad_epochs: int = 0
    triggers: int = 0
    config_text: str = ""
    history: list = field(default_factory=list)

    def set_lr(self, lr: float) -> None:
        self.lr = lr
        for opt in (self.opt_g, self.opt_d):
            for group in opt.param_groups:
                group["lr"] = lr


def _adam(params, cfg: Config) -> torch.optim.Adam:
    t = cfg.train
    return torch.optim.Adam(params, lr=t.lr0, betas=t.betas, eps=t.adam_eps, weight_decay=0.0)


def init_state(cfg: Config, config_text: str = "") -> TrainState:
    """Fresh models, optimizers and RNG, all derived from ``cfg.train.seed``."""
    torch.manual_seed(cfg.train.seed)
    gen = build_generator(cfg)
    disc = build_discriminator(cfg)
    return TrainState(
        config=cfg, generator=gen, discriminator=disc,
        opt_g=_adam(gen.parameters(), cfg), opt_d=_adam(disc.parameters(), cfg),
        rng=np.random.default_rng(cfg.train.seed), lr=cfg.train.lr0,
        config_text=config_text,
    )


def generate(state: TrainState, lr_batch: torch.Tensor) -> torch.Tensor:
    if output_scale(state.config) == 4:
        return state.generator.forward_4x(lr_batch)
    return state.generator.forward_2x(lr_batch)


def training_target(state: TrainState, hr_batch: torch.Tensor) -> torch.Tensor:
    """HR target at the generator's training output scale."""
    cfg = state.config
    if cfg.train.scale == 4 and cfg.train.compose == "frozen":
        return synthesize_lr(hr_batch, 2, cfg.data.kernel)
    return hr_batch


def _disc_out(disc: Discriminator, x6: torch.Tensor, fused: bool) -> torch.Tensor:
    return disc.logits(x6) if fused else disc(x6)


def _check_finite(name: str, value: torch.Tensor, step: int, batch_id: str) -> None:
    if not torch.isfinite(value).all():
        raise NumericError(f"non-finite {name} at step {step} (batch {batch_id})")


def train_step(state: TrainState, lr_batch: torch.Tensor, hr_batch: torch.Tensor,
               batch_id: str = "") -> dict:
    """One discriminator update followed by one generator update."""
    cfg = state.config
    fused = cfg.train.fused_bce
    gen, disc = state.generator, state.discriminator
    gen.train()
    disc.train()
    target = training_target(state, hr_batch)
    scale = target.shape[-1] // lr_batch.shape[-1]
    x_up = upsample(lr_batch, scale)

    fake = generate(state, lr_batch)

    # discriminator: G output is detached, so no gradient reaches G
    disc.requires_grad_(True)
    state.opt_d.zero_grad(set_to_none=True)
    d_fake = _disc_out(disc, concat_condition(x_up, fake.detach()), fused)
    d_real = _disc_out(disc, concat_condition(x_up, target), fused)
    loss_d = discriminator_loss(d_fake, d_real, from_logits=fused)
    _check_finite("L_D", loss_d, state.step, batch_id)
    loss_d.backward()
    if cfg.train.clip_norm > 0:
        torch.nn.utils.clip_grad_norm_(disc.parameters(), cfg.train.clip_norm)
    state.opt_d.step()

    # generator: D is frozen for this backward pass
    disc.requires_grad_(False)
    state.opt_g.zero_grad(set_to_none=True)
    loss_adv = generator_adv_loss(_disc_out(disc, concat_condition(x_up, fake), fused),
                                  from_logits=fused)
    loss_rec = reconstruction_loss(target, fake, x_up, cfg.loss)
    loss_g = total_generator_loss(loss_adv, loss_rec, cfg.loss)
    _check_finite("generator loss", loss_g, state.step, batch_id)
    loss_g.backward()
    if cfg.train.clip_norm > 0:
        torch.nn.utils.clip_grad_norm_(gen.parameters(), cfg.train.clip_norm)
    state.opt_g.step()
    disc.requires_grad_(True)

    state.step += 1
    row = {"step": state.step, "L_D": loss_d.item(), "L_G": loss_adv.item(),
           "L_R": loss_rec.item(), "lr": state.lr}
    state.history.append(row)
    return row


@torch.no_grad()
def validation_loss(state: TrainState, batches: list[tuple[torch.Tensor, torch.Tensor]]) -> float:
    """Mean reconstruction loss over fixed held-out batches."""
    gen = state.generator
    gen.eval()
    total = 0.0
    for lr_batch, hr_batch in batches:
        target = training_target(state, hr_batch)
        fake = generate(state, lr_batch)
        x_up = upsample(lr_batch, target.shape[-1] // lr_batch.shape[-1])
        total += reconstruction_loss(target, fake, x_up, state.config.loss).item()
    gen.train()
    return total / max(len(batches), 1)


def plateau_schedule(state: TrainState, val_metric: float) -> TrainState:
    """Multiply the learning rate by ``plateau_factor`` after ``plateau_patience``
    consecutive epochs without improvement.

    An epoch improves when ``val_metric < best - plateau_tol``. The first call
    always improves on the initial ``inf``.
    """
    t = state.config.train
    if val_metric < state.best_val - t.plateau_tol:
        state.best_val = val_metric
        state.bad_epochs = 0
    else:
        state.bad_epochs += 1
        if state.bad_epochs >= t.plateau_patience:
            state.triggers += 1
            state.set_lr(state.lr * t.plateau_factor)
            state.bad_epochs = 0
            log.info("no improvement for %d epochs, lr -> %.3g", t.plateau_patience, state.lr)
    state.epoch += 1
    return state


# -- checkpoints ---------------------------------------------------------------

_DTYPES = {"float32": torch.float32, "float64": torch.float64, "int64": torch.int64,
           "uint8": torch.uint8, "float16": torch.float16}


def _tensor_bytes(t: torch.Tensor) -> bytes:
    return t.detach().cpu().contiguous().numpy().tobytes()


def _optimizer_tensors(prefix: str, opt: torch.optim.Optimizer) -> tuple[dict, dict]:
    sd = opt.state_dict()
    tensors, meta = {}, {}
    for idx, st in sd["state"].items():
        for key, val in st.items():
            if torch.is_tensor(val):
                tensors[f"{prefix}.state.{idx}.{key}"] = val
            else:
                meta[f"{idx}.{key}"] = val
    groups = json.loads(json.dumps(sd["param_groups"]))
    return tensors, {"param_groups": groups, "scalars": meta}


def state_tensors(state: TrainState) -> dict[str, torch.Tensor]:
    tensors = {}
    for name, t in state.generator.state_dict().items():
        tensors[f"generator.{name}"] = t
    for name, t in state.discriminator.state_dict().items():
        tensors[f"discriminator.{name}"] = t
    for prefix, opt in (("opt_g", state.opt_g), ("opt_d", state.opt_d)):
        tensors.update(_optimizer_tensors(prefix, opt)[0])
    return tensors


def save_checkpoint(state: TrainState, path: str | os.PathLike) -> None:
    """Write the full training state atomically (temp file + rename).

    Layout: magic, u32 version, u64 header length, JSON header, raw tensor
    bytes in header order.
    """
    tensors = state_tensors(state)
    manifest, blobs, offset = [], [], 0
    for name, t in tensors.items():
        data = _tensor_bytes(t)
        manifest.append({"name": name, "dtype": str(t.dtype).removeprefix("torch."),
                         "shape": list(t.shape), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": state.config.to_dict(),
        "config_text": state.config_text,
        "config_hash": state.config.arch_hash(),
        "progress": {"epoch": state.epoch, "step": state.step, "lr": state.lr,
                     "best_val": None if math.isinf(state.best_val) else state.best_val,
                     "bad_epochs": state.bad_epochs, "triggers": state.triggers},
        "optimizers": {p: _optimizer_tensors(p, o)[1]
                       for p, o in (("opt_g", state.opt_g), ("opt_d", state.opt_d))},
        "rng": state.rng.bit_generator.state,
        "tensors": manifest,
    }
    head = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(head)))
            fh.write(head)
            for blob in blobs:
                fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_checkpoint(path: str | os.PathLike) -> tuple[dict, dict[str, torch.Tensor]]:
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path} is not a checkpoint file")
    pos = len(CHECKPOINT_MAGIC)
    version, head_len = struct.unpack_from("<IQ", raw, pos)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} != supported {CHECKPOINT_VERSION}")
    pos += struct.calcsize("<IQ")
    header = json.loads(raw[pos:pos + head_len])
    base = pos + head_len
    tensors = {}
    for entry in header["tensors"]:
        start = base + entry["offset"]
        buf = bytearray(raw[start:start + entry["nbytes"]])
        t = torch.frombuffer(buf, dtype=_DTYPES[entry["dtype"]]) if buf else \
            torch.empty(0, dtype=_DTYPES[entry["dtype"]])
        tensors[entry["name"]] = t.reshape(entry["shape"])
    return header, tensors


def _load_module(module: torch.nn.Module, prefix: str, tensors: dict) -> None:
    expected = module.state_dict()
    mismatches = []
    for name, t in expected.items():
        key = f"{prefix}.{name}"
        if key not in tensors:
            mismatches.append(f"{key} missing from checkpoint")
        elif tuple(tensors[key].shape) != tuple(t.shape):
            mismatches.append(f"{key}: checkpoint {tuple(tensors[key].shape)} vs model {tuple(t.shape)}")
    extra = [k for k in tensors if k.startswith(prefix + ".") and k[len(prefix) + 1:] not in expected]
    mismatches += [f"{k} not in model" for k in extra]
    if mismatches:
        shown = "; ".join(mismatches[:5])
        more = f" (+{len(mismatches) - 5} more)" if len(mismatches) > 5 else ""
        raise CheckpointError(f"shape mismatch loading {prefix}: {shown}{more}")
    module.load_state_dict({n: tensors[f"{prefix}.{n}"] for n in expected})


def _load_optimizer(opt: torch.optim.Optimizer, prefix: str, meta: dict, tensors: dict) -> None:
    state: dict = {}
    for key, val in tensors.items():
        if key.startswith(prefix + ".state."):
            idx, name = key[len(prefix) + 7:].split(".", 1)
            state.setdefault(int(idx), {})[name] = val.clone()
    for key, val in meta["scalars"].items():
        idx, name = key.split(".", 1)
        state.setdefault(int(idx), {})[name] = val
    groups = meta["param_groups"]
    for g in groups:
        if "betas" in g:
            g["betas"] = tuple(g["betas"])
    opt.load_state_dict({"state": state, "param_groups": groups})


def load_checkpoint(path: str | os.PathLike, config: Config | None = None) -> TrainState:
    """Restore a :class:`TrainState` exactly.

    When ``config`` is given its architecture must match the checkpoint's;
    otherwise the checkpoint's own config is used.
    """
    header, tensors = read_checkpoint(path)
    saved = Config.from_dict(header["config"])
    if saved.arch_hash() != header["config_hash"]:
        raise CheckpointError("checkpoint config hash does not match its stored config")
    cfg = saved
    if config is not None:
        cfg = config
        if config.arch_hash() != header["config_hash"]:
            diffs = "; ".join(config.arch_differences(saved))
            try:
                _load_module(build_generator(config), "generator", tensors)
                _load_module(build_discriminator(config), "discriminator", tensors)
            except CheckpointError as exc:
                raise CheckpointError(f"config mismatch ({diffs}); {exc}") from None
            raise CheckpointError(f"config mismatch ({diffs})")
    state = init_state(cfg, header.get("config_text", ""))
    _load_module(state.generator, "generator", tensors)
    _load_module(state.discriminator, "discriminator", tensors)
    for prefix, opt in (("opt_g", state.opt_g), ("opt_d", state.opt_d)):
        _load_optimizer(opt, prefix, header["optimizers"][prefix], tensors)
    p = header["progress"]
    state.epoch, state.step, state.lr = p["epoch"], p["step"], p["lr"]
    state.best_val = math.inf if p["best_val"] is None else p["best_val"]
    state.bad_epochs, state.triggers = p["bad_epochs"], p["triggers"]
    state.rng.bit_generator.state = header["rng"]
    return state


def load_generator(path: str | os.PathLike) -> tuple[Generator, Config]:
    """Generator weights and config only, for inference."""
    header, tensors = read_checkpoint(path)
    cfg = Config.from_dict(header["config"])
    gen = build_generator(cfg)
    _load_module(gen, "generator", tensors)
    gen.eval()
    return gen, cfg


def file_digest(path: str | os.PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- epoch loop ----------------------------------------------------------------

def fit(state: TrainState, sampler, val_batches: list, out_dir: str | os.PathLike,
        max_epochs: int | None = None) -> dict:
    """Train until ``max_epochs``, checkpointing into ``out_dir``.

    Writes ``train_log.csv`` (appending on resume), ``last.ckpt`` every
    ``checkpoint_every`` epochs and at the end, and ``best.ckpt`` whenever the
    validation reconstruction loss improves. A non-finite loss dumps the
    offending batch to ``nonfinite_batch.pt`` and re-raises.
    """
    cfg = state.config.train
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.csv"
    new_log = not log_path.exists() or state.step == 0
    max_epochs = cfg.max_epochs if max_epochs is None else max_epochs
    with open(log_path, "w" if new_log else "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        if new_log:
            writer.writeheader()
        while state.epoch < max_epochs:
            for _ in range(cfg.steps_per_epoch):
                lr_batch, hr_batch = sampler.batch(cfg.batch_size)
                batch_id = f"epoch{state.epoch}-step{state.step}"
                try:
                    row = train_step(state, lr_batch, hr_batch, batch_id)
                except NumericError:
                    torch.save({"batch_id": batch_id, "lr": lr_batch, "hr": hr_batch},
                               out / "nonfinite_batch.pt")
                    raise
                writer.writerow(row)
            fh.flush()
            val = validation_loss(state, val_batches)
            improved = val < state.best_val - cfg.plateau_tol
            plateau_schedule(state, val)
            log.info("epoch %d: val L_R %.6f lr %.3g", state.epoch, val, state.lr)
            if improved:
                save_checkpoint(state, out / "best.ckpt")
            if state.epoch % cfg.checkpoint_every == 0 or state.epoch >= max_epochs:
                save_checkpoint(state, out / "last.ckpt")
    return {"log": log_path, "last": out / "last.ckpt", "best": out / "best.ckpt"}
