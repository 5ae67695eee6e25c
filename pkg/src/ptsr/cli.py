"""Command-line interface: ``ptsr {train,infer,eval,saliency,selftest}``.

Exit codes: 0 success, 1 usage, 2 data, 3 numeric failure.
"""

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import data as data_mod
from .config import Config, load_config
from .inference import super_resolve
from .metrics import CSV_FIELDS, MetricReport, MetricRow, psnr, ssim, visual_activation_map
from .training import (CheckpointError, NumericError, fit, init_state, load_checkpoint,
                       load_generator, read_checkpoint)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
DATA_ROOT_ENV = "PTSR_DATA_ROOT"

log = logging.getLogger("ptsr")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted-key override, applied after --config (repeatable)")
    p.add_argument("--seed", type=int, help="RNG seed (train.seed)")
    p.add_argument("--threads", type=int, default=1, help="torch intra-op threads (default 1)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ptsr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("train", help="adversarial training on an HR corpus")
    _common(p)
    p.add_argument("--data-root", help=f"HR corpus root (default ${DATA_ROOT_ENV})")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--scale", type=int, choices=(2, 4))
    p.add_argument("--depth", type=int, help="transformer blocks per translator (default 5)")
    p.add_argument("--loss-variant", choices=("R", "R1", "R2"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--steps-per-epoch", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--crop", type=int, help="LR crop size (full scale: 256 at 2x, 128 at 4x)")
    p.add_argument("--clip-norm", type=float)
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("infer", help="super-resolve one image")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("input", help="PNG/BMP/JPEG or .npy (3, H, W) float array")
    p.add_argument("output", help=".png (8-bit) or .npy (float32, lossless)")
    p.add_argument("--scale", type=int, choices=(2, 4), default=2)

    p = sub.add_parser("eval", help="PSNR/SSIM report over a dataset directory")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--data-root", help=f"dataset root (default ${DATA_ROOT_ENV})")
    p.add_argument("--split", default=None)
    p.add_argument("--scale", type=int, choices=(2, 4), default=2)
    p.add_argument("--metric-space", choices=("rgb", "y"), default="rgb")
    p.add_argument("--shave", type=int, default=0)
    p.add_argument("--method", choices=("model", "bicubic", "identity"), default="model",
                   help="model output, bicubic baseline, or HR vs itself")
    p.add_argument("--out", help="CSV path (default eval_x<scale>.csv)")
    p.add_argument("--figure", help="PNG figure path (default: next to the CSV)")
    p.add_argument("--no-figure", action="store_true")

    p = sub.add_parser("saliency", help="visual activation map of the reconstruction cost")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--lr", required=True, dest="lr_image")
    p.add_argument("--hr", required=True, dest="hr_image")
    p.add_argument("--out", required=True, help="8-bit grayscale PNG")
    p.add_argument("--color-out", help="optional colour-mapped figure")
    p.add_argument("--scale", type=int, choices=(2, 4), default=2)

    p = sub.add_parser("selftest", help="gradient checks and invariants (< 1 min)")
    _common(p)
    return parser


def _effective_config(args, base: tuple[Config, str] | None = None) -> tuple[Config, str]:
    """Config file (or ``base``), then ``--set`` overrides, then dedicated flags."""
    try:
        if base is not None and not args.config:
            cfg = base[0].apply_overrides(args.overrides)
            text = base[1] + "".join(f"# override\n{o}\n" for o in args.overrides)
        else:
            cfg, text = load_config(args.config, args.overrides)
        flags = {
            "train.seed": getattr(args, "seed", None),
            "train.scale": getattr(args, "scale", None) if args.command == "train" else None,
            "model.depth": getattr(args, "depth", None),
            "loss.variant": getattr(args, "loss_variant", None),
            "train.max_epochs": getattr(args, "epochs", None),
            "train.steps_per_epoch": getattr(args, "steps_per_epoch", None),
            "train.batch_size": getattr(args, "batch_size", None),
            "train.crop_lr": getattr(args, "crop", None),
            "train.clip_norm": getattr(args, "clip_norm", None),
        }
        flags = {k: v for k, v in flags.items() if v is not None}
        cfg = cfg.with_values(flags)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    text += "".join(f"# flag\n{k} = {v}\n" for k, v in flags.items())
    return cfg, text


def _header(command: str, cfg: Config, extra: dict | None = None) -> None:
    print(f"# ptsr {command}")
    for k, v in (extra or {}).items():
        print(f"# {k}: {v}")
    for line in cfg.to_text().splitlines():
        print(f"# {line}")
    sys.stdout.flush()


def _data_root(arg: str | None, cfg: Config) -> Path:
    root = arg or os.environ.get(DATA_ROOT_ENV) or cfg.data.root
    if not root:
        raise UsageError(f"no data root given (use --data-root or ${DATA_ROOT_ENV})")
    path = Path(root)
    if not path.is_dir():
        raise data_mod.DataError(f"data root does not exist: {path}")
    return path


def _read_input(path: str) -> torch.Tensor:
    p = Path(path)
    if not p.is_file():
        raise data_mod.DataError(f"input image does not exist: {p}")
    if p.suffix.lower() == ".npy":
        arr = np.load(p)
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise data_mod.DataError(f"{p}: expected a (3, H, W) array, got {arr.shape}")
        return torch.from_numpy(arr.astype(np.float32, copy=False))
    return data_mod.read_image(p)


def _write_output(image: torch.Tensor, path: str) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    if p.suffix.lower() == ".npy":
        np.save(p, image.detach().float().cpu().numpy())
    else:
        data_mod.write_png(image, p)


# -- subcommands ---------------------------------------------------------------

def cmd_train(args) -> int:
    base = None
    if args.resume:
        header, _ = read_checkpoint(args.resume)
        base = (Config.from_dict(header["config"]), header.get("config_text", ""))
    cfg, text = _effective_config(args, base)
    root = _data_root(args.data_root, cfg)
    cfg = cfg.with_value("data.root", str(root))
    if args.resume:
        state = load_checkpoint(args.resume, cfg)
    else:
        state = init_state(cfg, text)
    _header("train", cfg, {"data_root": root, "out_dir": args.out_dir, "resume": args.resume})
    t = cfg.train
    images, ids = data_mod.load_corpus(root, cfg.data.split, with_ids=True)
    sampler = data_mod.PairSampler(images, t.scale, t.crop_lr, state.rng, ids,
                                   cfg.data.kernel, cfg.data.flip, cfg.data.rotate)
    val_root = root / cfg.data.val_split
    val_rng = np.random.default_rng(t.seed + 1)
    if val_root.is_dir():
        v_images, v_ids = data_mod.load_corpus(val_root, with_ids=True)
    else:
        v_images, v_ids = images, ids
    val_sampler = data_mod.PairSampler(v_images, t.scale, t.crop_lr, val_rng, v_ids, cfg.data.kernel)
    val_batches = [val_sampler.batch(t.batch_size) for _ in range(t.val_batches)]
    paths = fit(state, sampler, val_batches, args.out_dir)
    with open(paths["log"], newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows:
        from .plotting import plot_training_log
        plot_training_log(rows, Path(args.out_dir) / "train_log.png")
    print(f"trained {state.epoch} epochs / {state.step} steps; best val L_R {state.best_val:.6f}; "
          f"lr {state.lr:.3g}")
    print(f"checkpoints: {paths['last']} {paths['best']}")
    return EXIT_OK


def cmd_infer(args) -> int:
    cfg0, _ = _effective_config(args)
    gen, cfg = load_generator(args.checkpoint)
    _header("infer", cfg, {"checkpoint": args.checkpoint, "scale": args.scale, "seed": cfg0.train.seed})
    image = _read_input(args.input)
    h, w = image.shape[-2:]
    k2 = 2 * cfg.model.k
    if h % k2 or w % k2:
        raise data_mod.DataError(f"input {h}x{w} must be divisible by 2k = {k2}")
    out = super_resolve(gen, image, args.scale)
    _write_output(out, args.output)
    print(f"wrote {args.output}: {out.shape[-1]}x{out.shape[-2]} (from {w}x{h}, x{args.scale})")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg, _ = _effective_config(args)
    root = _data_root(args.data_root, cfg)
    gen = None
    if args.method == "model":
        if not args.checkpoint:
            raise UsageError("--checkpoint is required with --method model")
        gen, cfg = load_generator(args.checkpoint)
    _header("eval", cfg, {"data_root": root, "scale": args.scale, "method": args.method,
                          "metric_space": args.metric_space, "shave": args.shave})
    images, ids = data_mod.load_corpus(root, args.split, with_ids=True)
    report = MetricReport()
    for pair in data_mod.evaluation_pairs(images, ids, args.scale, cfg.data.kernel):
        if args.method == "identity":
            sr = pair.hr
        elif args.method == "bicubic":
            sr = torch.nn.functional.interpolate(pair.lr[None], scale_factor=args.scale,
                                                 mode="bicubic", align_corners=False)[0].clamp(0, 1)
        else:
            sr = super_resolve(gen, pair.lr, args.scale)
        report.add(MetricRow(pair.source_id, args.scale,
                             psnr(sr, pair.hr, space=args.metric_space, shave=args.shave),
                             ssim(sr, pair.hr, space=args.metric_space, shave=args.shave),
                             args.metric_space, args.shave))
    rows = report.csv_rows()
    out = Path(args.out or f"eval_x{args.scale}.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    csv.writer(sys.stdout).writerows([CSV_FIELDS] + [[r[f] for f in CSV_FIELDS] for r in rows])
    if not args.no_figure:
        from .plotting import plot_metric_report
        fig = Path(args.figure) if args.figure else out.with_suffix(".png")
        plot_metric_report(rows, fig, f"{root.name} x{args.scale} ({args.method}, "
                                      f"{args.metric_space}, shave {args.shave})")
    return EXIT_OK


def cmd_saliency(args) -> int:
    cfg0, _ = _effective_config(args)
    gen, cfg = load_generator(args.checkpoint)
    _header("saliency", cfg, {"checkpoint": args.checkpoint, "scale": args.scale,
                              "seed": cfg0.train.seed})
    x = _read_input(args.lr_image)
    y = _read_input(args.hr_image)
    if tuple(y.shape[-2:]) != (x.shape[-2] * args.scale, x.shape[-1] * args.scale):
        raise data_mod.DataError(
            f"HR {tuple(y.shape[-2:])} is not {args.scale}x the LR {tuple(x.shape[-2:])}")
    heat = visual_activation_map(x, y, gen, cfg.loss, args.scale)
    arr = np.round(heat.detach().double().numpy() * 255.0).astype(np.uint8)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="L").save(args.out, format="PNG")
    if args.color_out:
        from .plotting import save_heatmap
        save_heatmap(heat.detach().numpy(), args.color_out)
    print(f"wrote {args.out}: {arr.shape[1]}x{arr.shape[0]}, range [{arr.min()}, {arr.max()}]")
    return EXIT_OK


def cmd_selftest(args) -> int:
    cfg, _ = _effective_config(args)
    _header("selftest", cfg)
    from .selftest import run_selftest
    return EXIT_OK if run_selftest() else EXIT_NUMERIC


COMMANDS = {"train": cmd_train, "infer": cmd_infer, "eval": cmd_eval,
            "saliency": cmd_saliency, "selftest": cmd_selftest}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(max(1, args.threads))
    if args.seed is not None:
        torch.manual_seed(args.seed)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (data_mod.DataError, CheckpointError, FileNotFoundError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
