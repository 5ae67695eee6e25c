"""HR corpora, LR synthesis and aligned crop sampling.

Images are float32 tensors of shape (3, H, W) in [0, 1] unless batched.
"""

import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".bmp", ".jpg", ".jpeg"}
MANIFEST_NAME = "manifest.txt"
KERNELS = ("bicubic", "bilinear")


class DataError(Exception):
    """Unusable corpus or image."""


@dataclass
class PairedSample:
    lr: torch.Tensor
    hr: torch.Tensor
    scale: int
    source_id: str

    def __post_init__(self):
        lh, lw = self.lr.shape[-2:]
        hh, hw = self.hr.shape[-2:]
        if (hh, hw) != (lh * self.scale, lw * self.scale):
            raise ValueError(f"HR {hh}x{hw} is not {self.scale}x LR {lh}x{lw}")


def image_to_tensor(img: Image.Image) -> torch.Tensor:
    """Decode a PIL image to (3, H, W) float32 in [0, 1]; 8- and 16-bit aware."""
    if img.mode in ("I;16", "I;16B", "I;16L", "I"):
        arr = np.asarray(img, dtype=np.float64)
        peak = 65535.0 if img.mode.startswith("I;16") or arr.max() > 255 else 255.0
        arr = np.repeat((arr / peak)[..., None], 3, axis=2)
    else:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    arr = np.clip(arr, 0.0, 1.0)
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1))).float()


def read_image(path: str | os.PathLike) -> torch.Tensor:
    with Image.open(path) as img:
        img.load()
        return image_to_tensor(img)


def tensor_to_uint8(image: torch.Tensor) -> np.ndarray:
    """(3, H, W) or (1, 3, H, W) in [0, 1] -> (H, W, 3) uint8, round-half-even."""
    if image.dim() == 4:
        image = image[0]
    arr = image.detach().double().clamp(0.0, 1.0).cpu().numpy().transpose(1, 2, 0)
    return np.round(arr * 255.0).astype(np.uint8)


def write_png(image: torch.Tensor, path: str | os.PathLike) -> None:
    Image.fromarray(tensor_to_uint8(image), mode="RGB").save(path, format="PNG")


def _scan(root: Path) -> list[Path]:
    manifest = root / MANIFEST_NAME
    if manifest.is_file():
        lines = manifest.read_text().splitlines()
        return [root / ln.strip() for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]
    return sorted(p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def corpus_dir(root_path: str | os.PathLike, split: str | None = None) -> Path:
    root = Path(root_path)
    if split:
        candidate = root / split
        if candidate.is_dir():
            root = candidate
    return root


def load_corpus(root_path: str | os.PathLike, split: str | None = None,
                with_ids: bool = False):
    """Load every HR image under ``root_path`` (optionally its ``split`` subdir).

    Files are taken in lexicographic relative-path order, or from a
    ``manifest.txt`` (one relative path per line) when present. Unreadable
    files are skipped with a warning.
    """
    root = corpus_dir(root_path, split)
    if not root.is_dir():
        raise DataError(f"data directory does not exist: {root}")
    paths = _scan(root)
    images, ids = [], []
    for p in paths:
        try:
            images.append(read_image(p))
        except (OSError, ValueError) as exc:
            log.warning("skipping unreadable image %s: %s", p, exc)
            continue
        ids.append(str(p.relative_to(root)) if p.is_relative_to(root) else str(p))
    if not images:
        raise DataError(f"no readable images found in {root}")
    return (images, ids) if with_ids else images


def center_crop_to_multiple(image: torch.Tensor, multiple: int) -> torch.Tensor:
    h, w = image.shape[-2:]
    nh, nw = h - h % multiple, w - w % multiple
    if nh == 0 or nw == 0:
        raise DataError(f"image {h}x{w} is smaller than {multiple}px")
    top, left = (h - nh) // 2, (w - nw) // 2
    return image[..., top:top + nh, left:left + nw]


def synthesize_lr(hr: torch.Tensor, scale: int, kernel: str = "bicubic") -> torch.Tensor:
    """Antialiased downsampling by an integer factor, clamped to [0, 1].

    Images whose sides are not multiples of ``scale`` are center-cropped first.
    """
    if kernel not in KERNELS:
        raise ValueError(f"kernel must be one of {KERNELS}, got {kernel!r}")
    h, w = hr.shape[-2:]
    if h % scale or w % scale:
        hr = center_crop_to_multiple(hr, scale)
        log.info("center-cropped %dx%d to %dx%d before downsampling", h, w, *hr.shape[-2:])
        h, w = hr.shape[-2:]
    batched = hr.dim() == 4
    x = hr if batched else hr.unsqueeze(0)
    lr = F.interpolate(x, size=(h // scale, w // scale), mode=kernel,
                       align_corners=False, antialias=True)
    lr = lr.clamp(0.0, 1.0)
    return lr if batched else lr[0]


def sample_training_pair(hr: torch.Tensor, scale: int, crop_lr: int,
                         rng: np.random.Generator, source_id: str = "",
                         lr_full: torch.Tensor | None = None,
                         kernel: str = "bicubic") -> PairedSample | None:
    """Aligned random crop.

    Mode A (default): crop ``scale * crop_lr`` from the HR image and synthesize
    its LR. Mode B: pass a pre-synthesized ``lr_full`` and crop both at
    aligned coordinates. Returns ``None`` (with a warning) if the image is too
    small.
    """
    hh, hw = hr.shape[-2:]
    crop_hr = scale * crop_lr
    if hh < crop_hr or hw < crop_hr:
        log.warning("skipping %s: %dx%d is smaller than the %dpx crop", source_id or "image", hh, hw, crop_hr)
        return None
    y = int(rng.integers(0, hh // scale - crop_lr + 1))
    x = int(rng.integers(0, hw // scale - crop_lr + 1))
    hr_crop = hr[..., scale * y:scale * y + crop_hr, scale * x:scale * x + crop_hr]
    if lr_full is None:
        lr_crop = synthesize_lr(hr_crop, scale, kernel)
    else:
        lr_crop = lr_full[..., y:y + crop_lr, x:x + crop_lr]
    return PairedSample(lr_crop.contiguous(), hr_crop.contiguous(), scale, source_id)


def augment(sample: PairedSample, rng: np.random.Generator, flip: bool = False,
            rotate: bool = False) -> PairedSample:
    """Optional identical flip / 90-degree rotation of both images."""
    lr, hr = sample.lr, sample.hr
    if flip and rng.random() < 0.5:
        lr, hr = lr.flip(-1), hr.flip(-1)
    if rotate:
        k = int(rng.integers(0, 4))
        lr, hr = torch.rot90(lr, k, (-2, -1)), torch.rot90(hr, k, (-2, -1))
    return PairedSample(lr.contiguous(), hr.contiguous(), sample.scale, sample.source_id)


class PairSampler:
    """Deterministic stream of training batches for a fixed seed.

    Single-process by design; each call to :meth:`batch` draws ``batch_size``
    pairs from images chosen uniformly at random.
    """

    def __init__(self, images: list[torch.Tensor], scale: int, crop_lr: int,
                 rng: np.random.Generator, ids: list[str] | None = None,
                 kernel: str = "bicubic", flip: bool = False, rotate: bool = False):
        crop_hr = scale * crop_lr
        usable = [(i, img) for i, img in enumerate(images) if min(img.shape[-2:]) >= crop_hr]
        if not usable:
            raise DataError(f"no image is large enough for a {crop_hr}px training crop")
        for i, img in enumerate(images):
            if min(img.shape[-2:]) < crop_hr:
                log.warning("image %s too small for a %dpx crop, skipped", ids[i] if ids else i, crop_hr)
        self.images = [img for _, img in usable]
        self.ids = [ids[i] if ids else str(i) for i, _ in usable]
        self.scale, self.crop_lr, self.rng = scale, crop_lr, rng
        self.kernel, self.flip, self.rotate = kernel, flip, rotate

    def batch(self, batch_size: int) -> tuple[torch.Tensor, torch.Tensor]:
        lrs, hrs = [], []
        for _ in range(batch_size):
            j = int(self.rng.integers(0, len(self.images)))
            s = sample_training_pair(self.images[j], self.scale, self.crop_lr, self.rng,
                                     self.ids[j], kernel=self.kernel)
            if self.flip or self.rotate:
                s = augment(s, self.rng, self.flip, self.rotate)
            lrs.append(s.lr)
            hrs.append(s.hr)
        return torch.stack(lrs), torch.stack(hrs)


def evaluation_pairs(images: list[torch.Tensor], ids: list[str], scale: int,
                     kernel: str = "bicubic") -> list[PairedSample]:
    """Full-image pairs; HR is center-cropped to a multiple of ``scale``."""
    pairs = []
    for img, sid in zip(images, ids):
        hr = center_crop_to_multiple(img, scale)
        pairs.append(PairedSample(synthesize_lr(hr, scale, kernel), hr, scale, sid))
    return pairs
