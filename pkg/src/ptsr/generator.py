"""Generator: four patch translators wired with bilinear resampling and skips.

One pass doubles the resolution; the 4x model runs the same pass twice with
the same parameters.
"""

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .patch_translator import PatchTranslator, zero_translator
from .transformer import TransformerConfig


def downsample2(image: torch.Tensor) -> torch.Tensor:
    _, _, h, w = image.shape
    if h % 2 or w % 2:
        raise ValueError(f"cannot halve an image with odd dimensions {h}x{w}")
    return F.interpolate(image, scale_factor=0.5, mode="bilinear",
                         align_corners=False, recompute_scale_factor=True)


def upsample2(image: torch.Tensor) -> torch.Tensor:
    return F.interpolate(image, scale_factor=2.0, mode="bilinear",
                         align_corners=False, recompute_scale_factor=True)


def upsample(image: torch.Tensor, scale: int) -> torch.Tensor:
    """Repeated bilinear doubling; ``scale`` must be a power of two."""
    if scale < 1 or scale & (scale - 1):
        raise ValueError(f"scale must be a power of two, got {scale}")
    while scale > 1:
        image = upsample2(image)
        scale //= 2
    return image


@dataclass
class GeneratorConfig:
    height: int = 128
    width: int = 128
    k: int = 8
    depth: int = 5
    heads: int = 3
    mlp_ratio: float = 4.0
    dropout: float = 0.0
    residual_mode: str = "paper"
    seed: int = 0

    def transformer(self) -> TransformerConfig:
        return TransformerConfig(depth=self.depth, d=self.k * self.k * 3, heads=self.heads,
                                 mlp_ratio=self.mlp_ratio, dropout=self.dropout,
                                 residual_mode=self.residual_mode)


@dataclass
class ForwardTrace:
    shapes: dict = field(default_factory=dict)

    def record(self, name: str, t: torch.Tensor) -> None:
        self.shapes[name] = tuple(t.shape[-2:])


class Generator(nn.Module):
    """2x super-resolution generator.

    Built for a base low-resolution geometry (H, W). Each translator also
    registers the doubled geometry so that :meth:`forward_4x` can reuse the
    same parameters on the 2H x 2W intermediate.
    """

    def __init__(self, cfg: GeneratorConfig | None = None):
        super().__init__()
        cfg = cfg or GeneratorConfig()
        self.cfg = cfg
        h, w, k = cfg.height, cfg.width, cfg.k
        if h % (2 * k) or w % (2 * k):
            raise ValueError(f"generator geometry {h}x{w} must be divisible by 2k = {2 * k}")
        tcfg = cfg.transformer()
        self.pt1 = PatchTranslator(h, w, k, tcfg, seed=cfg.seed * 4 + 1)
        self.pt2 = PatchTranslator(h // 2, w // 2, k, tcfg, seed=cfg.seed * 4 + 2)
        self.pt3 = PatchTranslator(h, w, k, tcfg, seed=cfg.seed * 4 + 3)
        self.pt4 = PatchTranslator(2 * h, 2 * w, k, tcfg, seed=cfg.seed * 4 + 4)
        for pt in self.translators:
            ph, pw = pt.geometry
            pt.add_geometry(2 * ph, 2 * pw)

    @property
    def translators(self) -> list[PatchTranslator]:
        return [self.pt1, self.pt2, self.pt3, self.pt4]

    def check_input(self, x: torch.Tensor) -> None:
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"expected a (B, 3, H, W) image, got shape {tuple(x.shape)}")
        h, w = x.shape[-2:]
        k = self.cfg.k
        if h % (2 * k) or w % (2 * k):
            raise ValueError(f"input {h}x{w} must be divisible by 2k = {2 * k}")
        supported = [(self.cfg.height, self.cfg.width), (2 * self.cfg.height, 2 * self.cfg.width)]
        if (h, w) not in supported:
            raise ValueError(f"generator supports inputs of {supported}, got {h}x{w}")

    def forward_2x(self, x: torch.Tensor, trace: ForwardTrace | None = None) -> torch.Tensor:
        self.check_input(x)
        x_up = upsample2(x)
        f1 = self.pt1(x)
        f2 = self.pt2(downsample2(f1))
        f3 = self.pt3(upsample2(f2) + f1)
        f4 = self.pt4(upsample2(f3) + x_up)
        if trace is not None:
            for name, t in (("input", x), ("F1", f1), ("F2", f2), ("F3", f3), ("F4", f4)):
                trace.record(name, t)
        y = torch.clamp(f4 + x_up, 0.0, 1.0)
        if trace is not None:
            trace.record("output", y)
        return y

    def forward_4x(self, x: torch.Tensor) -> torch.Tensor:
        """Two chained 2x passes sharing one parameter set."""
        return self.forward_2x(self.forward_2x(x))

    def forward(self, x: torch.Tensor, scale: int = 2) -> torch.Tensor:
        if scale == 2:
            return self.forward_2x(x)
        if scale == 4:
            return self.forward_4x(x)
        raise ValueError(f"scale must be 2 or 4, got {scale}")


def zero_generator(gen: Generator) -> None:
    for pt in gen.translators:
        zero_translator(pt)


def parameter_manifest(module: nn.Module) -> list[tuple[str, tuple[int, ...], str]]:
    """Names, shapes and dtypes of every parameter and buffer, in registration order."""
    entries = [(n, tuple(p.shape), str(p.dtype)) for n, p in module.named_parameters()]
    entries += [(n, tuple(b.shape), str(b.dtype)) for n, b in module.named_buffers()]
    return entries
