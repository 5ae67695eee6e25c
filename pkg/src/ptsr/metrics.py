"""Image quality metrics and the input-gradient activation map."""

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .generator import upsample
from .losses import reconstruction_loss

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
METRIC_SPACES = ("rgb", "y")


def _as_batch(img: torch.Tensor) -> torch.Tensor:
    if img.dim() == 3:
        return img.unsqueeze(0)
    if img.dim() != 4:
        raise ValueError(f"expected a (C, H, W) or (B, C, H, W) image, got shape {tuple(img.shape)}")
    return img


def to_y(img: torch.Tensor) -> torch.Tensor:
    """ITU-R BT.601 luma of an RGB image in [0, 1], returned on the [0, 1] scale."""
    img = _as_batch(img)
    r, g, b = img[:, 0:1], img[:, 1:2], img[:, 2:3]
    return (16.0 + 65.481 * r + 128.553 * g + 24.966 * b) / 255.0


def prepare(img: torch.Tensor, space: str = "rgb", shave: int = 0) -> torch.Tensor:
    if space not in METRIC_SPACES:
        raise ValueError(f"metric space must be one of {METRIC_SPACES}, got {space!r}")
    img = _as_batch(img).double()
    if space == "y":
        img = to_y(img)
    if shave:
        img = img[..., shave:-shave, shave:-shave]
    return img


def psnr(a: torch.Tensor, b: torch.Tensor, peak: float = 1.0, space: str = "rgb",
         shave: int = 0) -> float:
    """PSNR in dB over the whole tensor; identical inputs give ``inf``."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    a, b = prepare(a, space, shave), prepare(b, space, shave)
    mse = torch.mean((a - b) ** 2).item()
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak ** 2 / mse)


def capped(db: float, cap: float = PSNR_CAP) -> float:
    return min(db, cap)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> torch.Tensor:
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2.0
    g = torch.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim_map(a: torch.Tensor, b: torch.Tensor, peak: float = 1.0) -> torch.Tensor:
    """Local SSIM over every valid window position, per channel."""
    c = a.shape[1]
    win = gaussian_window().to(a)
    kernel = win.expand(c, 1, *win.shape)

    def filt(x):
        return F.conv2d(x, kernel, groups=c)

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    num = (2.0 * (mu_a * mu_b) + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a: torch.Tensor, b: torch.Tensor, peak: float = 1.0, space: str = "rgb",
         shave: int = 0) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over channels."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    a, b = prepare(a, space, shave), prepare(b, space, shave)
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise ValueError(f"image {tuple(a.shape[-2:])} is smaller than the {SSIM_WINDOW}px SSIM window")
    return ssim_map(a, b, peak).mean().item()


@dataclass
class MetricRow:
    image_id: str
    scale: int
    psnr_db: float
    ssim: float
    metric_space: str = "rgb"
    shave: int = 0

    def as_csv(self) -> dict:
        return {
            "image_id": self.image_id,
            "scale": self.scale,
            "psnr_db": f"{capped(self.psnr_db):.10f}",
            "ssim": f"{self.ssim:.10f}",
            "metric_space": self.metric_space,
            "shave": self.shave,
        }


@dataclass
class MetricReport:
    rows: list[MetricRow] = field(default_factory=list)

    def add(self, row: MetricRow) -> None:
        self.rows.append(row)

    def mean(self) -> MetricRow:
        if not self.rows:
            raise ValueError("empty metric report")
        first = self.rows[0]
        n = len(self.rows)
        return MetricRow(
            "mean", first.scale,
            sum(capped(r.psnr_db) for r in self.rows) / n,
            sum(r.ssim for r in self.rows) / n,
            first.metric_space, first.shave,
        )

    def csv_rows(self) -> list[dict]:
        return [r.as_csv() for r in self.rows] + [self.mean().as_csv()]


CSV_FIELDS = ["image_id", "scale", "psnr_db", "ssim", "metric_space", "shave"]


def normalize_map(grad: torch.Tensor) -> torch.Tensor:
    """Min-max scale to [0, 1]; a constant map becomes all zeros."""
    lo, hi = grad.min(), grad.max()
    if hi <= lo:
        return torch.zeros_like(grad)
    return (grad - lo) / (hi - lo)


def visual_activation_map(x_lr: torch.Tensor, y_hr: torch.Tensor, generator,
                          loss_cfg=None, scale: int = 2) -> torch.Tensor:
    """Where the reconstruction cost is most sensitive to the LR input.

    Returns an (H, W) map in [0, 1] for a single (1, 3, H, W) input: the
    gradient of the reconstruction loss w.r.t. ``x_lr``, reduced over channels
    by max |.|, then min-max normalized.
    """
    x = _as_batch(x_lr).detach().clone().requires_grad_(True)
    y = _as_batch(y_hr)
    y_fake = generator(x, scale=scale)
    loss = reconstruction_loss(y, y_fake, upsample(x, scale), loss_cfg)
    (grad,) = torch.autograd.grad(loss, x, allow_unused=True)
    if grad is None:
        raise ValueError("reconstruction loss is not differentiable w.r.t. the input")
    heat = grad.abs().amax(dim=1)[0]
    return normalize_map(heat)
