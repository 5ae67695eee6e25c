"""Adversarial and residual-feature reconstruction objectives."""

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

VARIANTS = ("R", "R1", "R2")
BCE_EPS = 1e-7


@dataclass
class LossConfig:
    variant: str = "R"
    w_adv: float = 0.4
    w_rec: float = 0.6
    squared_l2: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"loss variant must be one of {VARIANTS}, got {self.variant!r}")
        if not math.isclose(self.w_adv + self.w_rec, 1.0, abs_tol=1e-12):
            raise ValueError(f"w_adv + w_rec must equal 1, got {self.w_adv} + {self.w_rec}")


def _same_shape(*tensors: torch.Tensor) -> None:
    shapes = {tuple(t.shape) for t in tensors}
    if len(shapes) != 1:
        raise ValueError(f"shape mismatch: {sorted(shapes)}")


def learnable_feature(y: torch.Tensor, x_up: torch.Tensor) -> torch.Tensor:
    """Residual between an HR-resolution image and the upsampled LR input."""
    _same_shape(y, x_up)
    return y - x_up


def reconstruction_loss(y_real: torch.Tensor, y_fake: torch.Tensor, x_up: torch.Tensor,
                        cfg: LossConfig | None = None) -> torch.Tensor:
    """Per-image ``(|D|_1 + |D|_2) / N`` averaged over the batch.

    ``D`` is the difference between the residual the model should learn and the
    one it produced; ``N`` is the per-image element count (2H * 2W * 3 at 2x).
    Variant ``R1`` keeps only the L1 term, ``R2`` only the L2 term.
    """
    cfg = cfg or LossConfig()
    _same_shape(y_real, y_fake, x_up)
    diff = learnable_feature(y_real, x_up) - learnable_feature(y_fake, x_up)
    diff = diff.flatten(start_dim=1)
    n = diff.shape[1]
    l1 = diff.abs().sum(dim=1)
    if cfg.squared_l2:
        l2 = diff.pow(2).sum(dim=1)
    else:
        l2 = torch.linalg.vector_norm(diff, ord=2, dim=1)
    if cfg.variant == "R1":
        per_image = l1
    elif cfg.variant == "R2":
        per_image = l2
    else:
        per_image = l1 + l2
    return (per_image / n).mean()


def _check_probabilities(p: torch.Tensor) -> None:
    if not torch.isfinite(p).all() or (p < 0).any() or (p > 1).any():
        raise ValueError("discriminator probabilities must lie in [0, 1]")


def bce(p: torch.Tensor, target: float, from_logits: bool = False) -> torch.Tensor:
    """Mean binary cross-entropy against a constant target.

    On the probability path inputs are clamped to ``[eps, 1 - eps]``; the logit
    path uses the fused, numerically stable formulation.
    """
    t = torch.full_like(p, float(target))
    if from_logits:
        return F.binary_cross_entropy_with_logits(p, t)
    _check_probabilities(p)
    p = p.clamp(BCE_EPS, 1.0 - BCE_EPS)
    return -(t * torch.log(p) + (1.0 - t) * torch.log1p(-p)).mean()


def generator_adv_loss(d_fake: torch.Tensor, from_logits: bool = False) -> torch.Tensor:
    return bce(d_fake, 1.0, from_logits)


def discriminator_loss(d_fake: torch.Tensor, d_real: torch.Tensor,
                       from_logits: bool = False) -> torch.Tensor:
    return 0.5 * (bce(d_fake, 0.0, from_logits) + bce(d_real, 1.0, from_logits))


def total_generator_loss(adv: torch.Tensor, rec: torch.Tensor,
                         cfg: LossConfig | None = None) -> torch.Tensor:
    cfg = cfg or LossConfig()
    return cfg.w_adv * adv + cfg.w_rec * rec
