"""ViT discriminator over the channel concatenation of upsampled LR and an HR/SR image."""

from dataclasses import dataclass

import torch
import torch.nn as nn

from .patch_ops import split_into_patches
from .transformer import MLP, MultiHeadAttention, init_weights

IN_CHANNELS = 6


def concat_condition(x_up: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Stack ``[x_up RGB, y RGB]`` along the channel axis."""
    if x_up.shape != y.shape:
        raise ValueError(
            f"condition and candidate must share a shape, got {tuple(x_up.shape)} and {tuple(y.shape)}"
        )
    return torch.cat([x_up, y], dim=1)


@dataclass
class DiscriminatorConfig:
    height: int = 256
    width: int = 256
    k: int = 8
    d: int = 192
    depth: int = 5
    heads: int = 3
    mlp_ratio: float = 4.0
    dropout: float = 0.0


class EncoderBlock(nn.Module):
    """Pre-norm ViT encoder block."""

    def __init__(self, d: int, heads: int, mlp_ratio: float, dropout: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(d, eps=1e-5)
        self.attn = MultiHeadAttention(d, heads, dropout)
        self.norm2 = nn.LayerNorm(d, eps=1e-5)
        self.mlp = MLP(d, int(round(d * mlp_ratio)), dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class Discriminator(nn.Module):
    """Real/fake classifier returning one logit (or probability) per batch item."""

    def __init__(self, cfg: DiscriminatorConfig | None = None):
        super().__init__()
        cfg = cfg or DiscriminatorConfig()
        if cfg.height % cfg.k or cfg.width % cfg.k:
            raise ValueError(f"discriminator geometry {cfg.height}x{cfg.width} "
                             f"is not divisible by patch size {cfg.k}")
        self.cfg = cfg
        n = (cfg.height // cfg.k) * (cfg.width // cfg.k)
        self.n = n
        self.patch_embed = nn.Linear(cfg.k * cfg.k * IN_CHANNELS, cfg.d)
        self.class_token = nn.Parameter(torch.zeros(1, 1, cfg.d))
        self.pos_embed = nn.Parameter(torch.zeros(1, n + 1, cfg.d))
        self.encoder = nn.ModuleList(
            EncoderBlock(cfg.d, cfg.heads, cfg.mlp_ratio, cfg.dropout) for _ in range(cfg.depth)
        )
        self.norm = nn.LayerNorm(cfg.d, eps=1e-5)
        self.head = nn.Linear(cfg.d, 1)
        init_weights(self)
        nn.init.trunc_normal_(self.class_token, std=0.02)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)

    def logits(self, x6: torch.Tensor) -> torch.Tensor:
        if x6.dim() != 4 or x6.shape[1] != IN_CHANNELS:
            raise ValueError(f"expected a (B, 6, H, W) tensor, got shape {tuple(x6.shape)}")
        h, w = x6.shape[-2:]
        if (h, w) != (self.cfg.height, self.cfg.width):
            raise ValueError(
                f"discriminator built for {self.cfg.height}x{self.cfg.width} inputs, got {h}x{w}"
            )
        seq = split_into_patches(x6, self.cfg.k)
        tokens = self.patch_embed(seq.vectors)
        cls = self.class_token.expand(tokens.shape[0], -1, -1)
        x = torch.cat([cls, tokens], dim=1) + self.pos_embed
        for block in self.encoder:
            x = block(x)
        return self.head(self.norm(x[:, 0])).squeeze(-1)

    def forward(self, x6: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logits(x6))

    def attention_weights(self) -> list[torch.Tensor]:
        return [b.attn.last_weights for b in self.encoder if b.attn.last_weights is not None]

