"""Transformer blocks driven by a positional embedding.

Each block normalizes its input with a self-modulated LayerNorm whose gain and
bias are affine functions of the positional embedding, attends over all
patches, adds the attention features to the embedding, and finishes with a
GELU MLP on a residual path.
"""

import math
import warnings
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

LN_EPS = 1e-5
TESTED_DEPTHS = (3, 5, 7)
RESIDUAL_MODES = ("paper", "conventional")


@dataclass
class TransformerConfig:
    depth: int = 5
    d: int = 192
    heads: int = 3
    mlp_ratio: float = 4.0
    dropout: float = 0.0
    residual_mode: str = "paper"

    def __post_init__(self):
        if self.d % self.heads:
            raise ValueError(f"embedding dim {self.d} is not divisible by {self.heads} heads")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.mlp_ratio <= 0:
            raise ValueError(f"mlp_ratio must be positive, got {self.mlp_ratio}")
        if self.residual_mode not in RESIDUAL_MODES:
            raise ValueError(f"residual_mode must be one of {RESIDUAL_MODES}")
        if self.depth not in TESTED_DEPTHS:
            warnings.warn(f"transformer depth {self.depth} is outside the tested set {TESTED_DEPTHS}")

    @property
    def mlp_dim(self) -> int:
        return int(round(self.d * self.mlp_ratio))


def layer_norm(x: torch.Tensor, eps: float = LN_EPS) -> torch.Tensor:
    mean = x.mean(dim=-1, keepdim=True)
    var = x.var(dim=-1, unbiased=False, keepdim=True)
    return (x - mean) / torch.sqrt(var + eps)


class SelfModulatedLayerNorm(nn.Module):
    """LayerNorm with gain ``1 + e A`` and bias ``e B`` for embedding row ``e``.

    A and B start at zero, so a fresh module is a plain (affine-free) LayerNorm.
    """

    def __init__(self, d: int):
        super().__init__()
        self.gain = nn.Linear(d, d, bias=False)
        self.bias = nn.Linear(d, d, bias=False)
        nn.init.zeros_(self.gain.weight)
        nn.init.zeros_(self.bias.weight)

    def modulation(self, embedding: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return 1.0 + self.gain(embedding), self.bias(embedding)

    def forward(self, x: torch.Tensor, embedding: torch.Tensor) -> torch.Tensor:
        gain, bias = self.modulation(embedding)
        return gain * layer_norm(x) + bias


class MultiHeadAttention(nn.Module):
    """Bidirectional scaled dot-product attention.

    The most recent attention weights are kept on ``last_weights`` with shape
    (B, heads, n, n) for inspection.
    """

    def __init__(self, d: int, heads: int, dropout: float = 0.0):
        super().__init__()
        if d % heads:
            raise ValueError(f"embedding dim {d} is not divisible by {heads} heads")
        self.d, self.heads = d, heads
        self.head_dim = d // heads
        self.scale = 1.0 / math.sqrt(self.head_dim)
        self.q_proj = nn.Linear(d, d)
        self.k_proj = nn.Linear(d, d)
        self.v_proj = nn.Linear(d, d)
        self.out_proj = nn.Linear(d, d)
        self.attn_drop = nn.Dropout(dropout)
        self.last_weights: torch.Tensor | None = None

    def _heads(self, x: torch.Tensor) -> torch.Tensor:
        b, n, _ = x.shape
        return x.view(b, n, self.heads, self.head_dim).transpose(1, 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        q = self._heads(self.q_proj(x))
        k = self._heads(self.k_proj(x))
        v = self._heads(self.v_proj(x))
        weights = torch.softmax((q @ k.transpose(-2, -1)) * self.scale, dim=-1)
        self.last_weights = weights.detach()
        out = self.attn_drop(weights) @ v
        out = out.transpose(1, 2).reshape(b, n, d)
        return self.out_proj(out)


class MLP(nn.Module):
    def __init__(self, d: int, hidden: int, dropout: float = 0.0):
        super().__init__()
        self.fc_in = nn.Linear(d, hidden)
        self.fc_out = nn.Linear(hidden, d)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.drop(self.fc_out(self.drop(F.gelu(self.fc_in(x)))))


class TransformerBlock(nn.Module):
    """One block: ``l = SLN(V, PE)``, ``F_R = PE + MHA(l)``, ``out = F_R + MLP(SLN(F_R, PE))``.

    With ``residual_mode="conventional"`` the first residual adds the block
    input instead of the embedding.
    """

    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        self.residual_mode = cfg.residual_mode
        self.sln1 = SelfModulatedLayerNorm(cfg.d)
        self.attn = MultiHeadAttention(cfg.d, cfg.heads, cfg.dropout)
        self.sln2 = SelfModulatedLayerNorm(cfg.d)
        self.mlp = MLP(cfg.d, cfg.mlp_dim, cfg.dropout)

    def forward(self, v: torch.Tensor, pe: torch.Tensor) -> torch.Tensor:
        features = self.attn(self.sln1(v, pe))
        skip = pe if self.residual_mode == "paper" else v
        fused = skip + features
        return fused + self.mlp(self.sln2(fused, pe))


class TransformerStack(nn.Module):
    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        self.cfg = cfg
        self.blocks = nn.ModuleList(TransformerBlock(cfg) for _ in range(cfg.depth))
        init_weights(self)

    def forward(self, v: torch.Tensor, pe: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            v = block(v, pe)
        return v

    def attention_weights(self) -> list[torch.Tensor]:
        return [b.attn.last_weights for b in self.blocks if b.attn.last_weights is not None]


def init_weights(module: nn.Module) -> None:
    """ViT-style init for linear maps; SLN modulation maps are reset to zero."""
    for m in module.modules():
        if isinstance(m, nn.Linear):
            nn.init.trunc_normal_(m.weight, std=0.02)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
    for m in module.modules():
        if isinstance(m, SelfModulatedLayerNorm):
            nn.init.zeros_(m.gain.weight)
            nn.init.zeros_(m.bias.weight)


def zero_output_projections(stack: nn.Module) -> None:
    """Zero every attention output projection and MLP output layer."""
    with torch.no_grad():
        for m in stack.modules():
            if isinstance(m, MultiHeadAttention):
                m.out_proj.weight.zero_()
                m.out_proj.bias.zero_()
            elif isinstance(m, MLP):
                m.fc_out.weight.zero_()
                m.fc_out.bias.zero_()
