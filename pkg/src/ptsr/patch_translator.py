"""Convolution-free image-to-image block: split, transform, merge."""

import torch
import torch.nn as nn

from .patch_ops import CHANNELS, PositionalEmbedding, merge_patches, split_into_patches
from .transformer import TransformerConfig, TransformerStack


class PatchTranslator(nn.Module):
    """Maps a (B, 3, H, W) image to an image of the same shape.

    The translator is built for one input geometry; further geometries can be
    registered with :meth:`add_geometry` (they share every parameter and only
    get their own fixed random embedding source). Inputs of any other geometry
    are rejected.
    """

    def __init__(self, height: int, width: int, k: int = 8,
                 cfg: TransformerConfig | None = None, seed: int = 0):
        super().__init__()
        d = k * k * CHANNELS
        cfg = cfg or TransformerConfig(d=d)
        if cfg.d != d:
            raise ValueError(f"transformer width {cfg.d} must equal k*k*3 = {d}")
        self.k = k
        self.geometry = (height, width)
        rows, cols = self._grid(height, width)
        self.pe = PositionalEmbedding(rows, cols, d, seed=seed)
        self.stack = TransformerStack(cfg)

    def _grid(self, height: int, width: int) -> tuple[int, int]:
        if height % self.k or width % self.k:
            raise ValueError(f"{height}x{width} is not divisible by patch size {self.k}")
        return height // self.k, width // self.k

    def add_geometry(self, height: int, width: int) -> None:
        self.pe.add_grid(*self._grid(height, width))

    @property
    def geometries(self) -> list[tuple[int, int]]:
        return [(r * self.k, c * self.k) for r, c in self.pe.grids]

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        _, _, h, w = image.shape
        seq = split_into_patches(image, self.k)
        if not self.pe.has_grid(seq.grid_rows, seq.grid_cols):
            expected = [r * c for r, c in self.pe.grids]
            raise ValueError(
                f"patch translator expects n in {expected} patches, got n={seq.n} "
                f"from a {h}x{w} input"
            )
        pe = self.pe.table_for(seq.grid_rows, seq.grid_cols)
        seq.vectors = self.stack(seq.vectors, pe.unsqueeze(0))
        return merge_patches(seq, h, w)


def zero_translator(pt: PatchTranslator) -> None:
    """Zero every parameter so the translator outputs the zero image."""
    with torch.no_grad():
        for p in pt.parameters():
            p.zero_()
