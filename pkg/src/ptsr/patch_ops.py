"""Image <-> patch-sequence conversion and the random-projection positional embedding.

Images are batched tensors of shape (B, 3, H, W). A patch sequence holds
(B, n, d) vectors with d = k * k * 3. Patches are ordered row-major over the
patch grid and each patch is flattened row-major over (row, col, channel).
"""

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

CHANNELS = 3


@dataclass
class PatchSequence:
    vectors: torch.Tensor  # (B, n, d)
    grid_rows: int
    grid_cols: int
    k: int
    channels: int = CHANNELS

    @property
    def n(self) -> int:
        return self.grid_rows * self.grid_cols

    @property
    def d(self) -> int:
        return self.k * self.k * self.channels


def check_divisible(height: int, width: int, k: int) -> None:
    if height % k:
        raise ValueError(f"image height {height} is not divisible by patch size {k}")
    if width % k:
        raise ValueError(f"image width {width} is not divisible by patch size {k}")


def split_into_patches(image: torch.Tensor, k: int) -> PatchSequence:
    """Split (B, C, H, W) images into non-overlapping k x k patches.

    Pure index rearrangement: no arithmetic touches the pixel values.
    """
    if image.dim() != 4:
        raise ValueError(f"expected a (B, C, H, W) tensor, got shape {tuple(image.shape)}")
    b, c, h, w = image.shape
    check_divisible(h, w, k)
    rows, cols = h // k, w // k
    x = image.reshape(b, c, rows, k, cols, k)
    # (B, rows, cols, k_row, k_col, C)
    x = x.permute(0, 2, 4, 3, 5, 1)
    vectors = x.reshape(b, rows * cols, k * k * c)
    return PatchSequence(vectors, rows, cols, k, c)


def merge_patches(seq: PatchSequence, height: int, width: int) -> torch.Tensor:
    """Exact inverse of :func:`split_into_patches`."""
    k, c = seq.k, seq.channels
    if height != seq.grid_rows * k or width != seq.grid_cols * k:
        raise ValueError(
            f"cannot merge a {seq.grid_rows}x{seq.grid_cols} grid of {k}px patches "
            f"into a {height}x{width} image"
        )
    v = seq.vectors
    if v.dim() != 3 or v.shape[1] != seq.n or v.shape[2] != seq.d:
        raise ValueError(
            f"patch vectors of shape {tuple(v.shape)} do not match n={seq.n}, d={seq.d}"
        )
    b = v.shape[0]
    x = v.reshape(b, seq.grid_rows, seq.grid_cols, k, k, c)
    x = x.permute(0, 5, 1, 3, 2, 4)
    return x.reshape(b, c, height, width)


def random_source(n: int, d: int, seed: int, dtype=torch.float32) -> torch.Tensor:
    """Seeded standard-normal (n, d) matrix; identical for identical arguments."""
    if n < 1 or d < 1:
        raise ValueError(f"n and d must be >= 1, got n={n}, d={d}")
    gen = torch.Generator().manual_seed(int(seed))
    return torch.randn(n, d, generator=gen, dtype=torch.float64).to(dtype)


def grid_seed(seed: int, grid_rows: int, grid_cols: int) -> int:
    return int(np.random.SeedSequence([seed, grid_rows, grid_cols]).generate_state(1)[0])


class PositionalEmbedding(nn.Module):
    """Learned projection of a fixed random source: ``table = rv @ w_pe``.

    ``rv`` is a buffer (never trained) and ``w_pe`` the only parameter, so the
    table always reflects the current weights. Since ``w_pe`` is d x d it does
    not depend on the patch count; additional grid geometries can be
    registered, each with its own seeded ``rv``, while sharing ``w_pe``.
    """

    def __init__(self, grid_rows: int, grid_cols: int, d: int, seed: int = 0,
                 init_std: float = 0.02):
        super().__init__()
        self.d, self.seed = d, seed
        self.grid = (grid_rows, grid_cols)
        self._grids: list[tuple[int, int]] = []
        self.add_grid(grid_rows, grid_cols)
        w = torch.empty(d, d)
        nn.init.normal_(w, mean=0.0, std=init_std / math.sqrt(d))
        self.w_pe = nn.Parameter(w)

    @property
    def n(self) -> int:
        return self.grid[0] * self.grid[1]

    @property
    def grids(self) -> list[tuple[int, int]]:
        return list(self._grids)

    def add_grid(self, grid_rows: int, grid_cols: int) -> None:
        if (grid_rows, grid_cols) in self._grids:
            return
        rv = random_source(grid_rows * grid_cols, self.d, grid_seed(self.seed, grid_rows, grid_cols))
        self.register_buffer(self._buffer_name(grid_rows, grid_cols), rv)
        self._grids.append((grid_rows, grid_cols))

    @staticmethod
    def _buffer_name(grid_rows: int, grid_cols: int) -> str:
        return f"rv_{grid_rows}x{grid_cols}"

    def has_grid(self, grid_rows: int, grid_cols: int) -> bool:
        return (grid_rows, grid_cols) in self._grids

    def rv_for(self, grid_rows: int, grid_cols: int) -> torch.Tensor:
        if not self.has_grid(grid_rows, grid_cols):
            raise ValueError(
                f"no positional embedding for a {grid_rows}x{grid_cols} patch grid "
                f"(n={grid_rows * grid_cols}); expected n in {[r * c for r, c in self._grids]}"
            )
        return getattr(self, self._buffer_name(grid_rows, grid_cols))

    def table_for(self, grid_rows: int, grid_cols: int) -> torch.Tensor:
        return self.rv_for(grid_rows, grid_cols) @ self.w_pe

    @property
    def rv(self) -> torch.Tensor:
        return self.rv_for(*self.grid)

    @property
    def table(self) -> torch.Tensor:
        return self.table_for(*self.grid)

    def forward(self) -> torch.Tensor:
        return self.table


def make_positional_embedding(n: int, d: int, seed: int) -> PositionalEmbedding:
    """Embedding for a sequence of ``n`` patches (treated as a 1 x n grid)."""
    if n < 1 or d < 1:
        raise ValueError(f"n and d must be >= 1, got n={n}, d={d}")
    return PositionalEmbedding(1, n, d, seed)
