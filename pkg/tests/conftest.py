import math
import warnings

import pytest
import torch

from ptsr.config import Config

torch.set_num_threads(1)


def pytest_configure(config):
    warnings.filterwarnings("ignore", message="transformer depth .* outside the tested set")


@pytest.fixture
def gen():
    return torch.Generator().manual_seed(1234)


def smooth_scene(n: int = 64) -> torch.Tensor:
    """Deterministic textured test image, (1, 3, n, n) in [0, 1]."""
    y, x = torch.meshgrid(torch.linspace(0, 1, n), torch.linspace(0, 1, n), indexing="ij")
    r = 0.5 + 0.3 * torch.sin(2 * math.pi * 3 * x) * torch.cos(2 * math.pi * 2 * y) + 0.15 * (x > 0.5).float()
    g = 0.5 + 0.35 * torch.sin(2 * math.pi * (5 * x + 4 * y))
    b = ((x - 0.4) ** 2 + (y - 0.6) ** 2 < 0.08).float() * 0.6 + 0.2 + 0.2 * y
    return torch.stack([r, g, b]).clamp(0, 1)[None]


@pytest.fixture
def tiny_config() -> Config:
    """Small but complete training config: 16x16 LR crops, depth-1 models."""
    return Config().apply_overrides([
        "model.depth=1", "disc.depth=1", "disc.d=24",
        "train.crop_lr=16", "train.batch_size=2",
    ])


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
