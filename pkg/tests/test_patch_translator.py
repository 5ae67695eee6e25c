import pytest
import torch

from ptsr.gradcheck import check_gradients
from ptsr.patch_ops import merge_patches, split_into_patches
from ptsr.patch_translator import PatchTranslator, zero_translator
from ptsr.transformer import TransformerConfig


def small_translator(size=16, k=8, depth=1, seed=0):
    return PatchTranslator(size, size, k, TransformerConfig(depth=depth, d=k * k * 3, heads=3), seed)


def test_shape_preserved(gen):
    pt = small_translator(64)
    x = torch.rand(2, 3, 64, 64, generator=gen)
    assert pt(x).shape == x.shape


def test_zeroed_outputs_zero(gen):
    pt = small_translator()
    zero_translator(pt)
    assert torch.equal(pt(torch.rand(1, 3, 16, 16, generator=gen)), torch.zeros(1, 3, 16, 16))


def test_equals_manual_composition(gen):
    pt = small_translator(depth=2)
    x = torch.rand(1, 3, 16, 16, generator=gen)
    seq = split_into_patches(x, 8)
    seq.vectors = pt.stack(seq.vectors, pt.pe.table.unsqueeze(0))
    assert torch.equal(pt(x), merge_patches(seq, 16, 16))


def test_geometry_mismatch_names_n():
    pt = small_translator(16)
    with pytest.raises(ValueError, match=r"expects n in \[4\] patches, got n=16"):
        pt(torch.zeros(1, 3, 32, 32))
    with pytest.raises(ValueError):
        pt(torch.zeros(1, 3, 12, 16))


def test_registered_geometry_shares_parameters(gen):
    pt = small_translator(16)
    n_params = sum(p.numel() for p in pt.parameters())
    pt.add_geometry(32, 32)
    assert sum(p.numel() for p in pt.parameters()) == n_params
    assert pt.geometries == [(16, 16), (32, 32)]
    assert pt(torch.rand(1, 3, 32, 32, generator=gen)).shape == (1, 3, 32, 32)


def test_rejects_width_mismatch():
    with pytest.raises(ValueError):
        PatchTranslator(16, 16, 8, TransformerConfig(depth=1, d=48, heads=3))


def test_global_receptive_field(gen):
    torch.manual_seed(0)
    pt = small_translator(32, depth=1).double()  # default (generic) init
    x = torch.rand(1, 3, 32, 32, generator=gen, dtype=torch.float64)
    x2 = x.clone()
    x2[..., 0:8, 0:8] += 0.5  # perturb patch 0 only
    with torch.no_grad():
        delta = (pt(x2) - pt(x)).abs()
    per_patch = split_into_patches(delta, 8).vectors[0].amax(dim=1)
    assert per_patch.shape == (16,)
    assert bool((per_patch > 0).all())


def test_input_gradient_matches_finite_differences(gen):
    pt = small_translator(16, depth=1).double()
    with torch.no_grad():
        for p in pt.parameters():
            p.normal_(0.0, 0.05, generator=gen)
    x = torch.rand(1, 3, 16, 16, generator=gen, dtype=torch.float64).requires_grad_(True)
    w = torch.randn(1, 3, 16, 16, generator=gen, dtype=torch.float64)
    err = check_gradients(lambda: (pt(x) * w).sum(), {"x": x})["x"]
    assert err < 1e-4
