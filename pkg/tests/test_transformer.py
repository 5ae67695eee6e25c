import math

import numpy as np
import pytest
import torch

from ptsr.gradcheck import check_gradients
from ptsr.transformer import (MultiHeadAttention, SelfModulatedLayerNorm, TransformerBlock,
                              TransformerConfig, TransformerStack, layer_norm,
                              zero_output_projections)


def randomize(module, gen, std=0.3):
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * std)


def test_config_validation():
    with pytest.raises(ValueError):
        TransformerConfig(d=10, heads=3)
    with pytest.raises(ValueError):
        TransformerConfig(dropout=1.0)
    with pytest.raises(ValueError):
        TransformerConfig(residual_mode="other")
    with pytest.warns(UserWarning, match="depth 4"):
        TransformerConfig(depth=4)
    assert TransformerConfig().depth == 5
    assert TransformerConfig(d=192, mlp_ratio=4.0).mlp_dim == 768


def test_sln_constant_row_is_zero():
    sln = SelfModulatedLayerNorm(4)
    out = sln(torch.full((1, 2, 4), 3.0), torch.randn(1, 2, 4))
    assert torch.equal(out, torch.zeros(1, 2, 4))


def test_sln_reduces_to_layer_norm_at_init(gen):
    sln = SelfModulatedLayerNorm(6)
    x, e = torch.randn(2, 5, 6, generator=gen), torch.randn(2, 5, 6, generator=gen)
    ref = torch.nn.functional.layer_norm(x, (6,), eps=1e-5)
    torch.testing.assert_close(sln(x, e), ref, rtol=0, atol=1e-6)


def test_sln_row_statistics(gen):
    # identical weight rows make gain and bias constant along each output row
    sln = SelfModulatedLayerNorm(4).double()
    a = torch.randn(4, generator=gen, dtype=torch.float64)
    b = torch.randn(4, generator=gen, dtype=torch.float64)
    with torch.no_grad():
        sln.gain.weight.copy_(a.expand(4, 4))
        sln.bias.weight.copy_(b.expand(4, 4))
    x = torch.randn(1, 2, 4, generator=gen, dtype=torch.float64)
    e = torch.randn(1, 2, 4, generator=gen, dtype=torch.float64)
    out = sln(x, e)[0]
    for row in range(2):
        gain = 1.0 + float(e[0, row] @ a)
        bias = float(e[0, row] @ b)
        assert abs(out[row].mean().item() - bias) < 1e-6
        assert abs(out[row].std(unbiased=False).item() - abs(gain)) < 1e-4


def test_mha_single_token():
    mha = MultiHeadAttention(6, 2)
    x = torch.randn(3, 1, 6)
    out = mha(x)
    assert torch.equal(mha.last_weights, torch.ones(3, 2, 1, 1))
    torch.testing.assert_close(out, mha.out_proj(mha.v_proj(x)))


def test_mha_hand_worked_2x2():
    mha = MultiHeadAttention(2, 1).double()
    wq = torch.tensor([[1.0, 0.0], [0.0, 2.0]])
    wk = torch.tensor([[0.5, 1.0], [1.0, 0.0]])
    wv = torch.tensor([[1.0, -1.0], [2.0, 0.5]])
    with torch.no_grad():
        for lin, w in ((mha.q_proj, wq), (mha.k_proj, wk), (mha.v_proj, wv)):
            lin.weight.copy_(w)
            lin.bias.zero_()
        mha.out_proj.weight.copy_(torch.eye(2))
        mha.out_proj.bias.zero_()
    x = torch.tensor([[[1.0, 2.0], [0.0, -1.0]]], dtype=torch.float64)
    # worked by hand with rows as tokens: q = x Wq^T etc.
    q = np.array([[1.0, 4.0], [0.0, -2.0]])
    k = np.array([[2.5, 1.0], [-1.0, 0.0]])
    v = np.array([[-1.0, 3.0], [1.0, -0.5]])
    s = q @ k.T / math.sqrt(2.0)  # [[6.5, -1], [-2, 0]] / sqrt 2
    w = np.exp(s - s.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    expected = w @ v
    np.testing.assert_allclose(mha(x)[0].detach().numpy(), expected, rtol=0, atol=1e-12)
    np.testing.assert_allclose(mha.last_weights[0, 0].numpy(), w, rtol=0, atol=1e-12)


def test_attention_rows_sum_to_one(gen):
    stack = TransformerStack(TransformerConfig(depth=3, d=12, heads=3))
    randomize(stack, gen)
    stack(torch.randn(2, 7, 12, generator=gen), torch.randn(1, 7, 12, generator=gen))
    weights = stack.attention_weights()
    assert len(weights) == 3
    for w in weights:
        assert w.shape == (2, 3, 7, 7)
        assert torch.allclose(w.sum(-1), torch.ones(2, 3, 7), atol=1e-6)


def test_zero_everything_gives_zero():
    stack = TransformerStack(TransformerConfig(depth=2, d=12, heads=2))
    zero_output_projections(stack)
    out = stack(torch.zeros(1, 5, 12), torch.zeros(1, 5, 12))
    assert torch.equal(out, torch.zeros(1, 5, 12))


def test_default_residual_adds_embedding(gen):
    cfg = TransformerConfig(depth=1, d=8, heads=2)
    block = TransformerBlock(cfg)
    zero_output_projections(block)
    v, pe = torch.randn(1, 4, 8, generator=gen), torch.randn(1, 4, 8, generator=gen)
    assert torch.equal(block(v, pe), pe)
    conv = TransformerBlock(TransformerConfig(depth=1, d=8, heads=2, residual_mode="conventional"))
    zero_output_projections(conv)
    assert torch.equal(conv(v, pe), v)


def test_block_by_hand(gen):
    block = TransformerBlock(TransformerConfig(depth=1, d=8, heads=2)).double()
    randomize(block, gen)
    v = torch.randn(1, 4, 8, generator=gen, dtype=torch.float64)
    pe = torch.randn(1, 4, 8, generator=gen, dtype=torch.float64)
    g1, b1 = 1 + pe @ block.sln1.gain.weight.T, pe @ block.sln1.bias.weight.T
    fr = pe + block.attn(g1 * layer_norm(v) + b1)
    g2, b2 = 1 + pe @ block.sln2.gain.weight.T, pe @ block.sln2.bias.weight.T
    h = torch.nn.functional.gelu((g2 * layer_norm(fr) + b2) @ block.mlp.fc_in.weight.T + block.mlp.fc_in.bias)
    expected = fr + h @ block.mlp.fc_out.weight.T + block.mlp.fc_out.bias
    torch.testing.assert_close(block(v, pe), expected, rtol=0, atol=1e-12)


def test_depth_one_equals_block(gen):
    stack = TransformerStack(TransformerConfig(depth=1, d=8, heads=2))
    v, pe = torch.randn(1, 3, 8, generator=gen), torch.randn(1, 3, 8, generator=gen)
    assert torch.equal(stack(v, pe), stack.blocks[0](v, pe))


def test_parameter_count_scales_with_depth():
    d, hidden = 12, 48
    per_block = 4 * d * d + 4 * (d * d + d) + (d * hidden + hidden) + (hidden * d + d)
    for depth in (1, 2, 4):
        stack = TransformerStack(TransformerConfig(depth=depth, d=d, heads=3))
        assert sum(p.numel() for p in stack.parameters()) == depth * per_block


def test_blocks_are_independent():
    stack = TransformerStack(TransformerConfig(depth=2, d=8, heads=2))
    ids = [{id(p) for p in b.parameters()} for b in stack.blocks]
    assert not ids[0] & ids[1]
    assert not torch.equal(stack.blocks[0].attn.q_proj.weight, stack.blocks[1].attn.q_proj.weight)


def test_deterministic(gen):
    v, pe = torch.randn(1, 4, 12, generator=gen), torch.randn(1, 4, 12, generator=gen)
    outs = []
    for _ in range(2):
        torch.manual_seed(5)
        outs.append(TransformerStack(TransformerConfig(depth=3, d=12, heads=3))(v, pe))
    assert torch.equal(outs[0], outs[1])


def test_gradients_match_finite_differences(gen):
    stack = TransformerStack(TransformerConfig(depth=2, d=8, heads=2)).double()
    randomize(stack, gen)
    v = torch.randn(1, 4, 8, generator=gen, dtype=torch.float64)
    pe = torch.randn(1, 4, 8, generator=gen, dtype=torch.float64)
    errors = check_gradients(lambda: stack(v, pe).sum(), dict(stack.named_parameters()), h=1e-4)
    assert len(errors) == 2 * 16
    assert max(errors.values()) < 1e-4, errors
