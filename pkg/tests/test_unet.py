from __future__ import annotations

import numpy as np
import pytest
import torch

from scenediff.diffusion.unet import (
    ConditionalDenoiser,
    DenoiserError,
    extend_input_channels,
    timestep_embedding,
)


def _model(**kw):
    torch.manual_seed(0)
    return ConditionalDenoiser(**kw)


def test_output_shapes_with_and_without_variance_head():
    m = _model(space_channels=3, d_text=16, learn_sigma=True)
    x = torch.randn(2, 3, 16, 16)
    out = m(x, torch.tensor([1.0, 5.0]), torch.randn(2, 16))
    assert out.shape == (2, 6, 16, 16)
    eps, var = m.split_output(out)
    assert eps.shape == (2, 3, 16, 16) and var.shape == (2, 3, 16, 16)

    m2 = _model(space_channels=4, d_text=16, learn_sigma=False)
    out2 = m2(torch.randn(2, 4, 16, 16), torch.tensor([1.0, 2.0]), torch.randn(2, 16))
    assert out2.shape == (2, 4, 16, 16)
    eps2, var2 = m2.split_output(out2)
    assert var2 is None and torch.equal(eps2, out2)


def test_fresh_model_outputs_zero():
    # the output conv is zero-initialized, so an untrained net predicts zero
    m = _model()
    out = m(torch.randn(2, 3, 16, 16), torch.tensor([1.0, 2.0]), torch.randn(2, 16))
    assert torch.all(out == 0.0)


def test_input_validation():
    m = _model()
    with pytest.raises(DenoiserError, match="expected input"):
        m(torch.randn(2, 5, 16, 16), torch.tensor([1.0, 2.0]), torch.randn(2, 16))
    with pytest.raises(DenoiserError, match="text embedding"):
        m(torch.randn(2, 3, 16, 16), torch.tensor([1.0, 2.0]), torch.randn(2, 8))
    with pytest.raises(DenoiserError, match="divisible by 8"):
        ConditionalDenoiser(base=12)


def test_timestep_embedding_properties():
    emb = timestep_embedding(torch.tensor([1.0, 500.0, 1000.0]), 32)
    assert emb.shape == (3, 32)
    assert not torch.equal(emb[0], emb[1])
    # cos component of frequency 0 is cos(t); bounded in [-1, 1]
    assert torch.all(emb.abs() <= 1.0)
    odd = timestep_embedding(torch.tensor([3.0]), 33)
    assert odd.shape == (1, 33) and odd[0, -1] == 0.0


def test_text_condition_changes_output():
    m = _model()
    # zero-initialized convs mute the conditioning path at init; nudge all
    # weights so the adaptive norm terms reach the output
    with torch.no_grad():
        for p in m.parameters():
            p.add_(0.01)
    x = torch.randn(1, 3, 16, 16)
    t = torch.tensor([10.0])
    a = m(x, t, torch.ones(1, 16))
    b = m(x, t, -torch.ones(1, 16))
    assert not torch.allclose(a, b)


# -- channel extension --------------------------------------------------------


def test_extension_preserves_original_computation():
    m = _model()
    x = torch.randn(2, 3, 16, 16)
    t = torch.tensor([3.0, 7.0])
    text = torch.randn(2, 16)
    before = m(x, t, text)
    w_before = m.input_conv.weight.detach().clone()

    extend_input_channels(m, 17, np.random.default_rng(0))
    assert m.in_channels == 20 and m.cond_channels == 17
    # original kernel slice is bit-identical
    assert torch.equal(m.input_conv.weight[:, :3], w_before)
    # zeros in the new channels reproduce the original output exactly up to
    # float add-with-zero, which is exact
    after = m(torch.cat([x, torch.zeros(2, 17, 16, 16)], dim=1), t, text)
    assert torch.abs(after - before).max().item() <= 1e-6


def test_extension_new_slice_statistics():
    # fresh columns are He-scaled: variance 2 / fan_in of the widened layer
    draws = []
    for seed in range(300):
        m = _model()
        extend_input_channels(m, 17, np.random.default_rng(seed))
        draws.append(m.input_conv.weight[:, 3:].detach().numpy().ravel())
    flat = np.concatenate(draws)
    fan_in = 20 * 9
    assert flat.var() == pytest.approx(2.0 / fan_in, rel=0.05)
    assert abs(flat.mean()) < 1e-3


def test_extension_edge_cases():
    m = _model()
    rng = np.random.default_rng(0)
    assert extend_input_channels(m, 0, rng) is m
    assert m.in_channels == 3
    extend_input_channels(m, 4, rng)
    with pytest.raises(DenoiserError, match="already extended"):
        extend_input_channels(m, 4, rng)
    with pytest.raises(DenoiserError, match=">= 0"):
        extend_input_channels(_model(), -1, rng)


def test_extension_is_deterministic_per_seed():
    a = extend_input_channels(_model(), 8, np.random.default_rng(42))
    b = extend_input_channels(_model(), 8, np.random.default_rng(42))
    assert torch.equal(a.input_conv.weight, b.input_conv.weight)
    c = extend_input_channels(_model(), 8, np.random.default_rng(43))
    assert not torch.equal(a.input_conv.weight[:, 3:], c.input_conv.weight[:, 3:])


def test_deeper_multiplier_stack():
    m = _model(base=16, ch_mult=(1, 2, 4), blocks_per_level=1)
    out = m(torch.randn(1, 3, 16, 16), torch.tensor([1.0]), torch.randn(1, 16))
    assert out.shape == (1, 6, 16, 16)
