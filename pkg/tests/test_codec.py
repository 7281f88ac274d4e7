from __future__ import annotations

import numpy as np
import pytest
import torch

from scenediff.data import GenConfig, gen_shapes
from scenediff.diffusion.codec import CodecError, ConvCodec, train_codec


def _corpus(n=48, canvas=32, seed=0):
    rng = np.random.default_rng(seed)
    cfg = GenConfig(canvas=canvas)
    return np.stack([gen_shapes(rng, cfg).image for _ in range(n)])


def test_shapes_and_factor():
    codec = ConvCodec(latent_channels=4)
    assert ConvCodec.factor == 4
    x = torch.rand(2, 3, 32, 32)
    z = codec.encode(x)
    assert z.shape == (2, 4, 8, 8)
    out = codec.decode(z)
    assert out.shape == (2, 3, 32, 32)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_fully_convolutional_across_resolutions():
    codec = ConvCodec()
    for hw in (16, 64):
        z = codec.encode(torch.rand(1, 3, hw, hw))
        assert z.shape == (1, 4, hw // 4, hw // 4)


def test_rejects_bad_inputs():
    codec = ConvCodec()
    with pytest.raises(CodecError, match="not divisible"):
        codec.encode(torch.rand(1, 3, 30, 30))
    with pytest.raises(CodecError, match="expected \\(B, 3"):
        codec.encode(torch.rand(1, 4, 32, 32))
    with pytest.raises(CodecError, match="latents"):
        codec.decode(torch.rand(1, 3, 8, 8))


def test_latent_scale_round_trips_through_flag():
    codec = ConvCodec()
    with torch.no_grad():
        codec.latent_scale.fill_(2.5)
    x = torch.rand(1, 3, 16, 16)
    raw = codec.encode(x, scale=False)
    assert torch.allclose(codec.encode(x), raw * 2.5)


@pytest.mark.slow
def test_trained_codec_reconstructs_and_normalizes():
    images = _corpus(n=64)
    codec = train_codec(images, steps=600, batch_size=32, seed=0)
    x = torch.from_numpy(images[:16].transpose(0, 3, 1, 2)).float()
    with torch.no_grad():
        recon = codec.decode(codec.encode(x))
        mse = torch.mean((recon - x) ** 2).item()
    assert mse < 0.01
    # normalized latents land near unit variance
    with torch.no_grad():
        z = codec.encode(x)
    assert 0.5 < z.std().item() < 2.0


@pytest.mark.slow
def test_latents_track_spatial_translation():
    # the codec is fully convolutional: moving a shape by one latent cell
    # (factor pixels) must move the latents by one cell, away from borders
    images = _corpus(n=64)
    codec = train_codec(images, steps=600, batch_size=32, seed=1)
    canvas = np.zeros((32, 32, 3), dtype=np.float32)
    canvas[8:16, 8:16, 0] = 1.0
    shifted = np.roll(canvas, 4, axis=1)  # one latent cell right
    with torch.no_grad():
        za = codec.encode(torch.from_numpy(canvas.transpose(2, 0, 1)[None]))
        zb = codec.encode(torch.from_numpy(shifted.transpose(2, 0, 1)[None]))
    rolled = torch.roll(za, 1, dims=-1)
    interior = slice(2, 7)  # columns whose receptive field avoids the padding
    match = (zb - rolled)[..., interior].abs().mean().item()
    stay = (zb - za)[..., interior].abs().mean().item()
    assert match < stay / 3.0


def test_train_codec_rejects_bad_array():
    with pytest.raises(CodecError, match="N, H, W, 3"):
        train_codec(np.zeros((4, 32, 32)), steps=1)
