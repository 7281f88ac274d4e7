from __future__ import annotations

import struct

import numpy as np
import pytest
import torch

from scenediff.diffusion.checkpoint import (
    MAGIC,
    CheckpointError,
    DiffusionCheckpoint,
    load_checkpoint,
    save_checkpoint,
)
from scenediff.diffusion.codec import ConvCodec
from scenediff.diffusion.schedule import make_schedule
from scenediff.diffusion.unet import ConditionalDenoiser, extend_input_channels
from scenediff.embed import ToyJointEmbedder, ToyEmbedderConfig
from scenediff.prior import train_prior

SPEC = {"name": "toy", "config": {"d_embed": 16, "input_size": 16, "misalignment_seed": 7}}


def _ckpt(space="pixel", with_prior=True):
    torch.manual_seed(3)
    model = ConditionalDenoiser(
        space_channels=3 if space == "pixel" else 4,
        base=16,
        ch_mult=(1, 2),
        blocks_per_level=1,
        learn_sigma=space == "pixel",
    )
    extend_input_channels(model, 16, np.random.default_rng(1))
    with torch.no_grad():
        for p in model.parameters():
            p.add_(0.03 * torch.randn(p.shape))
    embedder = ToyJointEmbedder(ToyEmbedderConfig(misalignment_seed=7))
    prior = None
    if with_prior:
        prior = train_prior([(t, i) for _, t, i in embedder.vocabulary_pairs()])
    codec = None
    if space == "latent":
        codec = ConvCodec(latent_channels=4, base=16)
        with torch.no_grad():
            codec.latent_scale.fill_(1.7)
    return DiffusionCheckpoint(
        denoiser=model,
        schedule=make_schedule(100, "linear"),
        space=space,
        resolution=(32, 32) if space == "latent" else (16, 16),
        representation="st",
        d_st=16,
        embedder=embedder,
        embedder_spec=SPEC,
        codec=codec,
        prior=prior,
        config_fingerprint="cafe0123",
        train_steps=42,
        meta={"st_dropout_frac": 0.11, "corpus_n": 10},
    )


def _assert_state_equal(a, b):
    sa, sb = a.state_dict(), b.state_dict()
    assert sa.keys() == sb.keys()
    for k in sa:
        assert torch.equal(sa[k], sb[k]), k


def test_round_trip_pixel(tmp_path):
    ckpt = _ckpt()
    path = tmp_path / "m.ckpt"
    save_checkpoint(ckpt, path)
    again = load_checkpoint(path)
    _assert_state_equal(again.denoiser, ckpt.denoiser)
    assert again.space == "pixel"
    assert again.resolution == (16, 16)
    assert again.representation == "st"
    assert again.d_st == 16
    assert again.config_fingerprint == "cafe0123"
    assert again.train_steps == 42
    assert again.meta == ckpt.meta
    assert again.schedule.kind == "linear" and again.schedule.num_steps == 100
    assert np.array_equal(again.prior.weights_, ckpt.prior.weights_)
    assert np.array_equal(again.prior.bias_, ckpt.prior.bias_)
    assert again.prior.fingerprint_ == ckpt.prior.fingerprint_
    # the embedder is rebuilt from its spec, misalignment included
    assert np.array_equal(again.embedder.misalignment, ckpt.embedder.misalignment)


def test_round_trip_latent_preserves_codec(tmp_path):
    ckpt = _ckpt(space="latent", with_prior=False)
    path = tmp_path / "m.ckpt"
    save_checkpoint(ckpt, path)
    again = load_checkpoint(path)
    _assert_state_equal(again.codec, ckpt.codec)
    assert float(again.codec.latent_scale) == pytest.approx(1.7)
    assert again.prior is None
    assert again.latent_resolution == (8, 8)
    # loaded model reproduces the original forward pass bit for bit
    x = torch.randn(1, 4 + 16, 8, 8, generator=torch.Generator().manual_seed(0))
    t = torch.tensor([5.0])
    text = torch.randn(1, 16, generator=torch.Generator().manual_seed(1))
    with torch.no_grad():
        assert torch.equal(again.denoiser(x, t, text), ckpt.denoiser(x, t, text))


def test_rejects_foreign_and_truncated_files(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"PNG\x00whatever")
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        load_checkpoint(bad)

    future = tmp_path / "future.ckpt"
    future.write_bytes(MAGIC + struct.pack("<I", 999) + b"\x00" * 16)
    with pytest.raises(CheckpointError, match="schema version 999"):
        load_checkpoint(future)

    ckpt = _ckpt(with_prior=False)
    path = tmp_path / "m.ckpt"
    save_checkpoint(ckpt, path)
    blob = path.read_bytes()
    cut = tmp_path / "cut.ckpt"
    cut.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(cut)


def test_validation_at_construction():
    ckpt = _ckpt(with_prior=False)
    with pytest.raises(CheckpointError, match="unknown space"):
        DiffusionCheckpoint(
            denoiser=ckpt.denoiser, schedule=ckpt.schedule, space="frequency",
            resolution=(16, 16), representation="st", d_st=16,
            embedder=ckpt.embedder, embedder_spec=SPEC,
        )
    with pytest.raises(CheckpointError, match="requires a codec"):
        DiffusionCheckpoint(
            denoiser=ckpt.denoiser, schedule=ckpt.schedule, space="latent",
            resolution=(32, 32), representation="st", d_st=16,
            embedder=ckpt.embedder, embedder_spec=SPEC,
        )
    with pytest.raises(CheckpointError, match="unknown representation"):
        DiffusionCheckpoint(
            denoiser=ckpt.denoiser, schedule=ckpt.schedule, space="pixel",
            resolution=(16, 16), representation="one-hot", d_st=1,
            embedder=ckpt.embedder, embedder_spec=SPEC,
        )


def test_default_sample_steps():
    assert _ckpt().default_sample_steps() == 250
    assert _ckpt(space="latent", with_prior=False).default_sample_steps() == 50
