"""Conditional denoising network.

A small UNet over square feature maps.  Global text conditioning enters
through adaptive group norm (scale/shift per channel) together with the
timestep embedding; spatial conditioning enters only by channel
concatenation on the input, via :func:`extend_input_channels`.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn


class DenoiserError(ValueError):
    pass


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of (possibly fractional) timesteps, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float32, device=t.device) / (half - 1)
    )
    args = t.to(torch.float32)[:, None] * freqs[None, :]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2 == 1:
        emb = torch.nn.functional.pad(emb, (0, 1))
    return emb


def _zero_init(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        nn.init.zeros_(p)
    return module


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, cond_dim: int, groups: int = 8):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.cond_proj = nn.Linear(cond_dim, 2 * cout)
        self.norm2 = nn.GroupNorm(groups, cout)
        self.conv2 = _zero_init(nn.Conv2d(cout, cout, 3, padding=1))
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        h = self.conv1(torch.nn.functional.silu(self.norm1(x)))
        scale, shift = self.cond_proj(torch.nn.functional.silu(cond)).chunk(2, dim=-1)
        h = self.norm2(h) * (1.0 + scale[..., None, None]) + shift[..., None, None]
        h = self.conv2(torch.nn.functional.silu(h))
        return h + self.skip(x)


class ConditionalDenoiser(nn.Module):
    """Predicts noise (and log-variance interpolation weights) from x_t.

    Input channel layout: ``space_channels`` diffused channels followed by
    ``cond_channels`` concatenated conditioning channels (zero until the
    network is extended).  Output has ``space_channels`` noise channels,
    plus another ``space_channels`` variance channels when ``learn_sigma``.
    """

    def __init__(
        self,
        space_channels: int = 3,
        d_text: int = 16,
        base: int = 32,
        ch_mult: tuple = (1, 2),
        blocks_per_level: int = 2,
        learn_sigma: bool = True,
    ):
        super().__init__()
        if base % 8 != 0:
            raise DenoiserError(f"base channel count must be divisible by 8, got {base}")
        self.space_channels = space_channels
        self.cond_channels = 0
        self.d_text = d_text
        self.base = base
        self.ch_mult = tuple(ch_mult)
        self.blocks_per_level = blocks_per_level
        self.learn_sigma = learn_sigma

        cond_dim = base * 4
        self.cond_dim = cond_dim
        self.time_mlp = nn.Sequential(
            nn.Linear(base, cond_dim), nn.SiLU(), nn.Linear(cond_dim, cond_dim)
        )
        self.text_mlp = nn.Sequential(
            nn.Linear(d_text, cond_dim), nn.SiLU(), nn.Linear(cond_dim, cond_dim)
        )

        self.input_conv = nn.Conv2d(space_channels, base, 3, padding=1)

        chans = [base * m for m in self.ch_mult]
        self.down_blocks = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        skip_chans = [base]
        ch = base
        for level, cout in enumerate(chans):
            blocks = nn.ModuleList()
            for _ in range(blocks_per_level):
                blocks.append(ResBlock(ch, cout, cond_dim))
                ch = cout
                skip_chans.append(ch)
            self.down_blocks.append(blocks)
            if level < len(chans) - 1:
                self.downsamples.append(nn.Conv2d(ch, ch, 3, stride=2, padding=1))
                skip_chans.append(ch)

        self.mid1 = ResBlock(ch, ch, cond_dim)
        self.mid2 = ResBlock(ch, ch, cond_dim)

        self.up_blocks = nn.ModuleList()
        self.upsamples = nn.ModuleList()
        for level, cout in reversed(list(enumerate(chans))):
            blocks = nn.ModuleList()
            for _ in range(blocks_per_level + 1):
                blocks.append(ResBlock(ch + skip_chans.pop(), cout, cond_dim))
                ch = cout
            self.up_blocks.append(blocks)
            if level > 0:
                self.upsamples.append(nn.Conv2d(ch, ch, 3, padding=1))

        out_channels = space_channels * (2 if learn_sigma else 1)
        self.out_norm = nn.GroupNorm(8, ch)
        self.out_conv = _zero_init(nn.Conv2d(ch, out_channels, 3, padding=1))

    @property
    def in_channels(self) -> int:
        return self.space_channels + self.cond_channels

    def forward(self, x: torch.Tensor, t: torch.Tensor, text: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.in_channels:
            raise DenoiserError(
                f"expected input of shape (B, {self.in_channels}, H, W), got {tuple(x.shape)}"
            )
        if text.dim() != 2 or text.shape[1] != self.d_text:
            raise DenoiserError(
                f"expected text embedding of shape (B, {self.d_text}), got {tuple(text.shape)}"
            )
        cond = self.time_mlp(timestep_embedding(t, self.base)) + self.text_mlp(
            text.to(torch.float32)
        )

        h = self.input_conv(x)
        skips = [h]
        for level, blocks in enumerate(self.down_blocks):
            for block in blocks:
                h = block(h, cond)
                skips.append(h)
            if level < len(self.down_blocks) - 1:
                h = self.downsamples[level](h)
                skips.append(h)

        h = self.mid1(h, cond)
        h = self.mid2(h, cond)

        for i, blocks in enumerate(self.up_blocks):
            for block in blocks:
                h = block(torch.cat([h, skips.pop()], dim=1), cond)
            if i < len(self.upsamples):
                h = torch.nn.functional.interpolate(h, scale_factor=2, mode="nearest")
                h = self.upsamples[i](h)

        return self.out_conv(torch.nn.functional.silu(self.out_norm(h)))

    def split_output(self, out: torch.Tensor) -> tuple:
        """Split network output into (eps, variance_weights or None)."""
        if not self.learn_sigma:
            return out, None
        return out[:, : self.space_channels], out[:, self.space_channels :]


def extend_input_channels(
    model: ConditionalDenoiser, extra_channels: int, rng: np.random.Generator
) -> ConditionalDenoiser:
    """Widen the first convolution to accept concatenated conditioning channels.

    The original kernel slice is preserved exactly; new columns are drawn
    from N(0, 2 / fan_in) with fan_in computed for the widened layer.  Feeding
    zeros in the new channels therefore reproduces the original first-layer
    pre-activations.  A model can only be extended once.
    """
    if model.cond_channels != 0:
        raise DenoiserError("input channels already extended")
    if extra_channels < 0:
        raise DenoiserError(f"extra_channels must be >= 0, got {extra_channels}")
    if extra_channels == 0:
        return model

    old = model.input_conv
    out_ch, in_ch, kh, kw = old.weight.shape
    new = nn.Conv2d(in_ch + extra_channels, out_ch, (kh, kw), padding=old.padding)
    fan_in = (in_ch + extra_channels) * kh * kw
    std = math.sqrt(2.0 / fan_in)
    fresh = rng.normal(0.0, std, size=(out_ch, extra_channels, kh, kw))
    with torch.no_grad():
        new.weight[:, :in_ch] = old.weight
        new.weight[:, in_ch:] = torch.from_numpy(fresh).to(old.weight.dtype)
        new.bias.copy_(old.bias)
    model.input_conv = new
    model.cond_channels = extra_channels
    return model
