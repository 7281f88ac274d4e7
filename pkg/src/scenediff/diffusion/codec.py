"""Convolutional image codec for the latent-space variant.

Maps H x W x 3 images in [0, 1] to H/4 x W/4 x 4 latents and back.  The
network is fully convolutional, so any resolution divisible by the spatial
factor works.  ``latent_scale`` normalizes latents to roughly unit variance
before they enter the diffusion process.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn


class CodecError(ValueError):
    pass


class ConvCodec(nn.Module):
    factor = 4

    def __init__(self, latent_channels: int = 4, base: int = 32):
        super().__init__()
        self.latent_channels = latent_channels
        self.base = base
        self.encoder = nn.Sequential(
            nn.Conv2d(3, base, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(base, 2 * base, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(2 * base, 2 * base, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(2 * base, latent_channels, 3, padding=1),
        )
        self.decoder = nn.Sequential(
            nn.Conv2d(latent_channels, 2 * base, 3, padding=1),
            nn.SiLU(),
            nn.ConvTranspose2d(2 * base, 2 * base, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.ConvTranspose2d(2 * base, base, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(base, 3, 3, padding=1),
        )
        self.register_buffer("latent_scale", torch.tensor(1.0))

    def _check_input(self, x: torch.Tensor) -> None:
        if x.dim() != 4 or x.shape[1] != 3:
            raise CodecError(f"expected (B, 3, H, W) images, got {tuple(x.shape)}")
        if x.shape[2] % self.factor or x.shape[3] % self.factor:
            raise CodecError(
                f"spatial dims {tuple(x.shape[2:])} not divisible by factor {self.factor}"
            )

    def encode(self, x: torch.Tensor, scale: bool = True) -> torch.Tensor:
        self._check_input(x)
        z = self.encoder(x * 2.0 - 1.0)
        return z * self.latent_scale if scale else z

    def decode(self, z: torch.Tensor, scale: bool = True) -> torch.Tensor:
        if z.dim() != 4 or z.shape[1] != self.latent_channels:
            raise CodecError(
                f"expected (B, {self.latent_channels}, h, w) latents, got {tuple(z.shape)}"
            )
        if scale:
            z = z / self.latent_scale
        x = self.decoder(z)
        return torch.clamp((x + 1.0) / 2.0, 0.0, 1.0)


def train_codec(
    images: np.ndarray,
    steps: int = 2000,
    batch_size: int = 32,
    lr: float = 1e-3,
    seed: int = 0,
    latent_channels: int = 4,
    base: int = 32,
    log_every: int = 0,
) -> ConvCodec:
    """Fit the codec by reconstruction MSE on an image array (N, H, W, 3) in [0, 1]."""
    if images.ndim != 4 or images.shape[-1] != 3:
        raise CodecError(f"expected images of shape (N, H, W, 3), got {images.shape}")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    codec = ConvCodec(latent_channels=latent_channels, base=base)
    opt = torch.optim.Adam(codec.parameters(), lr=lr, betas=(0.9, 0.999))
    data = torch.from_numpy(np.ascontiguousarray(images.transpose(0, 3, 1, 2))).float()

    codec.train()
    for step in range(steps):
        idx = rng.integers(0, len(data), size=min(batch_size, len(data)))
        x = data[idx]
        z = codec.encoder(x * 2.0 - 1.0)
        recon = (codec.decoder(z) + 1.0) / 2.0
        loss = torch.mean((recon - x) ** 2)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if log_every and (step + 1) % log_every == 0:
            print(f"codec step {step + 1}/{steps} mse {loss.item():.5f}")

    codec.eval()
    with torch.no_grad():
        sample = data[rng.integers(0, len(data), size=min(256, len(data)))]
        z = codec.encoder(sample * 2.0 - 1.0)
        std = z.std().item()
        if std <= 0:
            raise CodecError("degenerate codec: zero latent variance")
        codec.latent_scale.fill_(1.0 / std)
    return codec
