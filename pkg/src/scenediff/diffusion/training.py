"""Training loop for the conditional diffusion models.

One run: load a corpus split, precompute caption and segment embeddings,
assemble per-step conditioning (random 1..3 segment subset per sample,
independent condition dropout), optimize with Adam, persist a checkpoint.
Deterministic for a fixed seed under single-threaded execution.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from ..config import ConfigError, load_toml
from ..data import load_corpus
from ..embed import create_embedder, preprocess_segment
from ..prior import train_prior
from ..representation import select_training_segments
from .checkpoint import DiffusionCheckpoint, save_checkpoint
from .codec import train_codec
from .losses import loss_hybrid, loss_simple
from .schedule import make_schedule
from .unet import ConditionalDenoiser, extend_input_channels


@dataclass
class TrainConfig:
    corpus: str = ""
    out: str = ""
    space: str = "pixel"
    representation: str = "st"
    steps: int = 3000
    batch_size: int = 32
    lr: Optional[float] = None  # default: 6e-5 pixel, 1e-4 latent
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    lambda_vlb: float = 0.001
    dropout: float = 0.1
    schedule_kind: str = "linear"
    num_timesteps: int = 1000
    seed: int = 0
    base_channels: int = 32
    ch_mult: tuple = (1, 2)
    blocks_per_level: int = 2
    learn_sigma: Optional[bool] = None  # default: True pixel, False latent
    # VLB gradients touch only the variance channels (noise head detached);
    # recorded here because the convention is a choice, not a given
    vlb_grads: str = "variance-only"
    d_embed: int = 16
    embed_input_size: int = 16
    misalignment_seed: Optional[int] = None
    use_prior: bool = True
    prior_fit_bias: bool = False
    min_segment_area: float = 0.05
    max_segments: int = 3
    limit: Optional[int] = None
    codec_steps: int = 3000
    codec_lr: float = 1e-3
    codec_base: int = 32
    latent_channels: int = 4
    log_every: int = 100

    def validate(self) -> None:
        if self.space not in ("pixel", "latent"):
            raise ConfigError(f"unknown space {self.space!r}")
        if self.representation not in ("st", "binary"):
            raise ConfigError(f"unknown representation {self.representation!r}")
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("steps and batch_size must be >= 1")
        if not 0.0 <= self.dropout <= 1.0:
            raise ConfigError(f"dropout {self.dropout} outside [0, 1]")
        if self.lambda_vlb < 0:
            raise ConfigError(f"lambda_vlb must be >= 0, got {self.lambda_vlb}")
        if self.vlb_grads != "variance-only":
            raise ConfigError("only the variance-only VLB gradient convention is implemented")
        if self.space == "pixel" and self.resolved_learn_sigma() is False and self.lambda_vlb > 0:
            raise ConfigError("lambda_vlb > 0 requires learn_sigma")
        if not self.corpus:
            raise ConfigError("config must point at a corpus")

    def resolved_lr(self) -> float:
        if self.lr is not None:
            return self.lr
        return 6e-5 if self.space == "pixel" else 1e-4

    def resolved_learn_sigma(self) -> bool:
        if self.learn_sigma is not None:
            return self.learn_sigma
        return self.space == "pixel"

    def d_st(self) -> int:
        return self.d_embed if self.representation == "st" else 1

    def embedder_spec(self) -> dict:
        return {
            "name": "toy",
            "config": {
                "d_embed": self.d_embed,
                "input_size": self.embed_input_size,
                "misalignment_seed": self.misalignment_seed,
            },
        }

    def fingerprint(self) -> str:
        doc = dataclasses.asdict(self)
        for key in ("corpus", "out", "log_every", "limit"):
            doc.pop(key)
        doc["lr"] = self.resolved_lr()
        doc["learn_sigma"] = self.resolved_learn_sigma()
        blob = json.dumps(doc, sort_keys=True, default=list)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - fields
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**doc)
        if isinstance(cfg.ch_mult, list):
            cfg.ch_mult = tuple(cfg.ch_mult)
        return cfg

    @classmethod
    def from_toml(cls, path: str) -> "TrainConfig":
        return cls.from_dict(load_toml(path))


def _encode_all(codec, images: torch.Tensor, chunk: int = 256) -> torch.Tensor:
    outs = []
    with torch.no_grad():
        for i in range(0, len(images), chunk):
            outs.append(codec.encode(images[i : i + chunk]))
    return torch.cat(outs)


def train(config: TrainConfig) -> DiffusionCheckpoint:
    """Run one training job and return (and optionally persist) the checkpoint."""
    config.validate()
    samples = load_corpus(config.corpus, split="train", limit=config.limit)
    if not samples:
        raise ConfigError(f"no training samples under {config.corpus}")

    height, width = samples[0].image.shape[:2]
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    spec = config.embedder_spec()
    embedder = create_embedder(spec["name"], **spec["config"])

    binary = config.representation == "binary"
    d_st = config.d_st()
    n = len(samples)

    captions = torch.from_numpy(
        np.stack([embedder.embed_text(s.caption) for s in samples])
    ).float()
    null_text = torch.from_numpy(embedder.null_text_vector).float()

    # pixel-resolution masks drive the area filter; the (possibly resampled)
    # copies below drive tensor assembly
    pixel_masks = [s.segment_masks() for s in samples]
    seg_embs = None
    if not binary:
        seg_embs = [
            [
                torch.from_numpy(
                    embedder.embed_image(preprocess_segment(s.image, m, embedder.input_size))
                ).float()
                for m in masks
            ]
            for s, masks in zip(samples, pixel_masks)
        ]

    images = np.stack([s.image for s in samples])
    codec = None
    if config.space == "latent":
        if height % 4 or width % 4:
            raise ConfigError(f"latent space needs canvas divisible by 4, got {height}x{width}")
        codec = train_codec(
            images,
            steps=config.codec_steps,
            lr=config.codec_lr,
            seed=config.seed,
            latent_channels=config.latent_channels,
            base=config.codec_base,
        )
        pixels = torch.from_numpy(np.ascontiguousarray(images.transpose(0, 3, 1, 2)))
        x0_all = _encode_all(codec, pixels)
        h, w = height // codec.factor, width // codec.factor
        space_channels = config.latent_channels
        fy, fx = codec.factor, codec.factor
    else:
        x0_all = torch.from_numpy(np.ascontiguousarray(images.transpose(0, 3, 1, 2))) * 2.0 - 1.0
        h, w = height, width
        space_channels = 3
        fy = fx = 1
    grid_masks = [
        [torch.from_numpy(np.ascontiguousarray(m[::fy, ::fx])) for m in masks]
        for masks in pixel_masks
    ]

    learn_sigma = config.resolved_learn_sigma()
    denoiser = ConditionalDenoiser(
        space_channels=space_channels,
        d_text=config.d_embed,
        base=config.base_channels,
        ch_mult=config.ch_mult,
        blocks_per_level=config.blocks_per_level,
        learn_sigma=learn_sigma,
    )
    extend_input_channels(denoiser, d_st, rng)
    schedule = make_schedule(config.num_timesteps, config.schedule_kind)
    opt = torch.optim.Adam(
        denoiser.parameters(),
        lr=config.resolved_lr(),
        betas=(config.adam_beta1, config.adam_beta2),
    )

    bs = config.batch_size
    full_batch = bs >= n  # tiny datasets train full-batch, deterministically ordered
    drop_events = 0
    cond_events = 0
    history = []

    for step in range(1, config.steps + 1):
        idx = np.arange(n) if full_batch else rng.integers(0, n, size=bs)
        b = len(idx)
        st = torch.zeros(b, d_st, h, w)
        text = torch.empty(b, captions.shape[1])
        for j, i in enumerate(idx):
            chosen = select_training_segments(
                pixel_masks[i],
                rng,
                min_area_fraction=config.min_segment_area,
                max_count=config.max_segments,
            )
            drop_text = rng.random() < config.dropout
            drop_st = rng.random() < config.dropout
            cond_events += 1
            if drop_st:
                drop_events += 1
            else:
                for k in chosen:
                    m = grid_masks[i][k]
                    if binary:
                        st[j, 0][m] = 1.0
                    else:
                        st[j][:, m] = seg_embs[i][k][:, None]
            text[j] = null_text if drop_text else captions[i]

        t = torch.from_numpy(rng.integers(1, config.num_timesteps + 1, size=b))
        eps = torch.randn(b, space_channels, h, w)
        x0 = x0_all[torch.from_numpy(np.asarray(idx))]

        if config.space == "pixel":
            parts = loss_hybrid(
                denoiser,
                {"x0": x0, "st": st, "cond_text": text, "t": t, "eps": eps},
                config.lambda_vlb,
                schedule,
            )
            loss, simple = parts.total, parts.simple
        else:
            # latents are precomputed with the codec frozen, so the latent
            # objective reduces to the simple loss on z0
            loss = simple = loss_simple(denoiser, x0, st, text, t, eps, schedule)

        opt.zero_grad()
        loss.backward()
        opt.step()

        if config.log_every and (step % config.log_every == 0 or step == 1):
            entry = {"step": step, "loss": float(loss.detach()), "simple": float(simple.detach())}
            history.append(entry)
            print(f"step {step}/{config.steps} loss {entry['loss']:.5f} simple {entry['simple']:.5f}")

    prior = None
    if config.use_prior:
        pairs = [(t_emb, i_emb) for _, t_emb, i_emb in embedder.vocabulary_pairs()]
        prior = train_prior(pairs, fit_bias=config.prior_fit_bias)

    denoiser.eval()
    ckpt = DiffusionCheckpoint(
        denoiser=denoiser,
        schedule=schedule,
        space=config.space,
        resolution=(height, width),
        representation=config.representation,
        d_st=d_st,
        embedder=embedder,
        embedder_spec=spec,
        codec=codec,
        prior=prior,
        config_fingerprint=config.fingerprint(),
        train_steps=config.steps,
        meta={
            "st_dropout_frac": drop_events / max(1, cond_events),
            "loss_history": history,
            "corpus_n": n,
        },
    )
    if config.out:
        save_checkpoint(ckpt, config.out)
    return ckpt
