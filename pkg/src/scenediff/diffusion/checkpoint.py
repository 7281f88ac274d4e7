"""Versioned binary checkpoint container.

Layout: magic ``SDCK``, u32 schema version, u32 header length, UTF-8 JSON
header, u32 tensor count, then named tensors (u16 name length, name, u8
dtype code, u8 rank, u32 dims, raw little-endian row-major data).  The
header carries everything needed to rebuild the model graph; tensors carry
the weights.
"""

from __future__ import annotations

import io
import json
import os
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from ..embed import ToyJointEmbedder, create_embedder
from ..prior import EmbeddingPrior
from .codec import ConvCodec
from .schedule import NoiseSchedule, make_schedule
from .unet import ConditionalDenoiser, extend_input_channels

MAGIC = b"SDCK"
SCHEMA_VERSION = 1

_DTYPES = {0: np.float32, 1: np.float64, 2: np.int64}
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.int64): 2}


class CheckpointError(ValueError):
    pass


@dataclass
class DiffusionCheckpoint:
    denoiser: ConditionalDenoiser
    schedule: NoiseSchedule
    space: str
    resolution: tuple
    representation: str
    d_st: int
    embedder: ToyJointEmbedder
    embedder_spec: dict
    codec: Optional[ConvCodec] = None
    prior: Optional[EmbeddingPrior] = None
    config_fingerprint: str = ""
    train_steps: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.space not in ("pixel", "latent"):
            raise CheckpointError(f"unknown space {self.space!r}")
        if self.space == "latent" and self.codec is None:
            raise CheckpointError("latent checkpoint requires a codec")
        if self.representation not in ("st", "binary"):
            raise CheckpointError(f"unknown representation {self.representation!r}")

    @property
    def latent_resolution(self) -> tuple:
        if self.space == "pixel":
            return tuple(self.resolution)
        f = self.codec.factor
        return (self.resolution[0] // f, self.resolution[1] // f)

    def default_sample_steps(self) -> int:
        return 50 if self.space == "latent" else 250


def _write_tensor(buf: io.BytesIO, name: str, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr)
    if arr.dtype not in _DTYPE_CODES:
        arr = arr.astype(np.float32)
    nb = name.encode("utf-8")
    buf.write(struct.pack("<H", len(nb)))
    buf.write(nb)
    buf.write(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
    for d in arr.shape:
        buf.write(struct.pack("<I", d))
    buf.write(arr.tobytes(order="C"))


def _read_exact(f, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint file")
    return data


def _read_tensor(f) -> tuple:
    (name_len,) = struct.unpack("<H", _read_exact(f, 2))
    name = _read_exact(f, name_len).decode("utf-8")
    code, ndim = struct.unpack("<BB", _read_exact(f, 2))
    if code not in _DTYPES:
        raise CheckpointError(f"unknown tensor dtype code {code}")
    shape = tuple(struct.unpack("<I", _read_exact(f, 4))[0] for _ in range(ndim))
    dtype = np.dtype(_DTYPES[code])
    arr = np.frombuffer(_read_exact(f, dtype.itemsize * int(np.prod(shape, dtype=np.int64))), dtype=dtype)
    return name, arr.reshape(shape).copy()


def save_checkpoint(ckpt: DiffusionCheckpoint, path: str) -> None:
    den = ckpt.denoiser
    header = {
        "space": ckpt.space,
        "resolution": list(ckpt.resolution),
        "representation": ckpt.representation,
        "d_st": ckpt.d_st,
        "schedule": {"kind": ckpt.schedule.kind, "num_steps": ckpt.schedule.num_steps},
        "model": {
            "space_channels": den.space_channels,
            "d_text": den.d_text,
            "base": den.base,
            "ch_mult": list(den.ch_mult),
            "blocks_per_level": den.blocks_per_level,
            "learn_sigma": den.learn_sigma,
        },
        "codec": None
        if ckpt.codec is None
        else {"latent_channels": ckpt.codec.latent_channels, "base": ckpt.codec.base},
        "embedder": ckpt.embedder_spec,
        "has_prior": ckpt.prior is not None,
        "prior": None
        if ckpt.prior is None
        else {
            "fit_bias": ckpt.prior.fit_bias,
            "training_loss": ckpt.prior.training_loss_,
            "fingerprint": ckpt.prior.fingerprint_,
        },
        "config_fingerprint": ckpt.config_fingerprint,
        "train_steps": ckpt.train_steps,
        "meta": ckpt.meta,
    }
    tensors = []
    for key, value in den.state_dict().items():
        tensors.append((f"denoiser.{key}", value.detach().cpu().numpy()))
    if ckpt.codec is not None:
        for key, value in ckpt.codec.state_dict().items():
            tensors.append((f"codec.{key}", value.detach().cpu().numpy()))
    if ckpt.prior is not None:
        tensors.append(("prior.weights", ckpt.prior.weights_))
        tensors.append(("prior.bias", ckpt.prior.bias_))

    body = io.BytesIO()
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body.write(MAGIC)
    body.write(struct.pack("<I", SCHEMA_VERSION))
    body.write(struct.pack("<I", len(header_bytes)))
    body.write(header_bytes)
    body.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        _write_tensor(body, name, arr)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "wb") as f:
        f.write(body.getvalue())


def load_checkpoint(path: str) -> DiffusionCheckpoint:
    with open(path, "rb") as f:
        if _read_exact(f, 4) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != SCHEMA_VERSION:
            raise CheckpointError(
                f"{path}: schema version {version} not supported (expected {SCHEMA_VERSION})"
            )
        (hlen,) = struct.unpack("<I", _read_exact(f, 4))
        header = json.loads(_read_exact(f, hlen).decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        tensors = dict(_read_tensor(f) for _ in range(count))

    m = header["model"]
    denoiser = ConditionalDenoiser(
        space_channels=m["space_channels"],
        d_text=m["d_text"],
        base=m["base"],
        ch_mult=tuple(m["ch_mult"]),
        blocks_per_level=m["blocks_per_level"],
        learn_sigma=m["learn_sigma"],
    )
    d_st = header["d_st"]
    if d_st > 0:
        extend_input_channels(denoiser, d_st, np.random.default_rng(0))
    state = {
        k[len("denoiser.") :]: torch.from_numpy(v) for k, v in tensors.items() if k.startswith("denoiser.")
    }
    denoiser.load_state_dict(state)
    denoiser.eval()

    codec = None
    if header["codec"] is not None:
        codec = ConvCodec(latent_channels=header["codec"]["latent_channels"], base=header["codec"]["base"])
        codec.load_state_dict(
            {k[len("codec.") :]: torch.from_numpy(v) for k, v in tensors.items() if k.startswith("codec.")}
        )
        codec.eval()

    prior = None
    if header["has_prior"]:
        prior = EmbeddingPrior(fit_bias=header["prior"]["fit_bias"])
        prior.weights_ = tensors["prior.weights"].astype(np.float64)
        prior.bias_ = tensors["prior.bias"].astype(np.float64)
        prior.d_embed_ = prior.weights_.shape[0]
        prior.training_loss_ = header["prior"]["training_loss"]
        prior.fingerprint_ = header["prior"].get("fingerprint", "loaded")

    spec = header["embedder"]
    embedder = create_embedder(spec["name"], **spec.get("config", {}))

    schedule = make_schedule(header["schedule"]["num_steps"], header["schedule"]["kind"])
    return DiffusionCheckpoint(
        denoiser=denoiser,
        schedule=schedule,
        space=header["space"],
        resolution=tuple(header["resolution"]),
        representation=header["representation"],
        d_st=d_st,
        embedder=embedder,
        embedder_spec=spec,
        codec=codec,
        prior=prior,
        config_fingerprint=header["config_fingerprint"],
        train_steps=header["train_steps"],
        meta=header.get("meta", {}),
    )
