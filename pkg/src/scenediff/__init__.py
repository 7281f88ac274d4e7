"""Segment-wise text conditioning for toy diffusion models.

A desk-scale pipeline: synthetic shape scenes, a joint text/image toy
embedder, spatio-textual conditioning tensors, conditional DDPM training
with multi-conditional classifier-free guidance, metrics, a CLI, and an
HTTP generation service.
"""

__version__ = "0.1.0"

from .scene import (
    SceneSpec,
    SegmentSpec,
    RawSpatioTextualMatrix,
    SceneValidationError,
    parse_scene,
    serialize_scene,
    to_rst,
    concat_prompts,
)
from .embed import ToyJointEmbedder, ToyEmbedderConfig, create_embedder
from .representation import (
    SpatioTextualTensor,
    build_st_train,
    build_st_infer,
    build_binary,
    resample_st,
)
from .prior import EmbeddingPrior, train_prior, apply_prior
from .guidance import (
    GuidanceSpec,
    ConditionSet,
    cfg_single,
    cfg_multi,
    cfg_fast,
    required_forward_passes,
    dropout_conditions,
    MULTI,
    FAST,
)

__all__ = [
    "SceneSpec",
    "SegmentSpec",
    "RawSpatioTextualMatrix",
    "SceneValidationError",
    "parse_scene",
    "serialize_scene",
    "to_rst",
    "concat_prompts",
    "ToyJointEmbedder",
    "ToyEmbedderConfig",
    "create_embedder",
    "SpatioTextualTensor",
    "build_st_train",
    "build_st_infer",
    "build_binary",
    "resample_st",
    "EmbeddingPrior",
    "train_prior",
    "apply_prior",
    "GuidanceSpec",
    "ConditionSet",
    "cfg_single",
    "cfg_multi",
    "cfg_fast",
    "required_forward_passes",
    "dropout_conditions",
    "MULTI",
    "FAST",
]
