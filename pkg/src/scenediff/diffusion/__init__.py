from .schedule import NoiseSchedule, make_schedule, q_sample
from .unet import ConditionalDenoiser, extend_input_channels
from .codec import ConvCodec, train_codec
from .losses import loss_simple, loss_vlb, loss_hybrid, loss_latent, HybridLoss
from .checkpoint import DiffusionCheckpoint, CheckpointError
from .sampling import ddim_sample
from .training import TrainConfig, train

__all__ = [
    "NoiseSchedule",
    "make_schedule",
    "q_sample",
    "ConditionalDenoiser",
    "extend_input_channels",
    "ConvCodec",
    "train_codec",
    "loss_simple",
    "loss_vlb",
    "loss_hybrid",
    "loss_latent",
    "HybridLoss",
    "DiffusionCheckpoint",
    "CheckpointError",
    "ddim_sample",
    "TrainConfig",
    "train",
]
