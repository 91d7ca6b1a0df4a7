"""In-context diffusion inpainting at desk scale.

A numpy autodiff engine, DDPM arithmetic, a two-image ViT denoiser, a
RePaint-style mask-conditioned sampler, synthetic paired-view data, metrics,
a trainer and a CLI.
"""

from .denoiser import DenoiserConfig, DenoiserModel, predict_eps
from .errors import (
    ConfigMismatchError,
    ContractError,
    CtxPaintError,
    DimensionError,
    FormatError,
    GenerationError,
    NumericError,
    TrainingError,
)
from .sampler import InpaintTask, build_jump_schedule, inpaint, inpaint_batch
from .schedule import NoiseSchedule, cosine_schedule, laplace_schedule, make_schedule
from .tensor import Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "ConfigMismatchError", "ContractError", "CtxPaintError", "DenoiserConfig", "DenoiserModel",
    "DimensionError", "FormatError", "GenerationError", "InpaintTask", "NoiseSchedule",
    "NumericError", "Tensor", "TrainingError", "build_jump_schedule", "cosine_schedule",
    "inpaint", "inpaint_batch", "laplace_schedule", "make_schedule", "no_grad", "predict_eps",
]
