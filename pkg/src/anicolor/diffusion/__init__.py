from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .model import (
    ControlInputs,
    DenoiserConfig,
    LayoutError,
    ModelState,
    VideoDenoiser,
    denoise,
    expand_control_input,
)
from .sampling import LOSS_WEIGHTINGS, DivergenceError, loss, sample, to_video
from .schedule import DiffusionSchedule, ScheduleError, forward_diffuse, make_schedule

__all__ = [
    "CheckpointError",
    "ControlInputs",
    "DenoiserConfig",
    "DiffusionSchedule",
    "DivergenceError",
    "LayoutError",
    "ModelState",
    "ScheduleError",
    "VideoDenoiser",
    "denoise",
    "expand_control_input",
    "forward_diffuse",
    "load_checkpoint",
    "loss",
    "LOSS_WEIGHTINGS",
    "make_schedule",
    "sample",
    "save_checkpoint",
    "to_video",
]
