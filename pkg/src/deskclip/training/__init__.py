from .schedule import StageSchedule, desk_curriculum, validate_curriculum
from .adamw import AdamW, clip_global_norm, is_decayed
from .state import TrainState, load_train_state, resume_optimizer, save_train_state
from .loop import (
    CurriculumResult,
    ImageCache,
    TrainLog,
    TrainOptions,
    assemble_batch,
    run_curriculum,
    strip_wall,
    train_step,
)

__all__ = [
    "StageSchedule",
    "desk_curriculum",
    "validate_curriculum",
    "AdamW",
    "clip_global_norm",
    "is_decayed",
    "TrainState",
    "load_train_state",
    "resume_optimizer",
    "save_train_state",
    "CurriculumResult",
    "ImageCache",
    "TrainLog",
    "TrainOptions",
    "assemble_batch",
    "run_curriculum",
    "strip_wall",
    "train_step",
]
