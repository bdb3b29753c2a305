"""Multimodal integration: tiling, tiny language model, finetune harness."""

from .anyres import (
    DEFAULT_ALLOWED,
    DEFAULT_BASE,
    AnyResGrid,
    select_grid,
    tile,
    visual_token_count,
    wasted_fraction,
)
from .lm import (
    LMConfig,
    build_lm,
    greedy_decode,
    lm_backbone,
    lm_logits,
    lm_loss,
    sequence_ce,
    train_lm_on_text,
)
from .harness import (
    MMSequence,
    TuneMode,
    VqaSample,
    answer_ids,
    build_mm_sequence,
    finetune,
    load_lm,
    load_multimodal,
    load_vision_tower,
    load_vqa,
    mm_batch_loss,
    predict_answer,
    probe_vqa,
    question_ids,
    save_vqa,
)

__all__ = [
    "DEFAULT_ALLOWED",
    "DEFAULT_BASE",
    "AnyResGrid",
    "select_grid",
    "tile",
    "visual_token_count",
    "wasted_fraction",
    "LMConfig",
    "build_lm",
    "greedy_decode",
    "lm_backbone",
    "lm_logits",
    "lm_loss",
    "sequence_ce",
    "train_lm_on_text",
    "MMSequence",
    "TuneMode",
    "VqaSample",
    "answer_ids",
    "build_mm_sequence",
    "finetune",
    "load_lm",
    "load_multimodal",
    "load_vision_tower",
    "load_vqa",
    "mm_batch_loss",
    "predict_answer",
    "probe_vqa",
    "question_ids",
    "save_vqa",
]
