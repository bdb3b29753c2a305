from .config import (
    ALLOWED_PATCH_SIZES,
    ENCODER_PRESETS,
    ModelConfig,
    ProjectorConfig,
    REFERENCE_PARAM_COUNTS_M,
    TextConfig,
    VisionConfig,
    micro_model,
    vision_param_count,
)
from .model import (
    LOG_SCALE_INIT,
    LOG_SCALE_MAX,
    TEMPERATURE_NAME,
    build_model,
    caption_decode_loss,
    caption_targets,
    cast_store,
    count_params,
    encode_captions,
    encode_image,
    encode_text,
    export_vision,
    init_projector,
    param_names,
    projector_forward,
    temperature,
    text_forward,
    vision_forward,
)
from .checkpoint import load_checkpoint, save_checkpoint
from . import tokenizer
from .layers import ParamStore, patchify, sincos_1d, sincos_2d, trunc_normal

__all__ = [
    "ALLOWED_PATCH_SIZES",
    "ENCODER_PRESETS",
    "ModelConfig",
    "ProjectorConfig",
    "REFERENCE_PARAM_COUNTS_M",
    "TextConfig",
    "VisionConfig",
    "micro_model",
    "vision_param_count",
    "LOG_SCALE_INIT",
    "LOG_SCALE_MAX",
    "TEMPERATURE_NAME",
    "build_model",
    "caption_decode_loss",
    "caption_targets",
    "cast_store",
    "count_params",
    "encode_captions",
    "encode_image",
    "encode_text",
    "export_vision",
    "init_projector",
    "param_names",
    "projector_forward",
    "temperature",
    "text_forward",
    "vision_forward",
    "load_checkpoint",
    "save_checkpoint",
    "tokenizer",
    "ParamStore",
    "patchify",
    "sincos_1d",
    "sincos_2d",
    "trunc_normal",
]
