from .pngio import decode_png, encode_png, to_unit_float
from .imaging import hflip, resize_and_pad, resize_bilinear
from .shards import ShardRecord, iter_shard, read_shard, shard_record_count, write_shard
from .probe import (
    caption_original,
    caption_synthetic,
    class_of,
    classnames,
    generate_records,
    import_directory,
    record_image,
    render_scene,
    save_meta_sidecar,
    vqa_samples,
)

__all__ = [
    "decode_png",
    "encode_png",
    "to_unit_float",
    "hflip",
    "resize_and_pad",
    "resize_bilinear",
    "ShardRecord",
    "iter_shard",
    "read_shard",
    "shard_record_count",
    "write_shard",
    "caption_original",
    "caption_synthetic",
    "class_of",
    "classnames",
    "generate_records",
    "import_directory",
    "record_image",
    "render_scene",
    "save_meta_sidecar",
    "vqa_samples",
]
