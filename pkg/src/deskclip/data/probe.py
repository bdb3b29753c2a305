"""Deterministic synthetic image-text data.

Scenes are 1 to 3 colored shapes (circle, square, triangle in one of
six colors) placed on distinct cells of a 3x3 grid over a light
background. Rendering uses hard masks on pixel centers, no
antialiasing, so a scene renders to identical bytes on every platform.
Each record carries two captions: a short object list ("a red circle")
and a longer positional sentence, standing in for the original and
synthetically rewritten caption of a web-scale pair.

Captions, class labels, and question-answer pairs are all pure
functions of the scene meta, never of the pixels.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import DataError
from .pngio import decode_png, encode_png, to_unit_float
from .imaging import resize_bilinear
from .shards import ShardRecord

COLORS: dict[str, tuple[int, int, int]] = {
    "red": (220, 40, 40),
    "green": (40, 170, 60),
    "blue": (40, 80, 220),
    "yellow": (230, 200, 40),
    "purple": (150, 60, 200),
    "orange": (240, 140, 30),
}
KINDS = ("circle", "square", "triangle")
_ROWS = ("top", "middle", "bottom")
_COLS = ("left", "center", "right")
_SCALES = (0.7, 0.85, 1.0)


def cell_name(row: int, col: int) -> str:
    return f"{_ROWS[row]} {_COLS[col]}"


def render_scene(meta: dict) -> np.ndarray:
    """Scene meta to (S, S, 3) uint8 pixels."""
    size = int(meta["size"])
    bg = meta["background"]
    img = np.empty((size, size, 3), dtype=np.uint8)
    img[:, :] = np.asarray(bg, dtype=np.uint8)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    for shape in meta["shapes"]:
        r, c = shape["cell"]
        cy = (r + 0.5) * size / 3.0
        cx = (c + 0.5) * size / 3.0
        radius = shape["scale"] * size / 3.0 * 0.38
        kind = shape["kind"]
        if kind == "circle":
            mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= radius**2
        elif kind == "square":
            mask = np.maximum(np.abs(xx - cx), np.abs(yy - cy)) <= radius
        elif kind == "triangle":
            # apex up: width grows linearly from the apex to the base
            span = (yy - (cy - radius)) / 2.0
            mask = (yy >= cy - radius) & (yy <= cy + radius) & (np.abs(xx - cx) <= span)
        else:
            raise DataError(f"unknown shape kind {kind!r}")
        img[mask] = COLORS[shape["color"]]
    return img


def caption_original(meta: dict) -> str:
    parts = [f"a {s['color']} {s['kind']}" for s in meta["shapes"]]
    if len(parts) == 1:
        return parts[0]
    return ", ".join(parts[:-1]) + " and " + parts[-1]


def caption_synthetic(meta: dict) -> str:
    parts = [
        f"a {s['color']} {s['kind']} in the {cell_name(*s['cell'])}" for s in meta["shapes"]
    ]
    if len(parts) == 1:
        body = parts[0]
    else:
        body = ", ".join(parts[:-1]) + " and " + parts[-1]
    return f"a light background with {body}"


def _sample_meta(rng: np.random.Generator, image_size: int, max_shapes: int) -> dict:
    n_shapes = int(rng.integers(1, max_shapes + 1))
    cells = rng.choice(9, size=n_shapes, replace=False)
    cells = np.sort(cells)  # stable caption order: reading order
    shapes = []
    for cell in cells:
        shapes.append(
            {
                "kind": KINDS[int(rng.integers(len(KINDS)))],
                "color": list(COLORS)[int(rng.integers(len(COLORS)))],
                "cell": [int(cell) // 3, int(cell) % 3],
                "scale": float(_SCALES[int(rng.integers(len(_SCALES)))]),
            }
        )
    tint = int(rng.integers(242, 252))
    return {"size": image_size, "background": [tint, tint, tint], "shapes": shapes}


def _stratified_meta(index: int, rng: np.random.Generator, image_size: int) -> dict:
    combos = [(k, c) for k in KINDS for c in COLORS]
    kind, color = combos[index % len(combos)]
    cell = int(rng.integers(9))
    tint = int(rng.integers(242, 252))
    return {
        "size": image_size,
        "background": [tint, tint, tint],
        "shapes": [
            {
                "kind": kind,
                "color": color,
                "cell": [cell // 3, cell % 3],
                "scale": float(_SCALES[int(rng.integers(len(_SCALES)))]),
            }
        ],
    }


def generate_records(
    count: int,
    seed: int = 0,
    image_size: int = 128,
    max_shapes: int = 3,
    stratified: bool = False,
) -> list[ShardRecord]:
    """Sample ``count`` records with pairwise-distinct synthetic captions.

    Distinct captions keep nearest-neighbor retrieval well defined: a
    duplicate scene would make its own caption ambiguous. Stratified
    mode cycles the 18 color/kind combos as single-shape scenes, for
    classification tasks.
    """
    rng = np.random.default_rng(seed)
    records: list[ShardRecord] = []
    seen: set[str] = set()
    attempts = 0
    while len(records) < count:
        attempts += 1
        if attempts > 200 * count + 1000:
            raise DataError(
                f"could not sample {count} distinct scenes (size {image_size}, "
                f"max_shapes {max_shapes}); caption space too small"
            )
        if stratified:
            meta = _stratified_meta(len(records), rng, image_size)
        else:
            meta = _sample_meta(rng, image_size, max_shapes)
        synth = caption_synthetic(meta)
        if synth in seen:
            continue
        seen.add(synth)
        records.append(
            ShardRecord(
                record_id=len(records),
                png=encode_png(render_scene(meta)),
                caption_original=caption_original(meta),
                caption_synthetic=synth,
                meta=meta,
            )
        )
    return records


# -- labels and question answering ------------------------------------------


def classnames() -> list[str]:
    return [f"{color} {kind}" for kind in KINDS for color in COLORS]


def class_of(meta: dict) -> str | None:
    """Class label for single-shape scenes; None otherwise."""
    if len(meta["shapes"]) != 1:
        return None
    s = meta["shapes"][0]
    return f"{s['color']} {s['kind']}"


_COUNT_WORDS = {1: "one", 2: "two", 3: "three"}


def vqa_samples(records) -> list[tuple[int, str, str]]:
    """(record_id, question, answer) triples derivable from scene meta."""
    out: list[tuple[int, str, str]] = []
    for rec in records:
        shapes = rec.meta["shapes"]
        out.append((rec.record_id, "how many shapes are there?", _COUNT_WORDS[len(shapes)]))
        if len(shapes) == 1:
            # canonical single-shape forms, shared with the finetune harness
            out.append((rec.record_id, "what color is the shape?", shapes[0]["color"]))
            out.append((rec.record_id, "what shape is it?", shapes[0]["kind"]))
        kind_counts: dict[str, int] = {}
        combo_counts: dict[tuple[str, str], int] = {}
        for s in shapes:
            kind_counts[s["kind"]] = kind_counts.get(s["kind"], 0) + 1
            key = (s["color"], s["kind"])
            combo_counts[key] = combo_counts.get(key, 0) + 1
        for s in shapes:
            if kind_counts[s["kind"]] == 1:
                out.append((rec.record_id, f"what color is the {s['kind']}?", s["color"]))
            # skip scenes where the same color+kind sits in two cells
            if combo_counts[(s["color"], s["kind"])] == 1:
                out.append(
                    (
                        rec.record_id,
                        f"where is the {s['color']} {s['kind']}?",
                        cell_name(*s["cell"]),
                    )
                )
    return out


# -- decode helpers -----------------------------------------------------------


def record_image(rec: ShardRecord, resolution: int | None = None) -> np.ndarray:
    """Record to (3, H, W) float32 in [0, 1], optionally resized square."""
    img = to_unit_float(decode_png(rec.png))
    if resolution is not None and img.shape[1:] != (resolution, resolution):
        img = resize_bilinear(img, resolution, resolution)
    return img


# -- external directory import -------------------------------------------------


def import_directory(src_dir) -> list[ShardRecord]:
    """Build records from a directory of images plus a captions table.

    Expects ``captions.tsv`` with lines ``filename<TAB>original<TAB>synthetic``.
    The third column may be omitted; the synthetic caption then stays
    empty, and training on such records requires a caption source that
    tolerates missing rewrites. Images may be any format Pillow reads;
    they are re-encoded to PNG.
    """
    src = Path(src_dir)
    table = src / "captions.tsv"
    if not table.is_file():
        raise DataError(f"{src}: missing captions.tsv")
    records: list[ShardRecord] = []
    for line_no, line in enumerate(table.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) < 2:
            raise DataError(f"{table}:{line_no}: expected at least filename<TAB>caption")
        name, original = cols[0], cols[1]
        synthetic = cols[2] if len(cols) > 2 else ""
        img_path = src / name
        if not img_path.is_file():
            raise DataError(f"{table}:{line_no}: no such image {name}")
        pixels = decode_png(img_path.read_bytes())
        records.append(
            ShardRecord(
                record_id=len(records),
                png=encode_png(pixels),
                caption_original=original,
                caption_synthetic=synthetic,
                meta={"source": name},
            )
        )
    if not records:
        raise DataError(f"{src}: captions.tsv lists no records")
    return records


def save_meta_sidecar(path, records) -> None:
    """Write the per-record meta as JSON lines next to a shard, for
    label-dependent evaluations that should not re-parse the shard."""
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps({"id": rec.record_id, "meta": rec.meta}, sort_keys=True) + "\n")
