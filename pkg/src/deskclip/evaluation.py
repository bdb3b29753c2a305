"""Embedding-space evaluation: retrieval recall, zero-shot
classification, VQA exact match, and a key=value report format.

All metrics are deterministic given their inputs. Score ties are broken
by the lowest index so results reproduce across platforms regardless of
sort implementation details.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, DataError
from .models.checkpoint import load_checkpoint
from .models.config import ModelConfig
from .models.model import encode_captions, encode_image

I2T = "image_to_text"
T2I = "text_to_image"

DEFAULT_KS = (1, 5, 10)


@dataclass
class RetrievalResult:
    recall_at: dict[int, float]
    direction: str

    def validate(self) -> None:
        if self.direction not in (I2T, T2I):
            raise ConfigError(f"unknown retrieval direction {self.direction!r}")
        last = 0.0
        for k in sorted(self.recall_at):
            v = self.recall_at[k]
            if not 0.0 <= v <= 1.0:
                raise ContractError(f"recall@{k} = {v} outside [0, 1]")
            if v < last:
                raise ContractError(f"recall@{k} = {v} below recall at smaller k {last}")
            last = v


@dataclass
class ZeroShotResult:
    accuracy: float
    per_class: dict[str, float]
    class_counts: dict[str, int] = field(default_factory=dict)


def _check_unit_rows(name: str, x: np.ndarray) -> None:
    norms = np.linalg.norm(x.astype(np.float64), axis=-1)
    if not np.allclose(norms, 1.0, atol=1e-3):
        worst = float(np.abs(norms - 1.0).max())
        raise ContractError(f"{name} rows are not unit norm (max deviation {worst:.2e})")


def _recall_from_scores(scores: np.ndarray, ks) -> dict[int, float]:
    """scores[i, j] = similarity of query i to candidate j; the true
    candidate for query i is column i. Rank counts strictly better
    candidates plus equal-scored ones at a lower index."""
    n = scores.shape[0]
    target = scores[np.arange(n), np.arange(n)]
    better = (scores > target[:, None]).sum(axis=1)
    idx = np.arange(n)
    eq_before = ((scores == target[:, None]) & (idx[None, :] < idx[:, None])).sum(axis=1)
    rank = better + eq_before
    return {int(k): float((rank < k).mean()) for k in ks}


def retrieval_recall(
    image_embs: np.ndarray, caption_embs: np.ndarray, ks=DEFAULT_KS
) -> dict[str, RetrievalResult]:
    """Paired-corpus recall@k in both directions.

    Row i of each input is one side of pair i; embeddings must be unit
    norm. Returns {direction: RetrievalResult}.
    """
    image_embs = np.asarray(image_embs)
    caption_embs = np.asarray(caption_embs)
    if image_embs.ndim != 2 or caption_embs.ndim != 2:
        raise ConfigError("embeddings must be 2-d (count, dim)")
    if image_embs.shape != caption_embs.shape:
        raise ConfigError(
            f"paired embedding shapes differ: {image_embs.shape} vs {caption_embs.shape}"
        )
    n = image_embs.shape[0]
    if n == 0:
        raise ConfigError("empty corpus")
    ks = tuple(int(k) for k in ks)
    if not ks:
        raise ConfigError("no recall cutoffs given")
    for k in ks:
        if k < 1 or k > n:
            raise ConfigError(f"recall cutoff {k} outside corpus size {n}")
    _check_unit_rows("image embeddings", image_embs)
    _check_unit_rows("caption embeddings", caption_embs)

    sims = image_embs.astype(np.float64) @ caption_embs.astype(np.float64).T
    out = {
        I2T: RetrievalResult(recall_at=_recall_from_scores(sims, ks), direction=I2T),
        T2I: RetrievalResult(recall_at=_recall_from_scores(sims.T, ks), direction=T2I),
    }
    for r in out.values():
        r.validate()
    return out


# -- zero-shot classification --------------------------------------------------


def _merged_towers(vision_ckpt, text_ckpt):
    """Stores and configs for a two-tower model whose halves may live in
    separate files (a vision-only export plus a full checkpoint)."""
    v_store, v_meta = load_checkpoint(vision_ckpt, requires_grad=False)
    t_store, t_meta = load_checkpoint(text_ckpt, requires_grad=False)
    for meta, path in ((v_meta, vision_ckpt), (t_meta, text_ckpt)):
        if "model" not in meta:
            raise ConfigError(f"{path}: checkpoint meta lacks a model config")
    v_cfg = ModelConfig.from_dict(v_meta["model"])
    t_cfg = ModelConfig.from_dict(t_meta["model"])
    if v_cfg.embed_dim != t_cfg.embed_dim:
        raise ConfigError(
            f"towers disagree on embed_dim: {v_cfg.embed_dim} vs {t_cfg.embed_dim}"
        )
    store = {k: v for k, v in t_store.items() if not k.startswith("vision.")}
    for k, v in v_store.items():
        if k.startswith("vision."):
            store[k] = v
    if "vision.patch_embed.w" not in store:
        raise ConfigError(f"{vision_ckpt}: no vision tower parameters found")
    if "text_encoder.tok_embed" not in store:
        raise ConfigError(f"{text_ckpt}: no text tower parameters found")
    cfg = ModelConfig(
        vision=v_cfg.vision,
        text=t_cfg.text,
        with_decoder=False,
        embed_dim=t_cfg.embed_dim,
    )
    return store, cfg


def class_embeddings(store, cfg, classnames, templates) -> np.ndarray:
    """One unit-norm row per class: the renormalized mean over templates
    of the class-filled caption embedding."""
    if not templates:
        raise ConfigError("empty template set")
    if not classnames:
        raise ConfigError("empty class list")
    for t in templates:
        if "{}" not in t:
            raise ConfigError(f"template {t!r} has no {{}} placeholder")
    rows = []
    for name in classnames:
        embs = encode_captions(store, cfg, [t.format(name) for t in templates]).data
        mean = embs.astype(np.float64).mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm == 0.0:
            raise ContractError(f"class {name!r}: template embeddings cancel to zero")
        rows.append(mean / norm)
    return np.stack(rows)


def zero_shot_classify(
    vision_ckpt,
    text_ckpt,
    classnames,
    templates,
    images: np.ndarray,
    labels,
    batch: int = 32,
) -> ZeroShotResult:
    """Zero-shot accuracy of a two-tower checkpoint pair.

    images: (N, C, H, W) pixels in [0, 1] at the vision tower's
    resolution. labels: per-image true classname. Prediction is the
    argmax of cosine similarity against the class embeddings, ties to
    the lowest class index.
    """
    classnames = list(classnames)
    labels = list(labels)
    images = np.asarray(images)
    if images.ndim != 4:
        raise ConfigError(f"expected (N, C, H, W) images, got shape {images.shape}")
    if len(labels) != images.shape[0]:
        raise ConfigError(f"{images.shape[0]} images but {len(labels)} labels")
    index_of = {name: i for i, name in enumerate(classnames)}
    if len(index_of) != len(classnames):
        raise ConfigError("duplicate classnames")
    for lab in labels:
        if lab not in index_of:
            raise DataError(f"label {lab!r} is not in the class list")

    store, cfg = _merged_towers(vision_ckpt, text_ckpt)
    class_embs = class_embeddings(store, cfg, classnames, templates)

    preds = []
    for start in range(0, images.shape[0], batch):
        chunk = images[start : start + batch]
        img_embs = encode_image(store, cfg, chunk).data.astype(np.float64)
        scores = img_embs @ class_embs.T
        preds.extend(int(np.argmax(row)) for row in scores)

    truth = [index_of[lab] for lab in labels]
    counts: dict[str, int] = {}
    hits: dict[str, int] = {}
    correct = 0
    for pred, true_idx in zip(preds, truth):
        name = classnames[true_idx]
        counts[name] = counts.get(name, 0) + 1
        if pred == true_idx:
            hits[name] = hits.get(name, 0) + 1
            correct += 1
    per_class = {name: hits.get(name, 0) / counts[name] for name in counts}
    return ZeroShotResult(
        accuracy=correct / len(labels),
        per_class=per_class,
        class_counts=counts,
    )


# -- VQA exact match -----------------------------------------------------------


def vqa_exact_match(predictions, answers) -> float:
    """Fraction of case-folded, whitespace-trimmed exact matches."""
    predictions = list(predictions)
    answers = list(answers)
    if len(predictions) != len(answers):
        raise ConfigError(f"{len(predictions)} predictions but {len(answers)} answers")
    if not answers:
        raise ConfigError("empty answer set")
    hits = sum(
        1 for p, a in zip(predictions, answers) if p.strip().casefold() == a.strip().casefold()
    )
    return hits / len(answers)


# -- report file ---------------------------------------------------------------


def checkpoint_hash(path) -> str:
    """Short content hash identifying the exact weights evaluated."""
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    return digest[:12]


@dataclass
class ReportRow:
    metric: str
    value: float
    dataset: str
    checkpoint: str

    def to_line(self) -> str:
        for fieldname, text in (("metric", self.metric), ("dataset", self.dataset),
                                ("checkpoint", self.checkpoint)):
            if any(ch.isspace() for ch in text) or "=" in text or not text:
                raise DataError(f"report {fieldname} {text!r} must be non-empty, "
                                "without spaces or '='")
        return (
            f"metric={self.metric} value={float(self.value)!r} "
            f"dataset={self.dataset} checkpoint={self.checkpoint}"
        )

    @staticmethod
    def from_line(line: str) -> "ReportRow":
        parts = line.split()
        kv = {}
        for part in parts:
            if "=" not in part:
                raise DataError(f"malformed report token {part!r}")
            key, _, val = part.partition("=")
            kv[key] = val
        missing = {"metric", "value", "dataset", "checkpoint"} - kv.keys()
        if missing:
            raise DataError(f"report line missing keys {sorted(missing)}: {line!r}")
        return ReportRow(
            metric=kv["metric"],
            value=float(kv["value"]),
            dataset=kv["dataset"],
            checkpoint=kv["checkpoint"],
        )


def write_report(path, rows) -> None:
    lines = [r.to_line() for r in rows]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_report(path) -> list[ReportRow]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            rows.append(ReportRow.from_line(line))
    return rows


def format_table(rows) -> str:
    """Aligned terminal rendering of report rows."""
    headers = ("metric", "value", "dataset", "checkpoint")
    cells = [headers] + [
        (r.metric, f"{r.value:.4f}", r.dataset, r.checkpoint) for r in rows
    ]
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]
    out = []
    for row in cells:
        out.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    return "\n".join(out)
