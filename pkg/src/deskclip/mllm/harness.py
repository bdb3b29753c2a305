"""Multimodal finetuning harness.

Wires a pretrained image tower into the tiny language model through a
two-layer projector: image patches become LM-width tokens, the question
and answer bytes follow, and the loss reads only the answer positions.
Two tuning regimes: ``frozen_encoder`` leaves the image tower untouched
(its parameters never enter the optimizer and its multiplier is pinned
to zero), ``full_finetune`` updates it at a reduced learning rate.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, ContextOverflowError, DataError, ShapeError
from ..data.probe import record_image, vqa_samples
from ..models import tokenizer
from ..models.checkpoint import load_checkpoint, save_checkpoint
from ..models.config import ModelConfig, ProjectorConfig
from ..models.layers import ParamStore
from ..models.model import init_projector, projector_forward, vision_forward
from ..numerics import Tensor, concat, embedding, reshape
from ..training.adamw import AdamW, clip_global_norm
from ..training.schedule import StageSchedule
from .lm import LMConfig, build_lm, greedy_decode, lm_backbone, lm_logits, sequence_ce

TUNE_MODES = ("frozen_encoder", "full_finetune")
DEFAULT_ENCODER_MULTIPLIER = 0.1


@dataclass
class TuneMode:
    """Which components train, and how fast relative to the base lr."""

    mode: str
    lr_multipliers: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.mode not in TUNE_MODES:
            raise ConfigError(f"tune mode must be one of {TUNE_MODES}, got {self.mode!r}")
        if self.mode == "frozen_encoder" and self.lr_multipliers.get("vision.") != 0.0:
            raise ConfigError("frozen_encoder requires a vision multiplier of exactly 0")

    @staticmethod
    def frozen_encoder() -> "TuneMode":
        return TuneMode(mode="frozen_encoder", lr_multipliers={"vision.": 0.0})

    @staticmethod
    def full_finetune(encoder_multiplier: float = DEFAULT_ENCODER_MULTIPLIER) -> "TuneMode":
        return TuneMode(mode="full_finetune", lr_multipliers={"vision.": encoder_multiplier})


@dataclass
class VqaSample:
    """One instruction triple; ``image`` names a record id or file."""

    image: str
    question: str
    answer: str

    def to_line(self) -> str:
        for part in (self.image, self.question, self.answer):
            if "\t" in part or "\n" in part:
                raise DataError(f"vqa fields must not contain tabs or newlines: {part!r}")
        return f"{self.image}\t{self.question}\t{self.answer}"

    @staticmethod
    def from_line(line: str) -> "VqaSample":
        cols = line.rstrip("\n").split("\t")
        if len(cols) != 3:
            raise DataError(f"expected image<TAB>question<TAB>answer, got {line!r}")
        return VqaSample(image=cols[0], question=cols[1], answer=cols[2])


def save_vqa(path, samples: list) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in samples:
            f.write(s.to_line() + "\n")


def load_vqa(path) -> list[VqaSample]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(VqaSample.from_line(line))
    return out


def probe_vqa(records) -> list[VqaSample]:
    """Question-answer triples for probe records, image keyed by record id."""
    return [
        VqaSample(image=str(rid), question=q, answer=a)
        for rid, q, a in vqa_samples(records)
    ]


def question_ids(question: str) -> list[int]:
    return [tokenizer.BOS_ID] + tokenizer.encode(question)


def answer_ids(answer: str) -> list[int]:
    return tokenizer.encode(answer) + [tokenizer.EOS_ID]


@dataclass
class MMSequence:
    """One [visual][prompt][answer] training row.

    loss_mask marks the positions whose next-token prediction is an
    answer token, so its sum equals the answer length; targets holds
    those answer ids at the same positions.
    """

    embeddings: Tensor  # (T, width)
    loss_mask: np.ndarray  # (T,)
    targets: np.ndarray  # (T,) int

    @property
    def length(self) -> int:
        return self.embeddings.shape[0]


def build_mm_sequence(
    store: ParamStore,
    cfg: LMConfig,
    visual: Tensor | None,
    prompt_ids: list,
    answer_ids_: list,
) -> MMSequence:
    """Assemble one multimodal sequence in [visual][prompt][answer] order."""
    n_vis = 0 if visual is None else visual.shape[0]
    if visual is not None and (visual.ndim != 2 or visual.shape[1] != cfg.width):
        raise ShapeError(f"visual tokens must be (n, {cfg.width}), got {visual.shape}")
    text = list(prompt_ids) + list(answer_ids_)
    total = n_vis + len(text)
    if total > cfg.context:
        raise ContextOverflowError(
            f"multimodal sequence length {total} exceeds language model "
            f"context {cfg.context}"
        )
    if answer_ids_ and n_vis + len(prompt_ids) == 0:
        raise DataError("an answer needs at least one visual or prompt position before it")

    parts = []
    if visual is not None and n_vis:
        parts.append(visual)
    if text:
        parts.append(embedding(store["lm.tok_embed"], np.asarray(text, dtype=np.int64)))
    if not parts:
        raise DataError("empty multimodal sequence")
    embeddings = parts[0] if len(parts) == 1 else concat(parts, axis=0)

    mask = np.zeros(total, dtype=np.float32)
    targets = np.zeros(total, dtype=np.int64)
    ans_start = n_vis + len(prompt_ids)
    for j, aid in enumerate(answer_ids_):
        mask[ans_start + j - 1] = 1.0
        targets[ans_start + j - 1] = aid
    return MMSequence(embeddings=embeddings, loss_mask=mask, targets=targets)


def mm_batch_loss(
    store: ParamStore,
    cfg: LMConfig,
    visual: Tensor,
    prompts: list,
    answers: list,
) -> tuple[Tensor, int]:
    """Answer-token cross entropy over a batch sharing one visual length.

    visual: (B, n_vis, width) projected image tokens. prompts/answers:
    per-row id lists. Equivalent to stacking build_mm_sequence rows;
    batched here so the graph stays small.
    """
    b, n_vis, _ = visual.shape
    if not (len(prompts) == len(answers) == b):
        raise ShapeError("prompt/answer counts must match the visual batch")
    rows = [list(p) + list(a) for p, a in zip(prompts, answers)]
    for row in rows:
        total = n_vis + len(row)
        if total > cfg.context:
            raise ContextOverflowError(
                f"multimodal sequence length {total} exceeds language model "
                f"context {cfg.context}"
            )
    longest = max(len(r) for r in rows)
    ids = np.full((b, longest), tokenizer.PAD_ID, dtype=np.int64)
    mask = np.zeros((b, n_vis + longest), dtype=np.float32)
    targets = np.zeros((b, n_vis + longest), dtype=np.int64)
    for i, (prompt, answer) in enumerate(zip(prompts, answers)):
        row = rows[i]
        ids[i, : len(row)] = row
        start = n_vis + len(prompt)
        for j, aid in enumerate(answer):
            mask[i, start + j - 1] = 1.0
            targets[i, start + j - 1] = aid

    x = concat([visual, embedding(store["lm.tok_embed"], ids)], axis=1)
    hidden = lm_backbone(store, cfg, x)
    return sequence_ce(lm_logits(store, hidden), targets, mask)


# -- finetuning ---------------------------------------------------------------


@dataclass
class FinetuneResult:
    store: ParamStore
    encoder_config: ModelConfig
    lm_config: LMConfig
    projector_config: ProjectorConfig
    log_path: Path
    final_checkpoint: Path
    last_loss: float


def load_vision_tower(vision_checkpoint) -> tuple[ParamStore, ModelConfig]:
    path = Path(vision_checkpoint)
    if not path.is_file():
        raise ConfigError(f"vision checkpoint not found: {path}")
    store, meta = load_checkpoint(path)
    if "model" not in meta:
        raise ConfigError(f"{path}: checkpoint carries no model config")
    cfg = ModelConfig.from_dict(meta["model"])
    missing = [n for n in ("vision.patch_embed.w", "vision.ln_f.g") if n not in store]
    if missing:
        raise ConfigError(f"{path}: not a vision checkpoint (missing {missing})")
    return store, cfg


def load_lm(lm_checkpoint) -> tuple[ParamStore, LMConfig]:
    path = Path(lm_checkpoint)
    if not path.is_file():
        raise ConfigError(f"language model checkpoint not found: {path}")
    store, meta = load_checkpoint(path)
    if "lm_config" not in meta:
        raise ConfigError(f"{path}: checkpoint carries no language model config")
    return store, LMConfig.from_dict(meta["lm_config"])


def finetune(
    mode: TuneMode,
    stages: list,
    records: list,
    vqa: list,
    vision_checkpoint,
    out_dir,
    lm_store: ParamStore | None = None,
    lm_cfg: LMConfig | None = None,
    lm_checkpoint=None,
    projector_hidden: int = 0,
    seed: int = 0,
    grad_clip: float = 1.0,
    weight_decay: float = 0.01,
    log_every: int = 1,
) -> FinetuneResult:
    """Instruction-tune the multimodal stack over one or more stages.

    Builds a fresh projector, merges the loaded towers into one store,
    and trains on (image, question, answer) triples with deterministic
    epoch shuffling. Stage schedules reuse the pretraining lr shape
    (linear warmup, cosine decay); their resolution must match the
    encoder's. ``vqa`` is either one sample list shared by every stage
    or a list of per-stage sample lists, one per schedule entry.
    """
    mode.validate()
    if not stages:
        raise ConfigError("finetune needs at least one stage")
    if not vqa:
        raise DataError("no vqa samples to finetune on")
    vqa = list(vqa)
    if isinstance(vqa[0], (list, tuple)):
        if len(vqa) != len(stages):
            raise ConfigError(
                f"{len(vqa)} per-stage vqa lists for {len(stages)} stages"
            )
        stage_vqa = [list(v) for v in vqa]
        if any(not pool for pool in stage_vqa):
            raise DataError("a stage has an empty vqa list")
    else:
        stage_vqa = [vqa] * len(stages)

    vision_store, enc_cfg = load_vision_tower(vision_checkpoint)
    if lm_store is None:
        if lm_checkpoint is None:
            raise ConfigError("finetune needs lm_store or lm_checkpoint")
        lm_store, lm_cfg = load_lm(lm_checkpoint)
    elif lm_cfg is None:
        raise ConfigError("lm_store without its LMConfig")

    for stage, pool in zip(stages, stage_vqa):
        stage.validate(enc_cfg.vision.patch)
        if stage.resolution != enc_cfg.vision.resolution:
            raise ConfigError(
                f"tune stage resolution {stage.resolution} differs from the "
                f"encoder's {enc_cfg.vision.resolution}"
            )
        if stage.batch > len(pool):
            raise ConfigError(
                f"stage batch {stage.batch} exceeds the {len(pool)} vqa samples"
            )

    proj_cfg = ProjectorConfig(
        in_width=enc_cfg.vision.width,
        hidden=projector_hidden or lm_cfg.width,
        out_width=lm_cfg.width,
    )
    rng = np.random.default_rng(seed)
    mm_store: ParamStore = dict(vision_store)
    init_projector(mm_store, proj_cfg, rng)
    mm_store.update(lm_store)

    trainable = {
        n: t
        for n, t in mm_store.items()
        if not (mode.mode == "frozen_encoder" and n.startswith("vision."))
    }
    opt = AdamW(trainable, weight_decay=weight_decay)

    by_id = {str(r.record_id): r for r in records}
    image_cache: dict[str, np.ndarray] = {}

    def image_of(ref: str) -> np.ndarray:
        if ref not in image_cache:
            if ref not in by_id:
                raise DataError(f"vqa sample references unknown record {ref!r}")
            image_cache[ref] = record_image(by_id[ref], enc_cfg.vision.resolution)
        return image_cache[ref]

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "tune.log"
    step = 0
    last_loss = float("nan")
    with open(log_path, "w", encoding="utf-8") as log:
        log.write(f"event=tune_start mode={mode.mode} stages={len(stages)} seed={seed}\n")
        for stage_index, stage in enumerate(stages):
            pool = stage_vqa[stage_index]
            seen = 0
            order = rng.permutation(len(pool))
            cursor = 0
            log.write(
                f"event=stage_start stage={stage_index} samples={stage.samples} "
                f"batch={stage.batch}\n"
            )
            while seen < stage.samples:
                if cursor + stage.batch > len(order):
                    order = rng.permutation(len(pool))
                    cursor = 0
                pick = order[cursor : cursor + stage.batch]
                cursor += stage.batch
                batch = [pool[i] for i in pick]

                images = np.stack([image_of(s.image) for s in batch])
                _, patch_tokens = vision_forward(mm_store, enc_cfg, images)
                visual = projector_forward(mm_store, proj_cfg, patch_tokens)
                prompts = [question_ids(s.question) for s in batch]
                answers = [answer_ids(s.answer) for s in batch]

                for t in trainable.values():
                    t.grad = None
                loss, _ = mm_batch_loss(mm_store, lm_cfg, visual, prompts, answers)
                loss.backward()
                clip_global_norm(trainable, grad_clip)
                lr = stage.lr_for_batch(seen)
                opt.step(lr, lr_multipliers=mode.lr_multipliers)

                seen += stage.batch
                step += 1
                last_loss = float(loss.data)
                if log_every and step % log_every == 0:
                    log.write(
                        f"step={step} stage={stage_index} samples_seen={seen} "
                        f"lr={lr!r} loss={last_loss!r} wall={time.time()!r}\n"
                    )
            log.write(f"event=stage_end stage={stage_index}\n")

    final = out_dir / "mm_final.dckp"
    save_checkpoint(
        final,
        mm_store,
        meta={
            "kind": "multimodal",
            "mode": mode.mode,
            "model": enc_cfg.to_dict(),
            "lm_config": lm_cfg.to_dict(),
            "projector": {
                "in_width": proj_cfg.in_width,
                "hidden": proj_cfg.hidden,
                "out_width": proj_cfg.out_width,
                "activation": proj_cfg.activation,
            },
        },
    )
    return FinetuneResult(
        store=mm_store,
        encoder_config=enc_cfg,
        lm_config=lm_cfg,
        projector_config=proj_cfg,
        log_path=log_path,
        final_checkpoint=final,
        last_loss=last_loss,
    )


def load_multimodal(checkpoint) -> tuple[ParamStore, ModelConfig, LMConfig, ProjectorConfig]:
    path = Path(checkpoint)
    if not path.is_file():
        raise ConfigError(f"multimodal checkpoint not found: {path}")
    store, meta = load_checkpoint(path)
    for key in ("model", "lm_config", "projector"):
        if key not in meta:
            raise ConfigError(f"{path}: checkpoint misses {key} metadata")
    return (
        store,
        ModelConfig.from_dict(meta["model"]),
        LMConfig.from_dict(meta["lm_config"]),
        ProjectorConfig(**meta["projector"]),
    )


def predict_answer(
    store: ParamStore,
    enc_cfg: ModelConfig,
    lm_cfg: LMConfig,
    proj_cfg: ProjectorConfig,
    image: np.ndarray,
    question: str,
    max_new: int = 16,
) -> str:
    """Greedy-decoded answer for one (C, H, W) image and question."""
    _, patch_tokens = vision_forward(store, enc_cfg, image[None])
    visual = projector_forward(store, proj_cfg, patch_tokens)
    n_vis = visual.shape[1]
    prefix_ids = np.asarray(question_ids(question), dtype=np.int64)
    prefix = concat(
        [reshape(visual, (n_vis, lm_cfg.width)), embedding(store["lm.tok_embed"], prefix_ids)],
        axis=0,
    )
    ids = greedy_decode(store, lm_cfg, prefix, max_new=max_new)
    return tokenizer.decode(ids)
