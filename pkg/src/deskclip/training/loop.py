"""The progressive-resolution training loop.

Stages run back to back over one record set. A stage boundary changes
the input resolution, which regenerates the derived position table and
nothing else: every learned tensor rides across untouched. The loop is
single-process and, in strict mode (the default and only mode
implemented), bit-exactly reproducible from (seed, config, data).

The training log is append-only structured text, one ``key=value`` line
per step plus event lines for stage boundaries and epoch wraps. Floats
are written with full repr precision so two logs can be compared
byte-for-byte; the wall-clock field is the one documented exception and
always sits last on the line.
"""

from __future__ import annotations

import time
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..data.probe import record_image
from ..errors import ConfigError, NumericError
from ..models import ModelConfig, export_vision, save_checkpoint
from ..models.layers import ParamStore
from ..numerics import zero_grads
from ..objectives import LossBreakdown, total_loss
from .adamw import AdamW, clip_global_norm
from .schedule import validate_curriculum
from .state import TrainState, save_train_state


@dataclass
class TrainOptions:
    use_decoder: bool = True
    caption_source: str = "both"
    lambda_caption: float = 1.0
    grad_clip: float = 1.0
    weight_decay: float = 0.2
    betas: tuple = (0.9, 0.95)
    log_every: int = 1
    snapshot_per_stage: bool = True
    strict: bool = True
    hflip: bool = False  # probe captions encode left/right, keep off for them


class ImageCache:
    """Decoded-and-resized image cache, bounded by entry count."""

    def __init__(self, capacity: int = 4096):
        self.capacity = capacity
        self._store: OrderedDict = OrderedDict()

    def get(self, rec, resolution: int) -> np.ndarray:
        key = (rec.record_id, resolution)
        hit = self._store.get(key)
        if hit is None:
            hit = record_image(rec, resolution)
            self._store[key] = hit
            if len(self._store) > self.capacity:
                self._store.popitem(last=False)
        else:
            self._store.move_to_end(key)
        return hit


class TrainLog:
    """Append-only key=value text log."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._f = open(self.path, "a", encoding="utf-8")

    @staticmethod
    def format_value(v) -> str:
        if isinstance(v, float):
            return repr(v)
        return str(v)

    def write(self, **fields) -> None:
        line = " ".join(f"{k}={self.format_value(v)}" for k, v in fields.items())
        self._f.write(line + "\n")
        self._f.flush()

    def close(self) -> None:
        self._f.close()


def strip_wall(log_text: str) -> str:
    """Drop the wall-clock field, the one nondeterministic part of a
    log, for bit-exact comparisons."""
    lines = []
    for line in log_text.splitlines():
        parts = [p for p in line.split(" ") if not p.startswith("wall=")]
        lines.append(" ".join(parts))
    return "\n".join(lines)


def assemble_batch(records, cache: ImageCache, resolution: int, flip_mask=None):
    images = np.stack([cache.get(r, resolution) for r in records])
    if flip_mask is not None and flip_mask.any():
        images = images.copy()
        images[flip_mask] = images[flip_mask, :, :, ::-1]
    originals = [r.caption_original for r in records]
    synthetics = [r.caption_synthetic for r in records]
    return images, originals, synthetics


def train_step(
    store: ParamStore,
    cfg: ModelConfig,
    opt: AdamW,
    batch,
    lr: float,
    options: TrainOptions,
) -> tuple[LossBreakdown, float]:
    """One forward/backward/update pass. Returns (breakdown, grad norm)."""
    images, originals, synthetics = batch
    loss, breakdown = total_loss(
        store,
        cfg,
        images,
        originals,
        synthetics,
        use_decoder=options.use_decoder,
        caption_source=options.caption_source,
        lambda_caption=options.lambda_caption,
    )
    if not np.isfinite(breakdown.total):
        raise NumericError(f"non-finite loss at training step: {breakdown}")
    zero_grads(store.values())
    loss.backward()
    norm = clip_global_norm(opt.params, options.grad_clip)
    if not np.isfinite(norm):
        raise NumericError("non-finite gradient norm")
    opt.step(lr)
    return breakdown, norm


@dataclass
class CurriculumResult:
    state: TrainState
    log_path: Path
    snapshot_paths: list = field(default_factory=list)
    final_checkpoint: Path | None = None
    paused: bool = False


def _stage_model_config(cfg: ModelConfig, resolution: int) -> ModelConfig:
    return ModelConfig(
        vision=cfg.vision.at_resolution(resolution),
        text=cfg.text,
        with_decoder=cfg.with_decoder,
        embed_dim=cfg.embed_dim,
    )


def run_curriculum(
    store: ParamStore,
    cfg: ModelConfig,
    stages: list,
    records: list,
    out_dir,
    seed: int = 0,
    options: TrainOptions | None = None,
    state: TrainState | None = None,
    opt: AdamW | None = None,
    on_stage_boundary=None,
    max_steps: int | None = None,
) -> CurriculumResult:
    """Run every stage of a curriculum over one record set.

    Passing a loaded ``state`` (plus its optimizer) resumes mid-run;
    otherwise training starts fresh from ``seed``. ``max_steps`` bounds
    the steps taken by THIS call; hitting it saves a resumable state
    file and returns with ``paused=True``. ``on_stage_boundary`` is
    called as fn(stage_index_completed, store) when a stage finishes,
    before the next begins; tests use it to fingerprint parameters.
    """
    options = options or TrainOptions()
    validate_curriculum(stages, cfg.vision.patch)
    if not records:
        raise ConfigError("no training records")
    for st in stages:
        if st.batch > len(records):
            raise ConfigError(
                f"stage batch {st.batch} exceeds dataset size {len(records)}"
            )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if state is None:
        state = TrainState.fresh(seed)
    if opt is None:
        opt = AdamW(store, betas=tuple(options.betas), weight_decay=options.weight_decay)
    cache = ImageCache()
    log = TrainLog(out_dir / "train.log")
    result = CurriculumResult(state=state, log_path=log.path)

    n = len(records)
    steps_this_call = 0
    try:
        while state.stage_index < len(stages):
            stage = stages[state.stage_index]
            stage_cfg = _stage_model_config(cfg, stage.resolution)
            if state.samples_in_stage == 0 and state.epoch_order is None:
                log.write(
                    event="stage_start",
                    stage=state.stage_index,
                    resolution=stage.resolution,
                    samples=stage.samples,
                    batch=stage.batch,
                    base_lr=float(stage.base_lr),
                    warmup_samples=stage.warmup_samples,
                )
            while state.samples_in_stage < stage.samples:
                if max_steps is not None and steps_this_call >= max_steps:
                    save_train_state(out_dir / "train_state.dckp", store, opt, state)
                    log.write(event="paused", step=state.step)
                    result.paused = True
                    return result
                if state.epoch_order is None or state.epoch_cursor + stage.batch > n:
                    if state.epoch_order is not None:
                        state.epoch_wraps += 1
                        log.write(event="epoch_wrap", count=state.epoch_wraps)
                    state.epoch_order = state.rng.permutation(n)
                    state.epoch_cursor = 0
                idx = state.epoch_order[state.epoch_cursor : state.epoch_cursor + stage.batch]
                state.epoch_cursor += stage.batch
                batch_records = [records[i] for i in idx]
                flip_mask = None
                if options.hflip:
                    flip_mask = state.rng.random(stage.batch) < 0.5

                lr = stage.lr_for_batch(state.samples_in_stage)
                t0 = time.monotonic()
                batch = assemble_batch(batch_records, cache, stage.resolution, flip_mask)
                breakdown, gnorm = train_step(store, stage_cfg, opt, batch, lr, options)
                state.step += 1
                steps_this_call += 1
                state.samples_in_stage += stage.batch
                state.samples_total += stage.batch
                if state.step % options.log_every == 0:
                    log.write(
                        step=state.step,
                        stage=state.stage_index,
                        samples_seen=state.samples_in_stage,
                        lr=lr,
                        contrastive=breakdown.contrastive,
                        captioning=breakdown.captioning,
                        lambda_caption=breakdown.lambda_caption,
                        total=breakdown.total,
                        grad_norm=gnorm,
                        wall=round(time.monotonic() - t0, 6),
                    )
            log.write(
                event="stage_end",
                stage=state.stage_index,
                samples_seen=state.samples_in_stage,
                epoch_wraps=state.epoch_wraps,
            )
            if options.snapshot_per_stage:
                snap = out_dir / f"vision_stage{state.stage_index}.dckp"
                save_checkpoint(
                    snap,
                    export_vision(store),
                    {
                        "kind": "vision_export",
                        "stage": state.stage_index,
                        "model": stage_cfg.to_dict(),
                    },
                )
                result.snapshot_paths.append(snap)
            if on_stage_boundary is not None:
                on_stage_boundary(state.stage_index, store)
            state.stage_index += 1
            state.samples_in_stage = 0
            # each stage draws fresh epoch orders; a partial epoch never
            # leaks across the resolution change
            state.epoch_order = None
            state.epoch_cursor = 0
        final = out_dir / "model_final.dckp"
        final_cfg = _stage_model_config(cfg, stages[-1].resolution)
        save_checkpoint(final, store, {"kind": "model", "model": final_cfg.to_dict()})
        save_train_state(
            out_dir / "train_state.dckp", store, opt, state, {"model": final_cfg.to_dict()}
        )
        result.final_checkpoint = final
        log.write(event="run_end", steps=state.step, samples=state.samples_total)
    finally:
        log.close()
    return result
