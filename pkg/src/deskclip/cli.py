"""Command-line entry point binding data, training, tuning, and
evaluation together.

Subcommands: train, finetune, eval, export, gradcheck, gendata. Every
run directory receives a frozen copy of the effective configuration;
re-running from that copy in strict mode reproduces the training log
(timing field aside). Exit codes: 0 success, 2 configuration, 3 data,
4 numeric.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluation, runconfig
from .data import probe, shards
from .errors import ConfigError, DeskclipError
from .mllm import harness, lm
from .models import tokenizer
from .models.checkpoint import load_checkpoint, save_checkpoint
from .models.config import micro_model
from .models.model import (
    build_model,
    count_params,
    encode_captions,
    encode_image,
    export_vision,
)
from .numerics.gradcheck import GradReport, grad_check
from .objectives import total_loss
from .training.loop import TrainOptions, run_curriculum

OUTPUT_DIR_ENV = "DESKCLIP_OUTPUT_DIR"


def load_records(data: runconfig.DataSection) -> list:
    if data.kind == "probe":
        return probe.generate_records(
            data.count,
            seed=data.seed,
            image_size=data.image_size,
            max_shapes=data.max_shapes,
            stratified=data.stratified,
        )
    if data.kind == "shard":
        return shards.read_shard(data.path)
    return probe.import_directory(data.path)


def _effective_configs(args) -> list[tuple[str, runconfig.RunConfig]]:
    """Configs to run: a file, a preset expansion, or both is an error.

    Override order, last wins: config file, output-dir environment
    variable, --output-dir, then --set assignments.
    """
    if getattr(args, "preset", None) and args.config:
        raise ConfigError("pass either --config or --preset, not both")
    if getattr(args, "preset", None):
        named = runconfig.expand_preset(args.preset)
    elif args.config:
        named = [("", runconfig.parse_file(args.config))]
    else:
        raise ConfigError("one of --config or --preset is required")

    env_dir = os.environ.get(OUTPUT_DIR_ENV)
    out = []
    for run_name, cfg in named:
        base = args.output_dir or env_dir or cfg.run.output_dir
        cfg.run.output_dir = str(Path(base) / run_name) if run_name else str(base)
        if args.set:
            cfg = runconfig.apply_overrides(cfg, args.set)
        cfg.validate()
        out.append((run_name, cfg))
    return out


def _freeze_config(cfg: runconfig.RunConfig) -> Path:
    out_dir = Path(cfg.run.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frozen = out_dir / "config.ini"
    frozen.write_text(runconfig.serialize(cfg), encoding="utf-8")
    return frozen


def _train_options(cfg: runconfig.RunConfig) -> TrainOptions:
    t = cfg.train
    return TrainOptions(
        use_decoder=t.use_decoder,
        caption_source=t.caption_source,
        lambda_caption=t.lambda_caption,
        grad_clip=t.grad_clip,
        weight_decay=t.weight_decay,
        log_every=t.log_every,
        strict=cfg.run.strict,
        hflip=t.hflip,
    )


def cmd_train(args) -> int:
    for run_name, cfg in _effective_configs(args):
        _freeze_config(cfg)
        records = load_records(cfg.data)
        model_cfg = cfg.model_config()
        store = build_model(model_cfg, seed=cfg.run.seed)
        result = run_curriculum(
            store,
            model_cfg,
            cfg.stages,
            records,
            cfg.run.output_dir,
            seed=cfg.run.seed,
            options=_train_options(cfg),
        )
        label = f"{run_name}: " if run_name else ""
        print(f"{label}trained {sum(s.samples for s in cfg.stages)} samples "
              f"over {len(cfg.stages)} stage(s) -> {result.final_checkpoint}")
    return 0


def cmd_finetune(args) -> int:
    for run_name, cfg in _effective_configs(args):
        ft = cfg.finetune
        if not ft.vision_checkpoint:
            raise ConfigError("[finetune] vision_checkpoint is required")
        if not cfg.tune_stages:
            raise ConfigError("at least one [tune_stage.N] section is required")
        _freeze_config(cfg)
        out_dir = Path(cfg.run.output_dir)
        records = load_records(cfg.data)
        vqa = harness.probe_vqa(records)

        if ft.lm_checkpoint:
            lm_store, lm_cfg, lm_ckpt = None, None, ft.lm_checkpoint
        else:
            # no language model given: fit the tiny byte LM on this
            # dataset's captions so tuning can start from coherent text
            lines = [r.caption_synthetic or r.caption_original for r in records]
            lm_store, lm_cfg = lm.train_lm_on_text(lines, seed=cfg.run.seed)
            lm_ckpt = None
            out_dir.mkdir(parents=True, exist_ok=True)
            save_checkpoint(out_dir / "lm.dckp", lm_store,
                            {"kind": "lm", "lm_config": lm_cfg.to_dict()})

        if ft.mode == "frozen_encoder":
            mode = harness.TuneMode.frozen_encoder()
        else:
            mode = harness.TuneMode.full_finetune(ft.encoder_lr_multiplier)
        result = harness.finetune(
            mode,
            cfg.tune_stages,
            records,
            vqa,
            ft.vision_checkpoint,
            out_dir,
            lm_store=lm_store,
            lm_cfg=lm_cfg,
            lm_checkpoint=lm_ckpt,
            projector_hidden=ft.projector_hidden,
            seed=cfg.run.seed,
            grad_clip=cfg.train.grad_clip,
            log_every=cfg.train.log_every,
        )
        label = f"{run_name}: " if run_name else ""
        print(f"{label}finetuned ({ft.mode}) -> {result.final_checkpoint} "
              f"(last loss {result.last_loss:.4f})")
    return 0


def _batched_image_embs(store, cfg, images: np.ndarray, batch: int = 32) -> np.ndarray:
    rows = []
    for start in range(0, images.shape[0], batch):
        rows.append(encode_image(store, cfg, images[start : start + batch]).data)
    return np.concatenate(rows, axis=0)


def _batched_caption_embs(store, cfg, texts: list, batch: int = 64) -> np.ndarray:
    rows = []
    for start in range(0, len(texts), batch):
        rows.append(encode_captions(store, cfg, texts[start : start + batch]).data)
    return np.concatenate(rows, axis=0)


def cmd_eval(args) -> int:
    for _, cfg in _effective_configs(args):
        ev = cfg.eval
        if not ev.checkpoint:
            raise ConfigError("[eval] checkpoint is required")
        out_dir = Path(cfg.run.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        records = load_records(cfg.data)
        d = cfg.data
        dataset_id = (
            f"{d.kind}-{d.count}-seed{d.seed}" if d.kind == "probe" else Path(d.path).name
        )

        store, meta = load_checkpoint(ev.checkpoint, requires_grad=False)
        if "model" not in meta:
            raise ConfigError(f"{ev.checkpoint}: checkpoint meta lacks a model config")
        from .models.config import ModelConfig

        model_cfg = ModelConfig.from_dict(meta["model"])
        resolution = model_cfg.vision.resolution
        images = np.stack([probe.record_image(r, resolution) for r in records])
        ck_hash = evaluation.checkpoint_hash(ev.checkpoint)
        rows = []

        img_embs = _batched_image_embs(store, model_cfg, images)
        cap_embs = _batched_caption_embs(store, model_cfg,
                                         [r.caption_synthetic for r in records])
        rec = evaluation.retrieval_recall(img_embs, cap_embs, ks=ev.ks)
        for direction, result in sorted(rec.items()):
            for k in sorted(result.recall_at):
                rows.append(evaluation.ReportRow(
                    metric=f"retrieval-{direction}-r@{k}",
                    value=result.recall_at[k],
                    dataset=dataset_id,
                    checkpoint=ck_hash,
                ))

        single = [r for r in records if probe.class_of(r.meta)]
        if single:
            idx = [i for i, r in enumerate(records) if probe.class_of(r.meta)]
            labels = [probe.class_of(records[i].meta) for i in idx]
            zs = evaluation.zero_shot_classify(
                ev.vision_checkpoint or ev.checkpoint,
                ev.checkpoint,
                probe.classnames(),
                [ev.template],
                images[idx],
                labels,
            )
            rows.append(evaluation.ReportRow(
                metric="zero-shot-accuracy", value=zs.accuracy,
                dataset=dataset_id, checkpoint=ck_hash,
            ))

        if ev.mm_checkpoint:
            mm_store, enc_cfg, lm_cfg, proj_cfg = harness.load_multimodal(ev.mm_checkpoint)
            by_id = {str(r.record_id): r for r in records}
            samples = harness.probe_vqa(records)
            if ev.vqa_limit:
                samples = samples[: ev.vqa_limit]
            preds, answers = [], []
            for s in samples:
                image = probe.record_image(by_id[s.image], enc_cfg.vision.resolution)
                preds.append(harness.predict_answer(
                    mm_store, enc_cfg, lm_cfg, proj_cfg, image, s.question
                ))
                answers.append(s.answer)
            rows.append(evaluation.ReportRow(
                metric="vqa-exact-match",
                value=evaluation.vqa_exact_match(preds, answers),
                dataset=dataset_id,
                checkpoint=evaluation.checkpoint_hash(ev.mm_checkpoint),
            ))

        evaluation.write_report(out_dir / ev.report, rows)
        print(evaluation.format_table(rows))
        print(f"report -> {out_dir / ev.report}")
    return 0


def cmd_export(args) -> int:
    store, meta = load_checkpoint(args.checkpoint, requires_grad=False)
    if "model" not in meta:
        raise ConfigError(f"{args.checkpoint}: checkpoint meta lacks a model config")
    vision = export_vision(store)
    save_checkpoint(args.out, vision, {"kind": "vision_export", "model": meta["model"]})
    print(f"exported {count_params(vision)} parameters in {len(vision)} tensors -> {args.out}")
    return 0


def micro_gradcheck(
    probes: int = 2, tolerance: float = 1e-3, seed: int = 0, batch: int = 4,
    h: float = 1e-4,
) -> GradReport:
    """Finite-difference check of the full micro pipeline in float64:
    both towers, the captioning decoder, and the combined loss.

    The step is wider than grad_check's default because at init the
    cross-attention query path carries ~1e-8 gradients; h must keep the
    difference-quotient roundoff (eps * loss / 2h) well under them.
    """
    cfg = micro_model(resolution=32)
    store = build_model(cfg, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    images = rng.random((batch, 3, 32, 32)).astype(np.float64)
    texts = [f"a tiny scene number {i}" for i in range(batch)]
    alts = [f"scene {i} again, restated" for i in range(batch)]

    def loss_fn():
        loss, _ = total_loss(store, cfg, images, texts, alts)
        return loss

    return grad_check(loss_fn, store, probes_per_tensor=probes, h=h,
                      tolerance=tolerance, seed=seed)


def cmd_gradcheck(args) -> int:
    report = micro_gradcheck(probes=args.probes, tolerance=args.tolerance, seed=args.seed)
    print(report.summary())
    return 0 if report.passed else 4


def cmd_gendata(args) -> int:
    records = probe.generate_records(
        args.count,
        seed=args.seed,
        image_size=args.image_size,
        max_shapes=args.max_shapes,
        stratified=args.stratified,
    )
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    shards.write_shard(out, records)
    sidecar = Path(str(out) + ".meta.jsonl")
    probe.save_meta_sidecar(sidecar, records)
    print(f"wrote {len(records)} records -> {out} (+ {sidecar.name})")
    return 0


def _add_config_args(p: argparse.ArgumentParser, presets: bool = True) -> None:
    p.add_argument("--config", help="INI run configuration")
    if presets:
        p.add_argument("--preset", help="named experiment family: "
                       + ", ".join(runconfig.PRESET_NAMES))
    p.add_argument("--output-dir", help="override [run] output_dir")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a config key (repeatable, last wins)")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deskclip",
        description="desk-scale contrastive vision pretraining and multimodal tuning",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the staged pretraining curriculum")
    _add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="instruction-tune a pretrained tower")
    _add_config_args(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="retrieval, zero-shot, and vqa metrics")
    _add_config_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="extract the vision tower from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("gradcheck", help="finite-difference check of the micro model")
    p.add_argument("--probes", type=int, default=2, help="probes per tensor")
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("gendata", help="write a deterministic probe shard")
    p.add_argument("--out", required=True, help="shard file path")
    p.add_argument("--count", type=int, default=256)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--image-size", type=int, default=128)
    p.add_argument("--max-shapes", type=int, default=3)
    p.add_argument("--stratified", action="store_true")
    p.set_defaults(func=cmd_gendata)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DeskclipError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
