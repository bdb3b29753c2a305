"""Run configuration: flat INI sections, strict key validation, and
named experiment presets.

The format is deliberately dumb: sections of key=value pairs with no
interpolation or programmable logic, so a frozen config copy in a run
directory is a complete and auditable record. Unknown sections or keys
fail validation with every offending name listed at once. parse and
serialize are mutually inverse on valid configs.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .models.config import ENCODER_PRESETS, ModelConfig, TextConfig, VisionConfig, micro_model
from .objectives import CAPTION_SOURCES
from .training.schedule import StageSchedule, desk_curriculum

_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _parse_bool(section: str, key: str, raw: str) -> bool:
    v = _BOOL.get(raw.strip().lower())
    if v is None:
        raise ConfigError(f"[{section}] {key}: expected a boolean, got {raw!r}")
    return v


def _parse_int(section: str, key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected an integer, got {raw!r}") from None


def _parse_float(section: str, key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected a number, got {raw!r}") from None


@dataclass
class RunSection:
    seed: int = 0
    output_dir: str = "runs/out"
    strict: bool = True


@dataclass
class ModelSection:
    """Either a named preset or an explicit architecture.

    With ``preset`` set, only ``resolution`` and ``embed_dim`` may also
    be given; every other field must stay at its default.
    """

    preset: str = "micro"
    resolution: int = 0  # 0 keeps the preset's native resolution
    embed_dim: int = 0  # 0 keeps the preset's native width
    vision_layers: int = 0
    vision_width: int = 0
    vision_heads: int = 0
    patch: int = 16
    pool: str = "cls_token"
    vision_mlp_dim: int = 0
    channels: int = 3
    text_layers: int = 0
    text_width: int = 0
    text_heads: int = 0
    encoder_context: int = 80
    decoder_context: int = 128
    vocab_size: int = 259
    text_mlp_dim: int = 0

    _EXPLICIT_REQUIRED = (
        "vision_layers",
        "vision_width",
        "vision_heads",
        "text_layers",
        "text_width",
        "text_heads",
    )

    def validate(self) -> None:
        if self.preset:
            if self.preset != "micro" and self.preset not in ENCODER_PRESETS:
                known = ", ".join(["micro"] + sorted(ENCODER_PRESETS))
                raise ConfigError(f"unknown model preset {self.preset!r}; known: {known}")
            defaults = ModelSection(preset=self.preset, resolution=self.resolution,
                                    embed_dim=self.embed_dim)
            for f in fields(self):
                if getattr(self, f.name) != getattr(defaults, f.name):
                    raise ConfigError(
                        f"[model] {f.name} cannot be combined with preset {self.preset!r}"
                    )
        else:
            missing = [k for k in self._EXPLICIT_REQUIRED if getattr(self, k) < 1]
            if missing:
                raise ConfigError(
                    "[model] without a preset these keys are required: " + ", ".join(missing)
                )
        self.to_model_config().validate()

    def to_model_config(self, with_decoder: bool = True) -> ModelConfig:
        if self.preset == "micro":
            cfg = micro_model(with_decoder=with_decoder)
            if self.embed_dim:
                cfg = replace(cfg, embed_dim=self.embed_dim)
        elif self.preset:
            vision = ENCODER_PRESETS[self.preset]
            cfg = ModelConfig(
                vision=vision,
                text=TextConfig(),
                with_decoder=with_decoder,
                embed_dim=self.embed_dim or 768,
            )
        else:
            cfg = ModelConfig(
                vision=VisionConfig(
                    layers=self.vision_layers,
                    width=self.vision_width,
                    heads=self.vision_heads,
                    patch=self.patch,
                    pool=self.pool,
                    mlp_dim=self.vision_mlp_dim,
                    channels=self.channels,
                ),
                text=TextConfig(
                    layers=self.text_layers,
                    width=self.text_width,
                    heads=self.text_heads,
                    encoder_context=self.encoder_context,
                    decoder_context=self.decoder_context,
                    vocab_size=self.vocab_size,
                    mlp_dim=self.text_mlp_dim,
                ),
                with_decoder=with_decoder,
                embed_dim=self.embed_dim or 768,
            )
        if self.resolution:
            cfg = replace(cfg, vision=cfg.vision.at_resolution(self.resolution))
        return cfg


@dataclass
class TrainSection:
    use_decoder: bool = True
    caption_source: str = "both"
    lambda_caption: float = 1.0
    grad_clip: float = 1.0
    weight_decay: float = 0.2
    log_every: int = 1
    hflip: bool = False

    def validate(self) -> None:
        if self.caption_source not in CAPTION_SOURCES:
            raise ConfigError(
                f"[train] caption_source {self.caption_source!r} not one of {CAPTION_SOURCES}"
            )
        if self.lambda_caption < 0:
            raise ConfigError("[train] lambda_caption must be nonnegative")
        if self.log_every < 1:
            raise ConfigError("[train] log_every must be at least 1")


DATA_KINDS = ("probe", "shard", "directory")


@dataclass
class DataSection:
    kind: str = "probe"
    count: int = 256
    seed: int = 7
    image_size: int = 128
    stratified: bool = False
    max_shapes: int = 3
    path: str = ""

    def validate(self) -> None:
        if self.kind not in DATA_KINDS:
            raise ConfigError(f"[data] kind {self.kind!r} not one of {DATA_KINDS}")
        if self.kind == "probe" and self.count < 1:
            raise ConfigError("[data] probe count must be positive")
        if self.kind in ("shard", "directory") and not self.path:
            raise ConfigError(f"[data] kind {self.kind!r} requires a path")


TUNE_MODE_NAMES = ("frozen_encoder", "full_finetune")


@dataclass
class FinetuneSection:
    mode: str = "frozen_encoder"
    vision_checkpoint: str = ""
    lm_checkpoint: str = ""
    encoder_lr_multiplier: float = 0.1
    projector_hidden: int = 0

    def validate(self) -> None:
        if self.mode not in TUNE_MODE_NAMES:
            raise ConfigError(f"[finetune] mode {self.mode!r} not one of {TUNE_MODE_NAMES}")
        if self.encoder_lr_multiplier < 0:
            raise ConfigError("[finetune] encoder_lr_multiplier must be nonnegative")


@dataclass
class EvalSection:
    checkpoint: str = ""
    vision_checkpoint: str = ""
    mm_checkpoint: str = ""
    ks: tuple = (1, 5, 10)
    template: str = "a {}"
    report: str = "report.txt"
    vqa_limit: int = 64  # 0 = answer every question

    def validate(self) -> None:
        if not self.ks:
            raise ConfigError("[eval] ks must list at least one cutoff")
        if any(k < 1 for k in self.ks):
            raise ConfigError("[eval] recall cutoffs must be positive")
        if "{}" not in self.template:
            raise ConfigError("[eval] template needs a {} placeholder")
        if self.vqa_limit < 0:
            raise ConfigError("[eval] vqa_limit must be nonnegative")


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    data: DataSection = field(default_factory=DataSection)
    stages: list = field(default_factory=desk_curriculum)
    finetune: FinetuneSection = field(default_factory=FinetuneSection)
    tune_stages: list = field(default_factory=list)
    eval: EvalSection = field(default_factory=EvalSection)

    def validate(self) -> None:
        self.model.validate()
        self.train.validate()
        self.data.validate()
        self.finetune.validate()
        self.eval.validate()
        patch = self.model.to_model_config().vision.patch
        for st in self.stages:
            st.validate(patch)
        for st in self.tune_stages:
            st.validate()
        if not self.stages:
            raise ConfigError("at least one [stage.N] section is required")

    def model_config(self) -> ModelConfig:
        return self.model.to_model_config(with_decoder=self.train.use_decoder)


# -- parsing -------------------------------------------------------------------

_SECTION_TYPES = {
    "run": RunSection,
    "model": ModelSection,
    "train": TrainSection,
    "data": DataSection,
    "finetune": FinetuneSection,
    "eval": EvalSection,
}

_STAGE_FIELDS = ("resolution", "samples", "batch", "base_lr", "warmup_samples")


def _coerce(section: str, key: str, raw: str, pytype) -> object:
    if pytype is bool:
        return _parse_bool(section, key, raw)
    if pytype is int:
        return _parse_int(section, key, raw)
    if pytype is float:
        return _parse_float(section, key, raw)
    if pytype is tuple:  # integer list, comma or space separated
        parts = raw.replace(",", " ").split()
        return tuple(_parse_int(section, key, p) for p in parts)
    return raw


def _fill_section(obj, section: str, items, unknown: list) -> None:
    by_name = {f.name: f for f in fields(obj) if not f.name.startswith("_")}
    for key, raw in items:
        f = by_name.get(key)
        if f is None:
            unknown.append(f"[{section}] {key}")
            continue
        setattr(obj, f.name, _coerce(section, key, raw, type(getattr(obj, f.name))))


def _parse_stage(section: str, items, unknown: list) -> StageSchedule:
    got = {}
    for key, raw in items:
        if key not in _STAGE_FIELDS:
            unknown.append(f"[{section}] {key}")
            continue
        got[key] = _parse_float(section, key, raw) if key == "base_lr" else _parse_int(
            section, key, raw
        )
    missing = [k for k in ("resolution", "samples", "batch", "base_lr") if k not in got]
    if missing:
        raise ConfigError(f"[{section}] missing keys: {', '.join(missing)}")
    return StageSchedule(**got)


def _stage_sections(parser, prefix: str, unknown: list) -> list:
    """Collect [prefix.N] sections; N must count 1, 2, 3, ..."""
    found = {}
    for name in parser.sections():
        if not name.startswith(prefix + "."):
            continue
        suffix = name[len(prefix) + 1 :]
        if not suffix.isdigit() or int(suffix) < 1:
            raise ConfigError(f"[{name}] stage sections are numbered [{prefix}.1], [{prefix}.2], ...")
        found[int(suffix)] = name
    if found and sorted(found) != list(range(1, len(found) + 1)):
        raise ConfigError(
            f"{prefix} sections must be contiguous from 1, got {sorted(found)}"
        )
    return [
        _parse_stage(found[i], parser.items(found[i]), unknown) for i in sorted(found)
    ]


def parse(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case-sensitive
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"config syntax: {e}") from e

    cfg = RunConfig(stages=[])
    unknown: list[str] = []
    for name in parser.sections():
        if name in _SECTION_TYPES:
            target = getattr(cfg, "eval" if name == "eval" else name)
            _fill_section(target, name, parser.items(name), unknown)
        elif name.startswith("stage.") or name.startswith("tune_stage."):
            continue  # handled below, in numeric order
        else:
            unknown.append(f"[{name}]")
    cfg.stages = _stage_sections(parser, "stage", unknown)
    cfg.tune_stages = _stage_sections(parser, "tune_stage", unknown)
    if unknown:
        raise ConfigError("unknown config keys: " + ", ".join(sorted(unknown)))
    if not cfg.stages:
        cfg.stages = desk_curriculum()
    cfg.validate()
    return cfg


def parse_file(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return parse(path.read_text(encoding="utf-8"))


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return " ".join(str(x) for x in v)
    return str(v)


def serialize(cfg: RunConfig) -> str:
    """Canonical INI text; parse(serialize(cfg)) == cfg."""
    out = io.StringIO()

    def emit(name: str, obj) -> None:
        out.write(f"[{name}]\n")
        for f in fields(obj):
            if f.name.startswith("_"):
                continue
            out.write(f"{f.name} = {_format_value(getattr(obj, f.name))}\n")
        out.write("\n")

    emit("run", cfg.run)
    emit("model", cfg.model)
    emit("train", cfg.train)
    emit("data", cfg.data)
    for i, st in enumerate(cfg.stages, start=1):
        emit(f"stage.{i}", st)
    emit("finetune", cfg.finetune)
    for i, st in enumerate(cfg.tune_stages, start=1):
        emit(f"tune_stage.{i}", st)
    emit("eval", cfg.eval)
    return out.getvalue()


def apply_overrides(cfg: RunConfig, assignments) -> RunConfig:
    """Apply section.key=value strings on top of a parsed config, last
    one wins. Round-trips through the canonical text so override values
    face exactly the file parser's validation."""
    text = serialize(cfg)
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read_string(text)
    for a in assignments:
        if "=" not in a:
            raise ConfigError(f"override {a!r} is not section.key=value")
        target, _, value = a.partition("=")
        if "." not in target:
            raise ConfigError(f"override {a!r} is not section.key=value")
        section, _, key = target.rpartition(".")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, value)
    buf = io.StringIO()
    parser.write(buf)
    return parse(buf.getvalue())


# -- experiment presets ----------------------------------------------------------

PRESET_NAMES = (
    "curriculum",
    "budget-sweep",
    "objective-ablation",
    "patch-sweep",
    "tune-sweep",
)


def _base_config() -> RunConfig:
    return RunConfig()


def expand_preset(name: str) -> list[tuple[str, RunConfig]]:
    """Named experiment families, each a list of (run_name, config).

    Sample budgets, batch ladders, and learning-rate ratios mirror the
    published large-scale recipe scaled down to desk size; the sweeps
    cover the compute-budget split, the objective toggles, the patch
    size, and the finetuning regime.
    """
    if name == "curriculum":
        return [("curriculum", _base_config())]

    if name == "budget-sweep":
        # mid/high-res budget splits at a fixed total, plus the
        # double-budget and high-res-only variants
        splits = [
            ("split-5120-1280", 5120, 1280),
            ("split-10240-2560", 10240, 2560),
            ("split-5120-5120", 5120, 5120),
            ("split-0-7680", 0, 7680),
        ]
        runs = []
        for run_name, mid, high in splits:
            cfg = _base_config()
            cfg.stages = [
                StageSchedule(resolution=96, samples=mid, batch=32, base_lr=5e-5),
                StageSchedule(resolution=128, samples=high, batch=16, base_lr=1.25e-5),
            ]
            runs.append((run_name, cfg))
        return runs

    if name == "objective-ablation":
        # one short stage; the three runs differ only in the toggles
        def one():
            cfg = _base_config()
            cfg.stages = [StageSchedule(resolution=64, samples=6400, batch=64, base_lr=1e-3)]
            return cfg

        full = one()
        no_decoder = one()
        no_decoder.train.use_decoder = False
        original_caps = one()
        original_caps.train.caption_source = "original"
        return [("full", full), ("no-decoder", no_decoder), ("original-caps", original_caps)]

    if name == "patch-sweep":
        runs = []
        for patch in (8, 16):
            cfg = _base_config()
            cfg.model = ModelSection(
                preset="",
                vision_layers=2,
                vision_width=32,
                vision_heads=2,
                patch=patch,
                resolution=64,
                embed_dim=64,
                text_layers=2,
                text_width=32,
                text_heads=2,
            )
            cfg.stages = [StageSchedule(resolution=64, samples=6400, batch=64, base_lr=1e-3)]
            runs.append((f"patch{patch}", cfg))
        return runs

    if name == "tune-sweep":
        runs = []
        for mode in TUNE_MODE_NAMES:
            cfg = _base_config()
            cfg.finetune.mode = mode
            cfg.tune_stages = [
                StageSchedule(resolution=32, samples=1024, batch=8, base_lr=1e-3)
            ]
            runs.append((mode.split("_")[0], cfg))
        return runs

    raise ConfigError(f"unknown preset {name!r}; known: {', '.join(PRESET_NAMES)}")
