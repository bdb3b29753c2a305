"""Model architecture configs and the named encoder presets."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

from ..errors import ConfigError
from .tokenizer import VOCAB_SIZE

ALLOWED_PATCH_SIZES = (8, 14, 16)


@dataclass(frozen=True)
class VisionConfig:
    layers: int
    width: int
    heads: int
    patch: int = 16
    resolution: int = 224
    pool: str = "cls_token"  # "cls_token" or "mean"
    mlp_dim: int = 0  # 0 means 4 * width
    channels: int = 3

    def resolved_mlp(self) -> int:
        return self.mlp_dim if self.mlp_dim else 4 * self.width

    def at_resolution(self, resolution: int) -> "VisionConfig":
        """Same tower at a different input size; weights are shared."""
        return replace(self, resolution=resolution)

    def validate(self) -> None:
        if self.layers < 1 or self.width < 4 or self.heads < 1:
            raise ConfigError(f"invalid vision config {self}")
        if self.patch not in ALLOWED_PATCH_SIZES:
            raise ConfigError(f"patch {self.patch} not one of {ALLOWED_PATCH_SIZES}")
        if self.width % self.heads != 0:
            raise ConfigError(f"vision width {self.width} not divisible by heads {self.heads}")
        if self.width % 4 != 0:
            raise ConfigError(
                f"vision width {self.width} must be divisible by 4 for 2d position tables"
            )
        if self.resolution < self.patch or self.resolution % self.patch != 0:
            raise ConfigError(
                f"resolution {self.resolution} not divisible by patch {self.patch}"
            )
        if self.pool not in ("cls_token", "mean"):
            raise ConfigError(f"unknown pool mode {self.pool!r}")


@dataclass(frozen=True)
class TextConfig:
    """One config covers both text-side towers: the contrastive encoder
    reads encoder_context tokens, the caption decoder writes up to
    decoder_context."""

    layers: int = 2
    width: int = 64
    heads: int = 2
    encoder_context: int = 80
    decoder_context: int = 128
    vocab_size: int = VOCAB_SIZE
    mlp_dim: int = 0

    def resolved_mlp(self) -> int:
        return self.mlp_dim if self.mlp_dim else 4 * self.width

    def validate(self) -> None:
        if self.layers < 1 or self.width < 4 or self.heads < 1:
            raise ConfigError(f"invalid text config {self}")
        if self.width % self.heads != 0:
            raise ConfigError(f"text width {self.width} not divisible by heads {self.heads}")
        if self.width % 2 != 0:
            raise ConfigError(f"text width {self.width} must be even for 1d position tables")
        if self.encoder_context < 1 or self.decoder_context < 1:
            raise ConfigError("contexts must be at least 1")
        if self.vocab_size < 1:
            raise ConfigError("vocab_size must be positive")


@dataclass(frozen=True)
class ProjectorConfig:
    """Two-layer MLP from vision width into a language model's width."""

    in_width: int
    hidden: int
    out_width: int
    activation: str = "gelu"  # "gelu" or "linear"

    def validate(self) -> None:
        if min(self.in_width, self.hidden, self.out_width) < 1:
            raise ConfigError(f"invalid projector dims {self}")
        if self.activation not in ("gelu", "linear"):
            raise ConfigError(f"unknown projector activation {self.activation!r}")


@dataclass(frozen=True)
class ModelConfig:
    vision: VisionConfig
    text: TextConfig = field(default_factory=TextConfig)
    with_decoder: bool = True
    embed_dim: int = 768

    def validate(self) -> None:
        self.vision.validate()
        self.text.validate()
        if self.embed_dim < 1:
            raise ConfigError("embed_dim must be positive")

    def to_dict(self) -> dict:
        return {
            "vision": asdict(self.vision),
            "text": asdict(self.text),
            "with_decoder": self.with_decoder,
            "embed_dim": self.embed_dim,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        cfg = ModelConfig(
            vision=VisionConfig(**d["vision"]),
            text=TextConfig(**d["text"]),
            with_decoder=bool(d.get("with_decoder", True)),
            embed_dim=int(d.get("embed_dim", 768)),
        )
        cfg.validate()
        return cfg


# Named encoder sizes ladder. All use patch 16 and the standard 4x MLP
# except the shape-optimized 400M entry with its tuned MLP width.
ENCODER_PRESETS: dict[str, VisionConfig] = {
    "tiny": VisionConfig(layers=12, width=192, heads=3),
    "small": VisionConfig(layers=12, width=384, heads=6),
    "base": VisionConfig(layers=12, width=768, heads=12),
    "large": VisionConfig(layers=24, width=1024, heads=16),
    "sovit400m": VisionConfig(layers=27, width=1152, heads=16, mlp_dim=4304),
    "huge": VisionConfig(layers=32, width=1280, heads=16),
}

# Published parameter totals (millions) for the same ladder, used as a
# sanity bound on our construction: computed counts must land within 5%.
REFERENCE_PARAM_COUNTS_M: dict[str, float] = {
    "tiny": 5.9,
    "small": 22.4,
    "base": 87.4,
    "large": 303.7,
    "sovit400m": 412.0,
    "huge": 632.1,
}


def vision_param_count(cfg: VisionConfig, embed_dim: int = 768) -> int:
    """Closed-form parameter total for one vision tower.

    Counts the patch projection, class token (cls pooling only), all
    transformer blocks, the final norm, and the bias-free projection to
    the shared embedding space. Matches the built store exactly; kept in
    closed form so the billion-parameter entries never need allocating.
    """
    w = cfg.width
    m = cfg.resolved_mlp()
    per_block = (
        4 * w  # two norms, gain + bias each
        + (w * 3 * w + 3 * w)  # qkv
        + (w * w + w)  # attn out
        + (w * m + m)  # mlp in
        + (m * w + w)  # mlp out
    )
    total = cfg.layers * per_block
    total += cfg.channels * cfg.patch * cfg.patch * w + w  # patch projection
    if cfg.pool == "cls_token":
        total += w
    total += 2 * w  # final norm
    total += w * embed_dim  # shared-space projection, no bias
    return total


def micro_model(resolution: int = 32, with_decoder: bool = True, embed_dim: int = 64) -> ModelConfig:
    """Smallest config that exercises every code path: 2 layers, width
    32, patch 16. Used by gradient checks and fast tests."""
    return ModelConfig(
        vision=VisionConfig(layers=2, width=32, heads=2, patch=16, resolution=resolution),
        text=TextConfig(layers=2, width=32, heads=2, encoder_context=80, decoder_context=128),
        with_decoder=with_decoder,
        embed_dim=embed_dim,
    )
