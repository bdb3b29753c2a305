"""Tiny byte-level causal language model.

Small enough (well under a million parameters at the defaults) to train
on this package's probe text in seconds, so the multimodal harness needs
no external weights; the harness can also load external weights saved in
the checkpoint container format. Shares the transformer blocks and fixed
sin/cos positions with the towers in ``models``.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from ..errors import ConfigError, ContextOverflowError, ShapeError
from ..models import tokenizer
from ..models.layers import (
    ParamStore,
    init_linear,
    init_transformer,
    linear,
    sincos_1d,
    transformer_forward,
    trunc_normal,
)
from ..numerics import (
    Tensor,
    add,
    concat,
    embedding,
    log_softmax,
    mul,
    mul_scalar,
    reshape,
    sum_,
    take_along_last,
)
from ..training.adamw import AdamW, clip_global_norm


@dataclass(frozen=True)
class LMConfig:
    layers: int = 2
    width: int = 64
    heads: int = 2
    context: int = 128
    vocab_size: int = tokenizer.VOCAB_SIZE
    mlp_dim: int = 0  # 0 -> 4x width

    def resolved_mlp(self) -> int:
        return self.mlp_dim if self.mlp_dim else 4 * self.width

    def validate(self) -> None:
        if min(self.layers, self.width, self.heads, self.context, self.vocab_size) < 1:
            raise ConfigError(f"bad language model config {self}")
        if self.width % self.heads != 0:
            raise ConfigError(f"width {self.width} not divisible by heads {self.heads}")
        if self.width % 2 != 0:
            raise ConfigError("width must be even for sin/cos positions")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "LMConfig":
        return LMConfig(**d)


def build_lm(cfg: LMConfig, seed: int = 0) -> ParamStore:
    cfg.validate()
    rng = np.random.default_rng(seed)
    store: ParamStore = {}
    store["lm.tok_embed"] = Tensor(
        trunc_normal(rng, (cfg.vocab_size, cfg.width)), requires_grad=True
    )
    init_transformer(store, "lm", cfg.layers, cfg.width, cfg.heads, cfg.resolved_mlp(), rng)
    init_linear(store, "lm.head", cfg.width, cfg.vocab_size, rng)
    return store


def lm_backbone(store: ParamStore, cfg: LMConfig, x: Tensor) -> Tensor:
    """Causal transformer over an embedding sequence x: (B, T, width)."""
    if x.ndim != 3 or x.shape[-1] != cfg.width:
        raise ShapeError(f"expected (B, T, {cfg.width}) embeddings, got {x.shape}")
    length = x.shape[1]
    if length > cfg.context:
        raise ContextOverflowError(
            f"sequence length {length} exceeds language model context {cfg.context}"
        )
    dtype = store["lm.tok_embed"].data.dtype
    pe = sincos_1d(length, cfg.width).astype(dtype, copy=False)
    x = add(x, Tensor(pe[None, :, :]))
    return transformer_forward(store, "lm", x, cfg.layers, cfg.heads, causal=True)


def lm_logits(store: ParamStore, hidden: Tensor) -> Tensor:
    return linear(store, "lm.head", hidden)


def sequence_ce(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> tuple[Tensor, int]:
    """Mean cross entropy over masked positions.

    logits: (B, T, V); targets: (B, T) int ids; mask: (B, T) with 1 at
    positions that contribute. Returns (loss, contributing positions);
    an all-zero mask yields loss 0 with 0 positions.
    """
    if logits.ndim != 3 or targets.shape != logits.shape[:2] or mask.shape != targets.shape:
        raise ShapeError(
            f"inconsistent CE shapes: logits {logits.shape}, targets {targets.shape}, "
            f"mask {mask.shape}"
        )
    count = int(mask.sum())
    if count == 0:
        return Tensor(np.asarray(0.0, dtype=logits.data.dtype)), 0
    logp = log_softmax(logits, axis=-1)
    safe = np.where(mask > 0, targets, 0)
    picked = take_along_last(logp, safe)
    m = Tensor(mask.astype(logits.data.dtype))
    return mul_scalar(sum_(mul(picked, m)), -1.0 / count), count


def lm_loss(store: ParamStore, cfg: LMConfig, ids: np.ndarray) -> tuple[Tensor, int]:
    """Next-token cross entropy on padded id rows: (B, L) with bos first
    and pad after eos. Pad targets are excluded."""
    if ids.ndim != 2:
        raise ShapeError(f"expected (B, L) ids, got {ids.shape}")
    inputs = ids[:, :-1]
    targets = ids[:, 1:]
    mask = (targets != tokenizer.PAD_ID).astype(np.float32)
    inputs = np.where(inputs == tokenizer.PAD_ID, 0, inputs)
    x = embedding(store["lm.tok_embed"], inputs)
    hidden = lm_backbone(store, cfg, x)
    return sequence_ce(lm_logits(store, hidden), targets, mask)


def train_lm_on_text(
    lines: list,
    cfg: LMConfig | None = None,
    steps: int = 200,
    batch: int = 16,
    lr: float = 3e-3,
    seed: int = 0,
    log_every: int = 0,
) -> tuple[ParamStore, LMConfig]:
    """Fit a fresh language model on raw text lines. Deterministic: the
    same lines, config, and seed give bit-identical weights."""
    if not lines:
        raise ConfigError("no text lines to train the language model on")
    cfg = cfg or LMConfig()
    store = build_lm(cfg, seed=seed)
    opt = AdamW({k: v for k, v in store.items()}, weight_decay=0.01)
    rng = np.random.default_rng(seed)
    longest = max(len(tokenizer.encode(t)) for t in lines) + 2
    width = min(cfg.context, longest)
    for step in range(steps):
        pick = rng.integers(0, len(lines), size=batch)
        rows = tokenizer.batch_encode([lines[i] for i in pick], width)
        for t in store.values():
            t.grad = None
        loss, _ = lm_loss(store, cfg, rows)
        loss.backward()
        clip_global_norm(store, 1.0)
        opt.step(lr)
        if log_every and (step + 1) % log_every == 0:
            print(f"lm step={step + 1} loss={float(loss.data):.4f}")
    return store, cfg


def greedy_decode(
    store: ParamStore,
    cfg: LMConfig,
    prefix: Tensor,
    max_new: int = 16,
    stop_id: int = tokenizer.EOS_ID,
) -> list[int]:
    """Argmax decoding from an embedding prefix: (T0, width). Recomputes
    the full forward per token (no KV cache; sequences here are tiny).
    Stops before emitting past the context window."""
    if prefix.ndim != 2:
        raise ShapeError(f"expected (T, width) prefix, got {prefix.shape}")
    out: list[int] = []
    emb_rows = [prefix]
    for _ in range(max_new):
        length = sum(e.shape[0] for e in emb_rows)
        if length >= cfg.context:
            break
        x = emb_rows[0] if len(emb_rows) == 1 else concat(emb_rows, axis=0)
        hidden = lm_backbone(store, cfg, reshape(x, (1, length, cfg.width)))
        logits = lm_logits(store, hidden).data[0, -1]
        token = int(np.argmax(logits))
        if token == stop_id:
            break
        out.append(token)
        emb_rows.append(embedding(store["lm.tok_embed"], np.asarray([token], dtype=np.int64)))
    return out
