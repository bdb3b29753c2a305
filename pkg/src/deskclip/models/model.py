"""Two-tower image/text model with an optional caption decoder.

The image tower is a pre-norm vision transformer over non-overlapping
patches with fixed sin/cos 2D position tables, so the same weights run
at any resolution divisible by the patch size. The text tower is a
causal transformer pooled at the eos position. Both project into a
shared embedding space where similarity is cosine scaled by a learned
temperature.

The decoder is a causal transformer that cross-attends to the image
patch tokens in every block and predicts caption bytes left to right.
Its first input position is a learned start vector rather than a
vocabulary token. A small MLP projector that lifts vision tokens into a
language model's width also lives here; the finetuning harness wires it
up.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import DataError, ShapeError
from ..numerics import (
    Tensor,
    add,
    clip,
    concat,
    exp,
    gelu,
    l2_normalize,
    log_softmax,
    matmul,
    mul,
    mul_scalar,
    reshape,
    sum_,
    take_along_last,
    embedding,
)
from . import tokenizer
from .config import ModelConfig, ProjectorConfig
from .layers import (
    ParamStore,
    init_linear,
    init_transformer,
    linear,
    patchify,
    sincos_1d,
    sincos_2d,
    transformer_forward,
    trunc_normal,
)

TEMPERATURE_NAME = "temperature.log_scale"
LOG_SCALE_INIT = math.log(1.0 / 0.07)
LOG_SCALE_MAX = math.log(100.0)  # floor on tau: tau >= 1/100


def build_model(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> ParamStore:
    cfg.validate()
    rng = np.random.default_rng(seed)
    store: ParamStore = {}

    v = cfg.vision
    init_linear(store, "vision.patch_embed", v.channels * v.patch * v.patch, v.width, rng)
    if v.pool == "cls_token":
        store["vision.cls"] = Tensor(trunc_normal(rng, (1, 1, v.width)), requires_grad=True)
    init_transformer(store, "vision", v.layers, v.width, v.heads, v.resolved_mlp(), rng)
    store["vision.proj"] = Tensor(trunc_normal(rng, (v.width, cfg.embed_dim)), requires_grad=True)

    t = cfg.text
    store["text_encoder.tok_embed"] = Tensor(
        trunc_normal(rng, (t.vocab_size, t.width)), requires_grad=True
    )
    init_transformer(store, "text_encoder", t.layers, t.width, t.heads, t.resolved_mlp(), rng)
    store["text_encoder.proj"] = Tensor(
        trunc_normal(rng, (t.width, cfg.embed_dim)), requires_grad=True
    )

    if cfg.with_decoder:
        store["decoder.start"] = Tensor(trunc_normal(rng, (1, 1, t.width)), requires_grad=True)
        store["decoder.tok_embed"] = Tensor(
            trunc_normal(rng, (t.vocab_size, t.width)), requires_grad=True
        )
        if t.width != v.width:
            init_linear(store, "decoder.vis_adapt", v.width, t.width, rng)
        init_transformer(
            store, "decoder", t.layers, t.width, t.heads, t.resolved_mlp(), rng, cross=True
        )
        init_linear(store, "decoder.head", t.width, t.vocab_size, rng)

    store[TEMPERATURE_NAME] = Tensor(
        np.asarray(LOG_SCALE_INIT, dtype=np.float32), requires_grad=True
    )

    if dtype != np.float32:
        cast_store(store, dtype)
    return store


def cast_store(store: ParamStore, dtype) -> None:
    for t in store.values():
        t.data = np.ascontiguousarray(t.data.astype(dtype))
        t.grad = None


def param_names(store: ParamStore, prefix: str = "") -> list[str]:
    return sorted(n for n in store if n.startswith(prefix))


def count_params(store: ParamStore, prefix: str = "") -> int:
    return sum(t.data.size for n, t in store.items() if n.startswith(prefix))


def temperature(store: ParamStore) -> Tensor:
    """Learned temperature tau as a differentiable scalar, floored at
    1/100 by clamping the log parameter."""
    return exp(mul_scalar(clip(store[TEMPERATURE_NAME], None, LOG_SCALE_MAX), -1.0))


# -- vision tower --------------------------------------------------------------


def vision_forward(store: ParamStore, cfg: ModelConfig, images: np.ndarray) -> tuple[Tensor, Tensor]:
    """Run the image tower.

    images: (B, C, H, W) float in [0, 1] with H == W == config
    resolution. Returns (pooled, patch_tokens): pooled is (B, width),
    patch_tokens is (B, T, width) with the class token stripped.
    """
    v = cfg.vision
    if images.ndim != 4 or images.shape[1] != v.channels:
        raise ShapeError(f"expected (B, {v.channels}, H, W) images, got {images.shape}")
    if images.shape[2] != v.resolution or images.shape[3] != v.resolution:
        raise ShapeError(
            f"images are {images.shape[2]}x{images.shape[3]} but the tower is "
            f"configured for {v.resolution}x{v.resolution}"
        )
    dtype = store["vision.patch_embed.w"].data.dtype
    flat = patchify(images.astype(dtype), v.patch)
    # standardize each patch vector: keeps the projection input at unit
    # scale regardless of background level, and maps constant (padding)
    # patches to exact zeros
    mu = flat.mean(axis=2, keepdims=True)
    sd = flat.std(axis=2, keepdims=True)
    flat = (flat - mu) / (sd + 1e-5)
    b, n, _ = flat.shape
    gh = gw = v.resolution // v.patch

    x = linear(store, "vision.patch_embed", Tensor(flat))
    pe = sincos_2d(gh, gw, v.width).astype(dtype, copy=False)
    x = add(x, Tensor(pe[None, :, :]))
    if v.pool == "cls_token":
        cls = store["vision.cls"]
        cls_row = add(cls, Tensor(np.zeros((b, 1, v.width), dtype=dtype)))
        x = concat([cls_row, x], axis=1)
    x = transformer_forward(store, "vision", x, v.layers, v.heads)
    if v.pool == "cls_token":
        pooled = reshape(x[:, 0, :], (b, v.width))
        tokens = x[:, 1:, :]
    else:
        pooled = mul_scalar(sum_(x, axis=1), 1.0 / n)
        tokens = x
    return pooled, tokens


def encode_image(store: ParamStore, cfg: ModelConfig, images: np.ndarray) -> Tensor:
    """(B, embed_dim) unit-norm image embeddings."""
    pooled, _ = vision_forward(store, cfg, images)
    return l2_normalize(matmul(pooled, store["vision.proj"]))


# -- text tower ----------------------------------------------------------------


def text_forward(store: ParamStore, cfg: ModelConfig, ids: np.ndarray) -> Tensor:
    """Causal text tower pooled at the eos position. ids: (B, L) int."""
    t = cfg.text
    if ids.ndim != 2:
        raise ShapeError(f"expected (B, L) token ids, got {ids.shape}")
    if ids.shape[1] > t.encoder_context:
        raise ShapeError(
            f"sequence length {ids.shape[1]} exceeds encoder context {t.encoder_context}"
        )
    dtype = store["text_encoder.tok_embed"].data.dtype
    b, length = ids.shape
    x = embedding(store["text_encoder.tok_embed"], ids)
    pe = sincos_1d(length, t.width).astype(dtype, copy=False)
    x = add(x, Tensor(pe[None, :, :]))
    x = transformer_forward(store, "text_encoder", x, t.layers, t.heads, causal=True)

    pos = tokenizer.eos_positions(ids)
    one_hot = np.zeros((b, length, 1), dtype=dtype)
    one_hot[np.arange(b), pos, 0] = 1.0
    pooled = sum_(mul(x, Tensor(one_hot)), axis=1)
    return pooled


def encode_text(store: ParamStore, cfg: ModelConfig, ids: np.ndarray) -> Tensor:
    """(B, embed_dim) unit-norm text embeddings."""
    pooled = text_forward(store, cfg, ids)
    return l2_normalize(matmul(pooled, store["text_encoder.proj"]))


def encode_captions(store: ParamStore, cfg: ModelConfig, texts) -> Tensor:
    ids = tokenizer.batch_encode(texts, cfg.text.encoder_context)
    # all-pad tail columns sit after every eos and change nothing under
    # causal attention; dropping them keeps short batches cheap
    keep = int(tokenizer.eos_positions(ids).max()) + 1
    return encode_text(store, cfg, ids[:, :keep])


# -- caption decoder -----------------------------------------------------------


def caption_targets(texts, context: int) -> np.ndarray:
    """Target rows for the decoder: bytes then eos then pad, trimmed to
    the longest content length in the batch (trailing all-pad columns
    never contribute loss or, under the causal mask, activations)."""
    rows = tokenizer.batch_encode(texts, context, add_bos=False, add_eos=True)
    keep = max(1, int((rows != tokenizer.PAD_ID).sum(axis=1).max()))
    return rows[:, :keep]


def caption_decode_loss(
    store: ParamStore,
    cfg: ModelConfig,
    patch_tokens: Tensor,
    target_ids: np.ndarray,
) -> tuple[Tensor, int]:
    """Teacher-forced next-byte cross entropy against the image.

    target_ids: (B, L) with pad after the content. Position p predicts
    target_ids[:, p]; the input at p is the embedding of the previous
    target byte, with the learned start vector at p = 0. Pad positions
    are excluded from the mean. Returns (loss, contributing_positions);
    an all-pad batch yields loss 0 with 0 positions.
    """
    if not cfg.with_decoder:
        raise ShapeError("model built without a decoder")
    t = cfg.text
    if target_ids.ndim != 2:
        raise ShapeError(f"expected (B, L) targets, got {target_ids.shape}")
    if target_ids.shape[1] > t.decoder_context:
        raise ShapeError(
            f"caption length {target_ids.shape[1]} exceeds decoder context {t.decoder_context}"
        )
    content = target_ids != tokenizer.PAD_ID
    bad = content & ((target_ids < 0) | (target_ids >= t.vocab_size))
    if bad.any():
        raise DataError(
            f"caption targets contain ids outside vocab of {t.vocab_size} "
            f"(first offender {int(target_ids[bad][0])})"
        )
    dtype = store["decoder.tok_embed"].data.dtype
    b, length = target_ids.shape

    mask = content.astype(dtype)
    count = int(mask.sum())
    if count == 0:
        return Tensor(np.asarray(0.0, dtype=dtype)), 0

    prev = target_ids[:, :-1]
    # pad can sit below a tiny test vocab's range; those positions are
    # loss-masked, remap them to a valid row
    prev = np.where(prev == tokenizer.PAD_ID, 0, prev)
    start = add(store["decoder.start"], Tensor(np.zeros((b, 1, t.width), dtype=dtype)))
    if length > 1:
        x = concat([start, embedding(store["decoder.tok_embed"], prev)], axis=1)
    else:
        x = start
    pe = sincos_1d(length, t.width).astype(dtype, copy=False)
    x = add(x, Tensor(pe[None, :, :]))

    kv = patch_tokens
    if "decoder.vis_adapt.w" in store:
        kv = linear(store, "decoder.vis_adapt", kv)
    x = transformer_forward(store, "decoder", x, t.layers, t.heads, causal=True, cross_kv=kv)
    logits = linear(store, "decoder.head", x)
    logp = log_softmax(logits, axis=-1)

    safe_targets = np.where(content, target_ids, 0)
    picked = take_along_last(logp, safe_targets)
    loss = mul_scalar(sum_(mul(picked, Tensor(mask))), -1.0 / count)
    return loss, count


# -- projector -----------------------------------------------------------------


def init_projector(store: ParamStore, cfg: ProjectorConfig, rng: np.random.Generator) -> None:
    cfg.validate()
    init_linear(store, "projector.fc1", cfg.in_width, cfg.hidden, rng)
    init_linear(store, "projector.fc2", cfg.hidden, cfg.out_width, rng)


def projector_forward(store: ParamStore, cfg: ProjectorConfig, vision_tokens: Tensor) -> Tensor:
    """Per-token 2-layer MLP; token count unchanged."""
    if vision_tokens.shape[-1] != cfg.in_width:
        raise ShapeError(
            f"projector expects width {cfg.in_width}, got tokens of {vision_tokens.shape[-1]}"
        )
    h = linear(store, "projector.fc1", vision_tokens)
    if cfg.activation == "gelu":
        h = gelu(h)
    return linear(store, "projector.fc2", h)


def export_vision(store: ParamStore) -> ParamStore:
    """Subset of the store a downstream consumer needs to embed images:
    the full image tower and its projection, nothing from the text
    encoder or decoder."""
    return {n: store[n] for n in param_names(store, "vision.")}
