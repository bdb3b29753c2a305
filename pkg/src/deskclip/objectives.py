"""Training objectives: multi-positive contrastive loss plus captioning.

The contrastive loss generalizes two-direction InfoNCE to K captions
per image. With similarity s[i, (j, k)] = (u_i . v_{j,k}) / tau between
image i and the k-th caption of image j:

  image-to-text, per image i:
      -(1/K) * sum_k log( exp(s[i,(i,k)]) / sum_{j,k'} exp(s[i,(j,k')]) )
  text-to-image, per caption (j, k):
      -log( exp(s[j,(j,k)]) / sum_i exp(s[i,(j,k)]) )

and the total is the mean of the two directional means. When the K
captions of each image are identical this collapses to the standard
InfoNCE total plus ln(K)/2, a constant the tests pin down exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DataError, ShapeError
from .models import (
    ModelConfig,
    caption_decode_loss,
    caption_targets,
    temperature,
    vision_forward,
)
from .models.layers import ParamStore
from .models.model import encode_captions
from .numerics import (
    Tensor,
    add,
    l2_normalize,
    log_softmax,
    matmul,
    mul,
    mul_scalar,
    power,
    reshape,
    sum_,
    transpose,
)

CAPTION_SOURCES = ("both", "synthetic", "original")


@dataclass
class ContrastiveBatch:
    """Unit-norm embeddings plus the temperature for one batch.

    image_emb: (N, D). caption_emb: (N, K, D), row (i, k) holding the
    k-th caption of image i. temperature: positive scalar (Tensor keeps
    it learnable). Rows must already be L2 normalized: the loss is only
    a cosine softmax if that holds, so violations are contract errors.
    """

    image_emb: Tensor
    caption_emb: Tensor
    temperature: Tensor

    def validate(self) -> None:
        if self.image_emb.ndim != 2:
            raise ShapeError(f"image_emb must be (N, D), got {self.image_emb.shape}")
        if self.caption_emb.ndim != 3:
            raise ShapeError(f"caption_emb must be (N, K, D), got {self.caption_emb.shape}")
        n, d = self.image_emb.shape
        n2, k, d2 = self.caption_emb.shape
        if n2 != n or d2 != d:
            raise ShapeError(
                f"embedding shapes disagree: images {self.image_emb.shape}, "
                f"captions {self.caption_emb.shape}"
            )
        if n < 1 or k < 1:
            raise ShapeError("empty contrastive batch")
        if self.temperature.data.size != 1 or float(self.temperature.data) <= 0:
            raise ContractError("temperature must be a positive scalar")
        for label, t in (("image", self.image_emb), ("caption", self.caption_emb)):
            norms = np.sqrt((t.data.astype(np.float64) ** 2).sum(axis=-1))
            worst = float(np.abs(norms - 1.0).max())
            if worst > 1e-5:
                raise ContractError(
                    f"{label} embeddings are not unit norm (max deviation {worst:.2e}); "
                    "normalize before building the batch"
                )


def multi_positive_contrastive(batch: ContrastiveBatch) -> Tensor:
    """Symmetric multi-positive InfoNCE over the batch."""
    batch.validate()
    n, d = batch.image_emb.shape
    _, k, _ = batch.caption_emb.shape

    caps_flat = reshape(batch.caption_emb, (n * k, d))
    sims = matmul(batch.image_emb, transpose(caps_flat, (1, 0)))  # (N, N*K)
    logits = mul(sims, power(batch.temperature, -1.0))

    # image -> text: each image's row softmax over all N*K captions,
    # positives are its own K columns
    pos_mask = np.zeros((n, n * k), dtype=logits.data.dtype)
    for i in range(n):
        pos_mask[i, i * k : (i + 1) * k] = 1.0
    logp_i2t = log_softmax(logits, axis=-1)
    i2t = mul_scalar(sum_(mul(logp_i2t, Tensor(pos_mask))), -1.0 / (n * k))

    # text -> image: each caption's column softmax over the N images,
    # positive is its owner
    logp_t2i = log_softmax(logits, axis=0)
    t2i = mul_scalar(sum_(mul(logp_t2i, Tensor(pos_mask))), -1.0 / (n * k))

    return mul_scalar(add(i2t, t2i), 0.5)


@dataclass
class LossBreakdown:
    """Float components of one training step. The additivity identity
    total == contrastive + lambda_caption * captioning is exact: total
    is computed from these double-precision floats, not re-rounded
    through the model dtype."""

    contrastive: float
    captioning: float
    total: float
    lambda_caption: float


def combine_losses(
    contrastive: Tensor,
    captioning: Tensor | None,
    lambda_caption: float,
) -> tuple[Tensor, LossBreakdown]:
    """Weighted sum of the objective terms, as the graph node to
    backpropagate plus the exact float breakdown for logging."""
    c = float(contrastive.data)
    if captioning is None or lambda_caption == 0.0:
        cap = 0.0 if captioning is None else float(captioning.data)
        lam = 0.0
        return contrastive, LossBreakdown(contrastive=c, captioning=cap, total=c, lambda_caption=lam)
    loss = add(contrastive, mul_scalar(captioning, lambda_caption))
    cap = float(captioning.data)
    return loss, LossBreakdown(
        contrastive=c,
        captioning=cap,
        total=c + lambda_caption * cap,
        lambda_caption=lambda_caption,
    )


def total_loss(
    store: ParamStore,
    cfg: ModelConfig,
    images: np.ndarray,
    originals: list,
    synthetics: list,
    use_decoder: bool = True,
    caption_source: str = "both",
    lambda_caption: float = 1.0,
) -> tuple[Tensor, LossBreakdown]:
    """Full training objective for one batch of records.

    The contrastive term embeds captions per ``caption_source`` (both ->
    K=2, else K=1). The captioning term follows the same source: it
    teacher-forces the synthetic caption (falling back to the original
    when a record has none) except under source "original", where the
    ablation trains the decoder on original captions too. Missing
    synthetic captions are a data error only when the contrastive term
    needs them.
    """
    if caption_source not in CAPTION_SOURCES:
        raise ShapeError(f"caption_source must be one of {CAPTION_SOURCES}")
    n = images.shape[0]
    if not (len(originals) == len(synthetics) == n):
        raise ShapeError("images and caption lists must have equal length")
    if caption_source in ("both", "synthetic"):
        missing = [i for i, s in enumerate(synthetics) if not s]
        if missing:
            raise DataError(
                f"caption_source={caption_source} but records {missing[:5]} have no synthetic caption"
            )

    pooled, patch_tokens = vision_forward(store, cfg, images)
    image_emb = l2_normalize(matmul(pooled, store["vision.proj"]))

    if caption_source == "both":
        texts = [t for pair in zip(originals, synthetics) for t in pair]
        k = 2
    elif caption_source == "synthetic":
        texts = list(synthetics)
        k = 1
    else:
        texts = list(originals)
        k = 1
    caption_emb = reshape(encode_captions(store, cfg, texts), (n, k, cfg.embed_dim))

    batch = ContrastiveBatch(
        image_emb=image_emb, caption_emb=caption_emb, temperature=temperature(store)
    )
    contrastive = multi_positive_contrastive(batch)

    captioning = None
    if use_decoder:
        if not cfg.with_decoder:
            raise ShapeError("use_decoder=True but the model has no decoder parameters")
        if caption_source == "original":
            decode_texts = list(originals)
        else:
            decode_texts = [s if s else o for s, o in zip(synthetics, originals)]
        targets = caption_targets(decode_texts, cfg.text.decoder_context)
        captioning, _ = caption_decode_loss(store, cfg, patch_tokens, targets)
        return combine_losses(contrastive, captioning, lambda_caption)
    return combine_losses(contrastive, None, 0.0)
