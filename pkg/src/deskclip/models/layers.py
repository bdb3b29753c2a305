"""Shared transformer building blocks.

All model parameters live in a flat ``dict[str, Tensor]`` keyed by dotted
names ("vision.blocks.0.attn.qkv.w"). Builders insert freshly initialized
tensors; forward helpers read them back by the same names. Keeping the
store flat makes checkpointing, export filtering, and optimizer
bookkeeping trivial.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from ..errors import ShapeError
from ..numerics import (
    Tensor,
    add,
    attention,
    gelu,
    layer_norm,
    matmul,
    reshape,
    transpose,
)

ParamStore = dict  # dict[str, Tensor]


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, bound: float = 2.0) -> np.ndarray:
    """Normal(0, std) with samples beyond ``bound`` sigmas redrawn."""
    out = rng.standard_normal(shape)
    for _ in range(16):
        bad = np.abs(out) > bound
        if not bad.any():
            break
        out[bad] = rng.standard_normal(int(bad.sum()))
    np.clip(out, -bound, bound, out=out)
    return (out * std).astype(np.float32)


# -- parameter builders ----------------------------------------------------


def init_linear(store: ParamStore, name: str, d_in: int, d_out: int, rng: np.random.Generator) -> None:
    store[f"{name}.w"] = Tensor(trunc_normal(rng, (d_in, d_out)), requires_grad=True)
    store[f"{name}.b"] = Tensor(np.zeros(d_out, dtype=np.float32), requires_grad=True)


def init_norm(store: ParamStore, name: str, d: int) -> None:
    store[f"{name}.g"] = Tensor(np.ones(d, dtype=np.float32), requires_grad=True)
    store[f"{name}.b"] = Tensor(np.zeros(d, dtype=np.float32), requires_grad=True)


def init_block(
    store: ParamStore,
    name: str,
    width: int,
    heads: int,
    mlp_dim: int,
    rng: np.random.Generator,
    cross: bool = False,
) -> None:
    if width % heads != 0:
        raise ShapeError(f"width {width} not divisible by heads {heads}")
    init_norm(store, f"{name}.ln1", width)
    init_linear(store, f"{name}.attn.qkv", width, 3 * width, rng)
    init_linear(store, f"{name}.attn.proj", width, width, rng)
    if cross:
        init_norm(store, f"{name}.lnx", width)
        init_linear(store, f"{name}.xattn.q", width, width, rng)
        init_linear(store, f"{name}.xattn.kv", width, 2 * width, rng)
        init_linear(store, f"{name}.xattn.proj", width, width, rng)
    init_norm(store, f"{name}.ln2", width)
    init_linear(store, f"{name}.mlp.fc1", width, mlp_dim, rng)
    init_linear(store, f"{name}.mlp.fc2", mlp_dim, width, rng)


def init_transformer(
    store: ParamStore,
    name: str,
    depth: int,
    width: int,
    heads: int,
    mlp_dim: int,
    rng: np.random.Generator,
    cross: bool = False,
) -> None:
    for i in range(depth):
        init_block(store, f"{name}.blocks.{i}", width, heads, mlp_dim, rng, cross=cross)
    init_norm(store, f"{name}.ln_f", width)


# -- forward helpers ---------------------------------------------------------


def linear(store: ParamStore, name: str, x: Tensor) -> Tensor:
    return add(matmul(x, store[f"{name}.w"]), store[f"{name}.b"])


def norm(store: ParamStore, name: str, x: Tensor) -> Tensor:
    return layer_norm(x, store[f"{name}.g"], store[f"{name}.b"])


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, t, d = x.shape
    return transpose(reshape(x, (b, t, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, t, dh = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (b, t, h * dh))


def self_attention(store: ParamStore, name: str, x: Tensor, heads: int, causal: bool) -> Tensor:
    b, t, d = x.shape
    qkv = linear(store, f"{name}.qkv", x)
    qkv = reshape(qkv, (b, t, 3, d))
    q = _split_heads(reshape(qkv[:, :, 0, :], (b, t, d)), heads)
    k = _split_heads(reshape(qkv[:, :, 1, :], (b, t, d)), heads)
    v = _split_heads(reshape(qkv[:, :, 2, :], (b, t, d)), heads)
    out = _merge_heads(attention(q, k, v, causal=causal))
    return linear(store, f"{name}.proj", out)


def cross_attention(store: ParamStore, name: str, x: Tensor, kv_src: Tensor, heads: int) -> Tensor:
    b, t, d = x.shape
    _, s, _ = kv_src.shape
    q = _split_heads(linear(store, f"{name}.q", x), heads)
    kv = reshape(linear(store, f"{name}.kv", kv_src), (b, s, 2, d))
    k = _split_heads(reshape(kv[:, :, 0, :], (b, s, d)), heads)
    v = _split_heads(reshape(kv[:, :, 1, :], (b, s, d)), heads)
    out = _merge_heads(attention(q, k, v, causal=False))
    return linear(store, f"{name}.proj", out)


def block_forward(
    store: ParamStore,
    name: str,
    x: Tensor,
    heads: int,
    causal: bool = False,
    cross_kv: Tensor | None = None,
) -> Tensor:
    # pre-LN residual wiring throughout
    x = add(x, self_attention(store, f"{name}.attn", norm(store, f"{name}.ln1", x), heads, causal))
    if cross_kv is not None:
        x = add(x, cross_attention(store, f"{name}.xattn", norm(store, f"{name}.lnx", x), cross_kv, heads))
    h = norm(store, f"{name}.ln2", x)
    h = linear(store, f"{name}.mlp.fc2", gelu(linear(store, f"{name}.mlp.fc1", h)))
    return add(x, h)


def transformer_forward(
    store: ParamStore,
    name: str,
    x: Tensor,
    depth: int,
    heads: int,
    causal: bool = False,
    cross_kv: Tensor | None = None,
) -> Tensor:
    for i in range(depth):
        x = block_forward(store, f"{name}.blocks.{i}", x, heads, causal=causal, cross_kv=cross_kv)
    return norm(store, f"{name}.ln_f", x)


# -- positional embeddings ----------------------------------------------------


def _sincos_1d_raw(positions: np.ndarray, dim: int) -> np.ndarray:
    if dim % 2 != 0:
        raise ShapeError(f"sincos dim must be even, got {dim}")
    omega = np.arange(dim // 2, dtype=np.float64) / (dim / 2.0)
    omega = 1.0 / 10000.0**omega
    angles = np.outer(positions.astype(np.float64), omega)
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


@lru_cache(maxsize=64)
def sincos_1d(length: int, width: int) -> np.ndarray:
    """Fixed 1D sin/cos table, shape (length, width), float32."""
    table = _sincos_1d_raw(np.arange(length), width)
    table = table.astype(np.float32)
    table.flags.writeable = False
    return table

@lru_cache(maxsize=64)
def sincos_2d(grid_h: int, grid_w: int, width: int) -> np.ndarray:
    """Fixed 2D sin/cos table, shape (grid_h*grid_w, width), float32.

    Half the channels encode the row coordinate, half the column, so
    ``width`` must be divisible by 4. Parameter-free: regenerating the
    table is how the model moves between input resolutions.
    """
    if width % 4 != 0:
        raise ShapeError(f"2d sincos width must be divisible by 4, got {width}")
    gy, gx = np.meshgrid(np.arange(grid_h), np.arange(grid_w), indexing="ij")
    emb_h = _sincos_1d_raw(gy.reshape(-1), width // 2)
    emb_w = _sincos_1d_raw(gx.reshape(-1), width // 2)
    table = np.concatenate([emb_h, emb_w], axis=1).astype(np.float32)
    table.flags.writeable = False
    return table


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """(B, C, H, W) pixels to (B, N, C*patch*patch) flat patches.

    Pure reshape/transpose; the learned projection is a separate matmul
    so no convolution is involved anywhere.
    """
    if images.ndim != 4:
        raise ShapeError(f"expected (B, C, H, W) images, got shape {images.shape}")
    b, c, h, w = images.shape
    if h % patch != 0 or w % patch != 0:
        raise ShapeError(f"image {h}x{w} not divisible by patch {patch}")
    gh, gw = h // patch, w // patch
    x = images.reshape(b, c, gh, patch, gw, patch)
    x = x.transpose(0, 2, 4, 1, 3, 5)
    return np.ascontiguousarray(x.reshape(b, gh * gw, c * patch * patch))
