"""Resumable training state.

Everything a run needs to continue bit-exactly lives in one container
file: model parameters, optimizer moment buffers, the dataset RNG's
internal state, the in-flight epoch permutation, and the progress
counters. Loading it and continuing produces the same parameter bytes
as never having stopped.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError
from ..models.checkpoint import load_checkpoint, save_checkpoint
from ..models.layers import ParamStore
from ..numerics import Tensor
from .adamw import AdamW


@dataclass
class TrainState:
    stage_index: int = 0
    samples_in_stage: int = 0
    samples_total: int = 0
    step: int = 0
    epoch_wraps: int = 0
    epoch_cursor: int = 0
    epoch_order: np.ndarray | None = None
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    @staticmethod
    def fresh(seed: int) -> "TrainState":
        return TrainState(rng=np.random.Generator(np.random.PCG64(seed)))


def save_train_state(
    path, store: ParamStore, opt: AdamW, state: TrainState, extra_meta: dict | None = None
) -> None:
    tensors = dict(store)
    for name, arr in opt.state_arrays().items():
        tensors[name] = Tensor(arr)
    if state.epoch_order is not None:
        # container holds floats only; dataset indices fit f64 exactly
        tensors["state.epoch_order"] = Tensor(state.epoch_order.astype(np.float64))
    meta = {
        "kind": "train_state",
        "counters": {
            "stage_index": state.stage_index,
            "samples_in_stage": state.samples_in_stage,
            "samples_total": state.samples_total,
            "step": state.step,
            "epoch_wraps": state.epoch_wraps,
            "epoch_cursor": state.epoch_cursor,
            "opt_t": opt.t,
        },
        "rng_state": state.rng.bit_generator.state,
    }
    if extra_meta:
        meta.update(extra_meta)
    save_checkpoint(path, tensors, meta)


def load_train_state(path) -> tuple[ParamStore, dict, TrainState, dict]:
    """Returns (model store, optimizer moment arrays, state, meta)."""
    tensors, meta = load_checkpoint(path)
    if meta.get("kind") != "train_state":
        raise DataError(f"{path}: not a training state container")
    store: ParamStore = {}
    opt_arrays: dict = {}
    epoch_order = None
    for name, t in tensors.items():
        if name.startswith("opt."):
            opt_arrays[name] = t.data
        elif name == "state.epoch_order":
            epoch_order = t.data.astype(np.int64)
        else:
            t.requires_grad = True
            store[name] = t
    counters = meta["counters"]
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = meta["rng_state"]
    state = TrainState(
        stage_index=counters["stage_index"],
        samples_in_stage=counters["samples_in_stage"],
        samples_total=counters["samples_total"],
        step=counters["step"],
        epoch_wraps=counters["epoch_wraps"],
        epoch_cursor=counters["epoch_cursor"],
        epoch_order=epoch_order,
        rng=rng,
    )
    return store, opt_arrays, state, meta


def resume_optimizer(store: ParamStore, opt_arrays: dict, meta: dict, **adamw_kwargs) -> AdamW:
    opt = AdamW(store, **adamw_kwargs)
    opt.load_state_arrays(opt_arrays, meta["counters"]["opt_t"])
    return opt
