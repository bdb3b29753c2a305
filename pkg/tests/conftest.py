"""Shared fixtures. The expensive overfit runs are session-scoped so the
acceptance suite and the metric tests can share one training pass."""

import numpy as np
import pytest

from deskclip.data import probe
from deskclip.models.config import micro_model
from deskclip.models.model import build_model, encode_captions, encode_image
from deskclip.training.loop import TrainOptions, run_curriculum
from deskclip.training.schedule import StageSchedule

OVERFIT_STEPS = 2000
OVERFIT_BATCH = 32


def batched_image_embs(store, cfg, images, batch=32):
    return np.concatenate(
        [encode_image(store, cfg, images[i : i + batch]).data
         for i in range(0, images.shape[0], batch)]
    )


def batched_caption_embs(store, cfg, texts, batch=64):
    return np.concatenate(
        [encode_captions(store, cfg, texts[i : i + batch]).data
         for i in range(0, len(texts), batch)]
    )


@pytest.fixture(scope="session")
def probe_records_256():
    return probe.generate_records(256, seed=7, image_size=32)


@pytest.fixture(scope="session")
def overfit_run(tmp_path_factory, probe_records_256):
    """256-record overfit of the micro model with the decoder on:
    2000 steps at batch 32, single 32 px stage."""
    out = tmp_path_factory.mktemp("overfit")
    cfg = micro_model(resolution=32)
    store = build_model(cfg, seed=0)
    stages = [StageSchedule(
        resolution=32,
        samples=OVERFIT_STEPS * OVERFIT_BATCH,
        batch=OVERFIT_BATCH,
        base_lr=2.5e-3,
        warmup_samples=6400,
    )]
    result = run_curriculum(
        store, cfg, stages, probe_records_256, out,
        seed=0, options=TrainOptions(weight_decay=0.0, log_every=1),
    )
    return {
        "store": store,
        "cfg": cfg,
        "records": probe_records_256,
        "result": result,
        "out_dir": out,
    }
