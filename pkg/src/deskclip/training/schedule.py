"""Progressive-resolution curriculum schedule.

A curriculum is an ordered list of stages. Each stage fixes the input
resolution, the number of samples to process, the batch size, and the
peak learning rate; within a stage the rate follows linear warmup into
a cosine decay, both measured in samples so the shape is independent of
batch size. Stage resolutions may go up, down, or stay flat: a
single-stage run at one resolution is just a one-element curriculum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from ..errors import ConfigError


@dataclass(frozen=True)
class StageSchedule:
    resolution: int
    samples: int
    batch: int
    base_lr: float
    warmup_samples: int = -1  # -1 means 2% of samples

    def __post_init__(self):
        if self.warmup_samples < 0:
            object.__setattr__(self, "warmup_samples", int(round(self.samples * 0.02)))

    def validate(self, patch: int | None = None) -> None:
        if self.resolution < 1:
            raise ConfigError(f"stage resolution {self.resolution} invalid")
        if patch is not None and self.resolution % patch != 0:
            raise ConfigError(
                f"stage resolution {self.resolution} not divisible by patch {patch}"
            )
        if self.samples < 0:
            raise ConfigError(f"stage samples {self.samples} negative")
        if self.batch < 1:
            raise ConfigError(f"stage batch {self.batch} invalid")
        if self.samples % self.batch != 0:
            raise ConfigError(
                f"stage samples {self.samples} not divisible by batch {self.batch}"
            )
        if self.base_lr < 0:
            raise ConfigError(f"stage base_lr {self.base_lr} negative")
        if not 0 <= self.warmup_samples <= self.samples:
            raise ConfigError(
                f"warmup_samples {self.warmup_samples} outside [0, {self.samples}]"
            )

    def lr_at(self, samples_seen) -> float:
        """Learning rate after ``samples_seen`` samples of this stage.

        Linear from 0 to base_lr over the warmup span, hitting base_lr
        exactly at the endpoint, then 0.5 * base_lr * (1 + cos(pi * t))
        where t is the fraction of the post-warmup span consumed (1 at
        stage end, so the schedule closes at exactly 0). Arguments
        outside [0, samples] violate the contract.
        """
        if samples_seen < 0 or samples_seen > self.samples:
            raise ConfigError(
                f"samples_seen {samples_seen} outside stage range [0, {self.samples}]"
            )
        w = self.warmup_samples
        if w > 0 and samples_seen <= w:
            return self.base_lr * (samples_seen / w)
        span = self.samples - w
        if span <= 0:
            return 0.0
        t = (samples_seen - w) / span
        return 0.5 * self.base_lr * (1.0 + math.cos(math.pi * t))

    def lr_for_batch(self, samples_before: int) -> float:
        """Rate used for one optimizer step: the schedule sampled at the
        midpoint of the batch, so neither the first nor the last update
        of a stage runs at exactly zero."""
        return self.lr_at(samples_before + self.batch / 2.0)

    def step_count(self) -> int:
        return self.samples // self.batch


def validate_curriculum(stages: list, patch: int | None = None) -> None:
    if not stages:
        raise ConfigError("curriculum has no stages")
    for s in stages:
        s.validate(patch)


def desk_curriculum() -> list[StageSchedule]:
    """Default three-stage recipe: 50:4:1 sample budgets and 4:2:1 batch
    sizes, the published large-scale ratios scaled to desk size, with
    the LR ladder restarting lower as resolution grows."""
    return [
        StageSchedule(resolution=64, samples=12800, batch=64, base_lr=1e-3),
        StageSchedule(resolution=96, samples=1024, batch=32, base_lr=5e-5),
        StageSchedule(resolution=128, samples=256, batch=16, base_lr=1.25e-5),
    ]
