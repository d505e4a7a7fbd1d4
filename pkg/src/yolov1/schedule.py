"""Learning-rate schedules as pure ``step -> rate`` functions."""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass

from .errors import StepOutOfRange

FIXED = "fixed"
MULTISTEP = "multistep"
ONECYCLE = "onecycle_cosine"


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str = FIXED
    lr: float = 0.01
    milestones: tuple[int, ...] = ()
    gamma: float = 0.1
    total_steps: int = 0
    pct_start: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.kind == MULTISTEP:
            ms = tuple(self.milestones)
            if any(b <= a for a, b in zip(ms, ms[1:])):
                raise ValueError("milestones must be strictly increasing")
            if self.gamma <= 0:
                raise ValueError("gamma must be positive")
            object.__setattr__(self, "milestones", ms)
        elif self.kind == ONECYCLE:
            if self.total_steps < 2:
                raise ValueError("total_steps must be >= 2")
            if not 0 < self.pct_start < 1:
                raise ValueError("pct_start must lie in (0, 1)")
            if self.div_factor <= 0 or self.final_div_factor <= 0:
                raise ValueError("div factors must be positive")
            if self.total_steps - 1 <= self.warmup_steps:
                raise ValueError("anneal phase is empty; raise total_steps or lower pct_start")
        elif self.kind != FIXED:
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    @property
    def warmup_steps(self) -> float:
        return self.pct_start * self.total_steps

    @classmethod
    def fixed(cls, lr: float) -> "ScheduleSpec":
        return cls(FIXED, lr)

    @classmethod
    def multistep(cls, base_lr: float, milestones, gamma: float = 0.1) -> "ScheduleSpec":
        return cls(MULTISTEP, base_lr, tuple(milestones), gamma)

    @classmethod
    def onecycle(cls, max_lr: float, total_steps: int, pct_start: float = 0.3,
                 div_factor: float = 25.0, final_div_factor: float = 1e4) -> "ScheduleSpec":
        return cls(ONECYCLE, max_lr, total_steps=total_steps, pct_start=pct_start,
                   div_factor=div_factor, final_div_factor=final_div_factor)


def _cos_interp(start: float, end: float, tau: float) -> float:
    return end + (start - end) * (1 + math.cos(math.pi * tau)) / 2


def lr_at(spec: ScheduleSpec, step: int) -> float:
    if step < 0:
        raise StepOutOfRange(f"negative step {step}")
    if spec.kind == FIXED:
        return spec.lr
    if spec.kind == MULTISTEP:
        # applied once per milestone passed, like a chained step decay
        lr = spec.lr
        for _ in range(bisect.bisect_right(spec.milestones, step)):
            lr *= spec.gamma
        return lr
    if step >= spec.total_steps:
        raise StepOutOfRange(f"step {step} outside [0, {spec.total_steps})")
    max_lr = spec.lr
    warm = spec.warmup_steps
    if step < warm:
        return _cos_interp(max_lr / spec.div_factor, max_lr, step / warm)
    tau = (step - warm) / (spec.total_steps - 1 - warm)
    return _cos_interp(max_lr, max_lr / spec.final_div_factor, tau)


def schedule_table(spec: ScheduleSpec, n_steps: int | None = None) -> list[tuple[int, float]]:
    n = spec.total_steps if n_steps is None and spec.kind == ONECYCLE else n_steps
    if n is None:
        raise ValueError("n_steps is required for fixed and multistep schedules")
    return [(s, lr_at(spec, s)) for s in range(n)]
