"""
Loss-coefficient and learning-rate schedules.

Three phases: the batch-shaping coefficient λ anneals linearly from its
start value to zero, then after an optional delay the L0 coefficient γ
ramps linearly from zero to its final value and stays there.
"""

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, Optional, Tuple

from .constants import GAMMA_GRID_CIFAR, GAMMA_GRID_IMAGENET, LR_POLICIES, POLY_POWER, SCHEDULES

logger = logging.getLogger("Schedule")


@dataclass(frozen=True)
class TrainSchedule:
    epochs: int
    lr: float = 0.1
    milestones: Tuple[int, ...] = field(default_factory=tuple)
    lr_decay_factor: float = 10.0  # the learning rate is divided by this at each milestone
    lr_policy: str = "multistep"
    bs_lambda_start: float = 0.75
    bs_anneal_end_epoch: int = 0
    bs_fixed: bool = False
    l0_start_epoch: int = 0
    l0_rampup_end_epoch: int = 0
    l0_gamma_final: float = 0.0
    batch_size: int = 256
    momentum: float = 0.9
    nesterov: bool = True
    weight_decay: float = 5e-4
    gate_weight_decay: float = 0.0
    per_step: bool = False
    clip_norm: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        if self.epochs < 1:
            raise ValueError(f"TrainSchedule: need at least one epoch, got {self.epochs}")
        if self.lr_policy not in LR_POLICIES:
            raise ValueError(f"TrainSchedule: unknown lr policy '{self.lr_policy}', expected one of {LR_POLICIES}")
        if self.lr <= 0 or self.lr_decay_factor <= 0:
            raise ValueError(f"TrainSchedule: lr {self.lr} and decay factor {self.lr_decay_factor} must be positive")
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ValueError(f"TrainSchedule: milestones must be strictly increasing, got {self.milestones}")
        if self.milestones and not (0 < self.milestones[0] and self.milestones[-1] < self.epochs):
            raise ValueError(f"TrainSchedule: milestones {self.milestones} must lie inside (0, {self.epochs})")
        for name in ("bs_lambda_start", "l0_gamma_final", "weight_decay", "gate_weight_decay", "momentum"):
            if getattr(self, name) < 0:
                raise ValueError(f"TrainSchedule: {name} must be nonnegative, got {getattr(self, name)}")
        if self.batch_size < 2:
            raise ValueError(f"TrainSchedule: batch norm needs batches of at least 2, got {self.batch_size}")
        if self.l0_rampup_end_epoch < self.l0_start_epoch:
            raise ValueError(
                f"TrainSchedule: L0 ramp ends at epoch {self.l0_rampup_end_epoch}, before it starts at {self.l0_start_epoch}"
            )
        if self.shapes and self.regularizes and not self.bs_fixed and self.l0_start_epoch < self.bs_anneal_end_epoch:
            raise ValueError(
                f"TrainSchedule: L0 starts at epoch {self.l0_start_epoch}, before batch-shaping ends at {self.bs_anneal_end_epoch}"
            )

    @property
    def shapes(self) -> bool:
        return self.bs_lambda_start > 0

    @property
    def regularizes(self) -> bool:
        return self.l0_gamma_final > 0

    @classmethod
    def preset(cls, name: str, **overrides: Any) -> "TrainSchedule":
        if name not in SCHEDULES:
            raise ValueError(f"TrainSchedule: unknown preset '{name}', expected one of {sorted(SCHEDULES)}")
        kwargs = dict(SCHEDULES[name])
        kwargs.update(overrides)
        return cls(**kwargs)

    @classmethod
    def field_names(cls) -> Tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["milestones"] = list(self.milestones)
        return d


def _check_epoch(schedule: TrainSchedule, epoch: int):
    if not 0 <= epoch < schedule.epochs:
        raise ValueError(f"epoch {epoch} outside the schedule's [0, {schedule.epochs})")


def loss_coefficients(schedule: TrainSchedule, epoch: int, progress: float = 0.0) -> Tuple[float, float]:
    """
    (λ, γ) at the given epoch. With per_step schedules, `progress` in [0, 1)
    is the fraction of the epoch already done.
    """
    _check_epoch(schedule, epoch)
    t = epoch + progress if schedule.per_step else epoch

    if schedule.bs_fixed:
        lam = schedule.bs_lambda_start
    elif schedule.bs_anneal_end_epoch <= 0 or t >= schedule.bs_anneal_end_epoch:
        lam = 0.0
    else:
        lam = schedule.bs_lambda_start * (1.0 - t / schedule.bs_anneal_end_epoch)

    start, end = schedule.l0_start_epoch, schedule.l0_rampup_end_epoch
    if t < start:
        gamma = 0.0
    elif t >= end:
        gamma = schedule.l0_gamma_final
    else:
        gamma = schedule.l0_gamma_final * (t - start) / (end - start)
    return lam, gamma


def learning_rate(schedule: TrainSchedule, epoch: int, step: int = 0, steps_per_epoch: int = 1) -> float:
    _check_epoch(schedule, epoch)
    if schedule.lr_policy == "poly":
        total = schedule.epochs * steps_per_epoch
        done = epoch * steps_per_epoch + step
        return schedule.lr * (1.0 - done / total) ** POLY_POWER
    passed = sum(1 for m in schedule.milestones if m <= epoch)
    return schedule.lr / schedule.lr_decay_factor**passed


def schedule_table(schedule: TrainSchedule):
    """
    (epoch, lr, λ, γ) for every epoch, the data behind the schedule export.
    """
    for epoch in range(schedule.epochs):
        lam, gamma = loss_coefficients(schedule, epoch)
        yield epoch, learning_rate(schedule, epoch), lam, gamma


def gamma_grid(preset: str) -> Tuple[float, ...]:
    """
    The γ sweep points of a schedule preset: the ImageNet grid for the
    imagenet recipe, the CIFAR grid otherwise.
    """
    if preset not in SCHEDULES:
        raise ValueError(f"gamma_grid: unknown preset '{preset}', expected one of {sorted(SCHEDULES)}")
    return GAMMA_GRID_IMAGENET if preset == "imagenet" else GAMMA_GRID_CIFAR


def gamma_point(preset: str, index: int) -> float:
    grid = gamma_grid(preset)
    if not 0 <= index < len(grid):
        raise ValueError(f"gamma_point: index {index} outside the {preset} grid of {len(grid)} points {grid}")
    return grid[index]
