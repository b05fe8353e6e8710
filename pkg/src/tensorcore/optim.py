"""Optimizers and the cosine learning-rate schedule."""
import logging
import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple

import torch
import torch.nn as nn

from src.errors import NumericalAbortError
from src.validation.schema import OptimizerConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LRSchedule:
    base_lr: float
    total_steps: int
    min_lr: float = 0.0
    warmup_steps: int = 0

    def __post_init__(self):
        if not 0.0 <= self.min_lr <= self.base_lr:
            raise ValueError("Need 0 <= min_lr <= base_lr")
        if self.total_steps <= 0:
            raise ValueError("total_steps must be positive")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError("warmup_steps must lie in [0, total_steps]")


def cosine_lr(schedule: LRSchedule, step: int) -> float:
    """Learning rate at ``step``: linear warmup from min_lr, then half-cosine decay to min_lr.

    Steps past ``total_steps`` stay at min_lr.
    """
    if step < 0:
        raise ValueError("step must be non-negative")
    if step >= schedule.total_steps:
        return schedule.min_lr
    span = schedule.base_lr - schedule.min_lr
    if step < schedule.warmup_steps:
        return schedule.min_lr + span * step / schedule.warmup_steps
    decay_steps = schedule.total_steps - schedule.warmup_steps
    progress = (step - schedule.warmup_steps) / decay_steps
    return schedule.min_lr + 0.5 * span * (1.0 + math.cos(math.pi * progress))


class OptimizerState:
    """A torch optimizer plus the parameter names and step counter used for diagnostics.

    Weight decay is the L2 form: torch's SGD and Adam add ``wd * p`` to the
    gradient before the update.
    """

    def __init__(self, named_params: Iterable[Tuple[str, nn.Parameter]], config: OptimizerConfig):
        named = [(n, p) for n, p in named_params if p.requires_grad]
        if not named:
            raise ValueError("No trainable parameters to optimize")
        self.names: List[str] = [n for n, _ in named]
        self.params: List[nn.Parameter] = [p for _, p in named]
        self.config = config
        self.kind = config.kind
        if config.kind == "adam":
            self.optimizer = torch.optim.Adam(
                self.params, lr=config.lr, betas=config.betas, eps=config.eps, weight_decay=config.weight_decay
            )
        else:
            self.optimizer = torch.optim.SGD(
                self.params, lr=config.lr, momentum=config.momentum, weight_decay=config.weight_decay
            )
        self.step_count = 0

    @property
    def lr(self) -> float:
        return self.optimizer.param_groups[0]["lr"]

    def set_lr(self, lr: float) -> None:
        for group in self.optimizer.param_groups:
            group["lr"] = lr

    def buffers(self, name: str) -> dict:
        """Moment buffers held for the named parameter."""
        return self.optimizer.state.get(self.params[self.names.index(name)], {})

    def zero_grad(self) -> None:
        self.optimizer.zero_grad(set_to_none=False)


def build_optimizer(model: nn.Module, config: OptimizerConfig) -> OptimizerState:
    return OptimizerState(model.named_parameters(), config)


def optimizer_step(state: OptimizerState, lr: Optional[float] = None) -> OptimizerState:
    """Apply one update from the populated gradients, then zero them.

    A NaN/Inf gradient leaves every parameter untouched and raises
    NumericalAbortError naming the first offending parameter.
    """
    for name, param in zip(state.names, state.params):
        if param.grad is not None and not torch.isfinite(param.grad).all():
            state.zero_grad()
            raise NumericalAbortError(f"Non-finite gradient in {name} at step {state.step_count}")
    if lr is not None:
        state.set_lr(lr)
    state.optimizer.step()
    state.zero_grad()
    state.step_count += 1
    return state
