"""Central finite-difference check of analytic gradients."""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Optional, Sequence, Tuple

import torch
import torch.nn as nn

from src.errors import NonDeterministicError
from src.tensorcore.layers import DropPath

logger = logging.getLogger(__name__)


@dataclass
class GradCheckReport:
    tolerance: float
    mode: str = "coordinate"
    per_tensor: Dict[str, float] = field(default_factory=dict)

    @property
    def max_rel_error(self) -> float:
        return max(self.per_tensor.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    def summary(self) -> str:
        worst = max(self.per_tensor, key=self.per_tensor.get, default="-")
        status = "ok" if self.passed else "FAILED"
        return f"grad_check {status}: max rel err {self.max_rel_error:.3e} ({worst}), tol {self.tolerance:.0e}"


def _active_drop_path(module: nn.Module) -> bool:
    return any(isinstance(m, DropPath) and m.training and m.rate > 0 for m in module.modules())


def grad_check(
    forward: Callable[..., torch.Tensor],
    inputs: Sequence[torch.Tensor],
    tolerance: float = 1e-5,
    parameters: Optional[Iterable[Tuple[str, torch.Tensor]]] = None,
    eps: float = 1e-5,
    max_entries: Optional[int] = None,
    seed: int = 0,
    mode: str = "coordinate",
) -> GradCheckReport:
    """Compare autograd gradients with central differences for the inputs and every parameter.

    The scalar objective is ``sum(forward(*inputs) * W)`` with fixed random
    ``W``. Relative error per tensor is max|a - f| / max(max|a|, max|f|, 1e-8).
    ``max_entries`` limits the probed coordinates per tensor to a seeded subset.

    ``mode="directional"`` instead compares one derivative per tensor along a
    seeded random unit direction, for whole networks whose ReLU and max-pool
    kinks make coordinate probes unreliable.
    """
    if mode not in ("coordinate", "directional"):
        raise ValueError("mode must be 'coordinate' or 'directional'")
    if parameters is None:
        parameters = forward.named_parameters() if isinstance(forward, nn.Module) else ()
    params = [(name, p) for name, p in parameters if p.requires_grad]
    if isinstance(forward, nn.Module) and _active_drop_path(forward):
        raise NonDeterministicError("drop path is active; switch the module to eval mode or set its rate to 0")

    leaves = tuple(
        x.detach().clone().requires_grad_(True) if x.is_floating_point() else x for x in inputs
    )
    checked = [(f"input{i}", x) for i, x in enumerate(leaves) if x.is_floating_point()] + params
    for name, t in checked:
        if t.dtype != torch.float64:
            raise ValueError(f"grad_check needs float64 tensors; {name} is {t.dtype}")

    with torch.no_grad():
        first = forward(*leaves)
        second = forward(*leaves)
    if not torch.equal(first, second):
        raise NonDeterministicError("forward gave different outputs for identical inputs")

    generator = torch.Generator().manual_seed(seed)
    weights = torch.randn(first.shape, generator=generator, dtype=torch.float64)

    def objective() -> torch.Tensor:
        return (forward(*leaves) * weights).sum()

    tensors = [t for _, t in checked]
    grads = torch.autograd.grad(objective(), tensors, allow_unused=True)

    report = GradCheckReport(tolerance=tolerance, mode=mode)
    with torch.no_grad():
        for (name, tensor), grad in zip(checked, grads):
            analytic = torch.zeros_like(tensor) if grad is None else grad
            flat = tensor.detach().view(-1)
            if mode == "directional":
                report.per_tensor[name] = _directional_error(flat, analytic.reshape(-1), objective, eps, generator)
            else:
                report.per_tensor[name] = _coordinate_error(flat, analytic.reshape(-1), objective, eps, max_entries, generator)
    logger.debug(report.summary())
    return report


def _coordinate_error(flat, analytic, objective, eps, max_entries, generator) -> float:
    n = flat.numel()
    if max_entries is not None and max_entries < n:
        index = torch.randperm(n, generator=generator)[:max_entries]
    else:
        index = torch.arange(n)
    numeric = torch.empty(len(index), dtype=torch.float64)
    for j, i in enumerate(index.tolist()):
        original = flat[i].item()
        flat[i] = original + eps
        plus = objective().item()
        flat[i] = original - eps
        minus = objective().item()
        flat[i] = original
        numeric[j] = (plus - minus) / (2 * eps)
    a = analytic[index]
    scale = max(a.abs().max().item(), numeric.abs().max().item(), 1e-8)
    return (a - numeric).abs().max().item() / scale


def _directional_error(flat, analytic, objective, eps, generator) -> float:
    # derivative along one random unit direction
    direction = torch.randn(flat.numel(), generator=generator, dtype=torch.float64)
    direction /= direction.norm()
    original = flat.clone()
    flat.add_(eps * direction)
    plus = objective().item()
    flat.copy_(original - eps * direction)
    minus = objective().item()
    flat.copy_(original)
    numeric = (plus - minus) / (2 * eps)
    a = float(analytic @ direction)
    return abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
