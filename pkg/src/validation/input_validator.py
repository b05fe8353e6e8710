"""Shape and value checks shared by the numerical modules."""
from typing import Sequence, Tuple, Union

import numpy as np
import torch

from src.errors import ShapeError

ArrayLike = Union[np.ndarray, torch.Tensor]


def require_ndim(x: ArrayLike, ndims: Union[int, Sequence[int]], name: str) -> None:
    """Raise ShapeError unless ``x`` has one of the allowed ranks."""
    allowed = (ndims,) if isinstance(ndims, int) else tuple(ndims)
    if x.ndim not in allowed:
        raise ShapeError(f"{name} must have rank in {allowed}, got shape {tuple(x.shape)}")


def require_finite(x: ArrayLike, name: str) -> None:
    finite = torch.isfinite(x).all().item() if isinstance(x, torch.Tensor) else np.isfinite(x).all()
    if not finite:
        raise ValueError(f"{name} contains NaN or Inf values")


def require_binary_labels(labels: ArrayLike, name: str = "labels") -> np.ndarray:
    """Return labels as an int array, rejecting anything outside {0, 1}."""
    arr = labels.detach().cpu().numpy() if isinstance(labels, torch.Tensor) else np.asarray(labels)
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} must only contain 0 and 1")
    return arr.astype(np.int64)


def central_block(total: int, count: int) -> Tuple[int, int]:
    """Start/stop of the contiguous central block of ``count`` items out of ``total``."""
    if count > total:
        raise ShapeError(f"Cannot take {count} central items out of {total}")
    start = (total - count) // 2
    return start, start + count
