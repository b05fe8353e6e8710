"""Immutable records for scans, timelines, labelled examples and splits."""
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import torch

from src.errors import ShapeError


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class VolumeScan:
    """One 3D scan: slice stack (S, H, W) in [0, 1] plus its reference surface (S, W)."""

    slices: np.ndarray
    surface: np.ndarray
    visit_day: int
    lesion_slices: Tuple[int, ...] = ()
    lesion_amplitude: float = 0.0

    def __post_init__(self):
        if self.slices.ndim != 3 or min(self.slices.shape) <= 0:
            raise ShapeError(f"slices must be a non-empty (S, H, W) array, got {self.slices.shape}")
        n_slices, height, width = self.slices.shape
        if self.surface.shape != (n_slices, width):
            raise ShapeError(f"surface must have shape {(n_slices, width)}, got {self.surface.shape}")
        if self.surface.min() < 0 or self.surface.max() >= height:
            raise ShapeError("surface rows must lie in [0, H)")
        if any(not 0 <= s < n_slices for s in self.lesion_slices):
            raise ShapeError("lesion slice index out of range")
        object.__setattr__(self, "slices", _readonly(self.slices))
        object.__setattr__(self, "surface", _readonly(self.surface.astype(np.int64)))
        object.__setattr__(self, "lesion_slices", tuple(int(s) for s in self.lesion_slices))

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(self.slices.shape)

    @property
    def intensity_range(self) -> Tuple[float, float]:
        return float(self.slices.min()), float(self.slices.max())


@dataclass(frozen=True)
class PatientTimeline:
    """Ordered visits of one patient; ``conversion_day`` is set for converters."""

    patient_id: str
    visits: Tuple[VolumeScan, ...]
    conversion_day: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "visits", tuple(self.visits))
        days = [v.visit_day for v in self.visits]
        if any(b <= a for a, b in zip(days, days[1:])):
            raise ValueError(f"{self.patient_id}: visit days must be strictly increasing")
        if self.visits and len({v.shape for v in self.visits}) != 1:
            raise ShapeError(f"{self.patient_id}: all visits must share one volume shape")
        if self.conversion_day is not None and self.visits and self.conversion_day < days[0]:
            raise ValueError(f"{self.patient_id}: conversion_day precedes the first visit")

    @property
    def is_converter(self) -> bool:
        return self.conversion_day is not None

    @property
    def visit_days(self) -> Tuple[int, ...]:
        return tuple(v.visit_day for v in self.visits)


@dataclass(frozen=True)
class LabelledExample:
    """A scan ready for the classifier; ``lesion_slices`` index the prepared volume."""

    patient_id: str
    visit_day: int
    volume: torch.Tensor
    label: int
    lesion_slices: Tuple[int, ...] = ()


@dataclass(frozen=True)
class DatasetSplit:
    """Patient-level holdout set plus k cross-validation folds."""

    holdout: Tuple[str, ...]
    folds: Tuple[Tuple[str, ...], ...] = field(default_factory=tuple)

    @property
    def k(self) -> int:
        return len(self.folds)

    def validation_ids(self, fold: int) -> Tuple[str, ...]:
        return self.folds[fold]

    def train_ids(self, fold: int) -> Tuple[str, ...]:
        return tuple(pid for i, f in enumerate(self.folds) if i != fold for pid in f)

    def all_ids(self) -> Tuple[str, ...]:
        return self.holdout + tuple(pid for f in self.folds for pid in f)
