"""How well a model's slice attention finds the planted lesion slices."""
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from src.errors import AttentionUnavailableError, TrainingDataError
from src.models.factory import VolumeModel
from src.synthcohort.types import LabelledExample


@dataclass(frozen=True)
class OverlapResult:
    overlap: float
    chance: float
    n_volumes: int
    top_k: int

    @property
    def ratio(self) -> float:
        return self.overlap / self.chance if self.chance > 0 else float("nan")

    def to_dict(self) -> dict:
        return {"overlap": self.overlap, "chance": self.chance, "ratio": self.ratio, "n_volumes": self.n_volumes, "top_k": self.top_k}


def topk_overlap(weights: np.ndarray, lesion_slices: Sequence[int], top_k: int) -> float:
    """Expected fraction of the top-k slices that carry a lesion.

    Slices tied with the k-th largest weight share the remaining places
    equally, which is the expectation under random tie-breaking.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if not 1 <= top_k <= weights.size:
        raise ValueError(f"top_k must lie in [1, {weights.size}]")
    lesion = np.zeros(weights.size, dtype=bool)
    lesion[list(lesion_slices)] = True
    threshold = np.sort(weights)[::-1][top_k - 1]
    above = weights > threshold
    tied = weights == threshold
    remaining = top_k - above.sum()
    expected = lesion[above].sum() + remaining * lesion[tied].sum() / tied.sum()
    return float(expected / top_k)


def attention_overlap(model: VolumeModel, examples: Sequence[LabelledExample], top_k: int = 4) -> OverlapResult:
    """Mean top-k overlap over positive volumes with known lesion slices, with the chance level."""
    if not getattr(model, "supports_attention", False):
        raise AttentionUnavailableError(f"{model.spec.architecture} does not emit a slice attention trace")
    volumes = [ex for ex in examples if ex.label == 1 and ex.lesion_slices]
    if not volumes:
        raise TrainingDataError("no positive volumes with known lesion slices")
    model.eval()
    overlaps, chances = [], []
    with torch.no_grad():
        for ex in volumes:
            weights = model.attention(ex.volume).cpu().numpy()
            overlaps.append(topk_overlap(weights, ex.lesion_slices, top_k))
            chances.append(len(ex.lesion_slices) / weights.size)
    return OverlapResult(float(np.mean(overlaps)), float(np.mean(chances)), len(volumes), top_k)
