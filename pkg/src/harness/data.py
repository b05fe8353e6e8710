"""Labelled examples, datasets and loaders for classifier training."""
import logging
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset
from tqdm import tqdm

from src.errors import ConfigError
from src.synthcohort.labeling import label_scans
from src.synthcohort.preprocessing import augment_scan
from src.synthcohort.types import LabelledExample, PatientTimeline
from src.validation.schema import AugmentPolicy, PreprocessConfig

logger = logging.getLogger(__name__)


def fold_seed(seed: int, fold: int) -> int:
    """Independent 32-bit seed for one (run seed, fold) stream."""
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


def build_examples(
    timelines: Iterable[PatientTimeline],
    window_days: int,
    preprocess: PreprocessConfig,
    progress: bool = False,
) -> Dict[str, List[LabelledExample]]:
    """Preprocessed, labelled scans grouped by patient id."""
    timelines = list(timelines)
    return {
        t.patient_id: label_scans(t, window_days, preprocess)
        for t in tqdm(timelines, desc="preprocess", disable=not progress)
    }


def gather(examples: Dict[str, List[LabelledExample]], patient_ids: Sequence[str]) -> List[LabelledExample]:
    return [ex for pid in patient_ids for ex in examples.get(pid, [])]


def label_counts(examples: Sequence[LabelledExample]) -> tuple:
    n_pos = sum(ex.label for ex in examples)
    return len(examples) - n_pos, n_pos


def subsample_examples(examples: Sequence[LabelledExample], fraction: float, seed: int) -> List[LabelledExample]:
    """Keep ``fraction`` of each class (rounded, at least one per present class), original order preserved."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigError("fraction must lie in (0, 1]")
    if fraction == 1.0:
        return list(examples)
    rng = np.random.default_rng(seed)
    keep = set()
    for label in (0, 1):
        idx = [i for i, ex in enumerate(examples) if ex.label == label]
        if not idx:
            continue
        n = max(1, int(np.floor(fraction * len(idx) + 0.5)))
        keep.update(int(i) for i in rng.choice(idx, size=n, replace=False))
    return [ex for i, ex in enumerate(examples) if i in keep]


class VolumeDataset(Dataset):
    """Prepared volumes with labels; augmentation draws from a stream keyed by (seed, epoch, index)."""

    def __init__(self, examples: Sequence[LabelledExample], augment: Optional[AugmentPolicy] = None, seed: int = 0):
        self.examples = list(examples)
        self.augment = augment
        self.seed = seed
        self.epoch = 0

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def __len__(self) -> int:
        return len(self.examples)

    def __getitem__(self, index: int):
        ex = self.examples[index]
        volume = ex.volume
        if self.augment is not None:
            rng = np.random.default_rng([self.seed, self.epoch, index])
            volume = augment_scan(volume, rng, self.augment)
        return volume, torch.tensor(float(ex.label), dtype=volume.dtype)


def make_loader(dataset: Dataset, batch_size: int, shuffle: bool = False, seed: int = 0) -> DataLoader:
    generator = torch.Generator().manual_seed(seed)
    return DataLoader(dataset, batch_size=batch_size, shuffle=shuffle, generator=generator, num_workers=0)


@torch.no_grad()
def predict_scores(model: torch.nn.Module, examples: Sequence[LabelledExample], batch_size: int = 16) -> np.ndarray:
    """Sigmoid probabilities for each example, in order, with the model in eval mode."""
    was_training = model.training
    model.eval()
    scores = []
    for start in range(0, len(examples), batch_size):
        batch = torch.stack([ex.volume for ex in examples[start : start + batch_size]])
        scores.append(torch.sigmoid(model(batch)).cpu().numpy().astype(np.float64))
    model.train(was_training)
    return np.concatenate(scores) if scores else np.zeros(0)
