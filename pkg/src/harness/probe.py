"""Linear probe on frozen slice embeddings: lesion vs non-lesion B-scans."""
import logging
from typing import Sequence, Tuple

import numpy as np
import torch
from sklearn.linear_model import LogisticRegression

from src.harness.metrics import auroc
from src.models.encoder import SliceEncoder
from src.synthcohort.preprocessing import prepare_volume
from src.synthcohort.types import PatientTimeline
from src.validation.input_validator import central_block
from src.validation.schema import PreprocessConfig

logger = logging.getLogger(__name__)


def lesion_slice_dataset(
    timelines: Sequence[PatientTimeline],
    preprocess: PreprocessConfig,
    min_amplitude: float = 0.1,
    max_per_class: int = 300,
    seed: int = 0,
) -> Tuple[torch.Tensor, np.ndarray, np.ndarray]:
    """(slices (N, 1, H, W), labels, patient ids): visible-lesion slices vs slices without a lesion."""
    positives, negatives = [], []
    for t in timelines:
        for scan in t.visits:
            if scan.lesion_slices and scan.lesion_amplitude < min_amplitude:
                continue
            volume = prepare_volume(scan, preprocess)
            start, stop = central_block(scan.shape[0], preprocess.n_slices)
            lesion = {s - start for s in scan.lesion_slices if start <= s < stop}
            for i in range(volume.shape[0]):
                (positives if i in lesion else negatives).append((t.patient_id, volume[i]))
    if not positives or not negatives:
        raise ValueError("probe needs both lesion and lesion-free slices")
    rng = np.random.default_rng(seed)
    picked = []
    for label, pool in ((1, positives), (0, negatives)):
        idx = rng.permutation(len(pool))[:max_per_class]
        picked += [(pool[i][0], pool[i][1], label) for i in sorted(idx)]
    slices = torch.stack([p[1] for p in picked])[:, None]
    return slices, np.array([p[2] for p in picked]), np.array([p[0] for p in picked])


@torch.no_grad()
def embed(encoder: SliceEncoder, slices: torch.Tensor, batch_size: int = 64) -> np.ndarray:
    encoder.eval()
    return np.concatenate(
        [encoder(slices[i : i + batch_size]).cpu().numpy() for i in range(0, len(slices), batch_size)]
    ).astype(np.float64)


def linear_probe_auroc(
    encoder: SliceEncoder,
    timelines: Sequence[PatientTimeline],
    preprocess: PreprocessConfig,
    seed: int = 0,
) -> float:
    """Fit logistic regression on half the patients' slice embeddings; AUROC on the other half."""
    slices, labels, patients = lesion_slice_dataset(timelines, preprocess, seed=seed)
    features = embed(encoder, slices)
    ids = np.array(sorted(set(patients)))
    train_ids = set(np.random.default_rng(seed).permutation(ids)[: len(ids) // 2])
    train = np.array([p in train_ids for p in patients])
    if len(set(labels[train])) < 2 or len(set(labels[~train])) < 2:
        raise ValueError("patient split left one side with a single class")
    mean, std = features[train].mean(axis=0), features[train].std(axis=0) + 1e-8
    clf = LogisticRegression(max_iter=2000, random_state=seed)
    clf.fit((features[train] - mean) / std, labels[train])
    score = auroc(clf.decision_function((features[~train] - mean) / std), labels[~train])
    logger.info("linear probe AUROC %.3f on %d held-out slices", score, int((~train).sum()))
    return score
