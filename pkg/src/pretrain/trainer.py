"""Pretraining loop for the slice encoder."""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
from tqdm import tqdm

from src.errors import NumericalAbortError, TrainingDataError
from src.models.encoder import SliceEncoder
from src.models.spec import EncoderSpec
from src.pretrain.augment import contrastive_augment
from src.pretrain.tinc import tinc_terms
from src.synthcohort.preprocessing import prepare_volume
from src.synthcohort.splits import sample_visit_pair
from src.synthcohort.types import PatientTimeline, VolumeScan
from src.tensorcore.layers import Dense
from src.tensorcore.optim import LRSchedule, OptimizerState, cosine_lr, optimizer_step
from src.validation.schema import PreprocessConfig, PretrainConfig

logger = logging.getLogger(__name__)


class ProjectionHead(nn.Module):
    """D -> P -> P projector used only during pretraining."""

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.fc1 = Dense(in_dim, out_dim, activation="relu")
        self.fc2 = Dense(out_dim, out_dim)
        self.out_dim = out_dim

    def forward(self, x):
        return self.fc2(self.fc1(x))


def projector_dim(encoder_dim: int, cfg: PretrainConfig) -> int:
    return cfg.projector_dim or min(4 * encoder_dim, 256)


@dataclass
class PretrainResult:
    encoder: SliceEncoder
    encoder_spec: EncoderSpec
    loss_history: List[float] = field(default_factory=list)
    term_history: List[Dict[str, float]] = field(default_factory=list)

    def log_dict(self, cfg: PretrainConfig) -> dict:
        return {
            "encoder_spec": self.encoder_spec.model_dump(mode="json"),
            "loss": cfg.loss.model_dump(mode="json"),
            "epochs": [
                {"epoch": i + 1, "loss": loss, **terms}
                for i, (loss, terms) in enumerate(zip(self.loss_history, self.term_history))
            ],
        }


class _VolumeCache:
    """Prepared volumes keyed by (patient, visit day), built on first use."""

    def __init__(self, preprocess: PreprocessConfig):
        self.preprocess = preprocess
        self._cache: Dict[Tuple[str, int], torch.Tensor] = {}

    def get(self, patient_id: str, scan: VolumeScan) -> torch.Tensor:
        key = (patient_id, scan.visit_day)
        if key not in self._cache:
            self._cache[key] = prepare_volume(scan, self.preprocess)
        return self._cache[key]


def _epoch_batches(patients: Sequence[PatientTimeline], cfg: PretrainConfig, rng: np.random.Generator):
    order = [t for t in patients for _ in range(cfg.pairs_per_patient)]
    perm = rng.permutation(len(order))
    batches = [[order[i] for i in perm[s : s + cfg.batch_size]] for s in range(0, len(order), cfg.batch_size)]
    return [b for b in batches if len(b) >= 2]


def _make_views(batch, cache: _VolumeCache, cfg: PretrainConfig, rng: np.random.Generator):
    first, second, gaps = [], [], []
    for timeline in batch:
        a, b, gap = sample_visit_pair(timeline, rng)
        vol_a = cache.get(timeline.patient_id, a)
        vol_b = cache.get(timeline.patient_id, b)
        # same B-scan position in both visits
        index = int(rng.integers(0, vol_a.shape[0]))
        first.append(contrastive_augment(vol_a[index], rng, cfg.augment))
        second.append(contrastive_augment(vol_b[index], rng, cfg.augment))
        gaps.append(gap)
    return torch.stack(first)[:, None], torch.stack(second)[:, None], torch.tensor(gaps, dtype=torch.get_default_dtype())


def pretrain_encoder(
    timelines: Sequence[PatientTimeline],
    encoder_spec: EncoderSpec,
    cfg: PretrainConfig,
    preprocess: PreprocessConfig,
    progress: bool = False,
) -> PretrainResult:
    """Train a slice encoder with the time-sensitive loss on visit pairs; the projector is discarded."""
    patients = [t for t in timelines if len(t.visits) >= 2]
    if len(patients) < 2:
        raise TrainingDataError("pretraining needs at least two patients with two or more visits")

    torch.manual_seed(cfg.seed)
    encoder = SliceEncoder(encoder_spec)
    head = ProjectionHead(encoder.out_dim, projector_dim(encoder.out_dim, cfg))
    params = [(f"encoder.{n}", p) for n, p in encoder.named_parameters()]
    params += [(f"projector.{n}", p) for n, p in head.named_parameters()]
    state = OptimizerState(params, cfg.optimizer)

    steps_per_epoch = len(_epoch_batches(patients, cfg, np.random.default_rng([cfg.seed, 0])))
    if steps_per_epoch == 0:
        raise TrainingDataError("not enough patients for a batch of two pairs")
    schedule = LRSchedule(
        base_lr=cfg.optimizer.lr,
        min_lr=cfg.optimizer.min_lr,
        total_steps=cfg.epochs * steps_per_epoch,
        warmup_steps=min(cfg.optimizer.warmup_steps, cfg.epochs * steps_per_epoch),
    )
    cache = _VolumeCache(preprocess)
    result = PretrainResult(encoder=encoder, encoder_spec=encoder_spec)
    encoder.train()
    head.train()
    for epoch in tqdm(range(cfg.epochs), desc="pretrain", disable=not progress):
        rng = np.random.default_rng([cfg.seed, epoch])
        totals = {"similarity": 0.0, "variance": 0.0, "covariance": 0.0}
        losses = []
        for batch in _epoch_batches(patients, cfg, rng):
            x1, x2, gaps = _make_views(batch, cache, cfg, rng)
            terms = tinc_terms(head(encoder(x1)), head(encoder(x2)), gaps, cfg.loss)
            loss = terms.total(cfg.loss)
            if not torch.isfinite(loss):
                raise NumericalAbortError(f"Non-finite pretraining loss at epoch {epoch + 1}, step {state.step_count}")
            loss.backward()
            optimizer_step(state, lr=cosine_lr(schedule, state.step_count))
            losses.append(loss.item())
            for key in totals:
                totals[key] += getattr(terms, key).item()
        result.loss_history.append(float(np.mean(losses)))
        result.term_history.append({k: v / len(losses) for k, v in totals.items()})
        logger.info("pretrain epoch %d/%d loss %.4f", epoch + 1, cfg.epochs, result.loss_history[-1])
    encoder.eval()
    return result
