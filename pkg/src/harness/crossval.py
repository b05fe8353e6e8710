"""Patient-level k-fold training, holdout evaluation and ensembling."""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch

from src import __version__
from src.errors import SpecMismatchError, TrainingDataError
from src.harness.data import build_examples, fold_seed, gather, predict_scores, subsample_examples
from src.harness.metrics import auroc, prauc
from src.harness.report import FoldMetrics, MetricsReport
from src.harness.training import TrainResult, train_model
from src.models.accounting import count_flops, count_params
from src.models.factory import VolumeModel, save_model
from src.models.spec import ModelSpec
from src.synthcohort.types import DatasetSplit, LabelledExample, PatientTimeline
from src.validation.schema import PreprocessConfig, TrainConfig

logger = logging.getLogger(__name__)


@dataclass
class CrossValResult:
    report: MetricsReport
    models: List[VolumeModel]
    train_logs: List[TrainResult]
    predictions: List[dict] = field(default_factory=list)
    checkpoints: List[Path] = field(default_factory=list)


def check_holdout_isolation(split: DatasetSplit) -> None:
    used = {pid for f in split.folds for pid in f}
    leaked = used & set(split.holdout)
    if leaked:
        raise TrainingDataError(f"holdout patients leak into training/validation: {sorted(leaked)[:5]}")


def ensemble_predict(models: Sequence[VolumeModel], volume: torch.Tensor) -> torch.Tensor:
    """Mean of the members' sigmoid outputs for one volume (S, H, W) or a batch (B, S, H, W)."""
    if not models:
        raise ValueError("ensemble_predict needs at least one model")
    reference = models[0].spec.spec_hash()
    for i, m in enumerate(models[1:], start=1):
        if m.spec.spec_hash() != reference:
            raise SpecMismatchError(f"ensemble member {i} has a different model spec")
    with torch.no_grad():
        probs = []
        for m in models:
            was_training = m.training
            m.eval()
            probs.append(torch.sigmoid(m(volume)))
            m.train(was_training)
    return torch.stack(probs).mean(dim=0)


def score_examples(
    models: Sequence[VolumeModel],
    examples: Sequence[LabelledExample],
    fold_labels: Optional[Sequence] = None,
):
    """Per-model and ensemble scores, metric rows and prediction rows for ``examples``."""
    labels = [ex.label for ex in examples]
    per_model = [predict_scores(m, examples) for m in models]
    ensemble = np.mean(per_model, axis=0)
    fold_labels = list(fold_labels) if fold_labels is not None else list(range(len(models)))
    folds = [
        FoldMetrics(
            fold=i,
            auroc=auroc(scores, labels),
            prauc=prauc(scores, labels),
            n_scans=len(labels),
            n_positive=int(sum(labels)),
        )
        for i, scores in enumerate(per_model)
    ]
    rows = []
    for name, scores in list(zip(fold_labels, per_model)) + [("ensemble", ensemble)]:
        rows += [
            {"patient_id": ex.patient_id, "visit_day": ex.visit_day, "label": ex.label, "score": float(s), "fold": name}
            for ex, s in zip(examples, scores)
        ]
    return folds, ensemble, rows


def run_crossval(
    cfg: TrainConfig,
    spec: ModelSpec,
    timelines: Sequence[PatientTimeline],
    split: DatasetSplit,
    preprocess: PreprocessConfig,
    out_dir: Optional[Path] = None,
    config_hash: str = "",
    precision: str = "float32",
    examples: Optional[Dict[str, List[LabelledExample]]] = None,
    progress: bool = False,
) -> CrossValResult:
    """Train one model per fold, score each and their ensemble on the untouched holdout."""
    if split.k < 1:
        raise TrainingDataError("split has no folds")
    check_holdout_isolation(split)
    if examples is None:
        examples = build_examples(timelines, cfg.window_days, preprocess, progress=progress)
    holdout = gather(examples, split.holdout)
    checkpoint_dir = Path(out_dir) / "checkpoints" if out_dir is not None else None

    models, logs, checkpoints = [], [], []
    for fold in range(split.k):
        seed = fold_seed(cfg.seed, fold)
        train = subsample_examples(gather(examples, split.train_ids(fold)), cfg.label_fraction, seed)
        val = gather(examples, split.validation_ids(fold))
        logger.info("fold %d/%d: %d training scans, %d validation scans", fold + 1, split.k, len(train), len(val))
        result = train_model(
            cfg, spec, train, val, seed=seed, fold=fold, checkpoint_dir=checkpoint_dir, precision=precision, progress=progress
        )
        models.append(result.model)
        logs.append(result)
        if checkpoint_dir is not None:
            checkpoints.append(save_model(result.model, checkpoint_dir / f"fold{fold}.ckpt", precision))

    folds, ensemble, rows = score_examples(models, holdout)
    labels = [ex.label for ex in holdout]
    report = MetricsReport.from_folds(
        folds,
        architecture=spec.architecture,
        preset=spec.preset,
        init=cfg.init,
        encoder_mode=cfg.encoder_mode,
        n_params=count_params(spec),
        flops=count_flops(spec),
        ensemble_auroc=auroc(ensemble, labels),
        ensemble_prauc=prauc(ensemble, labels),
        config_hash=config_hash,
        seed=cfg.seed,
        version=__version__,
    )
    logger.info("holdout AUROC %.3f±%.3f, ensemble %.3f", report.auroc_mean, report.auroc_std, report.ensemble_auroc)
    return CrossValResult(report=report, models=models, train_logs=logs, predictions=rows, checkpoints=checkpoints)
