"""Mini-batch training of one classifier."""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import torch
from tqdm import tqdm

from src.errors import MetricUndefinedError, NumericalAbortError, TrainingDataError
from src.harness.data import VolumeDataset, label_counts, make_loader, predict_scores
from src.harness.metrics import auroc
from src.models.factory import VolumeModel, build_model, save_model
from src.models.spec import ModelSpec
from src.pretrain.transfer import transfer_weights
from src.synthcohort.types import LabelledExample
from src.tensorcore.losses import bce_loss
from src.tensorcore.optim import LRSchedule, OptimizerState, cosine_lr, optimizer_step
from src.validation.schema import TrainConfig

logger = logging.getLogger(__name__)


@dataclass
class EpochLog:
    epoch: int
    loss: float
    val_auroc: Optional[float]
    lr: float


@dataclass
class TrainResult:
    model: VolumeModel
    pos_weight: float
    epochs: List[EpochLog] = field(default_factory=list)
    transfer: Optional[dict] = None

    def log_dict(self) -> dict:
        return {
            "pos_weight": self.pos_weight,
            "epochs": [vars(e) for e in self.epochs],
            "transfer": self.transfer,
        }


def init_model(cfg: TrainConfig, spec: ModelSpec, seed: int):
    """Random initialisation, or pretrained encoder transfer; returns (model, transfer log or None)."""
    if cfg.init == "random":
        model = build_model(spec, seed=seed)
        if cfg.encoder_mode == "frozen" and model.encoder_module() is not None:
            model.set_encoder_frozen(True)
        return model, None
    model, log = transfer_weights(cfg.checkpoint, spec, frozen=cfg.encoder_mode == "frozen", seed=seed)
    return model, log.to_dict()


def _validation_auroc(model: VolumeModel, examples: Sequence[LabelledExample]) -> Optional[float]:
    if not examples:
        return None
    try:
        return auroc(predict_scores(model, examples), [ex.label for ex in examples])
    except MetricUndefinedError:
        return None


def train_model(
    cfg: TrainConfig,
    spec: ModelSpec,
    train_examples: Sequence[LabelledExample],
    val_examples: Sequence[LabelledExample] = (),
    seed: int = 0,
    fold: Optional[int] = None,
    checkpoint_dir: Optional[Path] = None,
    precision: str = "float32",
    progress: bool = False,
) -> TrainResult:
    """Train for ``cfg.epochs`` and return the final-epoch model with its per-epoch log.

    A non-finite loss or gradient stops training; the parameters from before
    the failing step are written to ``checkpoint_dir`` and named in the
    raised NumericalAbortError.
    """
    where = f"fold {fold}" if fold is not None else "training"
    n_neg, n_pos = label_counts(train_examples)
    if not train_examples or n_pos == 0 or n_neg == 0:
        raise TrainingDataError(f"{where}: training split needs both classes (got {n_neg} negative, {n_pos} positive)")
    pos_weight = cfg.pos_weight if cfg.pos_weight is not None else n_neg / n_pos
    opt_cfg = cfg.resolved_optimizer()

    torch.manual_seed(seed)
    model, transfer_log = init_model(cfg, spec, seed)
    state = OptimizerState(model.named_parameters(), opt_cfg)
    dataset = VolumeDataset(train_examples, cfg.augment, seed=seed)
    loader = make_loader(dataset, opt_cfg.batch_size, shuffle=True, seed=seed)
    total = cfg.epochs * len(loader)
    schedule = LRSchedule(opt_cfg.lr, total, opt_cfg.min_lr, min(opt_cfg.warmup_steps, total))
    result = TrainResult(model=model, pos_weight=pos_weight, transfer=transfer_log)

    def abort(reason: str):
        path = None
        with torch.no_grad():
            for key, buf in model.named_buffers():
                buf.copy_(good_buffers[key])
        if checkpoint_dir is not None:
            name = f"fold{fold}_last_good.ckpt" if fold is not None else "last_good.ckpt"
            path = str(save_model(model, Path(checkpoint_dir) / name, precision))
        logger.error("%s: %s", where, reason)
        raise NumericalAbortError(f"{where}: {reason}", last_good_checkpoint=path)

    for epoch in tqdm(range(cfg.epochs), desc=where, disable=not progress):
        dataset.set_epoch(epoch)
        model.train()
        losses = []
        for volumes, labels in loader:
            lr = cosine_lr(schedule, state.step_count)
            # batch-norm statistics from before this step
            good_buffers = {name: buf.clone() for name, buf in model.named_buffers()}
            logits = model(volumes)
            if not torch.isfinite(logits).all():
                abort(f"non-finite logits at epoch {epoch + 1}, step {state.step_count}")
            loss = bce_loss(logits, labels, pos_weight)
            if not torch.isfinite(loss):
                abort(f"non-finite loss at epoch {epoch + 1}, step {state.step_count}")
            loss.backward()
            try:
                optimizer_step(state, lr=lr)
            except NumericalAbortError as e:
                abort(str(e))
            losses.append(loss.item())
        entry = EpochLog(epoch + 1, float(np.mean(losses)), _validation_auroc(model, val_examples), lr)
        result.epochs.append(entry)
        logger.info(
            "%s epoch %d/%d loss %.4f val AUROC %s",
            where,
            entry.epoch,
            cfg.epochs,
            entry.loss,
            "n/a" if entry.val_auroc is None else f"{entry.val_auroc:.3f}",
        )
    model.eval()
    return result
