"""Pydantic schemas for every declarative config the toolkit reads."""
import hashlib
import json
from typing import Dict, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Architecture = Literal["cnn_bilstm", "cnn_transformer", "i3d", "vivit_fsa", "cnn_meanpool"]
Preset = Literal["paper_scale", "desk_scale"]


class StrictModel(BaseModel):
    """Base for configs: no unknown keys, no NaN/Inf floats."""

    model_config = ConfigDict(extra="forbid", allow_inf_nan=False, frozen=True)

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def content_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


class CohortParams(StrictModel):
    """Parameters of the synthetic longitudinal cohort."""

    n_patients: int = Field(100, gt=0)
    converter_fraction: float = Field(113 / 463, ge=0.0, le=1.0)
    visit_interval_days: int = Field(30, gt=0)
    n_visits: int = Field(24, ge=1)
    n_slices: int = Field(20, gt=0)
    height: int = Field(32, gt=0)
    width: int = Field(32, gt=0)
    # lesions are planted inside the central block kept by preprocessing
    roi_slices: int = Field(16, gt=0)
    affected_slices: int = Field(3, ge=1)
    lesion_amplitude: float = Field(0.4, ge=0.0, le=1.0)
    # fraction of the full amplitude gained per 30 days after onset
    lesion_growth_rate: float = Field(1 / 12, gt=0.0)
    onset_lead_days: int = Field(365, gt=0)
    conversion_min_day: int = Field(200, ge=0)
    conversion_max_day: int = Field(900, ge=0)
    noise_level: float = Field(0.05, ge=0.0)
    seed: int = 0

    @model_validator(mode="after")
    def check_extents(self):
        if self.roi_slices > self.n_slices:
            raise ValueError("roi_slices cannot exceed n_slices")
        if self.affected_slices > self.roi_slices:
            raise ValueError("affected_slices cannot exceed roi_slices")
        if self.conversion_min_day > self.conversion_max_day:
            raise ValueError("conversion_min_day must not exceed conversion_max_day")
        if self.height < 8:
            raise ValueError("height must be at least 8 rows")
        return self


class PreprocessConfig(StrictModel):
    n_slices: int = Field(16, gt=0)
    out_h: int = Field(32, gt=0)
    out_w: int = Field(32, gt=0)
    # None places the flattened surface at two thirds of the raw height
    target_row: Optional[int] = Field(None, ge=0)


class AugmentPolicy(StrictModel):
    """Volume-consistent augmentation used while training classifiers."""

    translate_frac: float = Field(0.05, ge=0.0, le=0.5)
    rotate_deg: float = Field(5.0, ge=0.0, le=45.0)
    p_translate: float = Field(0.5, ge=0.0, le=1.0)
    p_rotate: float = Field(0.5, ge=0.0, le=1.0)
    p_flip: float = Field(0.5, ge=0.0, le=1.0)

    @classmethod
    def identity(cls) -> "AugmentPolicy":
        return cls(p_translate=0.0, p_rotate=0.0, p_flip=0.0)


class ContrastiveAugmentPolicy(StrictModel):
    """Per-B-scan augmentation for pretraining pairs: geometry heavy, intensity light."""

    crop_scale: Tuple[float, float] = (0.6, 1.0)
    p_flip: float = Field(0.5, ge=0.0, le=1.0)
    rotate_deg: float = Field(10.0, ge=0.0, le=45.0)
    brightness: float = Field(0.2, ge=0.0, le=1.0)
    contrast: float = Field(0.2, ge=0.0, le=1.0)
    noise_std: float = Field(0.05, ge=0.0)

    @field_validator("crop_scale")
    @classmethod
    def validate_crop_scale(cls, v):
        low, high = v
        if not 0.0 < low <= high <= 1.0:
            raise ValueError("crop_scale must satisfy 0 < low <= high <= 1")
        return v


class TINCLossConfig(StrictModel):
    margin: float = Field(1.0, ge=0.0)
    max_delta_days: float = Field(720.0, gt=0.0)
    var_coeff: float = Field(1.0, ge=0.0)
    cov_coeff: float = Field(1.0, ge=0.0)
    var_target: float = Field(1.0, ge=0.0)
    # distance term measured on L2-normalised projections
    normalize: bool = True


class OptimizerConfig(StrictModel):
    kind: Literal["sgd_momentum", "adam"] = "adam"
    lr: float = Field(1e-4, gt=0.0)
    min_lr: float = Field(0.0, ge=0.0)
    momentum: float = Field(0.9, ge=0.0, lt=1.0)
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = Field(1e-8, gt=0.0)
    weight_decay: float = Field(0.0, ge=0.0)
    batch_size: int = Field(20, gt=0)
    warmup_steps: int = Field(0, ge=0)

    @model_validator(mode="after")
    def check_lr_range(self):
        if self.min_lr > self.lr:
            raise ValueError("min_lr must not exceed lr")
        return self


PAPER_SCALE_OPTIMIZERS: Dict[str, OptimizerConfig] = {
    "cnn_bilstm": OptimizerConfig(kind="adam", lr=1e-4, weight_decay=1e-6, batch_size=20),
    "cnn_meanpool": OptimizerConfig(kind="adam", lr=1e-4, weight_decay=1e-6, batch_size=20),
    "i3d": OptimizerConfig(kind="adam", lr=1e-3, weight_decay=1e-6, batch_size=64),
    "cnn_transformer": OptimizerConfig(kind="sgd_momentum", lr=1e-3, momentum=0.9, weight_decay=0.0, batch_size=20),
    "vivit_fsa": OptimizerConfig(kind="adam", lr=1e-5, weight_decay=0.0, batch_size=8),
}

# Desk runs use a quarter of the batch and a larger step size for the tiny
# networks; optimizer kind, weight decay and schedule shape are unchanged.
DESK_BATCH_DIVISOR = 4
DESK_LR_MULTIPLIER = 10.0


def optimizer_preset(architecture: str, preset: str = "paper_scale") -> OptimizerConfig:
    """Optimizer settings per architecture, shrunk for desk-scale runs."""
    if architecture not in PAPER_SCALE_OPTIMIZERS:
        raise ValueError(f"No optimizer preset for architecture {architecture!r}")
    base = PAPER_SCALE_OPTIMIZERS[architecture]
    if preset == "paper_scale":
        return base
    return base.model_copy(
        update={
            "batch_size": max(2, base.batch_size // DESK_BATCH_DIVISOR),
            "lr": base.lr * DESK_LR_MULTIPLIER,
        }
    )


class TrainConfig(StrictModel):
    architecture: Architecture = "cnn_bilstm"
    preset: Preset = "desk_scale"
    init: Literal["random", "tinc_checkpoint"] = "random"
    checkpoint: Optional[str] = None
    encoder_mode: Literal["frozen", "end_to_end"] = "end_to_end"
    optimizer: Optional[OptimizerConfig] = None
    epochs: int = Field(10, gt=0)
    pos_weight: Optional[float] = Field(None, gt=0.0)
    augment: AugmentPolicy = AugmentPolicy()
    window_days: int = Field(183, gt=0)
    holdout_frac: float = Field(0.2, ge=0.0, lt=1.0)
    k_folds: int = Field(4, ge=1)
    # fraction of labelled training scans kept (label-efficiency experiments)
    label_fraction: float = Field(1.0, gt=0.0, le=1.0)
    seed: int = 0

    @model_validator(mode="after")
    def check_checkpoint(self):
        if self.init == "tinc_checkpoint" and not self.checkpoint:
            raise ValueError("init='tinc_checkpoint' requires a checkpoint path")
        return self

    def resolved_optimizer(self) -> OptimizerConfig:
        return self.optimizer or optimizer_preset(self.architecture, self.preset)


class PretrainConfig(StrictModel):
    epochs: int = Field(5, gt=0)
    batch_size: int = Field(32, ge=2)
    # passes over the multi-visit patients per epoch
    pairs_per_patient: int = Field(1, ge=1)
    projector_dim: Optional[int] = Field(None, gt=0)
    optimizer: OptimizerConfig = OptimizerConfig(kind="adam", lr=1e-3, weight_decay=1e-6, batch_size=32)
    augment: ContrastiveAugmentPolicy = ContrastiveAugmentPolicy()
    loss: TINCLossConfig = TINCLossConfig()
    seed: int = 0


class RunConfig(StrictModel):
    """Merged view of every config section a CLI command may need."""

    seed: int = 0
    precision: Literal["float32", "float64"] = "float32"
    cohort: CohortParams = CohortParams()
    preprocess: PreprocessConfig = PreprocessConfig()
    train: TrainConfig = TrainConfig()
    pretrain: PretrainConfig = PretrainConfig()

    @model_validator(mode="after")
    def check_preprocess_fits_cohort(self):
        if self.preprocess.n_slices > self.cohort.n_slices:
            raise ValueError("preprocess.n_slices cannot exceed cohort.n_slices")
        # both blocks are centred, so this keeps every planted lesion slice
        if self.cohort.roi_slices > self.preprocess.n_slices:
            raise ValueError("cohort.roi_slices cannot exceed preprocess.n_slices")
        if self.preprocess.target_row is not None and self.preprocess.target_row >= self.cohort.height:
            raise ValueError("preprocess.target_row must lie inside the raw volume height")
        return self
