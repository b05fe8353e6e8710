"""Declarative architecture description and its presets."""
from typing import Any, Dict, Tuple

from pydantic import Field, model_validator

from src.validation.schema import Architecture, Preset, StrictModel


class EncoderSpec(StrictModel):
    """Bottleneck ResNet: a 7x7 stride-2 stem, 3x3 max pool, then four stages of blocks."""

    in_channels: int = Field(1, gt=0)
    stem_width: int = Field(64, gt=0)
    stage_planes: Tuple[int, ...] = (64, 128, 256, 512)
    stage_blocks: Tuple[int, ...] = (3, 4, 6, 3)
    expansion: int = Field(4, gt=0)
    drop_path_rate: float = Field(0.0, ge=0.0, lt=1.0)

    @model_validator(mode="after")
    def check_stages(self):
        if not self.stage_planes or len(self.stage_planes) != len(self.stage_blocks):
            raise ValueError("stage_planes and stage_blocks must be non-empty and of equal length")
        if min(self.stage_planes) < 1 or min(self.stage_blocks) < 1:
            raise ValueError("stage widths and block counts must be positive")
        return self

    @property
    def out_dim(self) -> int:
        return self.stage_planes[-1] * self.expansion


class AggregatorSpec(StrictModel):
    """Hyperparameters for every aggregator kind; each architecture reads its own group."""

    # cnn_bilstm
    lstm_hidden: int = Field(512, gt=0)
    se_reduction: int = Field(4, ge=1)
    # cnn_transformer
    n_blocks: int = Field(4, ge=1)
    heads: int = Field(2, ge=1)
    mlp_dim: int = Field(1024, gt=0)
    drop_path_max: float = Field(0.1, ge=0.0, lt=1.0)
    pos_embedding: bool = True
    # i3d
    stem_depth: int = Field(5, ge=1)
    conv_depth: int = Field(3, ge=1)
    # vivit_fsa
    patch_size: int = Field(16, gt=0)
    token_dim: int = Field(768, gt=0)
    vivit_blocks: int = Field(4, ge=1)
    vivit_heads: int = Field(12, ge=1)
    vivit_mlp_dim: int = Field(2560, gt=0)


class InputSpec(StrictModel):
    n_slices: int = Field(32, gt=0)
    height: int = Field(224, gt=0)
    width: int = Field(224, gt=0)


PRESETS: Dict[str, Dict[str, Dict[str, Any]]] = {
    "paper_scale": {
        "encoder": {},
        "aggregator": {},
        "input": {},
    },
    "desk_scale": {
        "encoder": {"stem_width": 8, "stage_planes": (4, 8, 12, 16), "stage_blocks": (1, 1, 1, 1)},
        "aggregator": {
            "lstm_hidden": 32,
            "mlp_dim": 32,
            "patch_size": 8,
            "token_dim": 128,
            "vivit_heads": 2,
            "vivit_mlp_dim": 256,
        },
        "input": {"n_slices": 16, "height": 32, "width": 32},
    },
}


class ModelSpec(StrictModel):
    architecture: Architecture = "cnn_bilstm"
    preset: Preset = "desk_scale"
    encoder: EncoderSpec = EncoderSpec()
    aggregator: AggregatorSpec = AggregatorSpec()
    input: InputSpec = InputSpec()

    @model_validator(mode="after")
    def check_dims(self):
        agg, inp = self.aggregator, self.input
        if self.architecture == "cnn_transformer" and self.encoder.out_dim % agg.heads:
            raise ValueError(f"encoder dim {self.encoder.out_dim} is not divisible by {agg.heads} heads")
        if self.architecture == "vivit_fsa":
            if inp.height % agg.patch_size or inp.width % agg.patch_size:
                raise ValueError(f"input {inp.height}x{inp.width} is not divisible into {agg.patch_size}px patches")
            if agg.token_dim % agg.vivit_heads:
                raise ValueError(f"token dim {agg.token_dim} is not divisible by {agg.vivit_heads} heads")
        if self.architecture in ("cnn_bilstm", "cnn_transformer", "cnn_meanpool", "i3d"):
            if min(inp.height, inp.width) < 32:
                raise ValueError("the ResNet encoder needs inputs of at least 32x32")
        return self

    @classmethod
    def from_preset(cls, architecture: str, preset: str = "desk_scale", **overrides) -> "ModelSpec":
        """Spec for ``architecture`` at ``preset``; ``overrides`` map section name to field updates."""
        if preset not in PRESETS:
            raise ValueError(f"Unknown preset {preset!r}")
        base = PRESETS[preset]
        sections = {}
        for name, model in (("encoder", EncoderSpec), ("aggregator", AggregatorSpec), ("input", InputSpec)):
            sections[name] = model(**{**base[name], **overrides.get(name, {})})
        return cls(architecture=architecture, preset=preset, **sections)

    def spec_hash(self) -> str:
        return self.content_hash()

    def encoder_hash(self) -> str:
        return self.encoder.content_hash()

    @property
    def is_2_5d(self) -> bool:
        return self.architecture in ("cnn_bilstm", "cnn_transformer", "cnn_meanpool")
