from src.models.accounting import LayerRow, component_totals, count_flops, count_params, layer_table
from src.models.aggregators import (
    BiLSTMAggregator,
    MeanPoolAggregator,
    SEAttention,
    TransformerAggregator,
    se_attention,
)
from src.models.encoder import SliceEncoder, encode_slices, resnet_plan
from src.models.factory import (
    I3DModel,
    SliceMILModel,
    ViViTModel,
    VolumeModel,
    build_model,
    load_model,
    save_model,
    spec_diff,
)
from src.models.i3d import I3DEncoder, i3d_forward, inflate_kernel, inflated_depth
from src.models.spec import PRESETS, AggregatorSpec, EncoderSpec, InputSpec, ModelSpec
from src.models.vivit import ViViTFSA, vivit_fsa_forward

__all__ = [
    "PRESETS",
    "AggregatorSpec",
    "BiLSTMAggregator",
    "EncoderSpec",
    "I3DEncoder",
    "I3DModel",
    "InputSpec",
    "LayerRow",
    "MeanPoolAggregator",
    "ModelSpec",
    "SEAttention",
    "SliceEncoder",
    "SliceMILModel",
    "TransformerAggregator",
    "ViViTFSA",
    "ViViTModel",
    "VolumeModel",
    "build_model",
    "component_totals",
    "count_flops",
    "count_params",
    "encode_slices",
    "i3d_forward",
    "inflate_kernel",
    "inflated_depth",
    "layer_table",
    "load_model",
    "resnet_plan",
    "save_model",
    "se_attention",
    "spec_diff",
    "vivit_fsa_forward",
]
