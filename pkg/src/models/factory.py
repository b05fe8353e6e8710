"""Builds a network from a ModelSpec and gives every architecture one interface."""
import logging
from typing import Optional, Tuple

import torch
import torch.nn as nn

from src.errors import AttentionUnavailableError, ShapeError, SpecMismatchError
from src.models.aggregators import BiLSTMAggregator, MeanPoolAggregator, TransformerAggregator
from src.models.encoder import SliceEncoder, encode_slices
from src.models.i3d import I3DEncoder, i3d_forward
from src.models.spec import ModelSpec
from src.models.vivit import ViViTFSA, vivit_fsa_forward
from src.tensorcore.checkpoint import load_checkpoint, load_into_module, module_tensors, save_checkpoint
from src.tensorcore.layers import Dense
from src.validation.input_validator import require_ndim

logger = logging.getLogger(__name__)


class VolumeModel(nn.Module):
    """Volume classifier: (B, S, H, W) -> logits (B,).

    Subclasses with a slice-level attention trace set ``supports_attention``.
    """

    supports_attention = False

    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        self.encoder_frozen = False

    def _check_input(self, volume: torch.Tensor) -> torch.Tensor:
        require_ndim(volume, (3, 4), "volume")
        batched = volume if volume.ndim == 4 else volume.unsqueeze(0)
        expected = (self.spec.input.n_slices, self.spec.input.height, self.spec.input.width)
        if tuple(batched.shape[1:]) != expected:
            raise ShapeError(f"expected volumes of shape {expected}, got {tuple(batched.shape[1:])}")
        return batched

    def forward_with_trace(self, volume: torch.Tensor) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
        raise NotImplementedError

    def forward(self, volume: torch.Tensor) -> torch.Tensor:
        return self.forward_with_trace(volume)[0]

    def attention(self, volume: torch.Tensor) -> torch.Tensor:
        if not self.supports_attention:
            raise AttentionUnavailableError(f"{self.spec.architecture} does not emit a slice attention trace")
        return self.forward_with_trace(volume)[1]

    def encoder_module(self) -> Optional[nn.Module]:
        return getattr(self, "encoder", None)

    def set_encoder_frozen(self, frozen: bool) -> None:
        """Frozen encoders get no gradients and keep batch-norm statistics fixed."""
        encoder = self.encoder_module()
        if encoder is None:
            raise ValueError(f"{self.spec.architecture} has no separable encoder to freeze")
        self.encoder_frozen = frozen
        for p in encoder.parameters():
            p.requires_grad_(not frozen)
        if frozen:
            encoder.eval()

    def train(self, mode: bool = True):
        super().train(mode)
        if self.encoder_frozen:
            self.encoder_module().eval()
        return self


class SliceMILModel(VolumeModel):
    """2.5D model: shared slice encoder followed by a cross-slice aggregator."""

    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        agg, s = spec.aggregator, spec.input.n_slices
        self.encoder = SliceEncoder(spec.encoder)
        dim = self.encoder.out_dim
        if spec.architecture == "cnn_bilstm":
            self.aggregator = BiLSTMAggregator(dim, agg.lstm_hidden, s, agg.se_reduction)
        elif spec.architecture == "cnn_transformer":
            self.aggregator = TransformerAggregator(
                dim, s, agg.n_blocks, agg.heads, agg.mlp_dim, agg.drop_path_max, agg.pos_embedding
            )
        else:
            self.aggregator = MeanPoolAggregator(dim)
        self.supports_attention = spec.architecture in ("cnn_bilstm", "cnn_transformer")

    def forward_with_trace(self, volume):
        batched = self._check_input(volume)
        logits, trace = self.aggregator(encode_slices(batched, self.encoder))
        if volume.ndim == 3:
            return logits[0], None if trace is None else trace[0]
        return logits, trace


class I3DModel(VolumeModel):
    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        self.encoder = I3DEncoder(spec.encoder, spec.aggregator.stem_depth, spec.aggregator.conv_depth)
        self.head = Dense(self.encoder.out_dim, 1)

    def forward_with_trace(self, volume):
        self._check_input(volume)
        return i3d_forward(volume, self.encoder, self.head), None


class ViViTModel(VolumeModel):
    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        self.vivit = ViViTFSA(spec.aggregator, spec.input)

    def forward_with_trace(self, volume):
        self._check_input(volume)
        return vivit_fsa_forward(volume, self.vivit), None


def build_model(spec: ModelSpec, seed: Optional[int] = None) -> VolumeModel:
    """Construct the network for ``spec``; ``seed`` pins the random initialisation."""
    if seed is not None:
        torch.manual_seed(seed)
    if spec.is_2_5d:
        model = SliceMILModel(spec)
    elif spec.architecture == "i3d":
        model = I3DModel(spec)
    else:
        model = ViViTModel(spec)
    logger.debug("Built %s (%s) with %d parameters", spec.architecture, spec.preset, sum(p.numel() for p in model.parameters()))
    return model


MODEL_KIND = "model"


def save_model(model: VolumeModel, path, precision: str = "float32", extra: Optional[dict] = None):
    """Checkpoint a whole model; the header carries the spec needed to rebuild it."""
    metadata = {"kind": MODEL_KIND, "model_spec": model.spec.model_dump(mode="json"), **(extra or {})}
    return save_checkpoint(path, module_tensors(model), model.spec.spec_hash(), precision, metadata)


def load_model(path, expected: Optional[ModelSpec] = None) -> VolumeModel:
    """Rebuild a model from its checkpoint; ``expected`` must match the stored spec if given."""
    ckpt = load_checkpoint(path)
    if ckpt.metadata.get("kind") != MODEL_KIND:
        raise SpecMismatchError(f"{path} is not a model checkpoint")
    spec = ModelSpec(**ckpt.metadata["model_spec"])
    if spec.spec_hash() != ckpt.spec_hash:
        raise SpecMismatchError(f"{path}: header hash does not match the stored spec")
    if expected is not None and expected.spec_hash() != spec.spec_hash():
        raise SpecMismatchError(f"{path} was trained for a different model spec", spec_diff(spec, expected))
    model = build_model(spec)
    load_into_module(model, ckpt.tensors)
    model.eval()
    return model


def spec_diff(a: ModelSpec, b: ModelSpec) -> list:
    """Field-level differences between two specs, dotted paths."""
    def flatten(d, prefix=""):
        out = {}
        for k, v in d.items():
            if isinstance(v, dict):
                out.update(flatten(v, f"{prefix}{k}."))
            else:
                out[f"{prefix}{k}"] = v
        return out

    fa, fb = flatten(a.model_dump(mode="json")), flatten(b.model_dump(mode="json"))
    return [f"{k}: {fa.get(k)} vs {fb.get(k)}" for k in sorted(set(fa) | set(fb)) if fa.get(k) != fb.get(k)]
