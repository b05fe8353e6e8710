"""Moving pretrained encoder weights into downstream models."""
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import torch

from src.errors import SpecMismatchError
from src.models.factory import VolumeModel, build_model
from src.models.i3d import inflate_kernel
from src.models.spec import EncoderSpec, ModelSpec
from src.tensorcore.checkpoint import Checkpoint, load_checkpoint, load_into_module, module_tensors, save_checkpoint

logger = logging.getLogger(__name__)

ENCODER_KIND = "encoder"


@dataclass
class TransferEntry:
    name: str
    source_shape: List[int]
    target_shape: List[int]
    action: str


@dataclass
class TransferLog:
    architecture: str
    frozen: bool
    entries: List[TransferEntry] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"architecture": self.architecture, "frozen": self.frozen, "entries": [asdict(e) for e in self.entries]}


def export_encoder(
    encoder: torch.nn.Module,
    spec: EncoderSpec,
    path: Union[str, Path],
    precision: str = "float32",
) -> Path:
    """Write an encoder checkpoint; the header carries only the encoder spec."""
    metadata = {"kind": ENCODER_KIND, "encoder_spec": spec.model_dump(mode="json")}
    return save_checkpoint(path, module_tensors(encoder), spec.content_hash(), precision, metadata)


def checkpoint_encoder_spec(ckpt: Checkpoint) -> EncoderSpec:
    if ckpt.metadata.get("kind") != ENCODER_KIND:
        raise SpecMismatchError(f"checkpoint holds a {ckpt.metadata.get('kind', 'unknown')!r}, not an encoder")
    return EncoderSpec(**ckpt.metadata["encoder_spec"])


def _source_shape(target: torch.Tensor) -> Tuple[int, ...]:
    """2D shape a target tensor is made from; 3D kernels lose their depth axis."""
    shape = tuple(target.shape)
    return shape[:2] + shape[3:] if len(shape) == 5 else shape


def encoder_diff(source: Dict[str, torch.Tensor], source_spec: EncoderSpec, target_state: Dict[str, torch.Tensor], target_spec: EncoderSpec) -> List[str]:
    """Per-layer differences in network order, then differing spec fields."""
    diff = []
    for name, tensor in target_state.items():
        if name not in source:
            diff.append(f"{name}: missing from checkpoint")
        elif tuple(source[name].shape) != _source_shape(tensor):
            diff.append(f"{name}: checkpoint {tuple(source[name].shape)} vs target {_source_shape(tensor)}")
    diff += [f"{name}: not in target encoder" for name in sorted(set(source) - set(target_state))]
    src_fields, dst_fields = source_spec.model_dump(), target_spec.model_dump()
    diff += [
        f"encoder.{k}: checkpoint {src_fields[k]} vs target {dst_fields[k]}"
        for k in sorted(src_fields)
        if src_fields[k] != dst_fields[k]
    ]
    return diff


def transfer_weights(
    checkpoint: Union[Checkpoint, str, Path],
    target: ModelSpec,
    frozen: bool = False,
    seed: Optional[int] = None,
) -> Tuple[VolumeModel, TransferLog]:
    """Build ``target`` and initialise its encoder from a pretrained 2D encoder.

    2.5D models get an exact copy; the I3D encoder gets every kernel inflated
    to its 3D depth and batch-norm state copied. Aggregators and heads keep
    their random initialisation.
    """
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    source_spec = checkpoint_encoder_spec(ckpt)
    model = build_model(target, seed=seed)
    encoder = model.encoder_module()
    if encoder is None:
        raise SpecMismatchError(f"{target.architecture} has no convolutional encoder to initialise")
    state = encoder.state_dict()
    diff = encoder_diff(ckpt.tensors, source_spec, state, target.encoder)
    if diff:
        raise SpecMismatchError(f"encoder checkpoint does not fit {target.architecture}; first offending layer: {diff[0].split(':')[0]}", diff)

    log = TransferLog(architecture=target.architecture, frozen=frozen)
    weights = {}
    for name, tensor in state.items():
        source = ckpt.tensors[name]
        if tensor.ndim == 5:
            weights[name] = inflate_kernel(source, tensor.shape[2])
            action = f"inflated to depth {tensor.shape[2]}"
        else:
            weights[name] = source
            action = "copied"
        log.entries.append(TransferEntry(name, list(source.shape), list(tensor.shape), action))
    load_into_module(encoder, weights)
    model.set_encoder_frozen(frozen)
    logger.info("Transferred %d encoder tensors into %s (frozen=%s)", len(weights), target.architecture, frozen)
    return model, log
