"""Byte-stable checkpoint container.

Layout (all integers little-endian)::

    8 bytes   magic b"VMILCKPT"
    8 bytes   u64 length L of the header
    L bytes   UTF-8 JSON header, keys sorted, no whitespace:
              {"format_version", "metadata", "precision", "spec_hash",
               "tensors": [{"kind", "name", "nbytes", "offset", "shape"}, ...]}
    ...       tensor data, float32 little-endian, row-major, in header order

Tensors are sorted by name; ``offset`` is relative to the end of the header.
``kind`` is "parameter" for trainable weights and "buffer" for running
statistics. Integer buffers are stored as float32 and cast back on load.
Identical models therefore serialize to identical bytes.
"""
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import torch
import torch.nn as nn

from src.errors import ArtifactIOError, SpecMismatchError

logger = logging.getLogger(__name__)

MAGIC = b"VMILCKPT"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    spec_hash: str
    precision: str
    tensors: Dict[str, torch.Tensor]
    kinds: Dict[str, str]
    metadata: Dict[str, Any] = field(default_factory=dict)

    def parameter_count(self) -> int:
        return sum(t.numel() for name, t in self.tensors.items() if self.kinds[name] == "parameter")

    def subset(self, prefix: str) -> Dict[str, torch.Tensor]:
        """Tensors under ``prefix.`` with the prefix stripped."""
        cut = len(prefix) + 1
        return {k[cut:]: v for k, v in self.tensors.items() if k.startswith(prefix + ".")}


def module_tensors(module: nn.Module, prefix: str = "") -> Dict[str, tuple]:
    """name -> (tensor, kind) for every parameter and buffer of ``module``."""
    params = {name for name, _ in module.named_parameters()}
    out = {}
    for name, tensor in module.state_dict().items():
        out[prefix + name] = (tensor, "parameter" if name in params else "buffer")
    return out


def encode_checkpoint(
    tensors: Dict[str, tuple], spec_hash: str, precision: str, metadata: Optional[Dict[str, Any]] = None
) -> bytes:
    entries, chunks, offset = [], [], 0
    for name in sorted(tensors):
        tensor, kind = tensors[name]
        data = tensor.detach().cpu().to(torch.float32).contiguous().numpy().astype("<f4").tobytes()
        entries.append(
            {"kind": kind, "name": name, "nbytes": len(data), "offset": offset, "shape": list(tensor.shape)}
        )
        chunks.append(data)
        offset += len(data)
    header = {
        "format_version": FORMAT_VERSION,
        "metadata": metadata or {},
        "precision": precision,
        "spec_hash": spec_hash,
        "tensors": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(header_bytes)) + header_bytes + b"".join(chunks)


def decode_checkpoint(blob: bytes) -> Checkpoint:
    if blob[:8] != MAGIC:
        raise ArtifactIOError("Not a checkpoint file (bad magic)")
    (length,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16 : 16 + length].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise ArtifactIOError(f"Unsupported checkpoint format version {header.get('format_version')}")
    base = 16 + length
    tensors, kinds = {}, {}
    for entry in header["tensors"]:
        start = base + entry["offset"]
        raw = np.frombuffer(blob, dtype="<f4", count=entry["nbytes"] // 4, offset=start)
        tensors[entry["name"]] = torch.from_numpy(raw.astype(np.float32).reshape(entry["shape"]))
        kinds[entry["name"]] = entry["kind"]
    return Checkpoint(
        spec_hash=header["spec_hash"],
        precision=header["precision"],
        tensors=tensors,
        kinds=kinds,
        metadata=header.get("metadata", {}),
    )


def save_checkpoint(
    path: Union[str, Path],
    tensors: Dict[str, tuple],
    spec_hash: str,
    precision: str = "float32",
    metadata: Optional[Dict[str, Any]] = None,
) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_checkpoint(tensors, spec_hash, precision, metadata))
    except OSError as e:
        raise ArtifactIOError(f"Could not write checkpoint {path}: {e}") from e
    logger.info("Saved checkpoint %s (%d tensors)", path, len(tensors))
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise ArtifactIOError(f"Could not read checkpoint {path}: {e}") from e
    return decode_checkpoint(blob)


def load_into_module(module: nn.Module, tensors: Dict[str, torch.Tensor]) -> None:
    """Copy tensors into ``module``'s state, casting to each entry's dtype; names and shapes must match."""
    state = module.state_dict()
    missing = sorted(set(state) - set(tensors))
    unexpected = sorted(set(tensors) - set(state))
    diff = [f"missing: {n}" for n in missing] + [f"unexpected: {n}" for n in unexpected]
    for name in sorted(set(state) & set(tensors)):
        if tuple(state[name].shape) != tuple(tensors[name].shape):
            diff.append(f"{name}: shape {tuple(tensors[name].shape)} != {tuple(state[name].shape)}")
    if diff:
        raise SpecMismatchError("Checkpoint tensors do not match the model", diff)
    module.load_state_dict({n: tensors[n].to(state[n].dtype) for n in state})
