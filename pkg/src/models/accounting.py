"""Analytic parameter and FLOP accounting from a ModelSpec.

One FLOP is counted per multiply-accumulate unless ``flops_per_mac`` says
otherwise. Convolutions, dense layers, LSTM gates and attention products are
counted; pooling, normalisation and activations are not.
"""
import math
from dataclasses import asdict, dataclass
from typing import List, Tuple

from src.models.encoder import resnet_plan
from src.models.spec import ModelSpec
from src.tensorcore.layers import conv_output_size


@dataclass(frozen=True)
class LayerRow:
    component: str
    layer: str
    out_shape: Tuple[int, ...]
    params: int
    macs: int

    def to_dict(self) -> dict:
        row = asdict(self)
        row["out_shape"] = list(self.out_shape)
        return row


def _conv(rows, component, name, cin, cout, kernel, stride, padding, size, repeat=1):
    """Append a bias-free conv row; ``size``/``kernel``/``stride``/``padding`` are per spatial axis."""
    out = tuple(conv_output_size(n, k, s, p) for n, k, s, p in zip(size, kernel, stride, padding))
    params = cout * cin * math.prod(kernel)
    rows.append(LayerRow(component, name, (cout,) + out, params, params * math.prod(out) * repeat))
    return out


def _norm(rows, component, name, channels, size):
    rows.append(LayerRow(component, name, (channels,) + tuple(size), 2 * channels, 0))


def _dense(rows, component, name, fan_in, fan_out, tokens=1):
    rows.append(LayerRow(component, name, (tokens, fan_out), fan_out * fan_in + fan_out, fan_in * fan_out * tokens))


def _attention(rows, component, name, dim, tokens, groups):
    """Self-attention over ``groups`` independent sequences of ``tokens`` tokens."""
    params = 4 * dim * dim + 4 * dim
    macs = groups * (4 * tokens * dim * dim + 2 * tokens * tokens * dim)
    rows.append(LayerRow(component, name, (groups, tokens, dim), params, macs))


def _lift(three_d: bool, k: int, s: int, p: int, kd: int):
    """Kernel, stride and padding tuples for a square 2D conv or its depth-``kd`` inflation."""
    if three_d:
        return (kd, k, k), (1, s, s), (kd // 2, p, p)
    return (k, k), (s, s), (p, p)


def _encoder_rows(spec: ModelSpec, three_d: bool) -> List[LayerRow]:
    enc, inp, agg = spec.encoder, spec.input, spec.aggregator
    rows: List[LayerRow] = []
    # 2.5D rows cost one slice and repeat it S times; the 3D encoder keeps depth S as an axis.
    if three_d:
        size, repeat, prefix = (inp.n_slices, inp.height, inp.width), 1, ()
    else:
        size, repeat, prefix = (inp.height, inp.width), inp.n_slices, (inp.n_slices,)

    def conv(name, cin, cout, k, s, p, kd, size):
        kernel, stride, pad = _lift(three_d, k, s, p, kd)
        out = _conv(rows, "encoder", name, cin, cout, kernel, stride, pad, size, repeat)
        last = rows[-1]
        rows[-1] = LayerRow(last.component, last.layer, prefix + last.out_shape, last.params, last.macs)
        return out

    def norm(name, channels, size):
        rows.append(LayerRow("encoder", name, prefix + (channels,) + tuple(size), 2 * channels, 0))

    size = conv("conv1", enc.in_channels, enc.stem_width, 7, 2, 3, agg.stem_depth, size)
    norm("bn1", enc.stem_width, size)
    size = size[:-2] + tuple(conv_output_size(n, 3, 2, 1) for n in size[-2:])
    rows.append(LayerRow("encoder", "maxpool", prefix + (enc.stem_width,) + size, 0, 0))
    for block in resnet_plan(enc):
        width, out = block.planes, block.planes * enc.expansion
        start = size
        size = conv(f"{block.name}.conv1", block.inplanes, width, 1, 1, 0, 1, size)
        norm(f"{block.name}.bn1", width, size)
        size = conv(f"{block.name}.conv2", width, width, 3, block.stride, 1, agg.conv_depth, size)
        norm(f"{block.name}.bn2", width, size)
        size = conv(f"{block.name}.conv3", width, out, 1, 1, 0, 1, size)
        norm(f"{block.name}.bn3", out, size)
        if block.downsample:
            conv(f"{block.name}.downsample.0", block.inplanes, out, 1, block.stride, 0, 1, start)
            norm(f"{block.name}.downsample.1", out, size)
    rows.append(LayerRow("encoder", "global_avg_pool", prefix + (enc.out_dim,), 0, 0))
    return rows


def _bilstm_rows(spec: ModelSpec) -> List[LayerRow]:
    agg, s, d = spec.aggregator, spec.input.n_slices, spec.encoder.out_dim
    h = agg.lstm_hidden
    hidden = math.ceil(s / agg.se_reduction)
    per_direction = 4 * h * (d + h) + 8 * h
    rows = [
        LayerRow("aggregator", "lstm", (s, 2 * h), 2 * per_direction, 2 * s * 4 * h * (d + h)),
    ]
    _dense(rows, "aggregator", "se.fc1", s, hidden)
    _dense(rows, "aggregator", "se.fc2", hidden, s)
    _dense(rows, "aggregator", "head", 2 * h, 1)
    return rows


def _transformer_rows(spec: ModelSpec) -> List[LayerRow]:
    agg, s, d = spec.aggregator, spec.input.n_slices, spec.encoder.out_dim
    t = s + 1
    rows = [LayerRow("aggregator", "cls_token", (1, d), d, 0)]
    if agg.pos_embedding:
        rows.append(LayerRow("aggregator", "pos_embed", (t, d), t * d, 0))
    for i in range(agg.n_blocks):
        _norm(rows, "aggregator", f"blocks.{i}.norm1", d, (t,))
        _attention(rows, "aggregator", f"blocks.{i}.attn", d, t, 1)
        _norm(rows, "aggregator", f"blocks.{i}.norm2", d, (t,))
        _dense(rows, "aggregator", f"blocks.{i}.mlp.0", d, agg.mlp_dim, t)
        _dense(rows, "aggregator", f"blocks.{i}.mlp.1", agg.mlp_dim, d, t)
    _norm(rows, "aggregator", "norm", d, ())
    _dense(rows, "aggregator", "head", d, 1)
    return rows


def _vivit_rows(spec: ModelSpec) -> List[LayerRow]:
    agg, inp = spec.aggregator, spec.input
    p, dim, s = agg.patch_size, agg.token_dim, inp.n_slices
    n_patches = (inp.height // p) * (inp.width // p)
    tokens = s * n_patches
    rows: List[LayerRow] = []
    _dense(rows, "vivit", "patch_embed", p * p, dim, tokens)
    rows.append(LayerRow("vivit", "spatial_pos", (n_patches, dim), n_patches * dim, 0))
    rows.append(LayerRow("vivit", "temporal_pos", (s, dim), s * dim, 0))
    for i in range(agg.vivit_blocks):
        _norm(rows, "vivit", f"blocks.{i}.norm_spatial", dim, (tokens,))
        _attention(rows, "vivit", f"blocks.{i}.attn_spatial", dim, n_patches, s)
        _norm(rows, "vivit", f"blocks.{i}.norm_temporal", dim, (tokens,))
        _attention(rows, "vivit", f"blocks.{i}.attn_temporal", dim, s, n_patches)
        _norm(rows, "vivit", f"blocks.{i}.norm_mlp", dim, (tokens,))
        _dense(rows, "vivit", f"blocks.{i}.mlp.0", dim, agg.vivit_mlp_dim, tokens)
        _dense(rows, "vivit", f"blocks.{i}.mlp.1", agg.vivit_mlp_dim, dim, tokens)
    _norm(rows, "vivit", "norm", dim, ())
    _dense(rows, "vivit", "head", dim, 1)
    return rows


def layer_table(spec: ModelSpec) -> List[LayerRow]:
    """Per-layer output shape, parameter count and MACs for one volume."""
    arch = spec.architecture
    if arch == "vivit_fsa":
        return _vivit_rows(spec)
    rows = _encoder_rows(spec, three_d=arch == "i3d")
    if arch == "cnn_bilstm":
        rows += _bilstm_rows(spec)
    elif arch == "cnn_transformer":
        rows += _transformer_rows(spec)
    else:
        _dense(rows, "aggregator" if arch == "cnn_meanpool" else "head", "head", spec.encoder.out_dim, 1)
    return rows


def count_params(spec: ModelSpec) -> int:
    """Trainable scalars of the network ``build_model(spec)`` constructs."""
    return sum(row.params for row in layer_table(spec))


def count_flops(spec: ModelSpec, flops_per_mac: int = 1) -> int:
    """Forward-pass FLOPs for one volume at the spec's input size."""
    if flops_per_mac < 1:
        raise ValueError("flops_per_mac must be >= 1")
    return flops_per_mac * sum(row.macs for row in layer_table(spec))


def component_totals(spec: ModelSpec) -> dict:
    totals: dict = {}
    for row in layer_table(spec):
        entry = totals.setdefault(row.component, {"params": 0, "macs": 0})
        entry["params"] += row.params
        entry["macs"] += row.macs
    return totals
