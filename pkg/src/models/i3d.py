"""Inflated 3D ResNet.

Module names mirror SliceEncoder so every 2D tensor has a 3D counterpart
under the same key. Temporal stride is 1 throughout with zero padding
floor(Kd / 2).
"""
import torch
import torch.nn as nn
import torch.nn.functional as F

from src.models.encoder import BlockPlan, resnet_plan
from src.models.spec import EncoderSpec
from src.tensorcore.layers import Conv3d, Dense, norm_and_droppath, pool
from src.validation.input_validator import require_ndim


def inflate_kernel(kernel2d: torch.Tensor, depth: int) -> torch.Tensor:
    """Repeat an (O, I, Kh, Kw) kernel ``depth`` times along a new depth axis, scaled by 1/depth."""
    require_ndim(kernel2d, 4, "kernel2d")
    if depth < 1:
        raise ValueError("inflation depth must be >= 1")
    return kernel2d.unsqueeze(2).repeat(1, 1, depth, 1, 1) / depth


def inflated_depth(name: str, kernel_size: int, stem_depth: int, conv_depth: int) -> int:
    """Depth a 2D kernel is inflated to: stem and 3x3 convs get depth, 1x1 convs stay flat."""
    if name == "conv1.weight":
        return stem_depth
    return conv_depth if kernel_size > 1 else 1


class Bottleneck3d(nn.Module):
    def __init__(self, block: BlockPlan, expansion: int, conv_depth: int):
        super().__init__()
        width, out = block.planes, block.planes * expansion
        stride = (1, block.stride, block.stride)
        self.conv1 = Conv3d(block.inplanes, width, 1, bias=False)
        self.bn1 = nn.BatchNorm3d(width)
        self.conv2 = Conv3d(
            width, width, (conv_depth, 3, 3), stride=stride, padding=(conv_depth // 2, 1, 1), bias=False
        )
        self.bn2 = nn.BatchNorm3d(width)
        self.conv3 = Conv3d(width, out, 1, bias=False)
        self.bn3 = nn.BatchNorm3d(out)
        self.downsample = None
        if block.downsample:
            self.downsample = nn.Sequential(Conv3d(block.inplanes, out, 1, stride=stride, bias=False), nn.BatchNorm3d(out))

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        y = F.relu(self.bn1(self.conv1(x)))
        y = F.relu(self.bn2(self.conv2(y)))
        y = norm_and_droppath(self.conv3(y), "batch_norm", self.bn3, 0.0, self.training)
        return F.relu(y + identity)


class I3DEncoder(nn.Module):
    def __init__(self, spec: EncoderSpec, stem_depth: int = 5, conv_depth: int = 3):
        super().__init__()
        self.spec = spec
        self.out_dim = spec.out_dim
        self.stem_depth = stem_depth
        self.conv_depth = conv_depth
        self.conv1 = Conv3d(
            spec.in_channels, spec.stem_width, (stem_depth, 7, 7), stride=(1, 2, 2), padding=(stem_depth // 2, 3, 3), bias=False
        )
        self.bn1 = nn.BatchNorm3d(spec.stem_width)
        plan = resnet_plan(spec)
        for stage in range(len(spec.stage_planes)):
            blocks = [
                Bottleneck3d(b, spec.expansion, conv_depth) for b in plan if b.name.startswith(f"layer{stage + 1}.")
            ]
            self.add_module(f"layer{stage + 1}", nn.Sequential(*blocks))
        self.n_stages = len(spec.stage_planes)
        for m in self.modules():
            if isinstance(m, nn.Conv3d):
                nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """(N, C, S, H, W) -> final feature map (N, D, S, h, w); depth is preserved."""
        require_ndim(x, 5, "volume")
        x = F.relu(self.bn1(self.conv1(x)))
        x = pool(x, "max", window=(1, 3, 3), stride=(1, 2, 2), padding=(0, 1, 1))
        for stage in range(self.n_stages):
            x = getattr(self, f"layer{stage + 1}")(x)
        return x

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return pool(self.features(x), "global_avg")


def i3d_forward(volume: torch.Tensor, encoder: I3DEncoder, head: Dense) -> torch.Tensor:
    """Logits for (S, H, W) or (B, S, H, W) volumes."""
    require_ndim(volume, (3, 4), "volume")
    batched = volume if volume.ndim == 4 else volume.unsqueeze(0)
    logits = head(encoder(batched.unsqueeze(1))).squeeze(-1)
    return logits if volume.ndim == 4 else logits[0]
