"""Flattening, slice selection/resizing, intensity scaling and augmentation."""
import math

import numpy as np
import torch
import torch.nn.functional as F

from src.errors import ShapeError
from src.synthcohort.types import VolumeScan
from src.validation.input_validator import central_block, require_ndim
from src.validation.schema import AugmentPolicy, PreprocessConfig


def detect_surface(slices: np.ndarray) -> np.ndarray:
    """Row index of the brightest pixel in every (slice, column)."""
    return np.argmax(slices, axis=1)


def default_target_row(height: int) -> int:
    return (2 * height) // 3


def flatten_volume(v: VolumeScan, target_row: int) -> VolumeScan:
    """Shift each A-scan so the reference surface lies on ``target_row``.

    Rows vacated by the shift are zero-filled.
    """
    n_slices, height, width = v.shape
    if not 0 <= target_row < height:
        raise ShapeError(f"target_row {target_row} outside [0, {height})")
    shift = target_row - v.surface
    source = np.arange(height)[None, :, None] - shift[:, None, :]
    valid = (source >= 0) & (source < height)
    shifted = np.take_along_axis(v.slices, np.clip(source, 0, height - 1), axis=1)
    flattened = np.where(valid, shifted, 0).astype(v.slices.dtype)
    return VolumeScan(
        slices=flattened,
        surface=np.full((n_slices, width), target_row, dtype=np.int64),
        visit_day=v.visit_day,
        lesion_slices=v.lesion_slices,
        lesion_amplitude=v.lesion_amplitude,
    )


def minmax_scale(t: torch.Tensor) -> torch.Tensor:
    """Scale to [0, 1] over the whole tensor; a constant tensor maps to zeros."""
    lo, hi = t.min(), t.max()
    if hi <= lo:
        return torch.zeros_like(t)
    return ((t - lo) / (hi - lo)).clamp_(0.0, 1.0)


def resize_slices(t: torch.Tensor, out_h: int, out_w: int) -> torch.Tensor:
    """Bilinear resize of an (S, H, W) stack; same-size input is returned untouched."""
    if tuple(t.shape[-2:]) == (out_h, out_w):
        return t
    return F.interpolate(t[:, None], size=(out_h, out_w), mode="bilinear", align_corners=False)[:, 0]


def preprocess_scan(v: VolumeScan, n_slices: int, out_h: int, out_w: int) -> torch.Tensor:
    """Central ``n_slices`` block, resized to ``out_h x out_w`` and min-max scaled."""
    start, stop = central_block(v.shape[0], n_slices)
    block = torch.from_numpy(np.array(v.slices[start:stop])).to(torch.get_default_dtype())
    return minmax_scale(resize_slices(block, out_h, out_w))


def prepare_volume(v: VolumeScan, cfg: PreprocessConfig) -> torch.Tensor:
    """Flatten then preprocess a raw scan."""
    target = cfg.target_row if cfg.target_row is not None else default_target_row(v.shape[1])
    return preprocess_scan(flatten_volume(v, target), cfg.n_slices, cfg.out_h, cfg.out_w)


def translate(t: torch.Tensor, tx: int, ty: int) -> torch.Tensor:
    """Shift every slice ``tx`` columns right and ``ty`` rows down, zero fill."""
    height, width = t.shape[-2:]
    out = torch.zeros_like(t)
    if abs(tx) >= width or abs(ty) >= height:
        return out
    src_rows = slice(max(0, -ty), height - max(0, ty))
    dst_rows = slice(max(0, ty), height - max(0, -ty))
    src_cols = slice(max(0, -tx), width - max(0, tx))
    dst_cols = slice(max(0, tx), width - max(0, -tx))
    out[..., dst_rows, dst_cols] = t[..., src_rows, src_cols]
    return out


def hflip(t: torch.Tensor) -> torch.Tensor:
    return torch.flip(t, dims=[-1])


def rotate(t: torch.Tensor, degrees: float) -> torch.Tensor:
    """Rotate every slice of an (S, H, W) stack about its centre, zero padding."""
    height, width = t.shape[-2:]
    angle = math.radians(degrees)
    cos, sin = math.cos(angle), math.sin(angle)
    theta = torch.tensor(
        [[cos, -sin * height / width, 0.0], [sin * width / height, cos, 0.0]], dtype=t.dtype
    )
    stack = t.reshape(-1, 1, height, width)
    grid = F.affine_grid(theta.expand(stack.shape[0], 2, 3), list(stack.shape), align_corners=False)
    rotated = F.grid_sample(stack, grid, mode="bilinear", padding_mode="zeros", align_corners=False)
    return rotated.reshape(t.shape)


def augment_scan(t: torch.Tensor, rng: np.random.Generator, policy: AugmentPolicy) -> torch.Tensor:
    """Apply one random rotation/translation/flip to all slices of a prepared volume.

    All random numbers are drawn up front in a fixed order, so the stream
    consumed does not depend on which transforms fire.
    """
    require_ndim(t, 3, "volume")
    height, width = t.shape[-2:]
    max_tx = int(policy.translate_frac * width)
    max_ty = int(policy.translate_frac * height)
    do_translate = rng.random() < policy.p_translate
    tx = int(rng.integers(-max_tx, max_tx + 1))
    ty = int(rng.integers(-max_ty, max_ty + 1))
    do_rotate = rng.random() < policy.p_rotate
    angle = float(rng.uniform(-policy.rotate_deg, policy.rotate_deg))
    do_flip = rng.random() < policy.p_flip

    out = t
    if do_rotate and angle != 0.0:
        out = rotate(out, angle)
    if do_translate and (tx or ty):
        out = translate(out, tx, ty)
    if do_flip:
        out = hflip(out)
    return out.clone() if out is t else out
