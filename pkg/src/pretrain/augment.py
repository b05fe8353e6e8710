"""Per-B-scan augmentation for pretraining pairs."""
import math

import numpy as np
import torch
import torch.nn.functional as F

from src.synthcohort.preprocessing import hflip, rotate
from src.validation.input_validator import require_ndim
from src.validation.schema import ContrastiveAugmentPolicy


def resized_crop(image: torch.Tensor, top: int, left: int, height: int, width: int) -> torch.Tensor:
    """Crop an (H, W) image and resize the crop back to (H, W)."""
    out_h, out_w = image.shape
    crop = image[top : top + height, left : left + width]
    return F.interpolate(crop[None, None], size=(out_h, out_w), mode="bilinear", align_corners=False)[0, 0]


def contrastive_augment(image: torch.Tensor, rng: np.random.Generator, policy: ContrastiveAugmentPolicy) -> torch.Tensor:
    """Random resized crop, flip, rotation, brightness/contrast jitter and noise on one (H, W) slice.

    Draw order is fixed so a given generator state always yields the same view.
    """
    require_ndim(image, 2, "image")
    h, w = image.shape
    scale = rng.uniform(*policy.crop_scale)
    crop_h = max(1, min(h, int(round(h * math.sqrt(scale)))))
    crop_w = max(1, min(w, int(round(w * math.sqrt(scale)))))
    top = int(rng.integers(0, h - crop_h + 1))
    left = int(rng.integers(0, w - crop_w + 1))
    flip = rng.random() < policy.p_flip
    angle = float(rng.uniform(-policy.rotate_deg, policy.rotate_deg))
    brightness = 1.0 + float(rng.uniform(-policy.brightness, policy.brightness))
    contrast = 1.0 + float(rng.uniform(-policy.contrast, policy.contrast))
    sigma = float(rng.uniform(0.0, policy.noise_std))
    noise = torch.from_numpy(rng.standard_normal((h, w))).to(image.dtype)

    out = resized_crop(image, top, left, crop_h, crop_w)
    if flip:
        out = hflip(out)
    if angle:
        out = rotate(out[None], angle)[0]
    out = out * brightness
    mean = out.mean()
    out = mean + (out - mean) * contrast
    out = out + sigma * noise
    return out.clamp(0.0, 1.0)
