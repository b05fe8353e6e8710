"""Time-sensitive non-contrastive similarity loss.

Two visits of one patient are pulled together only up to a margin that
grows with their time gap; variance and covariance regularisers keep the
embedding from collapsing.
"""
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from src.errors import ShapeError
from src.validation.input_validator import require_finite, require_ndim
from src.validation.schema import TINCLossConfig


@dataclass(frozen=True)
class TINCTerms:
    similarity: torch.Tensor
    variance: torch.Tensor
    covariance: torch.Tensor

    def total(self, cfg: TINCLossConfig) -> torch.Tensor:
        return self.similarity + cfg.var_coeff * self.variance + cfg.cov_coeff * self.covariance


def time_margin(delta_t_days: torch.Tensor, cfg: TINCLossConfig) -> torch.Tensor:
    """m_max * min(dt / dt_max, 1)."""
    return cfg.margin * torch.clamp(delta_t_days / cfg.max_delta_days, max=1.0)


def _pair_distance(z1: torch.Tensor, z2: torch.Tensor) -> torch.Tensor:
    # exact zero for identical rows; the clamp keeps the sqrt gradient finite there
    sq = (z1 - z2).pow(2).sum(dim=1)
    return torch.where(sq > 0, sq.clamp_min(1e-24).sqrt(), torch.zeros_like(sq))


def variance_term(z: torch.Tensor, target: float) -> torch.Tensor:
    std = torch.sqrt(z.var(dim=0) + 1e-4)
    return torch.clamp(target - std, min=0.0).mean()


def covariance_term(z: torch.Tensor) -> torch.Tensor:
    n, p = z.shape
    centered = z - z.mean(dim=0)
    cov = centered.T @ centered / (n - 1)
    off_diag = cov - torch.diag(torch.diagonal(cov))
    return off_diag.pow(2).sum() / p


def tinc_terms(z1: torch.Tensor, z2: torch.Tensor, delta_t_days, cfg: TINCLossConfig) -> TINCTerms:
    require_ndim(z1, 2, "z1")
    if z1.shape != z2.shape:
        raise ShapeError(f"branch shapes differ: {tuple(z1.shape)} vs {tuple(z2.shape)}")
    if z1.shape[0] < 2:
        raise ShapeError("tinc_loss needs at least two pairs per batch")
    require_finite(z1, "z1")
    require_finite(z2, "z2")
    dt = torch.as_tensor(delta_t_days, dtype=z1.dtype, device=z1.device).reshape(-1)
    if dt.numel() != z1.shape[0]:
        raise ShapeError(f"{dt.numel()} time gaps for {z1.shape[0]} pairs")
    if (dt < 0).any():
        raise ValueError("time gaps must be non-negative")

    a, b = (F.normalize(z1, dim=1), F.normalize(z2, dim=1)) if cfg.normalize else (z1, z2)
    similarity = torch.clamp(_pair_distance(a, b) - time_margin(dt, cfg), min=0.0).mean()
    variance = 0.5 * (variance_term(z1, cfg.var_target) + variance_term(z2, cfg.var_target))
    covariance = 0.5 * (covariance_term(z1) + covariance_term(z2))
    return TINCTerms(similarity, variance, covariance)


def tinc_loss(z1: torch.Tensor, z2: torch.Tensor, delta_t_days, cfg: TINCLossConfig) -> torch.Tensor:
    """Scalar loss for paired projections (N, P) with per-pair time gaps in days."""
    return tinc_terms(z1, z2, delta_t_days, cfg).total(cfg)
