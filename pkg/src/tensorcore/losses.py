"""Classification loss."""
import torch
import torch.nn.functional as F

from src.validation.input_validator import require_binary_labels, require_finite


def bce_loss(logits: torch.Tensor, labels: torch.Tensor, pos_weight: float = 1.0) -> torch.Tensor:
    """Mean weighted binary cross-entropy on ``sigmoid(logits)``.

    Uses the log-sum-exp form, so large logits never overflow. ``pos_weight``
    multiplies the positive-class term.
    """
    if pos_weight <= 0:
        raise ValueError("pos_weight must be positive")
    logits = logits.reshape(-1)
    require_finite(logits, "logits")
    require_binary_labels(labels)
    targets = torch.as_tensor(labels, dtype=logits.dtype, device=logits.device).reshape(-1)
    if targets.shape != logits.shape:
        raise ValueError(f"{targets.numel()} labels for {logits.numel()} logits")
    weight = torch.tensor(pos_weight, dtype=logits.dtype, device=logits.device)
    return F.binary_cross_entropy_with_logits(logits, targets, pos_weight=weight)
