from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ShapeError, ValidationError


@dataclass
class LossConfig:
    weight_kernel: int = 31
    weight_gain: float = 5.0
    smooth: float = 1.0

    def validate(self):
        if self.weight_kernel < 1 or self.weight_kernel % 2 == 0:
            raise ValidationError(f"weight_kernel must be a positive odd integer, got {self.weight_kernel}")
        if self.weight_gain < 0:
            raise ValidationError("weight_gain must be non-negative")


def pixel_weights(gt, kernel=31, gain=5.0):
    """Boundary-emphasising weights 1 + gain * |local mean(gt) - gt|.

    The local mean only counts pixels inside the image, and is evaluated as
    |sum - count * gt| / count so that weights(gt) == weights(1 - gt) exactly.
    """
    if not torch.all((gt == 0) | (gt == 1)):
        raise ValidationError("ground truth must be binary; threshold it first")
    pad = kernel // 2
    ones = torch.ones(1, 1, kernel, kernel, dtype=gt.dtype, device=gt.device)
    total = F.conv2d(gt, ones, padding=pad)
    count = F.conv2d(torch.ones_like(gt), ones, padding=pad)
    return 1 + gain * torch.abs(total - count * gt) / count


def _check(logits, gt):
    if logits.shape != gt.shape:
        raise ShapeError(f"prediction {tuple(logits.shape)} and mask {tuple(gt.shape)} differ")


def weighted_bce(logits, gt, w):
    _check(logits, gt)
    bce = F.binary_cross_entropy_with_logits(logits, gt, reduction="none")
    return ((w * bce).sum(dim=(2, 3)) / w.sum(dim=(2, 3))).mean()


def weighted_iou(logits, gt, w, smooth=1.0):
    _check(logits, gt)
    p = torch.sigmoid(logits)
    inter = (w * p * gt).sum(dim=(2, 3))
    union = (w * (p + gt - p * gt)).sum(dim=(2, 3))
    return (1 - (inter + smooth) / (union + smooth)).mean()


def structure_loss(logits, gt, cfg: LossConfig = LossConfig(), w=None):
    if w is None:
        w = pixel_weights(gt, cfg.weight_kernel, cfg.weight_gain)
    return weighted_bce(logits, gt, w) + weighted_iou(logits, gt, w, cfg.smooth)


def total_loss(outputs, gt, cfg: LossConfig = LossConfig()):
    """Sum of the per-map losses over every supervised map (guide map included)."""
    w = pixel_weights(gt, cfg.weight_kernel, cfg.weight_gain)
    loss = 0
    for logits in outputs:
        if logits.shape[-2:] != gt.shape[-2:]:
            logits = F.interpolate(logits, size=gt.shape[-2:], mode="bilinear", align_corners=False)
        loss = loss + structure_loss(logits, gt, cfg, w)
    return loss
