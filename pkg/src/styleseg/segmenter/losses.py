"""Composite segmentation loss: weighted cross entropy + edge agreement.

The cross-entropy term is reduced by the mean over pixels (decouples the
learning rate from image size). The edge term applies a fixed Sobel pair
to each foreground class's probability map and its one-hot target and
takes the Euclidean norm of the difference over pixels, one norm per
(class, filter) pair, summed; no per-pixel normalization so the default
blend weight of 0.5 keeps a consistent meaning.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

from ..datamodel import BG, NUM_CLASSES

PROB_FLOOR = 1e-8

# Horizontal-gradient kernel; the vertical one is its transpose. Applied by
# cross-correlation with zero padding.
SOBEL_HORIZONTAL = torch.tensor(
    [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]
)
SOBEL_VERTICAL = SOBEL_HORIZONTAL.T.contiguous()


def labels_to_onehot(labels: torch.Tensor, num_classes: int = NUM_CLASSES) -> torch.Tensor:
    """(B, H, W) integer labels -> (B, C, H, W) float one-hot."""
    return F.one_hot(labels.long(), num_classes).permute(0, 3, 1, 2).float()


def _as_batched(t: torch.Tensor) -> torch.Tensor:
    return t.unsqueeze(0) if t.dim() == 3 else t


def sobel_edge_maps(q: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Apply both Sobel kernels to a 2D map (or batch of maps).

    Accepts (H, W), (B, H, W) or (B, C, H, W); returns two tensors of the
    input shape (horizontal-gradient map, vertical-gradient map).
    """
    shape = q.shape
    flat = q.reshape(-1, 1, shape[-2], shape[-1])
    k = torch.stack([SOBEL_HORIZONTAL, SOBEL_VERTICAL]).to(q.dtype).unsqueeze(1)
    g = F.conv2d(flat, k, padding=1)
    g1 = g[:, 0].reshape(shape)
    g2 = g[:, 1].reshape(shape)
    return g1, g2


def weighted_cross_entropy(probs: torch.Tensor, onehot: torch.Tensor,
                           class_weights) -> torch.Tensor:
    """Mean over pixels of -sum_m w_m y_m log p_m; probs floored before log."""
    probs = _as_batched(probs)
    onehot = _as_batched(onehot)
    if probs.shape != onehot.shape:
        raise ValueError(f"shape mismatch: probs {tuple(probs.shape)} vs target {tuple(onehot.shape)}")
    w = torch.as_tensor(class_weights, dtype=probs.dtype, device=probs.device)
    logp = torch.log(probs.clamp_min(PROB_FLOOR))
    per_pixel = -(w.view(1, -1, 1, 1) * onehot * logp).sum(dim=1)
    return per_pixel.mean()


def edge_loss(probs: torch.Tensor, onehot: torch.Tensor,
              squared: bool = False) -> torch.Tensor:
    """Edge-map disagreement over foreground classes, batch-averaged."""
    probs = _as_batched(probs)
    onehot = _as_batched(onehot)
    if probs.shape != onehot.shape:
        raise ValueError(f"shape mismatch: probs {tuple(probs.shape)} vs target {tuple(onehot.shape)}")
    fg = [c for c in range(probs.shape[1]) if c != BG]
    diff = probs[:, fg] - onehot[:, fg]
    g1, g2 = sobel_edge_maps(diff)  # Sobel is linear, so filter the difference
    sq1 = g1.pow(2).sum(dim=(-2, -1))  # (B, n_fg), one entry per class-filter pair
    sq2 = g2.pow(2).sum(dim=(-2, -1))
    if squared:
        per_image = (sq1 + sq2).sum(dim=1)
    else:
        per_image = (sq1.sqrt() + sq2.sqrt()).sum(dim=1)
    return per_image.mean()


def composite_loss(probs: torch.Tensor, onehot: torch.Tensor, class_weights,
                   edge_weight: float = 0.5, squared_edge: bool = False) -> torch.Tensor:
    loss = weighted_cross_entropy(probs, onehot, class_weights)
    if edge_weight:
        loss = loss + edge_weight * edge_loss(probs, onehot, squared=squared_edge)
    return loss
