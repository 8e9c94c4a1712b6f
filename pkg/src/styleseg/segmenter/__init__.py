from .losses import (
    SOBEL_HORIZONTAL,
    SOBEL_VERTICAL,
    composite_loss,
    edge_loss,
    labels_to_onehot,
    sobel_edge_maps,
    weighted_cross_entropy,
)

__all__ = [
    "SOBEL_HORIZONTAL", "SOBEL_VERTICAL", "composite_loss", "edge_loss",
    "labels_to_onehot", "sobel_edge_maps", "weighted_cross_entropy",
]
