"""Hierarchical 3D morphological smoothing of 4-class label volumes.

Closing (dilate then erode) runs on three binary maps in a fixed order:
the union of all foreground structures, then the myocardium, then the LV
cavity. The refined map is reassembled by painting the closed union as RV
first, then overwriting with the closed MYO and finally the closed LV, so
pixels gained by closing a structure belong to that structure, everything
outside the closed union is background, and RV keeps whatever the union
adds that MYO/LV do not claim. Closings are monotone, which makes the
whole refinement idempotent (re-closing any stage's output is a no-op).

Border convention: dilation treats outside-of-volume as background and
erosion treats it as foreground, i.e. plain set morphology restricted to
the volume frame; this keeps closing extensive and idempotent at borders.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import binary_dilation, binary_erosion, generate_binary_structure

from ..config import MorphConfig
from ..datamodel import BG, LV, MYO, RV, LabelMap

STRUCTURE = generate_binary_structure(3, 1)  # 3x3x3 six-connected cross


def _closing(mask: np.ndarray, iterations: int) -> np.ndarray:
    if iterations == 0 or not mask.any():
        return mask.copy()
    d = binary_dilation(mask, STRUCTURE, iterations=iterations, border_value=0)
    return binary_erosion(d, STRUCTURE, iterations=iterations, border_value=1)


def _opening(mask: np.ndarray, iterations: int) -> np.ndarray:
    if iterations == 0 or not mask.any():
        return mask.copy()
    e = binary_erosion(mask, STRUCTURE, iterations=iterations, border_value=0)
    return binary_dilation(e, STRUCTURE, iterations=iterations, border_value=0)


def morph_refine(labelmap: LabelMap, params: MorphConfig) -> LabelMap:
    labels = labelmap.labels
    op = _closing if params.operation == "closing" else _opening
    union = op(labels != BG, params.iterations)
    myo = op(labels == MYO, params.iterations)
    lv = op(labels == LV, params.iterations)
    out = np.full(labels.shape, BG, dtype=np.uint8)
    out[union] = RV
    out[myo & union] = MYO
    out[lv & union] = LV
    return LabelMap(out)
