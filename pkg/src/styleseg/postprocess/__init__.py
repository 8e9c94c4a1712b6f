from .crf import HAVE_NATIVE, active_engine, crf_refine_slice, crf_refine_volume
from .morphology import morph_refine

__all__ = [
    "HAVE_NATIVE", "active_engine", "crf_refine_slice", "crf_refine_volume",
    "morph_refine",
]
