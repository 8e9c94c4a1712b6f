"""Unsupervised cross-modality cardiac segmentation at desk scale.

Pipeline: phantom corpus generation -> spatial preprocessing -> unpaired
style translation -> synthetic-dataset fine-tuning of a cascaded U-net ->
dense-CRF + hierarchical morphology refinement -> Dice/ASD evaluation.
"""

__version__ = "0.1.0"
