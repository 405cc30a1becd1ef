"""CAM-guided attention-loss training for binary lesion classification."""

__version__ = "0.1.0"
