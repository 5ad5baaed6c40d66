"""RAUNet: attention-fused encoder/decoder segmentation on a numpy autodiff engine."""

__version__ = "0.1.0"
