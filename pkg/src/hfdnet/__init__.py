"""Heterogeneous EO-to-SAR feature distillation for segmentation."""
__version__ = "0.1.0"
