"""Cost-aware region-based active learning for dense semantic segmentation."""

__version__ = "0.1.0"
