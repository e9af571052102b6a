"""Self-annotating skin lesion segmentation and classification pipeline."""

__version__ = "0.1.0"
