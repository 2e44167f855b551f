"""Token-level vision labels for multimodal training data, the DV-SFT loss, and a toy testbed."""

__version__ = "0.1.0"
