"""setmetric: set distances, set-aware triplet losses, and a desk-scale
retrieval trainer with a CMC/mAP evaluation and ablation harness."""

__version__ = "0.1.0"
