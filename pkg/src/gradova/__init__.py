"""Self-supervised gradient-based novelty detection.

Per-sample gradients of a small classifier's final layer are scored by a
tied-precision Mahalanobis distance, and a self-trained binary discriminator
decides which label generates each gradient.
"""

__version__ = "0.1.0"
