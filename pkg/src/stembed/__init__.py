"""Spatio-temporal instance embeddings for video instance segmentation.

Embedding loss with analytic gradients, view-synthesis depth loss geometry,
mean-shift tracking, causal streaming convolution, MOTS metrics and a
synthetic scene generator.
"""

__version__ = "0.1.0"
