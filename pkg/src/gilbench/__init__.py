"""Few-exemplar generalisation benchmark: Elman RNN vs decoder-only Transformer on attractor dynamics."""

__version__ = "0.1.0"
