"""Affine image matching with a shared-weight CNN, bidirectional regression and ensembling.

Everything runs on numpy float64 with a small reverse-mode autodiff engine.
"""

__version__ = "0.1.0"
