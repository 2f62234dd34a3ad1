"""Desk-scale dual-encoder vision-language laboratory with learnable
bi-directional prompt aggregation, built on a from-scratch autodiff core."""

__version__ = "0.1.0"

from .tensor import Tensor, no_grad

__all__ = ["Tensor", "no_grad", "__version__"]
