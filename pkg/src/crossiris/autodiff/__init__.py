"""Minimal numpy autodiff engine used by the GAN models."""
from . import functional, nn
from .tensor import Parameter, Tensor, concat, l2_norm, no_grad, tensor, where

__all__ = ["Tensor", "Parameter", "tensor", "concat", "l2_norm", "where", "no_grad",
           "functional", "nn"]
