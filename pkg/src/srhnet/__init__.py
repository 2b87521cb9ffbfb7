"""Stereo matching with sequential cost aggregation by stacked recurrent hourglasses.

The numeric core (:mod:`srhnet.tensor`, :mod:`srhnet.ops`) is a small
reverse-mode autodiff library on numpy; everything above it is built from
those ops.
"""
from .config import RunConfig, load_config
from .model import SRHNet
from .tensor import Tape, Tensor, backward, no_grad, precision

__all__ = ["RunConfig", "load_config", "SRHNet", "Tape", "Tensor", "backward", "no_grad", "precision"]
__version__ = "0.1.0"
