"""evitcaps: 3D capsule + efficient-attention segmentation, from scratch on numpy."""

from .backend import active_backend
from .tensor import Tensor, no_grad, precision, grad_check

__all__ = ["Tensor", "no_grad", "precision", "grad_check", "active_backend"]
__version__ = "0.1.0"
