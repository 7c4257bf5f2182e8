"""Small reverse-mode differentiation core used by every trainable model here."""

from . import tensor as ops
from .gradcheck import grad_check
from .params import Adam, Checkpoint, ParameterStore, atomic_write_text, load_checkpoint, save_checkpoint
from .tensor import DimensionError, Tensor, grad_enabled, no_grad

__all__ = [
    "Adam",
    "Checkpoint",
    "DimensionError",
    "ParameterStore",
    "Tensor",
    "atomic_write_text",
    "grad_check",
    "grad_enabled",
    "load_checkpoint",
    "no_grad",
    "ops",
    "save_checkpoint",
]
