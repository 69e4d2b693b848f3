"""Deterministic float64 tensor engine with reverse-mode differentiation."""

from . import ops
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .nn import BatchNorm1d, Conv1d, LayerNorm, Linear, Module, ModuleDict, Parameter, PReLU
from .optim import Adam, AdamState, adam_step
from .tensor import Tensor, is_grad_enabled, no_grad

__all__ = [
    "Adam",
    "AdamState",
    "BatchNorm1d",
    "CheckpointError",
    "Conv1d",
    "LayerNorm",
    "Linear",
    "Module",
    "ModuleDict",
    "PReLU",
    "Parameter",
    "Tensor",
    "adam_step",
    "is_grad_enabled",
    "load_checkpoint",
    "no_grad",
    "ops",
    "save_checkpoint",
]
