"""Parameters, modules and the basic layers networks are built from."""

from __future__ import annotations

import math
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from . import ops
from .tensor import DTYPE, Tensor


class Parameter(Tensor):
    """A trainable leaf tensor with a hierarchical name and a freeze flag."""

    __slots__ = ("name", "_frozen")

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name
        self._frozen = False

    @property
    def frozen(self) -> bool:
        return self._frozen

    @frozen.setter
    def frozen(self, value: bool) -> None:
        self._frozen = bool(value)
        self.requires_grad = not self._frozen
        if self._frozen:
            self.grad = None

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, frozen={self.frozen})"


class Module:
    """Container that discovers parameters, buffers and children by attribute.

    Buffers are plain numpy arrays listed in ``_buffer_names``; they travel with
    ``state_dict`` but never receive gradients.
    """

    def __init__(self) -> None:
        self.training = True
        self._buffer_names: Tuple[str, ...] = ()

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    # -- traversal --------------------------------------------------------------

    def named_children(self) -> Iterator[Tuple[str, "Module"]]:
        for key, value in vars(self).items():
            if isinstance(value, Module):
                yield key, value
            elif isinstance(value, ModuleDict):
                yield key, value

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for key, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + key, value
        for key, child in self.named_children():
            yield from child.named_parameters(prefix + key + ".")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for key in self._buffer_names:
            yield prefix + key, getattr(self, key)
        for key, child in self.named_children():
            yield from child.named_buffers(prefix + key + ".")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, child in self.named_children():
            yield from child.modules()

    def assign_names(self, prefix: str = "") -> None:
        """Store each parameter's dotted path on the parameter itself."""
        for name, p in self.named_parameters(prefix):
            p.name = name

    # -- modes ------------------------------------------------------------------

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def freeze(self) -> None:
        for p in self.parameters():
            p.frozen = True

    def unfreeze(self) -> None:
        for p in self.parameters():
            p.frozen = False

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    # -- state ------------------------------------------------------------------

    def state_dict(self, prefix: str = "") -> Dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters(prefix)}
        for name, buf in self.named_buffers(prefix):
            if buf is not None:
                state[name] = np.array(buf, dtype=DTYPE, copy=True)
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray], prefix: str = "", strict: bool = True) -> None:
        """Copy arrays from ``state`` into parameters and buffers.

        Raises ``KeyError`` listing every missing, unexpected or mis-shaped
        field when the state does not match this module.
        """
        params = dict(self.named_parameters(prefix))
        buffers = {name: None for name, _ in self.named_buffers(prefix)}
        expected = set(params) | set(buffers)
        relevant = {k: v for k, v in state.items() if k.startswith(prefix)}
        missing = sorted(expected - set(relevant))
        unexpected = sorted(set(relevant) - expected) if strict else []
        shape_errors = [
            f"{name}: checkpoint {tuple(np.shape(relevant[name]))} vs model {params[name].shape}"
            for name in sorted(set(params) & set(relevant))
            if tuple(np.shape(relevant[name])) != params[name].shape
        ]
        if missing or unexpected or shape_errors:
            lines = []
            if missing:
                lines.append("missing: " + ", ".join(missing))
            if unexpected:
                lines.append("unexpected: " + ", ".join(unexpected))
            if shape_errors:
                lines.append("shape mismatch: " + "; ".join(shape_errors))
            raise KeyError("state does not match model -- " + " | ".join(lines))
        for name, p in params.items():
            p.data = np.array(relevant[name], dtype=DTYPE, copy=True)
        for m_prefix, module in _modules_with_prefix(self, prefix):
            for key in module._buffer_names:
                full = m_prefix + key
                if full in relevant:
                    setattr(module, key, np.array(relevant[full], dtype=DTYPE, copy=True))


def _modules_with_prefix(module: Module, prefix: str):
    yield prefix, module
    for key, child in module.named_children():
        yield from _modules_with_prefix(child, prefix + key + ".")


class ModuleDict(Module):
    """Children addressed by string keys (``lateral.3``, ``encoder.layer0``)."""

    def __init__(self, items: Optional[Dict[str, Module]] = None) -> None:
        super().__init__()
        self._items: Dict[str, Module] = {}
        for key, value in (items or {}).items():
            self[key] = value

    def __setitem__(self, key, module: Module) -> None:
        self._items[str(key)] = module

    def __getitem__(self, key) -> Module:
        return self._items[str(key)]

    def __contains__(self, key) -> bool:
        return str(key) in self._items

    def __iter__(self):
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def items(self):
        return self._items.items()

    def values(self):
        return self._items.values()

    def named_children(self):
        yield from self._items.items()


# ---------------------------------------------------------------------------
# initialisation


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, slope: float = 0.25) -> np.ndarray:
    """He-style uniform init with gain sqrt(2 / (1 + slope^2))."""
    gain = math.sqrt(2.0 / (1.0 + slope * slope))
    bound = gain * math.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------------------
# layers


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True, slope: float = 0.0):
        super().__init__()
        self.weight = Parameter(kaiming_uniform(rng, (d_in, d_out), d_in, slope))
        self.bias = Parameter(fan_in_uniform(rng, (d_out,), d_in)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, slope: float = 0.25):
        super().__init__()
        fan_in = c_in * kernel
        self.weight = Parameter(kaiming_uniform(rng, (c_out, c_in, kernel), fan_in, slope))
        self.bias = Parameter(fan_in_uniform(rng, (c_out,), fan_in))
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv1d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class BatchNorm1d(Module):
    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.eps = eps
        self.momentum = momentum
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.num_batches_tracked = np.zeros(())
        self._buffer_names = ("running_mean", "running_var", "num_batches_tracked")

    def forward(self, x: Tensor) -> Tensor:
        if self.training:
            self.num_batches_tracked = self.num_batches_tracked + 1
            return ops.batch_norm1d(x, self.gamma, self.beta, self.running_mean, self.running_var,
                                    True, self.momentum, self.eps)
        if float(self.num_batches_tracked) == 0:
            raise RuntimeError("BatchNorm1d in eval mode before any training batch: running stats uninitialised")
        return ops.batch_norm1d(x, self.gamma, self.beta, self.running_mean, self.running_var,
                                False, self.momentum, self.eps)


class PReLU(Module):
    def __init__(self, channels: int, init: float = 0.25, axis: int = 1):
        super().__init__()
        self.alpha = Parameter(np.full(channels, init))
        self.axis = axis

    def forward(self, x: Tensor) -> Tensor:
        return ops.prelu(x, self.alpha, axis=self.axis)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)
