"""Adam with bias correction and L2 weight decay folded into the gradient."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List

import numpy as np

from .nn import Parameter


@dataclass
class AdamState:
    eta: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-6
    step_count: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """Updates every non-frozen parameter holding a gradient.

    Moments are keyed by parameter name, so parameters must be named
    (``Module.assign_names``) and names must be unique.
    """

    def __init__(self, params: Iterable[Parameter], state: AdamState):
        self.params: List[Parameter] = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names) or any(not n for n in names):
            raise ValueError("Adam needs uniquely named parameters")
        self.state = state

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        s = self.state
        live = [p for p in self.params if not p.frozen and p.grad is not None]
        for p in live:
            if not np.all(np.isfinite(p.grad)):
                raise FloatingPointError(f"non-finite gradient in parameter {p.name!r}")
        s.step_count += 1
        t = s.step_count
        c1 = 1.0 - s.beta1**t
        c2 = 1.0 - s.beta2**t
        for p in live:
            g = p.grad + s.weight_decay * p.data if s.weight_decay else p.grad
            m = s.first_moment.get(p.name)
            v = s.second_moment.get(p.name)
            if m is None:
                m = np.zeros_like(p.data)
                v = np.zeros_like(p.data)
            m = s.beta1 * m + (1.0 - s.beta1) * g
            v = s.beta2 * v + (1.0 - s.beta2) * (g * g)
            s.first_moment[p.name] = m
            s.second_moment[p.name] = v
            p.data = p.data - s.eta * (m / c1) / (np.sqrt(v / c2) + s.eps)


def adam_step(params: Iterable[Parameter], state: AdamState) -> None:
    """One functional Adam update of ``params`` using ``state``."""
    Adam(params, state).step()
