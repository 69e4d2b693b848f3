"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, List, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def numerical_gradients(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], h: float = 1e-5) -> List[np.ndarray]:
    """d fn / d array for every array, by central differences of step ``h``."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    grads = []
    with no_grad():
        for arr in arrays:
            g = np.zeros_like(arr)
            flat, gflat = arr.reshape(-1), g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = fn(*[Tensor(a) for a in arrays]).item()
                flat[i] = orig - h
                down = fn(*[Tensor(a) for a in arrays]).item()
                flat[i] = orig
                gflat[i] = (up - down) / (2 * h)
            grads.append(g)
    return grads


def analytic_gradients(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray]) -> List[np.ndarray]:
    leaves = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    out = fn(*leaves)
    out.backward()
    return [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-wise relative difference, guarded against two vanishing gradients."""
    num = np.linalg.norm(a - b)
    den = max(np.linalg.norm(a), np.linalg.norm(b))
    if den < 1e-10:
        return float(num)
    return float(num / den)


def check_gradients(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], h: float = 1e-5) -> float:
    """Largest relative error between analytic and numerical gradients over all inputs."""
    ana = analytic_gradients(fn, arrays)
    num = numerical_gradients(fn, arrays, h)
    return max(relative_error(a, n) for a, n in zip(ana, num))


def scalarize(out: Tensor, weights: np.ndarray) -> Tensor:
    """Reduce a tensor to a scalar with fixed random weights so every output element matters."""
    return (out * Tensor(weights)).sum()
