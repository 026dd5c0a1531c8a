"""Central finite-difference checks for tape gradients."""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor, backward


def numerical_gradient(f, t: Tensor, h: float = 1e-5) -> np.ndarray:
    """d f() / d t by central differences; ``f`` must rebuild its graph from ``t.values``."""
    grad = np.zeros_like(t.values)
    flat = t.values.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f().item()
        flat[i] = orig - h
        down = f().item()
        flat[i] = orig
        out[i] = (up - down) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale < 1e-12:
        return float(np.linalg.norm(a - b))
    return float(np.linalg.norm(a - b) / scale)


def check_gradients(f, tensors, h: float = 1e-5) -> dict[str, float]:
    """Relative error between tape and finite-difference gradients for each tensor."""
    for t in tensors:
        t.zero_grad()
    backward(f())
    analytic = [t.grad.copy() for t in tensors]
    errors = {}
    for i, (t, a) in enumerate(zip(tensors, analytic)):
        errors[t.name or f"t{i}"] = relative_error(a, numerical_gradient(f, t, h))
    return errors
