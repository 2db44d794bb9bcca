"""Shared helpers: finite-difference gradient checking in float64."""
from __future__ import annotations

import numpy as np
import pytest

from parcnn.tensor import Tensor, numeric_gradient


def f64(array, requires_grad=True) -> Tensor:
    return Tensor(np.asarray(array, dtype=np.float64), requires_grad=requires_grad)


def gradcheck(fn, tensors: list[Tensor], step: float = 1e-3) -> float:
    """Max relative error between backprop and central finite differences.

    ``fn`` rebuilds the scalar loss from the given leaf tensors; both sides
    run at the tensors' own precision (use float64 leaves for tight bounds).
    """
    for t in tensors:
        t.zero_grad()
    fn().backward()
    numeric = numeric_gradient(fn, tensors, step=step)
    worst = 0.0
    for t, num in zip(tensors, numeric):
        assert t.grad is not None, "no gradient reached a checked tensor"
        # the 1e-6 floor keeps exactly-zero gradients (e.g. biases cancelled
        # by batch-norm mean subtraction) from amplifying FD rounding noise
        denom = max(np.abs(num).max(), np.abs(t.grad).max(), 1e-6)
        worst = max(worst, float(np.abs(t.grad - num).max() / denom))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
