"""Central finite-difference gradient checking.

The numeric route perturbs raw numpy inputs and re-runs the forward function
from scratch, so it shares no code with the analytic VJPs it is checking.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tape, Tensor

FD_EPS = 1e-5


def numeric_gradient(f, arrays: list[np.ndarray], eps: float = FD_EPS) -> list[np.ndarray]:
    """Central differences of scalar f(*arrays) wrt every entry of every array."""
    grads = []
    for i, base in enumerate(arrays):
        base = np.asarray(base, dtype=np.float64)
        g = np.zeros_like(base)
        flat = g.reshape(-1)
        for j in range(base.size):
            lo = [a.copy() for a in arrays]
            hi = [a.copy() for a in arrays]
            lo[i].reshape(-1)[j] -= eps
            hi[i].reshape(-1)[j] += eps
            flat[j] = (f(*hi) - f(*lo)) / (2.0 * eps)
        grads.append(g)
    return grads


def analytic_gradient(f_tensors, arrays: list[np.ndarray]) -> list[np.ndarray]:
    """Tape gradients of scalar f_tensors(*tensors) wrt each input array."""
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        root = f_tensors(*tensors)
    grads = tape.backward(root)
    return [grads.wrt(t) for t in tensors]


def relative_error(analytic: list[np.ndarray], numeric: list[np.ndarray]) -> float:
    """max-norm error scaled by the numeric gradient's magnitude."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = max(np.abs(n).max(), 1e-8) if n.size else 1.0
        err = np.abs(a - n).max() / denom if n.size else 0.0
        worst = max(worst, float(err))
    return worst


def check(f_tensors, arrays: list[np.ndarray], eps: float = FD_EPS) -> float:
    """Compare tape gradients against finite differences; returns max rel error.

    f_tensors maps Tensors to a scalar Tensor. The numeric route wraps it to
    run on plain arrays with gradient recording off.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]

    def f_plain(*plain):
        return f_tensors(*[Tensor(p) for p in plain]).item()

    return relative_error(analytic_gradient(f_tensors, arrays), numeric_gradient(f_plain, arrays, eps))
