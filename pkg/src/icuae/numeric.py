"""Dense numeric core: activations, losses, and a finite-difference gradient checker.

Matrices are plain 2-D float64 C-contiguous numpy arrays with the batch on
the rows. Everything here is a pure function; all model gradients in this
package are hand-derived and verified against ``grad_check``.
"""

from __future__ import annotations

from enum import Enum
from typing import Callable, Tuple

import numpy as np

from .errors import NumericError, ShapeError


class ActivationKind(Enum):
    RELU = "relu"
    SIGMOID = "sigmoid"
    TANH = "tanh"
    IDENTITY = "identity"


def as_matrix(x, name: str = "array") -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting non-finite entries."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got {a.ndim}-D")
    if not np.all(np.isfinite(a)):
        raise NumericError(f"{name} contains non-finite entries")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul inner dimensions differ", a.shape, b.shape)
    return a @ b


def sigmoid(x: np.ndarray) -> np.ndarray:
    # Split by sign so exp never overflows.
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def apply_activation(kind: ActivationKind, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if kind is ActivationKind.RELU:
        return np.maximum(0.0, x)
    if kind is ActivationKind.SIGMOID:
        return sigmoid(x)
    if kind is ActivationKind.TANH:
        return np.tanh(x)
    if kind is ActivationKind.IDENTITY:
        return x.copy()
    raise ValueError(f"unknown activation {kind!r}")


def activation_derivative(kind: ActivationKind, x: np.ndarray) -> np.ndarray:
    """Elementwise derivative evaluated at pre-activation x.

    ReLU'(0) is defined as 0 (subgradient convention, keeps tests exact).
    """
    x = np.asarray(x, dtype=np.float64)
    if kind is ActivationKind.RELU:
        return (x > 0).astype(np.float64)
    if kind is ActivationKind.SIGMOID:
        s = sigmoid(x)
        return s * (1.0 - s)
    if kind is ActivationKind.TANH:
        t = np.tanh(x)
        return 1.0 - t * t
    if kind is ActivationKind.IDENTITY:
        return np.ones_like(x)
    raise ValueError(f"unknown activation {kind!r}")


def mse(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean over all elements of the squared difference."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError("mse requires identical shapes", pred.shape, target.shape)
    d = pred - target
    return float(np.mean(d * d))


def flatten_arrays(arrays) -> np.ndarray:
    """Concatenate arrays into one flat float64 vector (copy)."""
    return np.concatenate([np.asarray(a, dtype=np.float64).ravel() for a in arrays])


def write_flat(arrays, flat: np.ndarray) -> None:
    """Scatter a flat vector back into the given arrays, in place."""
    flat = np.asarray(flat, dtype=np.float64).ravel()
    total = sum(a.size for a in arrays)
    if flat.size != total:
        raise ShapeError("flat vector length differs from total parameter count",
                         (flat.size,), (total,))
    offset = 0
    for a in arrays:
        a[...] = flat[offset:offset + a.size].reshape(a.shape)
        offset += a.size


LossAndGrad = Callable[[np.ndarray], Tuple[float, np.ndarray]]


def grad_check(loss_and_grad: LossAndGrad, params: np.ndarray, epsilon: float = 1e-4) -> float:
    """Compare an analytic gradient against central finite differences.

    ``loss_and_grad`` maps a flat parameter vector to ``(loss, gradient)``
    and must be deterministic. Returns the max over parameters of
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.

    The default step balances truncation against float64 rounding for
    losses of order 0.1; smaller steps make tiny-gradient entries noisy.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    params = np.asarray(params, dtype=np.float64).ravel()
    loss0, analytic = loss_and_grad(params)
    if not np.isfinite(loss0) or not np.all(np.isfinite(analytic)):
        raise NumericError("non-finite loss or gradient at the base point")
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    if analytic.shape != params.shape:
        raise ShapeError("gradient length differs from parameter length",
                         analytic.shape, params.shape)

    numeric = np.empty_like(params)
    for i in range(params.size):
        p = params.copy()
        p[i] = params[i] + epsilon
        lo_plus = loss_and_grad(p)[0]
        p[i] = params[i] - epsilon
        lo_minus = loss_and_grad(p)[0]
        if not (np.isfinite(lo_plus) and np.isfinite(lo_minus)):
            raise NumericError(f"non-finite loss while perturbing parameter {i}")
        numeric[i] = (lo_plus - lo_minus) / (2.0 * epsilon)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
