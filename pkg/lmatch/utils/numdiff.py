"""
Central finite differences shared by the gradient audits and theta fitting.
"""

from typing import Callable

import numpy as np


def fd_gradient(func: Callable[[np.ndarray], float], x: np.ndarray, rel_step: float = 1e-5,
                abs_step: float | None = None) -> np.ndarray:
    """Central-difference gradient of a scalar function.

    Step per coordinate is abs_step when given, else rel_step * (1 + |x_i|).
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    for i in range(x.size):
        h = abs_step if abs_step is not None else rel_step * (1.0 + abs(x.flat[i]))
        up = x.copy()
        down = x.copy()
        up.flat[i] += h
        down.flat[i] -= h
        grad.flat[i] = (func(up) - func(down)) / (up.flat[i] - down.flat[i])
    return grad


def fd_jacobian(func: Callable[[np.ndarray], np.ndarray], x: np.ndarray, step: float) -> np.ndarray:
    """Central-difference Jacobian, rows indexed by outputs."""
    x = np.asarray(x, dtype=np.float64)
    columns = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = step
        columns.append((np.asarray(func(x + e)) - np.asarray(func(x - e))).ravel() / (2 * step))
    return np.stack(columns, axis=-1)


def fd_hessian(func: Callable[[np.ndarray], float], x: np.ndarray, step: float) -> np.ndarray:
    """Four-point central second differences of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    hess = np.empty((n, n))
    eye = np.eye(n) * step
    for i in range(n):
        for j in range(i, n):
            value = (func(x + eye[i] + eye[j]) - func(x + eye[i] - eye[j])
                     - func(x - eye[i] + eye[j]) + func(x - eye[i] - eye[j])) / (4 * step * step)
            hess[i, j] = hess[j, i] = value
    return hess


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-3) -> np.ndarray:
    """|a - b| / max(|a|, |b|, floor), elementwise."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
