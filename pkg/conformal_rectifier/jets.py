"""
Truncated Taylor series arithmetic.

A jet is an array ``a`` of normalized Taylor coefficients, ``a[k] = f^(k)(x0) / k!``,
with shape ``(n,)`` for scalar functions or ``(n, 3)`` for curves. Products and
compositions are truncated to the shorter operand, so the length of a result always
tells how many derivatives are still exact.
"""

import math

import numpy as np


def _align(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    while a.ndim < b.ndim:
        a = a[..., np.newaxis]
    while b.ndim < a.ndim:
        b = b[..., np.newaxis]
    n = min(len(a), len(b))
    return a[:n], b[:n]


def mul(a, b) -> np.ndarray:
    a, b = _align(a, b)
    out = np.zeros((len(a),) + np.broadcast_shapes(a.shape[1:], b.shape[1:]))
    for k in range(len(a)):
        out[k] = np.sum(a[: k + 1] * b[k::-1], axis=0)
    return out


def dot(a, b) -> np.ndarray:
    return mul(a, b).sum(axis=-1)


def cross(a, b) -> np.ndarray:
    a, b = _align(a, b)
    out = np.zeros_like(a)
    for k in range(len(a)):
        out[k] = np.cross(a[: k + 1], b[k::-1]).sum(axis=0)
    return out


def reciprocal(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a[0] == 0.0:
        raise ZeroDivisionError("reciprocal of a jet with zero constant term")
    b = np.zeros_like(a)
    b[0] = 1.0 / a[0]
    for k in range(1, len(a)):
        b[k] = -np.dot(a[1 : k + 1], b[k - 1 :: -1]) / a[0]
    return b


def sqrt(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a[0] <= 0.0:
        raise ValueError("square root of a jet needs a positive constant term")
    b = np.zeros_like(a)
    b[0] = math.sqrt(a[0])
    for k in range(1, len(a)):
        b[k] = (a[k] - np.dot(b[1:k], b[k - 1 : 0 : -1])) / (2.0 * b[0])
    return b


def deriv(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    k = np.arange(1, len(a), dtype=float).reshape((-1,) + (1,) * (a.ndim - 1))
    return a[1:] * k


def integrate(a) -> np.ndarray:
    """Antiderivative vanishing at the expansion point; one coefficient longer than ``a``."""
    a = np.asarray(a, dtype=float)
    k = np.arange(1, len(a) + 1, dtype=float).reshape((-1,) + (1,) * (a.ndim - 1))
    return np.concatenate([np.zeros((1,) + a.shape[1:]), a / k])


def compose(a, h) -> np.ndarray:
    """``a(h(x))`` for an inner jet with ``h[0] == 0``."""
    a = np.asarray(a, dtype=float)
    h = np.asarray(h, dtype=float)
    n = min(len(a), len(h))
    out = np.zeros((n,) + a.shape[1:])
    out[0] = a[n - 1]
    for k in range(n - 2, -1, -1):
        out = mul(out, h[:n])
        out[0] += a[k]
    return out


def revert(s) -> np.ndarray:
    """Inverse series ``h`` with ``s(h(x)) = x``; needs ``s[0] == 0`` and ``s[1] != 0``."""
    s = np.asarray(s, dtype=float)
    n = len(s)
    identity = np.zeros(n)
    identity[1] = 1.0
    h = identity / s[1]
    # each sweep fixes one more order
    for _ in range(n):
        h = h - (compose(s, h) - identity) / s[1]
    return h


def derivatives(a) -> np.ndarray:
    """Derivative values ``f^(k)(x0)`` from normalized coefficients."""
    a = np.asarray(a, dtype=float)
    factorials = np.array([math.factorial(k) for k in range(len(a))], dtype=float)
    return a * factorials.reshape((-1,) + (1,) * (a.ndim - 1))
