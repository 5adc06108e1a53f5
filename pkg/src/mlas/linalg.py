"""Dense float64 kernel: products, activations and seeded initializers.

Everything here is a thin layer over numpy that enforces shapes up front.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

DTYPE = np.float64


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Return a generator seeded by ``seed`` and an optional stream path.

    Distinct ``stream`` tuples give independent draw sequences for the same
    seed, which is how sub-components get their own randomness.
    """
    if seed < 0 or any(s < 0 for s in stream):
        raise ValueError("seeds must be non-negative integers")
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, stream)]))


def as_vec(v) -> np.ndarray:
    a = np.asarray(v, dtype=DTYPE)
    if a.ndim != 1:
        raise ShapeError(f"expected a vector, got shape {a.shape}")
    return a


def as_mat(m) -> np.ndarray:
    a = np.asarray(m, dtype=DTYPE)
    if a.ndim != 2:
        raise ShapeError(f"expected a matrix, got shape {a.shape}")
    return a


def matvec(M, v) -> np.ndarray:
    M = as_mat(M)
    v = as_vec(v)
    if M.shape[1] != v.shape[0]:
        raise ShapeError(f"cannot multiply {M.shape} matrix by length-{v.shape[0]} vector")
    return M @ v


def concat(a, b) -> np.ndarray:
    return np.concatenate([as_vec(a), as_vec(b)])


def sigmoid(z):
    # tanh form is overflow-free for any finite z
    return 0.5 * (np.tanh(0.5 * np.asarray(z, dtype=DTYPE)) + 1.0)


def tanh(z):
    return np.tanh(np.asarray(z, dtype=DTYPE))


def relu(z):
    return np.maximum(np.asarray(z, dtype=DTYPE), 0.0)


ACTIVATIONS = {"tanh": tanh, "relu": relu}


def activation_grad(name: str, pre, out):
    """Derivative of activation ``name`` given its input and output."""
    if name == "tanh":
        return 1.0 - out * out
    if name == "relu":
        return (pre > 0).astype(DTYPE)
    raise ValueError(f"unknown activation {name!r}")


def glorot_uniform(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw on ``[-sqrt(6/(rows+cols)), sqrt(6/(rows+cols))]``."""
    if rows < 1 or cols < 1:
        raise ShapeError(f"glorot_uniform needs positive shape, got ({rows}, {cols})")
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def orthogonal_init(n: int, rng: np.random.Generator) -> np.ndarray:
    """Random orthogonal n x n matrix from the QR factorisation of a Gaussian draw.

    The sign correction makes the result Haar-distributed rather than biased
    by the QR routine's sign convention.
    """
    if n < 1:
        raise ShapeError(f"orthogonal_init needs n >= 1, got {n}")
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs
