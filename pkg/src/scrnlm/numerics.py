"""Dense numeric primitives shared by every layer of the toolkit.

Matrices and vectors are plain numpy arrays.  Training code runs in
float32 by default; gradient checking requires float64.  All functions
here are pure: they never mutate their inputs (the ``accumulate_outer``
helper, which adds into an explicitly passed accumulator, is the one
documented exception).
"""

from __future__ import annotations

import numpy as np

# Exponent clamp for the logistic function.  exp(30) ~ 1e13 keeps every
# intermediate finite in float32 while changing sigmoid values by < 1e-13.
SIGMOID_CLAMP = 30.0


def sigmoid(v):
    """Elementwise logistic function 1 / (1 + exp(-v)).

    The exponent is clamped to +-SIGMOID_CLAMP so the result is always
    finite.  In float64 outputs stay strictly inside (0, 1); in float32
    saturated entries may round to the interval boundary.
    """
    v = np.asarray(v)
    z = np.clip(v, -SIGMOID_CLAMP, SIGMOID_CLAMP)
    return 1.0 / (1.0 + np.exp(-z))


def softmax(v, axis=-1):
    """Numerically safe softmax along ``axis`` (max is subtracted first).

    Shift invariant by construction; rows sum to 1 up to rounding.
    """
    v = np.asarray(v)
    shifted = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def affine_apply(W, x):
    """Matrix-vector product W @ x, with explicit shape checking."""
    W = np.asarray(W)
    x = np.asarray(x)
    if W.ndim != 2 or x.ndim != 1 or W.shape[1] != x.shape[0]:
        raise ValueError(f"shape mismatch: W {W.shape} @ x {x.shape}")
    return W @ x


def transpose_apply(W, g):
    """W.T @ g, the reverse-mode companion of ``affine_apply``."""
    W = np.asarray(W)
    g = np.asarray(g)
    if W.ndim != 2 or g.ndim != 1 or W.shape[0] != g.shape[0]:
        raise ValueError(f"shape mismatch: W.T {W.shape} @ g {g.shape}")
    return W.T @ g


def accumulate_outer(acc, g, x):
    """acc += outer(g, x); the gradient of ``affine_apply`` w.r.t. W.

    Mutates and returns ``acc``.
    """
    if acc.shape != (g.shape[0], x.shape[0]):
        raise ValueError(f"shape mismatch: acc {acc.shape} += outer {g.shape} x {x.shape}")
    acc += np.outer(g, x)
    return acc


def seeded_uniform(rows, cols, half_width, seed, dtype=np.float32):
    """Matrix with i.i.d. uniform entries in [-half_width, +half_width].

    ``seed`` may be an int (a fresh PCG64 generator is created, so the
    same seed always yields the same matrix bit for bit) or an existing
    ``numpy.random.Generator`` to draw from a shared stream.
    """
    if half_width <= 0:
        raise ValueError("half_width must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = rng.uniform(-half_width, half_width, size=(rows, cols))
    return out.astype(dtype)


def assert_finite(a, what="array"):
    """Raise ValueError if ``a`` contains NaN or Inf."""
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite values in {what}")
    return a
