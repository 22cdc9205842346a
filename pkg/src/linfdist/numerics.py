"""Scalar/vector p-norm primitives, hardened against large exponents.

Everything downstream (distance layers, weight decay, certification) is built
on ``stable_pnorm`` and its closed-form gradient.  The norm is computed as
``m * ||v/m||_p`` with ``m = ||v||_inf`` so that no intermediate power can
overflow even at p ~ 1000 and |v_i| ~ 1e30.

The training path runs in float32; tests and gradient-check tooling use
float64 ("oracle" precision).  Functions here follow the dtype of their
inputs, defaulting to float64 for plain Python sequences.
"""

import numpy as np

TRAIN_DTYPE = np.float32
ORACLE_DTYPE = np.float64


def ensure_finite(a, name="input"):
    a = np.asarray(a)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def _check_p(p):
    if not (p == np.inf or p >= 1.0):
        raise ValueError(f"exponent p must be >= 1 or inf, got {p}")
    return float(p)


def stable_pnorm(v, p):
    """||v||_p without overflow: factor out the max before exponentiation."""
    v = np.asarray(v, dtype=None if hasattr(v, "dtype") else ORACLE_DTYPE)
    ensure_finite(v, "v")
    p = _check_p(p)
    a = np.abs(v)
    m = float(a.max()) if a.size else 0.0
    if m == 0.0:
        return 0.0
    if np.isinf(p):
        return m
    # ratios are in [0, 1]; powers can only underflow, never overflow
    s = np.sum((a / m) ** p)
    return float(m * s ** (1.0 / p))


def pnorm_grad(v, p):
    """Gradient of ``stable_pnorm`` at v.

    For finite p: d||v||_p/dv_i = sign(v_i) (|v_i| / ||v||_p)^(p-1).
    At p = inf the subgradient places sign(v_i) on the argmax coordinate,
    breaking ties toward the lowest index.  The zero vector maps to a zero
    gradient (a valid subgradient).
    """
    v = np.asarray(v, dtype=None if hasattr(v, "dtype") else ORACLE_DTYPE)
    ensure_finite(v, "v")
    p = _check_p(p)
    a = np.abs(v)
    g = np.zeros_like(v, dtype=v.dtype)
    if a.size == 0 or a.max() == 0:
        return g
    if np.isinf(p):
        i = int(np.argmax(a))  # argmax returns the first maximum
        g[i] = np.sign(v[i])
        return g
    r = stable_pnorm(v, p)
    g[:] = np.sign(v) * (a / r) ** (p - 1.0)
    return g


def affine(W, x, b):
    """W @ x + b with shape validation."""
    W = np.asarray(W)
    x = np.asarray(x)
    b = np.asarray(b)
    if W.ndim != 2 or x.ndim != 1 or b.ndim != 1:
        raise ValueError("affine expects a matrix, a vector and a vector")
    if W.shape[1] != x.shape[0] or W.shape[0] != b.shape[0]:
        raise ValueError(
            f"shape mismatch: W {W.shape}, x {x.shape}, b {b.shape}")
    return W @ x + b


def batch_mean(X):
    """Per-coordinate mean over the leading (batch) axis."""
    X = np.asarray(X)
    if X.shape[0] == 0:
        raise ValueError("batch_mean of an empty batch")
    return X.mean(axis=0)
