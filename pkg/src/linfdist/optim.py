"""Adam and the p-norm weight decay."""

import numpy as np

from .numerics import stable_pnorm


class Adam:
    """Adam with bias correction.  State arrays mirror the parameter list
    positionally and follow the parameter dtype."""

    def __init__(self, beta1=0.9, beta2=0.99, eps=1e-10):
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = None
        self.v = None

    def _init_state(self, params):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads, lr):
        if len(params) != len(grads):
            raise ValueError("params and grads must align")
        if self.m is None:
            self._init_state(params)
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if p.shape != g.shape or p.shape != m.shape:
                raise ValueError("parameter/gradient shape mismatch")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            dt = p.dtype.type
            m *= dt(b1)
            m += dt(1 - b1) * g
            v *= dt(b2)
            v += dt(1 - b2) * g * g
            mhat = m / dt(c1)
            vhat = v / dt(c2)
            p -= dt(lr) * mhat / (np.sqrt(vhat) + dt(self.eps))

    def state_arrays(self):
        """Flat list of state arrays, for checkpointing."""
        if self.m is None:
            return []
        return list(self.m) + list(self.v)

    def load_state(self, t, arrays):
        if len(arrays) % 2:
            raise ValueError("Adam state must hold an (m, v) pair per parameter")
        half = len(arrays) // 2
        self.t = int(t)
        self.m = [np.array(a) for a in arrays[:half]]
        self.v = [np.array(a) for a in arrays[half:]]


def lp_weight_decay(w, p, lam):
    """Decay update Delta_w_i = -lam * (|w_i| / ||w||_p)^(p-2) * w_i.

    Reduces to plain -lam*w at p = 2; as p -> inf only the largest-magnitude
    coordinate decays (lowest index on ties).  Zero vectors map to zero.
    """
    w = np.asarray(w)
    if not (p == np.inf or p >= 2):
        raise ValueError("weight decay needs p >= 2 or inf")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if p == 2:
        return -lam * w
    a = np.abs(w)
    out = np.zeros_like(w)
    if a.size == 0 or a.max() == 0:
        return out
    if np.isinf(p):
        i = int(np.argmax(a))
        out[i] = -lam * w[i]
        return out
    r = stable_pnorm(w, p)
    out[:] = -lam * (a / w.dtype.type(r)) ** w.dtype.type(p - 2) * w
    return out


def lp_weight_decay_rows(W, p, lam):
    """Row-wise decay for a weight matrix (each row is one neuron)."""
    W = np.asarray(W)
    if not (p == np.inf or p >= 2):
        raise ValueError("weight decay needs p >= 2 or inf")
    if p == 2:
        return -lam * W
    dt = W.dtype.type
    a = np.abs(W)
    out = np.zeros_like(W)
    if np.isinf(p):
        rows = np.arange(W.shape[0])
        j = a.argmax(axis=1)
        live = a[rows, j] > 0
        out[rows[live], j[live]] = -lam * W[rows[live], j[live]]
        return out
    m = a.max(axis=1, keepdims=True)
    safe = np.where(m == 0, 1, m)
    u = a / safe
    s = (u ** dt(p)).sum(axis=1, keepdims=True)
    r = np.where(m == 0, 1, safe * s ** dt(1.0 / p))
    np.multiply(-lam * (a / r) ** dt(p - 2), W, out=out, where=m > 0)
    return out
