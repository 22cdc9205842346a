"""Losses with exact gradients w.r.t. logits."""

import numpy as np


def _check_labels(logits, labels):
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ValueError("labels must be one integer per batch row")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError("label out of range")
    return labels.astype(np.int64)


def hinge_loss(logits, labels, t, variant="max"):
    """Multi-class hinge with margin threshold t.

    variant "max": per-sample loss max(0, max_{j != y}(t + g_j - g_y)),
    which is zero exactly when the margin (top minus runner-up, true class
    on top) reaches t.  variant "sum" averages the per-class hinges
    instead, giving a denser gradient.  Subgradients break ties toward the
    lowest class index.
    """
    logits = np.asarray(logits)
    labels = _check_labels(logits, labels)
    if not t > 0:
        raise ValueError("hinge threshold t must be positive")
    n, m = logits.shape
    rows = np.arange(n)
    gy = logits[rows, labels]
    viol = t + logits - gy[:, None]
    viol[rows, labels] = -np.inf
    d = np.zeros_like(logits)
    if variant == "max":
        j = viol.argmax(axis=1)
        per = np.maximum(viol[rows, j], 0.0)
        active = per > 0
        scale = logits.dtype.type(1.0 / n)
        d[rows[active], j[active]] = scale
        np.subtract.at(d, (rows[active], labels[active]), scale)
    elif variant == "sum":
        act = viol > 0
        per = np.where(act, viol, 0.0).sum(axis=1) / (m - 1)
        scale = logits.dtype.type(1.0 / (n * (m - 1)))
        d[act] = scale
        d[rows, labels] -= act.sum(axis=1) * scale
    else:
        raise ValueError(f"unknown hinge variant {variant!r}")
    return float(per.mean()), d


def cross_entropy(logits, labels):
    """Softmax cross-entropy, stabilized by max subtraction."""
    logits = np.asarray(logits)
    labels = _check_labels(logits, labels)
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    sm = ez / ez.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    # loss = -log softmax[y]; written via logsumexp for accuracy
    lse = np.log(ez.sum(axis=1))
    loss = float((lse - z[rows, labels]).mean())
    d = sm.copy()
    d[rows, labels] -= 1.0
    d /= n
    return loss, d.astype(logits.dtype)


def ibp_loss(clean_logits, mbar, labels, kappa):
    """kappa * CE(clean) + (1 - kappa) * CE(worst-case margin bound).

    ``mbar`` is the certified upper bound on per-class margins (the true
    class entry is 0 by construction) and is treated as the worst-case
    logits.  Returns the loss and gradients for both logit blocks.
    """
    if not 0.0 <= kappa <= 1.0:
        raise ValueError("kappa must lie in [0, 1]")
    ce_clean, d_clean = cross_entropy(clean_logits, labels)
    if kappa == 1.0:
        return ce_clean, d_clean, np.zeros_like(np.asarray(mbar))
    ce_rob, d_rob = cross_entropy(mbar, labels)
    if kappa == 0.0:
        return ce_rob, np.zeros_like(np.asarray(clean_logits)), d_rob
    loss = kappa * ce_clean + (1.0 - kappa) * ce_rob
    return loss, kappa * d_clean, (1.0 - kappa) * d_rob
