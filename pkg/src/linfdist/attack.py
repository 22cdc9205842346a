"""PGD evaluation and the three accuracy metrics.

The attack runs in eval mode at p = inf (the deployed model), maximizing
cross-entropy with sign-gradient steps, projecting every iterate onto the
eps ball intersected with the pixel range [0, 1].  The returned point is
the worst iterate seen: a misclassified one if any exists, otherwise the
loss maximizer.  Randomness is drawn per example from streams keyed by
(seed, restart, example index), so batching and chunking cannot change
results.
"""

from dataclasses import dataclass, field

import numpy as np

from .certify import certify_batch


@dataclass
class AttackConfig:
    eps: float = 0.3
    steps: int = 20
    step_size: float = None
    random_start: bool = True
    restarts: int = 1
    loss: str = "ce"  # or "margin"

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.step_size is None:
            self.step_size = 2.5 * self.eps / self.steps
        if self.eps > 0 and self.step_size <= 0:
            raise ValueError("step_size must be positive")


def _attack_objective(logits, y, kind):
    """Per-example loss to maximize and its gradient w.r.t. logits."""
    n = logits.shape[0]
    rows = np.arange(n)
    if kind == "ce":
        z = logits - logits.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1))
        loss = lse - z[rows, y]
        d = np.exp(z) / np.exp(lse)[:, None]
        d[rows, y] -= 1.0
        return loss, d.astype(logits.dtype)
    if kind == "margin":
        v = logits.copy()
        v[rows, y] = -np.inf
        j = v.argmax(axis=1)
        loss = logits[rows, j] - logits[rows, y]
        d = np.zeros_like(logits)
        d[rows, j] = 1.0
        d[rows, y] -= 1.0
        return loss, d
    raise ValueError(f"unknown attack loss {kind!r}")


def pgd_attack(net, X, y, cfg, seed=0, index_base=0):
    """Adversarial examples for a batch; output stays inside the eps ball
    around X and inside [0, 1]."""
    X = np.asarray(X)
    y = np.asarray(y)
    x0 = X.astype(X.dtype, copy=True)
    if cfg.eps == 0:
        return x0
    lo = np.maximum(x0 - cfg.eps, 0.0).astype(X.dtype)
    hi = np.minimum(x0 + cfg.eps, 1.0).astype(X.dtype)
    n = X.shape[0]
    best_x = x0.copy()
    best_loss = np.full(n, -np.inf)
    best_flip = np.zeros(n, dtype=bool)

    for restart in range(cfg.restarts):
        if cfg.random_start:
            noise = np.empty_like(x0)
            for i in range(n):
                r = np.random.default_rng([seed, restart, index_base + i])
                noise[i] = r.uniform(-cfg.eps, cfg.eps, size=x0.shape[1:])
            x = np.clip(x0 + noise, lo, hi)
        else:
            x = x0.copy()
        for step in range(cfg.steps + 1):
            logits = net.forward(x, training=False, with_grad=True, p=np.inf)
            loss, dlogits = _attack_objective(logits, y, cfg.loss)
            flip = logits.argmax(axis=1) != y
            better = (flip & ~best_flip) | ((flip == best_flip) & (loss > best_loss))
            if np.any(better):
                best_x[better] = x[better]
                best_loss[better] = loss[better]
                best_flip[better] |= flip[better]
            if step == cfg.steps:
                break
            g = net.backward(x, dlogits, need_input_grad=True,
                             need_param_grads=False)
            x = np.clip(x + np.asarray(cfg.step_size, x.dtype) * np.sign(g), lo, hi)
    return best_x


@dataclass
class EvalReport:
    clean_acc: float
    robust_acc: float
    certified_acc: float
    labels: np.ndarray
    predictions: np.ndarray
    attacked_predictions: np.ndarray
    certified: np.ndarray
    radii: np.ndarray
    eps: float = 0.0

    def rows(self):
        for i in range(len(self.labels)):
            yield (int(self.labels[i]), int(self.predictions[i]),
                   int(self.attacked_predictions[i]), bool(self.certified[i]),
                   float(self.radii[i]))

    def summary(self):
        return (f"clean {self.clean_acc:.4f}  pgd {self.robust_acc:.4f}  "
                f"certified {self.certified_acc:.4f}  (eps={self.eps:g}, "
                f"n={len(self.labels)})")


def evaluate(net, X, y, eps, cfg=None, seed=0, chunk=512):
    """Clean, PGD-robust and certified accuracy on one example set."""
    X = np.asarray(X)
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("empty evaluation set")
    if cfg is None:
        cfg = AttackConfig(eps=eps)
    preds = np.empty(len(y), dtype=np.int64)
    adv_preds = np.empty(len(y), dtype=np.int64)
    certified = np.empty(len(y), dtype=bool)
    radii = np.empty(len(y))
    for lo in range(0, len(y), chunk):
        hi = min(len(y), lo + chunk)
        Xc, yc = X[lo:hi], y[lo:hi]
        preds[lo:hi] = net.logits(Xc, p=np.inf).argmax(axis=1)
        cert, rad = certify_batch(net, Xc, yc, eps)
        certified[lo:hi] = cert
        radii[lo:hi] = rad
        x_adv = pgd_attack(net, Xc, yc, cfg, seed=seed, index_base=lo)
        adv_preds[lo:hi] = net.logits(x_adv, p=np.inf).argmax(axis=1)
    correct = preds == y
    robust = correct & (adv_preds == y)
    return EvalReport(
        clean_acc=float(correct.mean()),
        robust_acc=float(robust.mean()),
        certified_acc=float(certified.mean()),
        labels=y.copy(), predictions=preds, attacked_predictions=adv_preds,
        certified=certified, radii=radii, eps=float(eps))
