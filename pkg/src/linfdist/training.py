"""Training loop: scheduled relaxation, losses, decay, Adam.

Within an epoch the exponent p advances every iteration; learning rate and
the perturbation radius advance per epoch.  Weight decay follows the live p
for distance layers and p = 2 for the affine head, folded into the gradient
before the Adam step (it is the gradient of a norm regularizer on the
loss).  Shuffling and augmentation draw from a generator keyed by
(seed, epoch), so runs are bit-reproducible and resumable at epoch
boundaries.
"""

import numpy as np

from .data import augment
from .losses import cross_entropy, hinge_loss, ibp_loss
from .network import Network
from .optim import Adam, lp_weight_decay_rows
from .schedules import eps_schedule, lr_schedule, p_schedule


def _apply_weight_decay(net, p, lam):
    if lam == 0:
        return
    for layer in net.layers:
        kind = getattr(layer, "kind", None)
        if kind == "dist":
            layer.gW -= lp_weight_decay_rows(layer.W, p, lam)
        elif kind == "conv":
            flat = layer.K.reshape(layer.out_ch, -1)
            layer.gK -= lp_weight_decay_rows(flat, p, lam).reshape(layer.K.shape)
        elif kind == "affine":
            layer.gW -= lp_weight_decay_rows(layer.W, 2, lam)


# -- differentiable interval pass through the affine head --------------------

def _ibp_head_forward(head, z, eps, labels):
    lower, upper = z - eps, z + eps
    hidden = []
    for layer in head[:-1]:
        c = 0.5 * (lower + upper)
        r = 0.5 * (upper - lower)
        mu = c @ layer.W.T + layer.b
        rad = r @ np.abs(layer.W).T
        pl, pu = mu - rad, mu + rad
        nl, nu = np.tanh(pl), np.tanh(pu)
        hidden.append((c, r, nl, nu))
        lower, upper = nl, nu
    last = head[-1]
    c = 0.5 * (lower + upper)
    r = 0.5 * (upper - lower)
    mbar = np.empty((z.shape[0], last.d_out), dtype=z.dtype)
    groups = []
    for cls in np.unique(labels):
        mask = labels == cls
        Wt = last.W - last.W[cls][None, :]
        bt = last.b - last.b[cls]
        mbar[mask] = c[mask] @ Wt.T + r[mask] @ np.abs(Wt).T + bt
        groups.append((int(cls), mask, Wt))
    return mbar, (hidden, c, r, groups)


def _ibp_head_backward(head, cache, dmbar):
    """Gradients of sum(dmbar * mbar) w.r.t. head parameters and z."""
    hidden, c, r, groups = cache
    last = head[-1]
    dc = np.zeros_like(c)
    dr = np.zeros_like(r)
    for cls, mask, Wt in groups:
        dm = dmbar[mask]
        dc[mask] = dm @ Wt
        dr[mask] = dm @ np.abs(Wt)
        # through Wt = W - 1 e_cls^T W and bt = b - 1 e_cls^T b
        gWt = dm.T @ c[mask] + (dm.T @ r[mask]) * np.sign(Wt)
        last.gW += gWt
        last.gW[cls] -= gWt.sum(axis=0)
        gbt = dm.sum(axis=0)
        last.gb += gbt
        last.gb[cls] -= gbt.sum()
    dl = 0.5 * (dc - dr)
    du = 0.5 * (dc + dr)
    for layer, (c, r, nl, nu) in zip(reversed(head[:-1]), reversed(hidden)):
        dpl = dl * (1.0 - nl * nl)
        dpu = du * (1.0 - nu * nu)
        dmu = dpl + dpu
        drad = dpu - dpl
        layer.gW += dmu.T @ c + (drad.T @ r) * np.sign(layer.W)
        layer.gb += dmu.sum(axis=0, dtype=layer.gb.dtype)
        dc = dmu @ layer.W
        dr = drad @ np.abs(layer.W)
        dl = 0.5 * (dc - dr)
        du = 0.5 * (dc + dr)
    return dl + du  # lower = z - eps, upper = z + eps


def ibp_train_step(net, Xb, yb, kappa, eps, p):
    """Forward + backward of the combined clean/worst-case loss on a
    composite net.  Returns (loss, clean logits); gradients accumulate on
    the layers."""
    body, head = net.split_head()
    if not head:
        raise ValueError("the worst-case bound loss needs an affine head "
                         "(use an arch like dist:...+mlp:...)")
    ext = Network(body, negate_output=False, p=p)
    z = ext.forward(Xb, training=True, with_grad=True, p=p)
    a = z
    for layer in head:
        a = layer.forward(a, p, training=True, with_grad=True)
    clean = a
    mbar, cache = _ibp_head_forward(head, z, eps, yb)
    loss, d_clean, d_mbar = ibp_loss(clean, mbar, yb, kappa)
    g = d_clean
    for layer in reversed(head):
        g = layer.backward(g, need_input_grad=True)
    dz = g + _ibp_head_backward(head, cache, d_mbar)
    ext.backward(Xb, dz)
    return loss, clean


def train_epoch(net, images, labels, plan, adam, epoch, loss_kind="hinge",
                augment_policy=None):
    """One full pass; returns mean loss and training accuracy."""
    n = len(labels)
    if n == 0:
        raise ValueError("empty training set")
    bs = plan.batch_size
    iters = (n + bs - 1) // bs
    rng = np.random.default_rng([plan.seed, epoch])
    perm = rng.permutation(n)
    lr = lr_schedule(plan, epoch)
    eps = eps_schedule(plan, epoch)
    loss_sum = 0.0
    correct = 0
    for it in range(iters):
        p = p_schedule(plan, epoch, it, iters)
        net.p = p
        sel = perm[it * bs:(it + 1) * bs]
        Xb = images[sel]
        yb = labels[sel]
        if augment_policy is not None and Xb.ndim == 4:
            Xb = augment(Xb, augment_policy, rng)
        net.zero_grads()
        if loss_kind == "hinge":
            logits = net.forward(Xb, training=True, with_grad=True, p=p)
            loss, d = hinge_loss(logits, yb, plan.hinge_t, plan.hinge_variant)
            net.backward(Xb, d)
        elif loss_kind == "crossentropy":
            logits = net.forward(Xb, training=True, with_grad=True, p=p)
            loss, d = cross_entropy(logits, yb)
            net.backward(Xb, d)
        elif loss_kind == "ibp":
            loss, logits = ibp_train_step(net, Xb, yb, plan.kappa, eps, p)
        else:
            raise ValueError(f"unknown loss kind {loss_kind!r}")
        _apply_weight_decay(net, p, plan.weight_decay)
        if lr != 0.0:
            adam.step(net.params(), net.grads(), lr)
        loss_sum += loss * len(yb)
        correct += int((logits.argmax(axis=1) == yb).sum())
    return {"loss": loss_sum / n, "acc": correct / n,
            "p": p_schedule(plan, epoch, iters - 1, iters), "lr": lr, "eps": eps}


def fit(net, images, labels, plan, loss_kind="hinge", augment_policy=None,
        adam=None, start_epoch=0, epoch_callback=None):
    """Run the full schedule; per-epoch metrics go to ``epoch_callback``."""
    if adam is None:
        adam = Adam()
    history = []
    for epoch in range(start_epoch, plan.total_epochs):
        stats = train_epoch(net, images, labels, plan, adam, epoch,
                            loss_kind=loss_kind, augment_policy=augment_policy)
        stats["epoch"] = epoch
        history.append(stats)
        if epoch_callback is not None:
            epoch_callback(epoch, net, adam, stats)
    net.p = np.inf
    return adam, history
