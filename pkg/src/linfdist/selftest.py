"""Fast built-in invariant checks for `linfdist selftest`.

These are smaller, self-contained versions of the property suite: they need
no datasets, run in seconds, and gate packaging/deploy sanity.
"""

import os
import tempfile

import numpy as np

from .attack import AttackConfig, pgd_attack
from .certify import certify_batch, ibp_affine, Interval, margins_batch
from .checkpoint import load_checkpoint, network_bytes, save_checkpoint
from .layers import build_base_map, LpDistLayer
from .network import build_network
from .numerics import stable_pnorm
from .optim import Adam, lp_weight_decay
from .schedules import TrainPlan
from .training import fit


def _toy_data(rng, n=128, d=12, classes=3):
    X = rng.random((n, d), dtype=np.float32)
    y = (X[:, :4].sum(axis=1) * classes / 4.0).astype(np.int64) % classes
    return X, y


def check_pnorm():
    rng = np.random.default_rng(7)
    for _ in range(200):
        v = rng.standard_normal(rng.integers(1, 20))
        last = np.inf
        vmax = stable_pnorm(v, np.inf)
        for p in (1, 2, 8, 100, 1000):
            r = stable_pnorm(v, p)
            if r < vmax - 1e-12 or r > last + 1e-9:
                return False, f"monotonicity broke at p={p}"
            last = r
    big = stable_pnorm([1e30, -1e30, 1e29], 1000)
    if not np.isfinite(big):
        return False, "overflow at large magnitudes"
    return True, "p-norm monotone and overflow-safe"


def check_lipschitz():
    rng = np.random.default_rng(1)
    net = build_network("dist:24x3", 16, 4, seed=3)
    x1 = rng.random((2000, 16), dtype=np.float32)
    x2 = (x1 + rng.standard_normal(x1.shape).astype(np.float32) * 0.2)
    g1 = net.logits(x1, p=np.inf)
    g2 = net.logits(x2, p=np.inf)
    lhs = np.abs(g1 - g2).max(axis=1)
    rhs = np.abs(x1 - x2).max(axis=1)
    bad = int((lhs > rhs + 1e-5).sum())
    return bad == 0, f"{bad} Lipschitz violations in 2000 pairs"


def check_gradients():
    rng = np.random.default_rng(2)
    layer = LpDistLayer(6, 4, bias=True, dtype=np.float64)
    layer.W[:] = rng.standard_normal((4, 6))
    X = rng.random((3, 6)) + 0.05
    for p in (2.0, 8.0, 20.0):
        up = rng.standard_normal((3, 4))
        layer.forward(X, p, with_grad=True)
        layer.zero_grads()
        gX = layer.backward(up)
        h = 1e-6
        for (a, b) in [(0, 1), (2, 3)]:
            Xp = X.copy(); Xp[a, b] += h
            Xm = X.copy(); Xm[a, b] -= h
            num = ((layer.forward(Xp, p) * up).sum()
                   - (layer.forward(Xm, p) * up).sum()) / (2 * h)
            if abs(num - gX[a, b]) > 1e-4 * max(1.0, abs(num)):
                return False, f"input gradient off at p={p}"
    return True, "distance-layer gradients match finite differences"


def check_ibp():
    rng = np.random.default_rng(3)
    for _ in range(20):
        d_in, d_out = 5, 4
        W = rng.standard_normal((d_out, d_in))
        b = rng.standard_normal(d_out)
        lo = rng.standard_normal(d_in)
        hi = lo + rng.random(d_in)
        iv = ibp_affine(Interval(lo, hi), W, b)
        pts = lo + rng.random((200, d_in)) * (hi - lo)
        img = pts @ W.T + b
        if (img < iv.lower - 1e-9).any() or (img > iv.upper + 1e-9).any():
            return False, "sampled point escaped an affine interval"
    return True, "interval affine bounds are sound"


def check_weight_decay():
    w = np.array([3.0, -4.0, 1.0])
    if not np.allclose(lp_weight_decay(w, 2, 0.005), -0.005 * w, rtol=0, atol=0):
        return False, "p=2 decay is not -lambda*w"
    d = lp_weight_decay(w, np.inf, 0.005)
    if d[0] != 0 or d[2] != 0 or d[1] != 0.005 * 4.0:
        return False, "p=inf decay touched the wrong coordinate"
    return True, "weight decay formulas hold"


def check_base_maps():
    rng = np.random.default_rng(4)
    layer = LpDistLayer(2, 3, bias=True, dtype=np.float64)
    for k, (kind, idx) in enumerate([("projection", (0,)), ("negation", (1,)),
                                     ("maximum", (0, 1))]):
        row, bias = build_base_map(kind, idx, 2, box_bound=10.0)
        layer.W[k] = row
        layer.b[k] = bias
    X = rng.uniform(-1, 1, (500, 2))
    out = layer.forward(X, np.inf)
    want = np.stack([X[:, 0], -X[:, 1], np.maximum(X[:, 0], X[:, 1])], axis=1)
    err = np.abs(out - want).max()
    return err < 1e-6, f"base map max error {err:.2e}"


def check_attack_and_certificates():
    rng = np.random.default_rng(5)
    net = build_network("dist:16x2", 8, 3, seed=11)
    X = rng.random((64, 8), dtype=np.float32)
    y = net.logits(X).argmax(axis=1)
    eps = 0.05
    cert, _ = certify_batch(net, X, y, eps)
    adv = pgd_attack(net, X, y, AttackConfig(eps=eps, steps=10), seed=0)
    if np.abs(adv - X).max() > eps + 1e-6:
        return False, "attack left the perturbation ball"
    flipped = net.logits(adv).argmax(axis=1) != y
    bad = int((cert & flipped).sum())
    return bad == 0, f"{bad} certified examples flipped by the attack"


def check_roundtrip_and_determinism():
    rng = np.random.default_rng(6)
    X, y = _toy_data(rng)
    plan = TrainPlan(e1=1, e2=1, e3=0, batch_size=32, seed=9, hinge_t=0.2,
                     eps_train=0.0, weight_decay=0.005)
    nets = []
    for _ in range(2):
        net = build_network("dist:12x2", 12, 3, seed=20)
        fit(net, X, y, plan, loss_kind="hinge")
        nets.append(net)
    for a, b in zip(nets[0].params(), nets[1].params()):
        if not np.array_equal(a, b):
            return False, "two same-seed runs diverged"
    with tempfile.TemporaryDirectory() as td:
        path = os.path.join(td, "net.ckpt")
        save_checkpoint(nets[0], path)
        loaded, _ = load_checkpoint(path)
        if network_bytes(loaded) != network_bytes(nets[0]):
            return False, "checkpoint round trip not byte-identical"
    return True, "training deterministic; checkpoint round trip exact"


CHECKS = [
    ("pnorm", check_pnorm),
    ("lipschitz", check_lipschitz),
    ("gradients", check_gradients),
    ("ibp-soundness", check_ibp),
    ("weight-decay", check_weight_decay),
    ("base-maps", check_base_maps),
    ("attack-vs-certificates", check_attack_and_certificates),
    ("roundtrip-determinism", check_roundtrip_and_determinism),
]


def run_selftest(print_fn=print):
    ok_all = True
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as e:  # a crash is a failure, not an abort
            ok, detail = False, f"raised {type(e).__name__}: {e}"
        ok_all &= bool(ok)
        print_fn(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return ok_all
