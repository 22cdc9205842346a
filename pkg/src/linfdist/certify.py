"""Certification: margin bound for pure nets, interval bounds for heads.

A pure distance net evaluated at p = inf is 1-Lipschitz in the
infinity norm, so half the logit margin is a certified radius.  For a
composite net the extractor output can move at most eps when the input
moves at most eps, so the feature box [z - eps, z + eps] is propagated
through the affine head with interval arithmetic and the class-difference
transform is merged into the final linear layer for a tighter bound.

Perturbed inputs outside the valid pixel range [0, 1] only shrink the
reachable set, so certifying against the unclipped ball is conservative
and needs no extra handling here.
"""

from dataclasses import dataclass

import numpy as np

from .layers import AffineLayer
from .network import Network, validate_composite, validate_pure


@dataclass
class Interval:
    """Elementwise bounds; lower <= upper everywhere."""
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower)
        self.upper = np.asarray(self.upper)
        if self.lower.shape != self.upper.shape:
            raise ValueError("interval bounds must share a shape")
        if np.any(self.lower > self.upper):
            raise ValueError("interval has lower > upper")

    @property
    def center(self):
        return 0.5 * (self.lower + self.upper)

    @property
    def radius(self):
        return 0.5 * (self.upper - self.lower)


@dataclass
class Certificate:
    certified: bool
    radius_lower_bound: float
    method: str  # "margin" or "ibp"


def margin(logits):
    """Largest minus second-largest entry (0 on ties)."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or logits.shape[0] < 2:
        raise ValueError("margin needs at least two logits")
    top2 = np.partition(logits, -2)[-2:]
    return float(top2[1] - top2[0])


def margins_batch(logits):
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape[1] < 2:
        raise ValueError("margin needs at least two logits")
    top2 = np.partition(logits, -2, axis=1)[:, -2:]
    return top2[:, 1] - top2[:, 0]


def certify_lipschitz(net, x, y, eps):
    """Margin certificate for a pure distance net in eval mode at p = inf."""
    validate_pure(net)
    logits = net.logits(np.asarray(x)[None], p=np.inf)[0]
    if int(np.argmax(logits)) != int(y):
        return Certificate(False, 0.0, "margin")
    r = margin(logits) / 2.0
    return Certificate(r > eps, r, "margin")


def interval_from_lipschitz(z, eps):
    """Feature box reachable under input perturbations of radius eps."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    z = np.asarray(z)
    return Interval(z - eps, z + eps)


def ibp_affine(iv, W, b):
    """Exact interval image of an affine map: center through W, radius
    through |W|."""
    W = np.asarray(W)
    b = np.asarray(b)
    c, r = iv.center, iv.radius
    if c.shape[-1] != W.shape[1]:
        raise ValueError(f"interval dim {c.shape[-1]} vs W {W.shape}")
    mu = c @ W.T + b
    rad = r @ np.abs(W).T
    return Interval(mu - rad, mu + rad)


def ibp_monotone(iv, activation=np.tanh):
    """Push bounds through a nondecreasing elementwise activation."""
    fn = np.tanh if activation == "tanh" else activation
    return Interval(fn(iv.lower), fn(iv.upper))


def ibp_margin_merge(iv, W_last, b_last, y):
    """Upper bound on per-class margins m_j = g_j - g_y.

    The difference transform is folded into the final linear layer
    (W - 1 e_y^T W) before bounding, which is tighter than differencing the
    output interval.  Row y is identically zero, so mbar[y] == 0 exactly.
    """
    W_last = np.asarray(W_last)
    b_last = np.asarray(b_last)
    y = int(y)
    if not 0 <= y < W_last.shape[0]:
        raise ValueError("label out of range")
    Wt = W_last - W_last[y][None, :]
    bt = b_last - b_last[y]
    c, r = iv.center, iv.radius
    return c @ Wt.T + r @ np.abs(Wt).T + bt


def head_margin_bounds(head, z, eps, labels):
    """Batched worst-case margin bounds through an affine head.

    ``head`` is the list of AffineLayers; hidden layers must carry a
    monotone activation and the final layer none.  Returns mbar (N, M).
    """
    z = np.asarray(z)
    labels = np.asarray(labels)
    lower, upper = z - eps, z + eps
    for layer in head[:-1]:
        iv = ibp_affine(Interval(lower, upper), layer.W, layer.b)
        if layer.activation == "tanh":
            iv = ibp_monotone(iv, np.tanh)
        lower, upper = iv.lower, iv.upper
    last = head[-1]
    iv = Interval(lower, upper)
    mbar = np.empty((z.shape[0], last.d_out), dtype=np.float64)
    for cls in np.unique(labels):
        mask = labels == cls
        mbar[mask] = ibp_margin_merge(
            Interval(lower[mask], upper[mask]), last.W, last.b, int(cls))
    return mbar


def _composite_mbar(net, X, labels, eps):
    body, head = net.split_head()
    ext = Network(body, negate_output=False)
    z = ext.logits(np.asarray(X), p=np.inf)
    return head_margin_bounds(head, z, eps, labels)


def certify_composite(net, x, y, eps, refine=False, refine_iters=24,
                      refine_tol=1e-4, refine_cap=16.0):
    """IBP certificate for a composite net at perturbation radius eps.

    Certified iff every wrong-class margin bound is strictly negative.  With
    ``refine`` the radius lower bound is sharpened by bisection over eps.
    """
    validate_composite(net)
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    x = np.asarray(x)[None]
    yv = np.asarray([int(y)])

    def ok(e):
        mbar = _composite_mbar(net, x, yv, e)[0]
        others = np.delete(mbar, int(y))
        return bool(others.max() < 0.0)

    certified = ok(eps)
    if not certified:
        return Certificate(False, 0.0, "ibp")
    radius = float(eps)
    if refine:
        lo, hi = float(eps), max(2.0 * float(eps), 1e-3)
        while hi < refine_cap and ok(hi):
            lo, hi = hi, 2.0 * hi
        for _ in range(refine_iters):
            if hi - lo < refine_tol:
                break
            mid = 0.5 * (lo + hi)
            if ok(mid):
                lo = mid
            else:
                hi = mid
        radius = lo
    return Certificate(True, radius, "ibp")


def certify_batch(net, X, y, eps):
    """Vectorized certification; method chosen by network kind.

    Returns (certified bool array, radius lower bounds).
    """
    X = np.asarray(X)
    y = np.asarray(y)
    kind = net.kind
    if kind == "pure":
        logits = net.logits(X, p=np.inf)
        correct = logits.argmax(axis=1) == y
        radii = np.where(correct, margins_batch(logits) / 2.0, 0.0)
        return (correct & (radii > eps)), radii
    if kind == "composite":
        mbar = _composite_mbar(net, X, y, eps)
        rows = np.arange(len(y))
        tmp = mbar.copy()
        tmp[rows, y] = -np.inf
        certified = tmp.max(axis=1) < 0.0
        return certified, np.where(certified, float(eps), 0.0)
    raise ValueError("cannot certify this network layout")
