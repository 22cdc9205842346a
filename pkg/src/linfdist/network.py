"""Network container: an ordered layer stack plus the live exponent p.

Two supported architectures:

* pure distance net: distance layers with mean shifts, ending in a biased
  distance layer; logits are the negated outputs (small distance = strong
  class evidence).
* composite net: a distance-layer feature extractor followed by a small
  affine head (tanh hidden layers, linear output); no output negation.

``p`` is shared by every distance layer and belongs to the network, not to
individual layers; inference uses p = inf.
"""

import numpy as np

from .layers import (AffineLayer, ConvLpDistLayer, LpDistLayer, MeanShiftNorm,
                     affine_init, gaussian_init, identity_init)
from .numerics import TRAIN_DTYPE


class Network:
    def __init__(self, layers, negate_output, p=np.inf):
        self.layers = list(layers)
        self.negate_output = bool(negate_output)
        self.p = float(p)
        self._fwd_token = None
        self._reshapes = None

    # -- structure ---------------------------------------------------------

    @property
    def kind(self):
        if self.layers and isinstance(self.layers[-1], AffineLayer):
            n_aff = sum(isinstance(l, AffineLayer) for l in self.layers)
            if all(isinstance(l, AffineLayer) for l in self.layers[-n_aff:]) \
                    and not self.negate_output:
                return "composite"
        if isinstance(self.layers[-1], LpDistLayer) and \
                self.layers[-1].b is not None and self.negate_output:
            return "pure"
        return "other"

    def split_head(self):
        """(extractor layers, affine head layers); head may be empty."""
        i = len(self.layers)
        while i > 0 and isinstance(self.layers[i - 1], AffineLayer):
            i -= 1
        return self.layers[:i], self.layers[i:]

    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def grads(self):
        out = []
        for layer in self.layers:
            out.extend(layer.grads())
        return out

    def zero_grads(self):
        for layer in self.layers:
            layer.zero_grads()

    def dist_weight_matrices(self):
        """Weight matrices regularized with the live-p decay (row = neuron)."""
        out = []
        for layer in self.layers:
            if isinstance(layer, LpDistLayer):
                out.append(layer.W)
            elif isinstance(layer, ConvLpDistLayer):
                out.append(layer.K.reshape(layer.out_ch, -1))
        return out

    def affine_weight_matrices(self):
        return [l.W for l in self.layers if isinstance(l, AffineLayer)]

    # -- forward / backward --------------------------------------------------

    def forward(self, X, training=False, with_grad=False, p=None):
        p = self.p if p is None else float(p)
        X = np.asarray(X)
        A = X
        reshapes = []
        for layer in self.layers:
            if A.ndim == 4 and isinstance(layer, (LpDistLayer, AffineLayer)):
                reshapes.append(A.shape)
                A = A.reshape(A.shape[0], -1)
            else:
                reshapes.append(None)
            A = layer.forward(A, p, training=training, with_grad=with_grad)
        if with_grad:
            self._fwd_token = (id(X), X.shape)
            self._reshapes = reshapes
        return -A if self.negate_output else A

    def backward(self, X, upstream, need_input_grad=False, need_param_grads=True):
        if self._fwd_token is None:
            raise RuntimeError("backward without a cached forward pass")
        if self._fwd_token != (id(X), np.asarray(X).shape):
            raise RuntimeError("stale forward cache: run forward on this batch first")
        g = -upstream if self.negate_output else upstream
        g = np.ascontiguousarray(g)
        for i in range(len(self.layers) - 1, -1, -1):
            want_input = need_input_grad or i > 0
            g = self.layers[i].backward(g, need_input_grad=want_input,
                                        need_param_grads=need_param_grads)
            if g is not None and self._reshapes[i] is not None:
                g = g.reshape(self._reshapes[i])
        return g if need_input_grad else None

    def logits(self, X, p=np.inf):
        """Inference-mode forward pass (no state mutation, no caches)."""
        return self.forward(X, training=False, with_grad=False, p=p)


def validate_pure(net):
    for layer in net.layers[:-1]:
        if not isinstance(layer, (LpDistLayer, ConvLpDistLayer, MeanShiftNorm)):
            raise ValueError("pure distance net may only contain distance "
                             "layers and mean shifts")
    last = net.layers[-1]
    if not (isinstance(last, LpDistLayer) and last.b is not None):
        raise ValueError("pure distance net must end in a biased distance layer")
    if not net.negate_output:
        raise ValueError("pure distance net must negate its output")


def validate_composite(net):
    body, head = net.split_head()
    if not head:
        raise ValueError("composite net needs at least one affine layer")
    for layer in body:
        if not isinstance(layer, (LpDistLayer, ConvLpDistLayer, MeanShiftNorm)):
            raise ValueError("composite body may only contain distance layers "
                             "and mean shifts")
    for layer in head[:-1]:
        if layer.activation != "tanh":
            raise ValueError("hidden head layers must use a monotone activation")
    if head[-1].activation != "none":
        raise ValueError("final head layer must be linear")
    if net.negate_output:
        raise ValueError("composite net must not negate its output")


# ---------------------------------------------------------------------------
# architecture strings, e.g. "dist:512x3+mlp:512" or "conv:32k3s2+dist:128x2"

def _parse_widths(text):
    if "x" in text:
        w, d = text.split("x")
        return [int(w)] * int(d)
    return [int(t) for t in text.split(",") if t]


def parse_arch(arch):
    conv, dist, mlp = [], [], []
    for seg in arch.strip().split("+"):
        if not seg:
            continue
        name, _, rest = seg.partition(":")
        if name == "dist":
            dist = _parse_widths(rest)
        elif name == "mlp":
            mlp = _parse_widths(rest)
        elif name == "conv":
            for item in rest.split(","):
                opts = {"s": 1, "p": None}
                ch, _, tail = item.partition("k")
                k = ""
                key = None
                for chr_ in tail:
                    if chr_ in "sp":
                        key = chr_
                        opts[key] = ""
                    elif key is None:
                        k += chr_
                    else:
                        opts[key] += chr_
                kk = int(k)
                stride = int(opts["s"]) if opts["s"] != "" else 1
                pad = int(opts["p"]) if opts["p"] not in (None, "") else (kk - 1) // 2
                conv.append((int(ch), kk, stride, pad))
        else:
            raise ValueError(f"unknown architecture segment {name!r}")
    if not dist and not conv:
        raise ValueError(f"architecture {arch!r} has no distance layers")
    return conv, dist, mlp


def build_network(arch, input_shape, n_classes, seed=0, identity=True,
                  c0=-10.0, momentum=0.1, pad_value=0.0, dtype=TRAIN_DTYPE):
    """Assemble and initialize a network from an architecture string."""
    conv, dist, mlp = parse_arch(arch)
    rng = np.random.default_rng(seed)
    layers = []

    if conv:
        if np.isscalar(input_shape):
            raise ValueError("conv layers need an image input_shape (C, H, W)")
        ch, h, w = input_shape
        for out_ch, k, stride, pad in conv:
            layer = ConvLpDistLayer(ch, out_ch, k, stride=stride, padding=pad,
                                    pad_value=pad_value, dtype=dtype)
            gaussian_init(layer, rng)
            layers.append(layer)
            layers.append(MeanShiftNorm(out_ch, momentum=momentum, dtype=dtype))
            h, w = layer.out_shape(h, w)
            ch = out_ch
        feat = ch * h * w
    else:
        feat = int(np.prod(input_shape)) if not np.isscalar(input_shape) else int(input_shape)

    for width in dist:
        layer = LpDistLayer(feat, width, bias=False, dtype=dtype)
        if identity and feat == width:
            identity_init(layer, rng, c0=c0)
        else:
            gaussian_init(layer, rng)
        layers.append(layer)
        layers.append(MeanShiftNorm(width, momentum=momentum, dtype=dtype))
        feat = width

    if mlp:
        for width in mlp:
            layer = AffineLayer(feat, width, activation="tanh", dtype=dtype)
            affine_init(layer, rng)
            layers.append(layer)
            feat = width
        out = AffineLayer(feat, n_classes, activation="none", dtype=dtype)
        affine_init(out, rng)
        layers.append(out)
        net = Network(layers, negate_output=False)
        validate_composite(net)
    else:
        top = LpDistLayer(feat, n_classes, bias=True, dtype=dtype)
        gaussian_init(top, rng)
        layers.append(top)
        net = Network(layers, negate_output=True)
        validate_pure(net)
    return net
