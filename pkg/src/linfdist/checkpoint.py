"""Binary checkpoints: magic "LIDN", version, layer descriptors, payloads.

Layout: magic (4 bytes) | version (u32 LE) | layer count (u32 LE) | one
descriptor + payload per layer | length-prefixed optional training state.
Distance-layer descriptors carry the live exponent p; normalization
descriptors carry the momentum.  All numeric payloads are little-endian
float32, so save -> load -> save is byte-identical.  Whether logits are the
negated outputs follows from the layout itself: a net ending in a biased
distance layer negates, a net ending in affine layers does not.
"""

import struct

import numpy as np

from .errors import BadMagicError, TruncatedError, VersionError
from .layers import AffineLayer, ConvLpDistLayer, LpDistLayer, MeanShiftNorm
from .network import Network

MAGIC = b"LIDN"
VERSION = 1

_TAG_DIST, _TAG_CONV, _TAG_NORM, _TAG_AFFINE = 1, 2, 3, 4
_ACT = {"none": 0, "tanh": 1}
_ACT_INV = {v: k for k, v in _ACT.items()}


def _pack_array(a):
    a = np.ascontiguousarray(a, dtype="<f4")
    return struct.pack("<I", a.size) + a.tobytes()


class _Reader:
    def __init__(self, buf, path="<buffer>"):
        self.buf = buf
        self.off = 0
        self.path = path

    def take(self, n):
        if self.off + n > len(self.buf):
            raise TruncatedError(f"{self.path}: truncated at byte {self.off}")
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, shape=None):
        (n,) = self.unpack("<I")
        a = np.frombuffer(self.take(4 * n), dtype="<f4").astype(np.float32)
        return a.reshape(shape) if shape is not None else a


def _layer_bytes(layer, p):
    if isinstance(layer, LpDistLayer):
        head = struct.pack("<BIIBd", _TAG_DIST, layer.d_out, layer.d_in,
                           1 if layer.b is not None else 0, p)
        body = _pack_array(layer.W)
        if layer.b is not None:
            body += _pack_array(layer.b)
        return head + body
    if isinstance(layer, ConvLpDistLayer):
        head = struct.pack("<BIIIIIIdd", _TAG_CONV, layer.out_ch, layer.in_ch,
                           layer.kh, layer.kw, layer.stride, layer.padding,
                           layer.pad_value, p)
        return head + _pack_array(layer.K)
    if isinstance(layer, MeanShiftNorm):
        head = struct.pack("<BId", _TAG_NORM, layer.dim, layer.momentum)
        return head + _pack_array(layer.running_mean)
    if isinstance(layer, AffineLayer):
        head = struct.pack("<BIIB", _TAG_AFFINE, layer.d_out, layer.d_in,
                           _ACT[layer.activation])
        return head + _pack_array(layer.W) + _pack_array(layer.b)
    raise TypeError(f"cannot serialize layer {type(layer).__name__}")


def _read_layer(r):
    (tag,) = r.unpack("<B")
    if tag == _TAG_DIST:
        d_out, d_in, has_bias, p = r.unpack("<IIBd")
        layer = LpDistLayer(d_in, d_out, bias=bool(has_bias))
        layer.W[:] = r.array((d_out, d_in))
        if has_bias:
            layer.b[:] = r.array((d_out,))
        return layer, p
    if tag == _TAG_CONV:
        out_ch, in_ch, kh, kw, stride, pad, pv, p = r.unpack("<IIIIIIdd")
        layer = ConvLpDistLayer(in_ch, out_ch, kh, kw, stride=stride,
                                padding=pad, pad_value=pv)
        layer.K[:] = r.array((out_ch, in_ch, kh, kw))
        return layer, p
    if tag == _TAG_NORM:
        dim, momentum = r.unpack("<Id")
        layer = MeanShiftNorm(dim, momentum=momentum)
        layer.running_mean[:] = r.array((dim,))
        return layer, None
    if tag == _TAG_AFFINE:
        d_out, d_in, act = r.unpack("<IIB")
        layer = AffineLayer(d_in, d_out, activation=_ACT_INV[act])
        layer.W[:] = r.array((d_out, d_in))
        layer.b[:] = r.array((d_out,))
        return layer, None
    raise BadMagicError(f"unknown layer tag {tag}")


def network_bytes(net, train_state=None):
    if net.kind not in ("pure", "composite"):
        raise TypeError("checkpoints cover pure and composite nets only")
    for q in net.params():
        if q.dtype != np.float32:
            raise TypeError("checkpoints store float32 networks only")
    blob = MAGIC + struct.pack("<II", VERSION, len(net.layers))
    for layer in net.layers:
        blob += _layer_bytes(layer, net.p)
    if train_state is None:
        blob += struct.pack("<I", 0)
    else:
        body = struct.pack("<III", int(train_state["epoch"]),
                           int(train_state["adam_t"]),
                           len(train_state["adam_arrays"]))
        for a in train_state["adam_arrays"]:
            body += _pack_array(a)
        blob += struct.pack("<I", len(body)) + body
    return blob


def save_checkpoint(net, path, train_state=None):
    """train_state: {"epoch": int, "adam_t": int, "adam_arrays": [arrays]}"""
    with open(path, "wb") as f:
        f.write(network_bytes(net, train_state))


def load_checkpoint(path):
    """Returns (net, train_state or None)."""
    with open(path, "rb") as f:
        buf = f.read()
    r = _Reader(buf, path)
    if r.take(4) != MAGIC:
        raise BadMagicError(f"{path}: not a LIDN checkpoint")
    version, n_layers = r.unpack("<II")
    if version != VERSION:
        raise VersionError(f"{path}: version {version}, expected {VERSION}")
    layers = []
    p = np.inf
    for _ in range(n_layers):
        layer, layer_p = _read_layer(r)
        if layer_p is not None:
            p = layer_p
        layers.append(layer)
    negate = isinstance(layers[-1], LpDistLayer) and layers[-1].b is not None
    net = Network(layers, negate_output=negate, p=p)
    (train_len,) = r.unpack("<I")
    state = None
    if train_len:
        sub = _Reader(r.take(train_len), path)
        epoch, adam_t, count = sub.unpack("<III")
        arrays = [sub.array() for _ in range(count)]
        # moment arrays mirror the parameter list (m blocks then v blocks)
        shapes = [q.shape for q in net.params()] * 2
        if len(arrays) == len(shapes):
            arrays = [a.reshape(s) for a, s in zip(arrays, shapes)]
        state = {"epoch": epoch, "adam_t": adam_t, "adam_arrays": arrays}
    return net, state
