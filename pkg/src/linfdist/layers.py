"""Layer types: distance layers, mean-shift normalization, affine head.

Every layer implements ``forward(X, p, training, with_grad)`` and
``backward(up, need_input_grad, need_param_grads)`` with explicit gradient
formulas; there is no autodiff graph anywhere.  ``forward`` caches whatever
the matching backward pass needs; ``backward`` raises if no cache is
present.
"""

import numpy as np

from . import kernels
from .numerics import TRAIN_DTYPE, batch_mean


class Layer:
    def params(self):
        return []

    def grads(self):
        return []

    def zero_grads(self):
        pass


class LpDistLayer(Layer):
    """Fully connected distance layer: out[k] = ||x - W[k]||_p (+ b[k]).

    A bias is only carried by the terminal layer of a pure distance net;
    everywhere else the following mean-shift makes it redundant.
    """

    kind = "dist"

    def __init__(self, d_in, d_out, bias=False, dtype=TRAIN_DTYPE):
        self.d_in = d_in
        self.d_out = d_out
        self.W = np.zeros((d_out, d_in), dtype=dtype)
        self.b = np.zeros(d_out, dtype=dtype) if bias else None
        self.gW = np.zeros_like(self.W)
        self.gb = np.zeros_like(self.b) if bias else None
        self._cache = None

    def forward(self, X, p, training=False, with_grad=False):
        if X.ndim != 2 or X.shape[1] != self.d_in:
            raise ValueError(f"expected (N, {self.d_in}) input, got {X.shape}")
        norms, idx = kernels.lpdist_forward(X, self.W, p, with_grad=with_grad)
        if with_grad:
            self._cache = (X, float(p), norms, idx)
        out = norms if self.b is None else norms + self.b
        return out

    def backward(self, up, need_input_grad=True, need_param_grads=True):
        if self._cache is None:
            raise RuntimeError("backward without a cached forward pass")
        X, p, norms, idx = self._cache
        gX, gW = kernels.lpdist_backward(
            X, self.W, p, norms, idx, up,
            need_input=need_input_grad, need_weight=need_param_grads)
        if need_param_grads:
            self.gW += gW
            if self.b is not None:
                self.gb += up.sum(axis=0, dtype=self.gb.dtype)
        return gX

    def params(self):
        return [self.W] if self.b is None else [self.W, self.b]

    def grads(self):
        return [self.gW] if self.b is None else [self.gW, self.gb]

    def zero_grads(self):
        self.gW[:] = 0
        if self.gb is not None:
            self.gb[:] = 0


class ConvLpDistLayer(Layer):
    """Convolutional distance layer over sliding windows.

    Each output pixel is ||patch - kernel||_p with the patch flattened over
    (in_channels, kh, kw).  Out-of-image positions read ``pad_value``.
    """

    kind = "conv"
    _chunk = 16  # batch rows per im2col block, bounds temporary memory

    def __init__(self, in_ch, out_ch, kh, kw=None, stride=1, padding=0,
                 pad_value=0.0, dtype=TRAIN_DTYPE):
        kw = kh if kw is None else kw
        if min(in_ch, out_ch, kh, kw) <= 0 or stride <= 0 or padding < 0:
            raise ValueError("invalid convolution geometry")
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kh, self.kw = kh, kw
        self.stride, self.padding = stride, padding
        self.pad_value = float(pad_value)
        self.K = np.zeros((out_ch, in_ch, kh, kw), dtype=dtype)
        self.gK = np.zeros_like(self.K)
        self._cache = None

    def _kernel_matrix(self):
        return self.K.reshape(self.out_ch, -1)

    def out_shape(self, h, w):
        return kernels.conv_geometry(h, w, self.kh, self.kw, self.stride,
                                     self.padding)

    def forward(self, X, p, training=False, with_grad=False):
        if X.ndim != 4 or X.shape[1] != self.in_ch:
            raise ValueError(f"expected (N, {self.in_ch}, H, W) input, got {X.shape}")
        N, _, H, W = X.shape
        oh, ow = self.out_shape(H, W)
        Wm = self._kernel_matrix()
        out = np.empty((N, self.out_ch, oh, ow), dtype=X.dtype)
        caches = []
        for lo in range(0, N, self._chunk):
            hi = min(N, lo + self._chunk)
            cols = kernels.im2col(X[lo:hi], self.kh, self.kw, self.stride,
                                  self.padding, self.pad_value)
            flat = cols.reshape(-1, Wm.shape[1])
            norms, idx = kernels.lpdist_forward(flat, Wm, p, with_grad=with_grad)
            out[lo:hi] = norms.reshape(hi - lo, oh * ow, self.out_ch) \
                              .transpose(0, 2, 1).reshape(hi - lo, self.out_ch, oh, ow)
            if with_grad:
                caches.append((flat, norms, idx))
        if with_grad:
            self._cache = (X.shape, float(p), caches)
        return out

    def backward(self, up, need_input_grad=True, need_param_grads=True):
        if self._cache is None:
            raise RuntimeError("backward without a cached forward pass")
        shape, p, caches = self._cache
        N, _, H, W = shape
        oh, ow = self.out_shape(H, W)
        Wm = self._kernel_matrix()
        gX = np.zeros(shape, dtype=up.dtype) if need_input_grad else None
        gK_flat = self.gK.reshape(self.out_ch, -1)
        for ci, lo in enumerate(range(0, N, self._chunk)):
            hi = min(N, lo + self._chunk)
            flat, norms, idx = caches[ci]
            up_flat = up[lo:hi].reshape(hi - lo, self.out_ch, oh * ow) \
                               .transpose(0, 2, 1).reshape(-1, self.out_ch)
            g_cols, gW = kernels.lpdist_backward(
                flat, Wm, p, norms, idx, up_flat,
                need_input=need_input_grad, need_weight=need_param_grads)
            if need_param_grads:
                gK_flat += gW
            if need_input_grad:
                kernels.col2im_add(
                    g_cols.reshape(hi - lo, oh * ow, -1),
                    self.kh, self.kw, self.stride, self.padding, gX[lo:hi])
        return gX

    def params(self):
        return [self.K]

    def grads(self):
        return [self.gK]

    def zero_grads(self):
        self.gK[:] = 0


class MeanShiftNorm(Layer):
    """Per-feature mean subtraction; no scaling, no affine parameters.

    Training batches are centered on their own mean and the running mean is
    updated as an exponential moving average; inference subtracts the stored
    running mean, which keeps the layer a constant shift (1-Lipschitz).
    Channel statistics are used for 4-D feature maps.
    """

    kind = "norm"

    def __init__(self, dim, momentum=0.1, dtype=TRAIN_DTYPE):
        if not 0.0 < momentum < 1.0:
            raise ValueError("momentum must lie in (0, 1)")
        self.dim = dim
        self.momentum = momentum
        self.running_mean = np.zeros(dim, dtype=dtype)
        self.mode = "eval"
        self._cache = None

    def _axes(self, X):
        if X.ndim == 2:
            return (0,), self.running_mean
        if X.ndim == 4:
            return (0, 2, 3), self.running_mean.reshape(1, -1, 1, 1)
        raise ValueError(f"unsupported input rank {X.ndim}")

    def forward(self, X, p=None, training=False, with_grad=False):
        axes, rm = self._axes(X)
        if X.shape[1] != self.dim:
            raise ValueError(f"expected feature dim {self.dim}, got {X.shape[1]}")
        self.mode = "train" if training else "eval"
        if training:
            if X.shape[0] == 0:
                raise ValueError("cannot train mean-shift on an empty batch")
            bm = X.mean(axis=axes)
            out = X - bm.reshape(rm.shape)
            mom = np.asarray(self.momentum, dtype=self.running_mean.dtype)
            self.running_mean *= (1 - mom)
            self.running_mean += mom * bm.astype(self.running_mean.dtype)
        else:
            out = X - rm
        if with_grad:
            self._cache = (self.mode, axes, rm.shape)
        return out

    def backward(self, up, need_input_grad=True, need_param_grads=True):
        if self._cache is None:
            raise RuntimeError("backward without a cached forward pass")
        mode, axes, shape = self._cache
        if not need_input_grad:
            return None
        if mode == "train":
            # out = x - mean(x): the -1/n term flows back too
            return up - up.mean(axis=axes).reshape(shape)
        return up


class AffineLayer(Layer):
    """Conventional dense layer with an optional monotone activation."""

    kind = "affine"

    def __init__(self, d_in, d_out, activation="none", dtype=TRAIN_DTYPE):
        if activation not in ("none", "tanh"):
            raise ValueError(f"unsupported activation {activation!r}")
        self.d_in, self.d_out = d_in, d_out
        self.activation = activation
        self.W = np.zeros((d_out, d_in), dtype=dtype)
        self.b = np.zeros(d_out, dtype=dtype)
        self.gW = np.zeros_like(self.W)
        self.gb = np.zeros_like(self.b)
        self._cache = None

    def forward(self, X, p=None, training=False, with_grad=False):
        if X.ndim != 2 or X.shape[1] != self.d_in:
            raise ValueError(f"expected (N, {self.d_in}) input, got {X.shape}")
        Z = X @ self.W.T + self.b
        out = np.tanh(Z) if self.activation == "tanh" else Z
        if with_grad:
            self._cache = (X, out)
        return out

    def backward(self, up, need_input_grad=True, need_param_grads=True):
        if self._cache is None:
            raise RuntimeError("backward without a cached forward pass")
        X, out = self._cache
        dZ = up * (1.0 - out * out) if self.activation == "tanh" else up
        if need_param_grads:
            self.gW += dZ.T @ X
            self.gb += dZ.sum(axis=0, dtype=self.gb.dtype)
        if need_input_grad:
            return dZ @ self.W
        return None

    def params(self):
        return [self.W, self.b]

    def grads(self):
        return [self.gW, self.gb]

    def zero_grads(self):
        self.gW[:] = 0
        self.gb[:] = 0


# ---------------------------------------------------------------------------
# initialization

def gaussian_init(layer, rng):
    """I.i.d. standard normal weights for distance layers."""
    if isinstance(layer, LpDistLayer):
        layer.W[:] = rng.standard_normal(layer.W.shape).astype(layer.W.dtype)
        if layer.b is not None:
            layer.b[:] = 0
    elif isinstance(layer, ConvLpDistLayer):
        layer.K[:] = rng.standard_normal(layer.K.shape).astype(layer.K.dtype)
    else:
        raise TypeError("gaussian_init applies to distance layers")


def identity_init(layer, rng, c0=-10.0):
    """Gaussian init with the diagonal forced to c0.

    On inputs with small off-diagonal residuals the diagonal term
    |x_j - c0| dominates every other coordinate, so at p = inf the neuron
    outputs x_j - c0 exactly and the layer acts as an identity map up to the
    constant, which the following mean shift absorbs.
    """
    if not isinstance(layer, LpDistLayer):
        raise TypeError("identity_init applies to fully connected distance layers")
    if layer.d_in != layer.d_out:
        raise ValueError(
            f"identity_init needs a square layer, got {layer.d_out}x{layer.d_in}")
    gaussian_init(layer, rng)
    np.fill_diagonal(layer.W, layer.W.dtype.type(c0))


def affine_init(layer, rng):
    if not isinstance(layer, AffineLayer):
        raise TypeError("affine_init applies to affine layers")
    scale = 1.0 / np.sqrt(layer.d_in)
    layer.W[:] = (rng.standard_normal(layer.W.shape) * scale).astype(layer.W.dtype)
    layer.b[:] = 0


# ---------------------------------------------------------------------------
# exact base maps on a bounded box (building blocks for expressivity checks)

def build_base_map(kind, indices, d_in, box_bound, w=0.0, c=0.0,
                   negate_first=False, dtype=np.float64):
    """One distance neuron computing an exact map on ||x||_inf <= box_bound.

    kind "projection":  x_j + c            (indices = (j,))
    kind "negation":   -x_j + c            (indices = (j,))
    kind "maximum":     max(+-x_j + w, x_q) + c   (indices = (j, q))

    Returns (weight_row, bias) for an LpDistLayer evaluated at p = inf.  The
    2*box_bound offset pushes the selected coordinates above every plain
    |x_i| so the infinity norm picks them out exactly.
    """
    C = float(box_bound)
    row = np.zeros(d_in, dtype=dtype)
    bias = -2.0 * C + c
    if kind == "projection":
        (j,) = indices
        row[j] = -2.0 * C
    elif kind == "negation":
        (j,) = indices
        row[j] = 2.0 * C
    elif kind == "maximum":
        j, q = indices
        row[j] = (w + 2.0 * C) if negate_first else -(w + 2.0 * C)
        row[q] = -2.0 * C
    else:
        raise ValueError(f"unknown base map kind {kind!r}")
    return row, bias
