"""Batched distance-layer kernels.

The hot loops of the whole artifact live here: for a batch X (N, d_in) and
weight rows W (d_out, d_in) they evaluate

    norms[n, k] = || X[n] - W[k] ||_p

and its exact gradients, for p in [2, inf].  Three regimes:

* p = inf: max / argmax scans (argmax packed into an int64 sort key so the
  reduction vectorizes; ties resolve to the lowest index).
* p = 8: repeated squaring (the common starting exponent).
* general finite p: u**p = exp2(p*log2(u)) with polynomial log2/exp2 on the
  float bit patterns.  All ratios u lie in [0, 1] so the power can only
  underflow; underflow is masked to zero.  Polynomial max error ~2e-7
  relative, which after the 1/p root is far below float32 resolution.

Weight gradients accumulate into a fixed number of batch-chunk partials that
are reduced in a fixed order, so results are bit-identical regardless of
thread count.  Float64 inputs (and p < 2) take the plain NumPy reference
path, which is also the exactness oracle for the fast kernels in the tests.

``LINFDIST_THREADS`` caps the numba thread pool; ``LINFDIST_NO_NUMBA=1``
forces the reference path everywhere.
"""

import os

import numpy as np

_FORCE_REF = os.environ.get("LINFDIST_NO_NUMBA", "") not in ("", "0")

try:
    import numba
    from numba import njit, prange

    _threads = os.environ.get("LINFDIST_THREADS")
    if _threads:
        numba.set_num_threads(max(1, min(int(_threads), numba.config.NUMBA_NUM_THREADS)))
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*a, **k):
        def deco(f):
            return f
        return deco

    prange = range

_BLK = 512       # block length of the vectorized power pipeline
_NCHUNK = 8      # fixed batch-chunk count for deterministic weight grads

# log2(t) ~ poly(t-1) on [1, 2), minimax-fit degree 8, max abs err 1.3e-7
_L8, _L7, _L6, _L5, _L4, _L3, _L2, _L1, _L0 = (
    -0.008764118701097534, 0.04965493975172933, -0.13317910756219248,
    0.23773048904384508, -0.34507803892683675, 0.4780134786370708,
    -0.7210605728590371, 1.4426827047486261, 1.3126705034061104e-07)
# 2**f ~ poly(f) on [0, 1), degree 6, max rel err 6.2e-9
_E6, _E5, _E4, _E3, _E2, _E1, _E0 = (
    0.00021871215673483293, 0.0012382420768198132, 0.00968618686665591,
    0.05547891136813343, 0.24023109731360856, 0.693146837597305,
    1.0000000061637553)


@njit(cache=True)
def _new_ws():
    uf = np.empty(_BLK, np.float32)
    ef = np.empty(_BLK, np.float32)
    mi = np.empty(_BLK, np.int32)
    yf = np.empty(_BLK, np.float32)
    wi = np.empty(_BLK, np.int32)
    return uf, uf.view(np.int32), ef, mi, mi.view(np.float32), yf, wi, wi.view(np.float32)


@njit(cache=True, fastmath=True, inline="always")
def _pow_block(ws, c, pf):
    """In-place: ws.uf[:c] <- uf[:c] ** pf, for ratios in [0, 1], pf >= 1."""
    uf, ui, ef, mi, mf, yf, wi, wf = ws
    if pf == np.float32(8.0):
        for b in range(c):
            u = uf[b]
            t = u * u
            t = t * t
            uf[b] = t * t
        return
    if pf == np.float32(7.0):
        for b in range(c):
            u = uf[b]
            t2 = u * u
            t4 = t2 * t2
            uf[b] = t4 * t2 * u
        return
    # split float bits into exponent and mantissa in [1, 2)
    for b in range(c):
        bits = ui[b]
        ef[b] = np.float32((bits >> 23) - 127)
        mi[b] = (bits & 0x007FFFFF) | 0x3F800000
    for b in range(c):
        t = mf[b] - np.float32(1.0)
        l2 = np.float32(_L8)
        l2 = l2 * t + np.float32(_L7)
        l2 = l2 * t + np.float32(_L6)
        l2 = l2 * t + np.float32(_L5)
        l2 = l2 * t + np.float32(_L4)
        l2 = l2 * t + np.float32(_L3)
        l2 = l2 * t + np.float32(_L2)
        l2 = l2 * t + np.float32(_L1)
        l2 = l2 * t + np.float32(_L0)
        yf[b] = pf * (ef[b] + l2)
    for b in range(c):
        y = yf[b]
        z = y if y > np.float32(-128.0) else np.float32(-128.0)
        k = np.int32(np.floor(z))
        f = z - np.float32(k)
        q = np.float32(_E6)
        q = q * f + np.float32(_E5)
        q = q * f + np.float32(_E4)
        q = q * f + np.float32(_E3)
        q = q * f + np.float32(_E2)
        q = q * f + np.float32(_E1)
        q = q * f + np.float32(_E0)
        k2 = k if k > np.int32(-127) else np.int32(-127)
        wi[b] = (k2 + 127) << 23
        ef[b] = q if y > np.float32(-126.0) else np.float32(0.0)
    for b in range(c):
        uf[b] = wf[b] * ef[b]


@njit(cache=True, fastmath=True, parallel=True)
def _fwd_pow(X, W, p, out):
    N, di = X.shape
    do = W.shape[0]
    pf = np.float32(p)
    inv_p = np.float32(1.0 / p)
    for n in prange(N):
        ws = _new_ws()
        uf = ws[0]
        x = X[n]
        for k in range(do):
            w = W[k]
            m = np.float32(0.0)
            for i in range(di):
                a = abs(x[i] - w[i])
                if a > m:
                    m = a
            if m == np.float32(0.0):
                out[n, k] = np.float32(0.0)
                continue
            inv_m = np.float32(1.0) / m
            s = np.float32(0.0)
            for i0 in range(0, di, _BLK):
                c = min(_BLK, di - i0)
                for b in range(c):
                    uf[b] = abs(x[i0 + b] - w[i0 + b]) * inv_m
                _pow_block(ws, c, pf)
                for b in range(c):
                    s += uf[b]
            out[n, k] = m * s ** inv_p


@njit(cache=True, fastmath=True, parallel=True)
def _bwd_pow_input(X, W, norms, up, p, gX):
    N, di = X.shape
    do = W.shape[0]
    qf = np.float32(p - 1.0)
    for n in prange(N):
        ws = _new_ws()
        uf = ws[0]
        x = X[n]
        g = gX[n]
        for k in range(do):
            u = up[n, k]
            r = norms[n, k]
            if u == np.float32(0.0) or r == np.float32(0.0):
                continue
            w = W[k]
            inv_r = np.float32(1.0) / r
            for i0 in range(0, di, _BLK):
                c = min(_BLK, di - i0)
                for b in range(c):
                    uf[b] = abs(x[i0 + b] - w[i0 + b]) * inv_r
                _pow_block(ws, c, qf)
                for b in range(c):
                    d = x[i0 + b] - w[i0 + b]
                    s = np.float32(1.0) if d > 0 else (np.float32(-1.0) if d < 0 else np.float32(0.0))
                    g[i0 + b] += u * s * uf[b]


@njit(cache=True, fastmath=True, parallel=True)
def _bwd_pow_weight(X, W, norms, up, p, gw_part):
    N, di = X.shape
    do = W.shape[0]
    qf = np.float32(p - 1.0)
    step = (N + _NCHUNK - 1) // _NCHUNK
    for cidx in prange(_NCHUNK):
        ws = _new_ws()
        uf = ws[0]
        lo = cidx * step
        hi = min(N, lo + step)
        for n in range(lo, hi):
            x = X[n]
            for k in range(do):
                u = up[n, k]
                r = norms[n, k]
                if u == np.float32(0.0) or r == np.float32(0.0):
                    continue
                w = W[k]
                gw = gw_part[cidx, k]
                inv_r = np.float32(1.0) / r
                for i0 in range(0, di, _BLK):
                    c = min(_BLK, di - i0)
                    for b in range(c):
                        uf[b] = abs(x[i0 + b] - w[i0 + b]) * inv_r
                    _pow_block(ws, c, qf)
                    for b in range(c):
                        d = x[i0 + b] - w[i0 + b]
                        s = np.float32(1.0) if d > 0 else (np.float32(-1.0) if d < 0 else np.float32(0.0))
                        gw[i0 + b] -= u * s * uf[b]


@njit(cache=True, fastmath=True, parallel=True)
def _bwd_pow_fused(X, W, norms, up, p, gX, gw_part):
    # one pass computes the gradient factor and feeds both accumulators;
    # chunks own disjoint row ranges, so neither target races
    N, di = X.shape
    do = W.shape[0]
    qf = np.float32(p - 1.0)
    step = (N + _NCHUNK - 1) // _NCHUNK
    for cidx in prange(_NCHUNK):
        ws = _new_ws()
        uf = ws[0]
        lo = cidx * step
        hi = min(N, lo + step)
        for n in range(lo, hi):
            x = X[n]
            g = gX[n]
            for k in range(do):
                u = up[n, k]
                r = norms[n, k]
                if u == np.float32(0.0) or r == np.float32(0.0):
                    continue
                w = W[k]
                gw = gw_part[cidx, k]
                inv_r = np.float32(1.0) / r
                for i0 in range(0, di, _BLK):
                    c = min(_BLK, di - i0)
                    for b in range(c):
                        uf[b] = abs(x[i0 + b] - w[i0 + b]) * inv_r
                    _pow_block(ws, c, qf)
                    for b in range(c):
                        d = x[i0 + b] - w[i0 + b]
                        s = np.float32(1.0) if d > 0 else (np.float32(-1.0) if d < 0 else np.float32(0.0))
                        t = u * s * uf[b]
                        g[i0 + b] += t
                        gw[i0 + b] -= t


@njit(cache=True, parallel=True)
def _fwd_max_arg(X, W, out, idx):
    # nonnegative float32 bit patterns sort like their values, so max over
    # (bits << 32) | (di - i) finds the max with lowest-index tie-break
    N, di = X.shape
    do = W.shape[0]
    for n in prange(N):
        fb = np.empty(_BLK, np.float32)
        ib = fb.view(np.int32)
        x = X[n]
        for k in range(do):
            w = W[k]
            key = np.int64(-1)
            for i0 in range(0, di, _BLK):
                c = min(_BLK, di - i0)
                for b in range(c):
                    fb[b] = abs(x[i0 + b] - w[i0 + b])
                for b in range(c):
                    kk = (np.int64(ib[b]) << 32) | np.int64(di - (i0 + b))
                    if kk > key:
                        key = kk
            best = di - np.int32(key & np.int64(0xFFFFFFFF))
            idx[n, k] = best
            out[n, k] = abs(x[best] - w[best])


@njit(cache=True, parallel=True)
def _bwd_inf_input(X, W, idx, up, gX):
    N = X.shape[0]
    do = W.shape[0]
    for n in prange(N):
        for k in range(do):
            u = up[n, k]
            if u == np.float32(0.0):
                continue
            i = idx[n, k]
            d = X[n, i] - W[k, i]
            if d > 0:
                gX[n, i] += u
            elif d < 0:
                gX[n, i] -= u


@njit(cache=True, parallel=True)
def _bwd_inf_weight(X, W, idx, up, gw_part):
    N = X.shape[0]
    do = W.shape[0]
    step = (N + _NCHUNK - 1) // _NCHUNK
    for cidx in prange(_NCHUNK):
        lo = cidx * step
        hi = min(N, lo + step)
        for n in range(lo, hi):
            for k in range(do):
                u = up[n, k]
                if u == np.float32(0.0):
                    continue
                i = idx[n, k]
                d = X[n, i] - W[k, i]
                if d > 0:
                    gw_part[cidx, k, i] -= u
                elif d < 0:
                    gw_part[cidx, k, i] += u


# ---------------------------------------------------------------------------
# reference path (float64, p < 2, or numba disabled)

def _ref_forward(X, W, p, chunk=128):
    N = X.shape[0]
    do = W.shape[0]
    norms = np.empty((N, do), dtype=X.dtype)
    idx = np.empty((N, do), dtype=np.int32) if np.isinf(p) else None
    for lo in range(0, N, chunk):
        hi = min(N, lo + chunk)
        A = np.abs(X[lo:hi, None, :] - W[None, :, :])
        m = A.max(axis=2)
        if np.isinf(p):
            norms[lo:hi] = m
            idx[lo:hi] = A.argmax(axis=2)
        else:
            safe = np.where(m == 0, 1, m)
            s = ((A / safe[:, :, None]) ** p).sum(axis=2)
            norms[lo:hi] = m * s ** (1.0 / p)
    return norms, idx


def _ref_backward(X, W, p, norms, idx, up, need_input, need_weight, chunk=128):
    N, di = X.shape
    do = W.shape[0]
    gX = np.zeros_like(X) if need_input else None
    gW = np.zeros_like(W) if need_weight else None
    for lo in range(0, N, chunk):
        hi = min(N, lo + chunk)
        D = X[lo:hi, None, :] - W[None, :, :]
        if np.isinf(p):
            G = np.zeros_like(D)
            ii = idx[lo:hi]
            nn, kk = np.indices(ii.shape)
            G[nn, kk, ii] = np.sign(D[nn, kk, ii])
        else:
            r = norms[lo:hi]
            safe = np.where(r == 0, 1, r)
            G = np.sign(D) * (np.abs(D) / safe[:, :, None]) ** (p - 1.0)
            G[r == 0] = 0
        T = up[lo:hi, :, None] * G
        if need_input:
            gX[lo:hi] = T.sum(axis=1)
        if need_weight:
            gW -= T.sum(axis=0)
    return gX, gW


# ---------------------------------------------------------------------------
# dispatch

def _fast_ok(X, p):
    return (HAVE_NUMBA and not _FORCE_REF and X.dtype == np.float32
            and (np.isinf(p) or p >= 2.0))


def lpdist_forward(X, W, p, with_grad=False):
    """norms[n, k] = ||X[n] - W[k]||_p.  Returns (norms, argmax_idx_or_None).

    ``with_grad`` requests the argmax cache needed by the p = inf backward.
    """
    X = np.ascontiguousarray(X)
    W = np.ascontiguousarray(W)
    if _fast_ok(X, p):
        N, do = X.shape[0], W.shape[0]
        norms = np.empty((N, do), dtype=np.float32)
        if np.isinf(p):
            idx = np.empty((N, do), dtype=np.int32)
            _fwd_max_arg(X, W, norms, idx)
            return norms, (idx if with_grad else None)
        _fwd_pow(X, W, float(p), norms)
        return norms, None
    return _ref_forward(X, W, p)


def lpdist_backward(X, W, p, norms, idx, up, need_input=True, need_weight=True):
    """Gradients of sum(up * norms) w.r.t. X and W."""
    X = np.ascontiguousarray(X)
    W = np.ascontiguousarray(W)
    up = np.ascontiguousarray(up, dtype=X.dtype)
    if _fast_ok(X, p):
        gX = gW = None
        if np.isinf(p):
            if idx is None:
                _, idx = _ref_forward(X, W, p)
            if need_input:
                gX = np.zeros_like(X)
                _bwd_inf_input(X, W, idx, up, gX)
            if need_weight:
                part = np.zeros((_NCHUNK,) + W.shape, dtype=np.float32)
                _bwd_inf_weight(X, W, idx, up, part)
                gW = part.sum(axis=0)
        else:
            if need_input and need_weight:
                gX = np.zeros_like(X)
                part = np.zeros((_NCHUNK,) + W.shape, dtype=np.float32)
                _bwd_pow_fused(X, W, norms, up, float(p), gX, part)
                gW = part.sum(axis=0)
            elif need_input:
                gX = np.zeros_like(X)
                _bwd_pow_input(X, W, norms, up, float(p), gX)
            elif need_weight:
                part = np.zeros((_NCHUNK,) + W.shape, dtype=np.float32)
                _bwd_pow_weight(X, W, norms, up, float(p), part)
                gW = part.sum(axis=0)
        return gX, gW
    if np.isinf(p) and idx is None:
        _, idx = _ref_forward(X, W, p)
    return _ref_backward(X, W, p, norms, idx, up, need_input, need_weight)


# ---------------------------------------------------------------------------
# sliding windows for convolutional distance layers

def conv_geometry(h, w, kh, kw, stride, padding):
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ValueError(
            f"kernel {kh}x{kw} stride {stride} padding {padding} does not fit "
            f"a {h}x{w} input")
    return oh, ow


@njit(cache=True, parallel=True)
def _im2col(X, kh, kw, stride, padding, pad_value, out):
    N, C, H, W = X.shape
    oh = (H + 2 * padding - kh) // stride + 1
    ow = (W + 2 * padding - kw) // stride + 1
    for n in prange(N):
        for oy in range(oh):
            for ox in range(ow):
                col = out[n, oy * ow + ox]
                t = 0
                for ch in range(C):
                    for dy in range(kh):
                        y = oy * stride + dy - padding
                        for dx in range(kw):
                            x = ox * stride + dx - padding
                            if 0 <= y < H and 0 <= x < W:
                                col[t] = X[n, ch, y, x]
                            else:
                                col[t] = pad_value
                            t += 1


@njit(cache=True, parallel=True)
def _col2im_add(cols, kh, kw, stride, padding, gX):
    N, C, H, W = gX.shape
    oh = (H + 2 * padding - kh) // stride + 1
    ow = (W + 2 * padding - kw) // stride + 1
    for n in prange(N):
        for oy in range(oh):
            for ox in range(ow):
                col = cols[n, oy * ow + ox]
                t = 0
                for ch in range(C):
                    for dy in range(kh):
                        y = oy * stride + dy - padding
                        for dx in range(kw):
                            x = ox * stride + dx - padding
                            if 0 <= y < H and 0 <= x < W:
                                gX[n, ch, y, x] += col[t]
                            t += 1


def _im2col_py(X, kh, kw, stride, padding, pad_value, out):
    N, C, H, W = X.shape
    oh, ow = conv_geometry(H, W, kh, kw, stride, padding)
    P = np.full((N, C, H + 2 * padding, W + 2 * padding), pad_value, dtype=X.dtype)
    P[:, :, padding:padding + H, padding:padding + W] = X
    for oy in range(oh):
        for ox in range(ow):
            patch = P[:, :, oy * stride:oy * stride + kh, ox * stride:ox * stride + kw]
            out[:, oy * ow + ox, :] = patch.reshape(N, -1)


def _col2im_add_py(cols, kh, kw, stride, padding, gX):
    N, C, H, W = gX.shape
    oh, ow = conv_geometry(H, W, kh, kw, stride, padding)
    GP = np.zeros((N, C, H + 2 * padding, W + 2 * padding), dtype=gX.dtype)
    for oy in range(oh):
        for ox in range(ow):
            GP[:, :, oy * stride:oy * stride + kh, ox * stride:ox * stride + kw] += \
                cols[:, oy * ow + ox, :].reshape(N, C, kh, kw)
    gX += GP[:, :, padding:padding + H, padding:padding + W]


def im2col(X, kh, kw, stride, padding, pad_value):
    X = np.ascontiguousarray(X)
    N, C, H, W = X.shape
    oh, ow = conv_geometry(H, W, kh, kw, stride, padding)
    out = np.empty((N, oh * ow, C * kh * kw), dtype=X.dtype)
    if HAVE_NUMBA and not _FORCE_REF and X.dtype == np.float32:
        _im2col(X, kh, kw, stride, padding, X.dtype.type(pad_value), out)
    else:
        _im2col_py(X, kh, kw, stride, padding, pad_value, out)
    return out


def col2im_add(cols, kh, kw, stride, padding, gX):
    cols = np.ascontiguousarray(cols)
    if HAVE_NUMBA and not _FORCE_REF and cols.dtype == np.float32:
        _col2im_add(cols, kh, kw, stride, padding, gX)
    else:
        _col2im_add_py(cols, kh, kw, stride, padding, gX)
