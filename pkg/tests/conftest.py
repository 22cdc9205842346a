import gzip
import struct

import numpy as np
import pytest

# summary lines registered by acceptance tests, echoed at the end of the run
ACCEPTANCE_RESULTS = []


def record_acceptance(num, name, passed, detail=""):
    line = f"ACCEPTANCE {num:02d} {name}: {'PASS' if passed else 'FAIL'}"
    if detail:
        line += f"  ({detail})"
    ACCEPTANCE_RESULTS.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(line)


# ---------------------------------------------------------------------------
# independent oracles, deliberately naive

def naive_pnorm(v, p):
    """Scalar-loop p-norm in float64 (no stabilization shortcuts beyond the
    mandatory max factorization, done with plain Python floats)."""
    vals = [abs(float(x)) for x in np.asarray(v).ravel()]
    m = max(vals) if vals else 0.0
    if m == 0.0:
        return 0.0
    if p == np.inf:
        return m
    return m * sum((a / m) ** p for a in vals) ** (1.0 / p)


def central_diff(f, x, h):
    """Central finite difference of a scalar function at scalar x."""
    return (f(x + h) - f(x - h)) / (2.0 * h)


def fd_gradient(f, arr, h=1e-6, entries=None):
    """Finite-difference gradient of scalar-valued f w.r.t. selected entries
    of arr (all entries when entries is None).  Mutates and restores arr."""
    idx = entries
    if idx is None:
        idx = list(np.ndindex(arr.shape))
    out = {}
    for ix in idx:
        old = arr[ix]
        step = h * max(1.0, abs(float(old)))
        arr[ix] = old + step
        fp = f()
        arr[ix] = old - step
        fm = f()
        arr[ix] = old
        out[ix] = (fp - fm) / (2.0 * step)
    return out


def write_idx_files(tmp_path, images, labels, gz=False, image_magic=0x00000803,
                    label_magic=0x00000801):
    """Serialize uint8 images (N, H, W) and labels (N,) as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, h, w = images.shape
    img_bytes = struct.pack(">IIII", image_magic, n, h, w) + images.tobytes()
    lbl_bytes = struct.pack(">II", label_magic, labels.shape[0]) + labels.tobytes()
    suffix = ".gz" if gz else ""
    ip = tmp_path / f"images-idx3-ubyte{suffix}"
    lp = tmp_path / f"labels-idx1-ubyte{suffix}"
    ip.write_bytes(gzip.compress(img_bytes) if gz else img_bytes)
    lp.write_bytes(gzip.compress(lbl_bytes) if gz else lbl_bytes)
    return str(ip), str(lp)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
