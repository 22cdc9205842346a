"""Dataset ingestion (IDX and CIFAR-10 binary), augmentation, metrics CSV.

Pixels are scaled to [0, 1] by /255 with no per-channel standardization:
the networks center features internally, and standardizing inputs would
change what an input-space eps means.  Gzip-compressed IDX files are
accepted transparently.
"""

import csv
import gzip
import io
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import BadMagicError, CountMismatchError, TruncatedError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

METRICS_HEADER = ("epoch", "p", "eps_train", "lr", "train_loss", "train_acc",
                  "test_acc", "pgd_acc", "certified_acc")


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64
    split: str = "train"
    name: str = ""

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise CountMismatchError(
                f"{self.images.shape[0]} images vs {self.labels.shape[0]} labels")

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def __len__(self):
        return self.images.shape[0]


def _read_bytes(path):
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw, path):
    if len(raw) < 4:
        raise TruncatedError(f"{path}: shorter than an IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    ndim = magic & 0xFF
    code = (magic >> 8) & 0xFF
    if magic >> 16 != 0 or code != 0x08 or ndim not in (1, 3):
        raise BadMagicError(f"{path}: bad IDX magic 0x{magic:08x}")
    need = 4 + 4 * ndim
    if len(raw) < need:
        raise TruncatedError(f"{path}: header cut short")
    dims = struct.unpack(f">{ndim}I", raw[4:need])
    count = int(np.prod(dims))
    if len(raw) < need + count:
        raise TruncatedError(
            f"{path}: expected {count} data bytes, found {len(raw) - need}")
    data = np.frombuffer(raw, dtype=np.uint8, count=count, offset=need)
    return magic, dims, data


def load_idx(images_path, labels_path, name="", split="train"):
    """MNIST-family loader: big-endian IDX image/label file pair."""
    magic_i, dims_i, data_i = _parse_idx(_read_bytes(images_path), images_path)
    if magic_i != IDX_IMAGES_MAGIC:
        raise BadMagicError(
            f"{images_path}: magic 0x{magic_i:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
    magic_l, dims_l, data_l = _parse_idx(_read_bytes(labels_path), labels_path)
    if magic_l != IDX_LABELS_MAGIC:
        raise BadMagicError(
            f"{labels_path}: magic 0x{magic_l:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
    n, h, w = dims_i
    if dims_l[0] != n:
        raise CountMismatchError(f"{n} images but {dims_l[0]} labels")
    images = (data_i.astype(np.float32) / 255.0).reshape(n, 1, h, w)
    labels = data_l.astype(np.int64)
    return Dataset(images, labels, split=split, name=name)


CIFAR_RECORD = 3073  # 1 label byte + 3 * 32 * 32 pixels, channel-major


def load_cifar_binary(batch_paths, name="cifar10", split="train"):
    """CIFAR-10 binary batches, concatenated in the given file order."""
    chunks = []
    labels = []
    for path in batch_paths:
        raw = _read_bytes(path)
        if len(raw) % CIFAR_RECORD:
            raise TruncatedError(
                f"{path}: size {len(raw)} is not a multiple of {CIFAR_RECORD}")
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        labels.append(rec[:, 0].astype(np.int64))
        chunks.append(rec[:, 1:].reshape(-1, 3, 32, 32))
    images = np.concatenate(chunks).astype(np.float32) / 255.0
    return Dataset(images, np.concatenate(labels), split=split, name=name)


# ---------------------------------------------------------------------------
# augmentation

@dataclass
class AugmentPolicy:
    crop_pad: int = 0
    hflip: bool = False


def hflip(batch):
    return batch[..., ::-1]


def augment(batch, policy, rng):
    """Zero-pad + random crop back to size, optional 50% horizontal flip."""
    if policy.crop_pad == 0 and not policy.hflip:
        return batch
    n, c, h, w = batch.shape
    out = batch
    if policy.crop_pad > 0:
        pad = policy.crop_pad
        padded = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=batch.dtype)
        padded[:, :, pad:pad + h, pad:pad + w] = batch
        offs = rng.integers(0, 2 * pad + 1, size=(n, 2))
        out = np.empty_like(batch)
        for i in range(n):
            oy, ox = offs[i]
            out[i] = padded[i, :, oy:oy + h, ox:ox + w]
    if policy.hflip:
        flips = rng.random(n) < 0.5
        out = out.copy() if out is batch else out
        out[flips] = out[flips][..., ::-1]
    return out


# ---------------------------------------------------------------------------
# dataset resolution by name

_IDX_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _find(path_options):
    for p in path_options:
        if os.path.exists(p):
            return p
    return None


def load_dataset(name, data_dir, split="train"):
    """Locate and load a named dataset from conventional file layouts."""
    roots = [data_dir, os.path.join(data_dir, name)]
    if name in ("mnist", "fashion"):
        img_name, lbl_name = _IDX_FILES[split]
        img = _find([os.path.join(r, img_name + ext)
                     for r in roots for ext in ("", ".gz")])
        lbl = _find([os.path.join(r, lbl_name + ext)
                     for r in roots for ext in ("", ".gz")])
        if img is None or lbl is None:
            raise FileNotFoundError(
                f"{name} {split} IDX files not found under {data_dir!r}")
        return load_idx(img, lbl, name=name, split=split)
    if name == "cifar10":
        roots.append(os.path.join(data_dir, "cifar-10-batches-bin"))
        names = ([f"data_batch_{i}.bin" for i in range(1, 6)]
                 if split == "train" else ["test_batch.bin"])
        paths = []
        for fname in names:
            p = _find([os.path.join(r, fname) for r in roots])
            if p is None:
                raise FileNotFoundError(
                    f"cifar10 file {fname} not found under {data_dir!r}")
            paths.append(p)
        return load_cifar_binary(paths, split=split)
    raise ValueError(f"unknown dataset {name!r}")


# ---------------------------------------------------------------------------
# metrics CSV

def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.6g}"


def write_metrics(path, rows):
    """Append rows to the metrics CSV, writing the header on first use."""
    fresh = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as f:
        w = csv.writer(f)
        if fresh:
            w.writerow(METRICS_HEADER)
        for row in rows:
            if isinstance(row, dict):
                row = [row[k] for k in METRICS_HEADER]
            if len(row) != len(METRICS_HEADER):
                raise ValueError(f"metrics row needs {len(METRICS_HEADER)} fields")
            w.writerow([_fmt(v) for v in row])


def read_metrics(path):
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = tuple(next(r))
        if header != METRICS_HEADER:
            raise BadMagicError(f"{path}: unexpected metrics header {header}")
        return [dict(zip(METRICS_HEADER, (float(v) for v in row))) for row in r]
