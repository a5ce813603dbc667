"""Dataset ingestion and image persistence.

Canonical input is the IDX binary format (big-endian headers, magic 2051
for image files and 2049 for label files).  Pixels are scaled to [0, 1] on
load; images are carried as float32 arrays of shape (N, 1, 28, 28).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import IdxCountError, IdxMagicError, IdxTruncatedError

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049
N_CLASSES = 10


@dataclass
class Dataset:
    """Supervised image set: pixels in [0, 1], labels in [0, 10)."""

    images: np.ndarray  # (N, 1, H, W) float32
    labels: np.ndarray  # (N,) int64
    split_tag: str = "train"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise IdxCountError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )

    def __len__(self):
        return len(self.images)

    def image(self, i: int) -> np.ndarray:
        return self.images[i]


def _read_be32(f, what: str) -> int:
    raw = f.read(4)
    if len(raw) != 4:
        raise IdxTruncatedError(f"file ended while reading {what}")
    return struct.unpack(">I", raw)[0]


def load_idx(images_path, labels_path, split_tag: str = "train") -> Dataset:
    """Parse an IDX image/label file pair into a Dataset.

    Raises IdxMagicError on a bad magic number, IdxTruncatedError on a short
    payload, and IdxCountError when the two files disagree on item count.
    """
    with open(images_path, "rb") as f:
        magic = _read_be32(f, "image magic")
        if magic != IMAGE_MAGIC:
            raise IdxMagicError(f"image file magic {magic}, expected {IMAGE_MAGIC}")
        count = _read_be32(f, "image count")
        rows = _read_be32(f, "row count")
        cols = _read_be32(f, "column count")
        payload = f.read(count * rows * cols)
        if len(payload) < count * rows * cols:
            raise IdxTruncatedError(
                f"image payload holds {len(payload)} bytes, header promises {count * rows * cols}"
            )
    raw = np.frombuffer(payload, dtype=np.uint8).reshape(count, 1, rows, cols)

    with open(labels_path, "rb") as f:
        magic = _read_be32(f, "label magic")
        if magic != LABEL_MAGIC:
            raise IdxMagicError(f"label file magic {magic}, expected {LABEL_MAGIC}")
        n_labels = _read_be32(f, "label count")
        label_payload = f.read(n_labels)
        if len(label_payload) < n_labels:
            raise IdxTruncatedError(
                f"label payload holds {len(label_payload)} bytes, header promises {n_labels}"
            )
    if n_labels != count:
        raise IdxCountError(f"{count} images but {n_labels} labels")
    labels = np.frombuffer(label_payload, dtype=np.uint8).astype(np.int64)

    images = raw.astype(np.float32) / 255.0
    return Dataset(images=images, labels=labels, split_tag=split_tag)


def save_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray):
    """Write images (uint8 or [0,1] floats) and labels as an IDX pair."""
    arr = np.asarray(images)
    if arr.dtype != np.uint8:
        arr = quantize(arr)
    if arr.ndim == 4:
        arr = arr[:, 0]
    n, rows, cols = arr.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols))
        f.write(arr.tobytes())
    lab = np.asarray(labels, dtype=np.uint8)
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, len(lab)))
        f.write(lab.tobytes())


def quantize(img: np.ndarray) -> np.ndarray:
    """[0,1] floats to bytes, rounding half up (0.5 -> 128)."""
    v = np.asarray(img, dtype=np.float64)
    if v.min() < 0.0 or v.max() > 1.0:
        raise ValueError(
            f"pixel values must lie in [0, 1], got range [{v.min():g}, {v.max():g}]"
        )
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def save_image(img: np.ndarray, path, format: str | None = None):
    """Write a [0,1] grayscale image as binary PGM (P5) or 8-bit PNG.

    The format defaults to the file suffix.  Quantization is round-half-up,
    so a save/load round trip reproduces the quantized bytes exactly.
    """
    path = str(path)
    fmt = format or path.rsplit(".", 1)[-1].lower()
    arr = np.asarray(img)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 2:
        raise ValueError(f"expected a single-channel image, got shape {arr.shape}")
    b = quantize(arr)
    if fmt == "pgm":
        h, w = b.shape
        with open(path, "wb") as f:
            f.write(b"P5\n%d %d\n255\n" % (w, h))
            f.write(b.tobytes())
    elif fmt == "png":
        Image.fromarray(b, mode="L").save(path)
    else:
        raise ValueError(f"unknown image format: {fmt!r} (expected 'pgm' or 'png')")


def load_image(path) -> np.ndarray:
    """Read a PGM/PNG grayscale image back to a (1, H, W) float32 in [0,1]."""
    path = str(path)
    if path.endswith(".f32"):
        flat = np.fromfile(path, dtype="<f4")
        side = int(np.sqrt(flat.size))
        return flat.reshape(1, side, side).astype(np.float32)
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float32) / 255.0
    return arr[None]


def subset(ds: Dataset, n: int, seed: int) -> Dataset:
    """Seeded sample of n items without replacement, preserving the split tag."""
    if not 0 < n <= len(ds):
        raise ValueError(f"subset size {n} out of range (dataset holds {len(ds)})")
    rng = np.random.default_rng(seed)
    idx = rng.permutation(len(ds))[:n]
    return Dataset(images=ds.images[idx], labels=ds.labels[idx], split_tag=ds.split_tag)
