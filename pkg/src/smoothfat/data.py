"""Datasets: IDX image/label files, synthetic Gaussian blobs, deterministic batching."""

import gzip
import logging
import os
import struct
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Malformed IDX file. ``position`` is the byte offset where parsing failed."""

    def __init__(self, path, position, message):
        super().__init__(f"{path}: byte {position}: {message}")
        self.path = path
        self.position = position


@dataclass
class Dataset:
    images: np.ndarray  # [N, *input_shape], float32 in [0, 1]
    labels: np.ndarray  # [N], int64 in [0, num_classes)
    num_classes: int

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.validate()

    def validate(self):
        n = len(self.images)
        if n < 1:
            raise ValueError("dataset is empty")
        if self.labels.shape != (n,):
            raise ValueError(f"{n} images but labels have shape {self.labels.shape}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if self.images.min() < 0 or self.images.max() > 1:
            raise ValueError("pixel values must lie in [0, 1]")

    def __len__(self):
        return len(self.labels)

    @property
    def input_shape(self):
        return self.images.shape[1:]

    def subset(self, indices):
        indices = np.asarray(indices)
        return Dataset(self.images[indices], self.labels[indices], self.num_classes)


# ---------------------------------------------------------------------------
# IDX
# ---------------------------------------------------------------------------

def _read_bytes(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(path, raw, magic):
    if len(raw) < 4:
        raise IdxFormatError(path, len(raw), "truncated magic number")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise IdxFormatError(path, 0, f"bad magic 0x{found:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    end = 4 + 4 * ndim
    if len(raw) < end:
        raise IdxFormatError(path, len(raw), "truncated dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:end])
    count = int(np.prod(dims))
    if len(raw) < end + count:
        raise IdxFormatError(path, len(raw), f"truncated payload: need {count} bytes after header")
    if len(raw) > end + count:
        raise IdxFormatError(path, end + count, "trailing bytes after payload")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=end).reshape(dims)


def load_idx(images_path, labels_path, num_classes=10):
    """Read an IDX image/label pair (optionally gzipped). Pixels are scaled to [0, 1].

    Images come back as [N, 1, H, W] so they feed the CNN directly.
    """
    imgs = _parse_idx(images_path, _read_bytes(images_path), IDX_IMAGES_MAGIC)
    labels = _parse_idx(labels_path, _read_bytes(labels_path), IDX_LABELS_MAGIC)
    if len(imgs) != len(labels):
        raise IdxFormatError(labels_path, 4, f"label count {len(labels)} != image count {len(imgs)}")
    bad = np.flatnonzero(labels >= num_classes)
    if bad.size:
        # 8-byte header precedes the label bytes
        raise IdxFormatError(labels_path, 8 + int(bad[0]),
                             f"label {labels[bad[0]]} out of range for {num_classes} classes")
    images = (imgs.astype(np.float32) / np.float32(255.0))[:, None, :, :]
    return Dataset(images, labels.astype(np.int64), num_classes)


def write_idx(dataset, images_path, labels_path):
    """Dump a dataset in IDX format. Pixels are quantized to bytes; ``.gz`` paths are gzipped.

    Images must be [N, H, W] or [N, 1, H, W].
    """
    imgs = dataset.images
    if imgs.ndim == 4 and imgs.shape[1] == 1:
        imgs = imgs[:, 0]
    if imgs.ndim != 3:
        raise ValueError(f"IDX images must be [N, H, W], got {dataset.images.shape}")
    if dataset.num_classes > 256:
        raise ValueError("IDX labels are single bytes")
    pix = np.rint(imgs * 255.0).astype(np.uint8)
    n, h, w = pix.shape
    img_blob = struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w) + pix.tobytes()
    lab_blob = struct.pack(">II", IDX_LABELS_MAGIC, n) + dataset.labels.astype(np.uint8).tobytes()
    for path, blob in ((images_path, img_blob), (labels_path, lab_blob)):
        if str(path).endswith(".gz"):
            # mtime=0 keeps the archive byte-reproducible
            blob = gzip.compress(blob, mtime=0)
        with open(path, "wb") as fh:
            fh.write(blob)


def load_idx_dir(directory, split, num_classes=10):
    """Load ``{split}-images-idx3-ubyte[.gz]`` / ``{split}-labels-idx1-ubyte[.gz]`` from a directory."""
    paths = []
    for stem in (f"{split}-images-idx3-ubyte", f"{split}-labels-idx1-ubyte"):
        for suffix in ("", ".gz"):
            p = os.path.join(directory, stem + suffix)
            if os.path.exists(p):
                paths.append(p)
                break
        else:
            raise FileNotFoundError(os.path.join(directory, stem))
    return load_idx(*paths, num_classes=num_classes)


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

def make_blobs(num_classes, per_class, dim, separation, seed, noise=0.1):
    """Isotropic Gaussian classes around distinct centers, clipped to [0, 1].

    Centers sit at ``0.5 + separation / 2 * u_c`` for random unit vectors
    ``u_c``, so the mean pairwise center gap grows linearly with ``separation``.
    """
    if separation <= 0:
        raise ValueError("separation must be positive")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((num_classes, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    centers = 0.5 + 0.5 * separation * dirs
    labels = np.repeat(np.arange(num_classes), per_class)
    images = centers[labels] + noise * rng.standard_normal((len(labels), dim))
    return Dataset(np.clip(images, 0.0, 1.0), labels, num_classes)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BatchPlan:
    seed: int
    batch_size: int

    def permutation(self, n, epoch):
        # epoch is mixed into the seed sequence so every epoch gets its own order
        return np.random.default_rng([self.seed, epoch]).permutation(n)


def batches(dataset, plan, epoch):
    """Yield ``(indices, images, labels)`` covering every sample exactly once.

    The final partial batch is kept.
    """
    n = len(dataset)
    if plan.batch_size < 1 or plan.batch_size > n:
        raise ValueError(f"batch size {plan.batch_size} not in [1, {n}]")
    perm = plan.permutation(n, epoch)
    for start in range(0, n, plan.batch_size):
        idx = perm[start:start + plan.batch_size]
        yield idx, dataset.images[idx], dataset.labels[idx]
