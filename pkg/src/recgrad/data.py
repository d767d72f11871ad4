"""Dataset ingestion: IDX binary files, subsetting, synthetic generation.

The IDX container (the standard MNIST distribution format) is parsed
bit-exactly: big-endian 32-bit magic 0x00000803 for images (count, rows,
cols, then count*rows*cols unsigned bytes) and 0x00000801 for labels (count,
then count bytes).  Pixels are scaled by exactly 1/255 into [0, 1].
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sampling import RngStream, sample_batch

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Raised when an IDX file fails structural validation."""


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    name: str

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise ValueError(f"features must be a nonempty n x d matrix, got shape {self.features.shape}")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite entries")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must have one entry per feature row")
        if self.labels.size and int(self.labels.min()) < 0:
            raise ValueError("labels must be nonnegative class indices")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


def _read_exact(f, count: int, path, what: str) -> bytes:
    data = f.read(count)
    if len(data) != count:
        raise IdxFormatError(f"{path}: truncated file, expected {count} bytes for {what}, got {len(data)}")
    return data


def _open_idx(path: Path):
    # the standard distribution ships gzipped; sniff the two-byte magic
    with open(path, "rb") as probe:
        gzipped = probe.read(2) == b"\x1f\x8b"
    return gzip.open(path, "rb") if gzipped else open(path, "rb")


def load_idx(images_path, labels_path, name: str | None = None) -> Dataset:
    """Load an IDX image/label file pair (plain or gzipped) into a Dataset.

    Pixels map to doubles as byte/255; image and label counts must agree.
    """
    images_path, labels_path = Path(images_path), Path(labels_path)

    with _open_idx(images_path) as f:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, images_path, "image header"))
        if magic != IMAGES_MAGIC:
            raise IdxFormatError(
                f"{images_path}: bad image magic, expected {IMAGES_MAGIC:#010x}, got {magic:#010x}"
            )
        pixels = np.frombuffer(
            _read_exact(f, count * rows * cols, images_path, f"{count} images of {rows}x{cols}"),
            dtype=np.uint8,
        )

    with _open_idx(labels_path) as f:
        magic, label_count = struct.unpack(">II", _read_exact(f, 8, labels_path, "label header"))
        if magic != LABELS_MAGIC:
            raise IdxFormatError(
                f"{labels_path}: bad label magic, expected {LABELS_MAGIC:#010x}, got {magic:#010x}"
            )
        labels = np.frombuffer(_read_exact(f, label_count, labels_path, f"{label_count} labels"), dtype=np.uint8)

    if count != label_count:
        raise IdxFormatError(
            f"image count {count} ({images_path}) does not match label count {label_count} ({labels_path})"
        )

    features = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    return Dataset(features=features, labels=labels.astype(np.int64), name=name or images_path.stem)


def write_idx(dataset: Dataset, images_path, labels_path, rows: int, cols: int) -> None:
    """Encode a Dataset back into the IDX pair (features must lie in [0, 1]).

    Pixels are written as round(value * 255); datasets that originated from
    IDX files round-trip bit-identically.
    """
    if dataset.d != rows * cols:
        raise ValueError(f"dataset dimension {dataset.d} does not factor as {rows}x{cols}")
    if dataset.features.min() < 0.0 or dataset.features.max() > 1.0:
        raise ValueError("features must lie in [0, 1] to encode as bytes")
    pixels = np.rint(dataset.features * 255.0).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGES_MAGIC, dataset.n, rows, cols))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", LABELS_MAGIC, dataset.n))
        f.write(dataset.labels.astype(np.uint8).tobytes())


def subset(ds: Dataset, k: int, seed: int) -> Dataset:
    """k examples drawn uniformly without replacement, deterministic given seed."""
    if not 1 <= k <= ds.n:
        raise ValueError(f"subset size must satisfy 1 <= k <= {ds.n}, got {k}")
    idx = sample_batch(RngStream(seed, "subset"), ds.n, k)
    return Dataset(features=ds.features[idx], labels=ds.labels[idx], name=f"{ds.name}-subset{k}")


def make_class_images(
    n: int,
    rows: int,
    cols: int,
    n_classes: int,
    seed: int,
    noise: float = 0.45,
    amplitude: float = 0.45,
    label_noise: float = 0.25,
) -> Dataset:
    """Deterministic multiclass image dataset for data-free benchmark runs.

    Each class gets a smooth template (a sum of seeded Gaussian bumps on the
    pixel grid, partly shared between classes so they overlap); examples add
    Gaussian pixel noise and a fraction of corrupted labels, then clip to
    [0, 1] and quantize to the byte grid, so writing to IDX and re-reading is
    exact.  Label corruption keeps per-example gradients in conflict near the
    optimum, giving the stochastic estimators realistic variance.
    """
    if n < 1 or n_classes < 2:
        raise ValueError(f"need n >= 1 and n_classes >= 2, got n={n}, n_classes={n_classes}")
    rr, cc = np.meshgrid(np.arange(rows, dtype=np.float64), np.arange(cols, dtype=np.float64), indexing="ij")

    def bump(stream):
        r0 = stream.uniform(0.2 * rows, 0.8 * rows)
        c0 = stream.uniform(0.2 * cols, 0.8 * cols)
        width = stream.uniform(0.08 * rows, 0.18 * rows)
        return np.exp(-((rr - r0) ** 2 + (cc - c0) ** 2) / (2.0 * width**2))

    shared = bump(RngStream(seed, "template-shared"))
    templates = np.empty((n_classes, rows * cols))
    for c in range(n_classes):
        stream = RngStream(seed, "template", c)
        img = shared + bump(stream) + bump(stream)
        templates[c] = (amplitude * img / img.max()).ravel()

    labels = (RngStream(seed, "labels").double_array(n) * n_classes).astype(np.int64)
    pixel_noise = noise * RngStream(seed, "noise").normal_array(n * rows * cols).reshape(n, rows * cols)
    # subtracting a baseline zeroes most background pixels, matching the
    # sparse input statistics of scanned-digit data
    features = np.clip(templates[labels] + pixel_noise - 0.3, 0.0, 1.0)
    features = np.rint(features * 255.0) / 255.0
    if label_noise > 0.0:
        flip_stream = RngStream(seed, "label-flips")
        flips = flip_stream.double_array(n) < label_noise
        offsets = (flip_stream.double_array(n) * (n_classes - 1)).astype(np.int64) + 1
        labels = np.where(flips, (labels + offsets) % n_classes, labels)
    return Dataset(features=features, labels=labels, name=f"class-images-{n}x{rows}x{cols}")


_FLIP_RATE = 0.1


def make_synthetic(n: int, d: int, seed: int) -> Dataset:
    """Gaussian features with labels from a random linear teacher.

    Labels are in {0, 1}; a fixed 10% of them are flipped so the problem is
    not perfectly separable.  Deterministic given the seed.
    """
    if n < 1 or d < 1:
        raise ValueError(f"n and d must be >= 1, got n={n}, d={d}")
    features = RngStream(seed, "synthetic-x").normal_array(n * d).reshape(n, d)
    teacher = RngStream(seed, "synthetic-teacher").normal_array(d)
    labels = (features @ teacher > 0.0).astype(np.int64)
    flips = RngStream(seed, "synthetic-flip").double_array(n) < _FLIP_RATE
    labels[flips] ^= 1
    return Dataset(features=features, labels=labels, name=f"synthetic-{n}x{d}")
