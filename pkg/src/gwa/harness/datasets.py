"""Desk-scale datasets: synthetic generators plus CSV and IDX readers.

Everything is float32 features with integer class labels. Synthetic
datasets draw train/val/test from the same distribution; file-backed
datasets are split deterministically. Label corruption (uniform flips or
full randomization) applies to the training portion only and returns the
ground-truth flip mask.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ..errors import DatasetLoad


@dataclass
class Split:
    """Train/val/test arrays plus the training-label flip mask."""

    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    flipped: np.ndarray  # bool mask over train samples

    @property
    def num_classes(self) -> int:
        return int(
            max(
                self.train_y.max(initial=0),
                self.val_y.max(initial=0),
                self.test_y.max(initial=0),
            )
        ) + 1

    @property
    def dim(self) -> int:
        return self.train_x.shape[1]


def gaussian_blobs(
    rng: np.random.Generator,
    n_samples: int,
    classes: int,
    dim: int,
    separation: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Isotropic unit-variance clusters at mutually orthogonal means."""
    if classes > dim:
        raise DatasetLoad(f"blobs need classes <= dim, got {classes} > {dim}")
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    means = separation * q[:classes]
    y = np.arange(n_samples) % classes
    x = means[y] + rng.standard_normal((n_samples, dim))
    perm = rng.permutation(n_samples)
    return x[perm].astype(np.float32), y[perm].astype(np.int64)


def two_moons(
    rng: np.random.Generator, n_samples: int, noise_std: float = 0.1
) -> tuple[np.ndarray, np.ndarray]:
    n0 = n_samples // 2
    n1 = n_samples - n0
    t0 = rng.uniform(0, np.pi, n0)
    t1 = rng.uniform(0, np.pi, n1)
    x0 = np.stack([np.cos(t0), np.sin(t0)], axis=1)
    x1 = np.stack([1 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
    x = np.concatenate([x0, x1]) + noise_std * rng.standard_normal((n_samples, 2))
    y = np.concatenate([np.zeros(n0, np.int64), np.ones(n1, np.int64)])
    perm = rng.permutation(n_samples)
    return x[perm].astype(np.float32), y[perm]


def load_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Feature columns followed by an integer label column; optional header."""
    try:
        with open(path) as fh:
            first = fh.readline()
        skip = 0
        try:
            [float(tok) for tok in first.strip().split(",")]
        except ValueError:
            skip = 1
        data = np.genfromtxt(path, delimiter=",", skip_header=skip)
    except OSError as exc:
        raise DatasetLoad(f"cannot read csv dataset: {exc}") from exc
    if data.ndim != 2 or data.shape[1] < 2:
        raise DatasetLoad(f"csv dataset must have >= 2 columns, got shape {data.shape}")
    if not np.all(np.isfinite(data)):
        raise DatasetLoad("csv dataset contains non-finite values")
    x = data[:, :-1].astype(np.float32)
    y = data[:, -1].astype(np.int64)
    if np.any(y < 0) or np.any(data[:, -1] != y):
        raise DatasetLoad("label column must hold non-negative integers")
    return x, y


IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _read_idx(path, expected_magic: int) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DatasetLoad(f"cannot read idx file: {exc}") from exc
    if len(raw) < 4:
        raise DatasetLoad(f"{path}: too short for an idx header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise DatasetLoad(f"{path}: magic {magic:#010x}, expected {expected_magic:#010x}")
    ndim = magic & 0xFF
    dims = struct.unpack(f">{ndim}I", raw[4 : 4 + 4 * ndim])
    data = np.frombuffer(raw, dtype=np.uint8, offset=4 + 4 * ndim)
    if data.size != int(np.prod(dims)):
        raise DatasetLoad(f"{path}: payload size does not match dims {dims}")
    return data.reshape(dims)


def load_idx_images(images_path, labels_path, subsample: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Standard IDX byte format (MNIST-style), flattened and scaled to [0,1]."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise DatasetLoad(
            f"image count {images.shape[0]} != label count {labels.shape[0]}"
        )
    x = images.reshape(images.shape[0], -1).astype(np.float32) / 255.0
    y = labels.astype(np.int64)
    if subsample:
        x, y = x[:subsample], y[:subsample]
    return x, y


def corrupt_labels(
    rng: np.random.Generator,
    y: np.ndarray,
    num_classes: int,
    flip_fraction: float = 0.0,
    randomize: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Flip a fraction of labels to a different class, or randomize all.

    Returns (labels, flipped mask); randomized labels that happen to match
    the original are not counted as flipped.
    """
    y = y.copy()
    if randomize:
        new = rng.integers(0, num_classes, size=len(y))
        flipped = new != y
        return new.astype(np.int64), flipped
    flipped = np.zeros(len(y), dtype=bool)
    if flip_fraction > 0:
        k = int(round(flip_fraction * len(y)))
        idx = rng.choice(len(y), size=k, replace=False)
        offsets = rng.integers(1, num_classes, size=k)
        y[idx] = (y[idx] + offsets) % num_classes
        flipped[idx] = True
    return y, flipped
