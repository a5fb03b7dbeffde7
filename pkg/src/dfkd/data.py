"""Datasets and random inputs: two moons, MNIST IDX files, latent draws, grids."""
from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

# noise-free moon extents before rescaling
MOONS_X_RANGE = (-1.0, 2.0)
MOONS_Y_RANGE = (-0.5, 1.0)


class IdxError(ValueError):
    """Base class for malformed IDX files."""


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxCountMismatchError(IdxError):
    pass


@dataclass
class LabeledBatch:
    inputs: Tensor
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.labels) < 1 or len(self.labels) != self.inputs.shape[0]:
            raise ValueError(f"batch has {self.inputs.shape[0]} inputs and {len(self.labels)} labels")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class LatentBatch:
    z: Tensor
    seed: int | None = None

    def __len__(self) -> int:
        return self.z.shape[0]


@dataclass
class EvalGrid:
    points: Tensor
    x_range: tuple[float, float]
    y_range: tuple[float, float]
    resolution: int


def _moons_scale(noise_sd: float) -> tuple[np.ndarray, np.ndarray]:
    # fixed affine map (margin grows with noise) so train and held-out draws share it
    margin = 4.0 * noise_sd
    lo = np.array([MOONS_X_RANGE[0], MOONS_Y_RANGE[0]]) - margin
    hi = np.array([MOONS_X_RANGE[1], MOONS_Y_RANGE[1]]) + margin
    return lo, hi


def make_two_moons(n: int, noise_sd: float = 0.1, seed: int = 0,
                   rescale: bool = True) -> LabeledBatch:
    """Two interleaving half-circles (radius 1), ``n // 2`` points per class.

    Class 0 is the upper arc centred at the origin, class 1 the lower arc
    centred at (1, 0.5).  With ``rescale`` the points are mapped into
    [-1, 1] per axis by a fixed affine transform and clipped.
    """
    if n < 2 or n % 2:
        raise ValueError(f"n must be a positive even count, got {n}")
    if noise_sd < 0:
        raise ValueError("noise_sd must be non-negative")
    rng = np.random.default_rng(seed)
    half = n // 2
    t0 = rng.uniform(0.0, np.pi, half)
    t1 = rng.uniform(0.0, np.pi, half)
    upper = np.stack([np.cos(t0), np.sin(t0)], axis=1)
    lower = np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
    x = np.concatenate([upper, lower])
    x += rng.normal(0.0, noise_sd, x.shape) if noise_sd > 0 else 0.0
    y = np.repeat([0, 1], half)
    perm = rng.permutation(n)
    x, y = x[perm], y[perm]
    if rescale:
        lo, hi = _moons_scale(noise_sd)
        x = np.clip(2.0 * (x - lo) / (hi - lo) - 1.0, -1.0, 1.0)
    return LabeledBatch(Tensor(x), y, 2)


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _read_idx(path, magic: int, ndims: int) -> tuple[np.ndarray, tuple[int, ...]]:
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IdxTruncatedError(f"{path}: header truncated ({len(raw)} bytes)")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise IdxMagicError(f"{path}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    if len(raw) < 4 + 4 * ndims:
        raise IdxTruncatedError(f"{path}: header truncated ({len(raw)} bytes)")
    dims = struct.unpack(f">{ndims}I", raw[4:4 + 4 * ndims])
    start = 4 + 4 * ndims
    size = int(np.prod(dims))
    if len(raw) - start < size:
        raise IdxTruncatedError(
            f"{path}: payload truncated, expected {size} bytes after offset {start}, "
            f"found {len(raw) - start}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=start), dims


def load_idx(images_path, labels_path, num_classes: int = 10) -> LabeledBatch:
    """Read an IDX image/label pair; pixels are mapped from [0, 255] to [-1, 1]."""
    pixels, (n, rows, cols) = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels, (m,) = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if n != m:
        raise IdxCountMismatchError(f"{n} images but {m} labels")
    images = pixels.reshape(n, 1, rows, cols).astype(np.float32) / 127.5 - 1.0
    return LabeledBatch(Tensor(images), labels.astype(np.int64), num_classes)


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as IDX (images if 3-D, labels if 1-D)."""
    array = np.asarray(array, dtype=np.uint8)
    magic = {3: IDX_IMAGES_MAGIC, 1: IDX_LABELS_MAGIC}[array.ndim]
    header = struct.pack(f">I{array.ndim}I", magic, *array.shape)
    with open(path, "wb") as fh:
        fh.write(header + array.tobytes())


def load_csv_batch(path, num_classes: int | None = None) -> LabeledBatch:
    """Tiny hand-made batches with header ``x0,x1,label``."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["x0", "x1", "label"]:
            raise ValueError(f"{path}: header must be x0,x1,label, got {reader.fieldnames}")
        rows = list(reader)
    x = np.array([[float(r["x0"]), float(r["x1"])] for r in rows])
    y = np.array([int(r["label"]) for r in rows])
    return LabeledBatch(Tensor(x), y, num_classes or int(y.max()) + 1)


def sample_latent(n: int, z_dim: int, rng: np.random.Generator | int) -> LatentBatch:
    """i.i.d. standard normal draws; an integer ``rng`` is used as the seed and recorded."""
    if n < 1 or z_dim < 1:
        raise ValueError(f"latent batch needs n, z_dim >= 1, got ({n}, {z_dim})")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    gen = np.random.default_rng(rng) if seed is not None else rng
    return LatentBatch(Tensor(gen.standard_normal((n, z_dim))), seed)


def make_grid(x_range=(-1.0, 1.0), y_range=(-1.0, 1.0), resolution: int = 100) -> EvalGrid:
    """Row-major lattice: x varies fastest, y rows from min to max."""
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    if x_range[0] == x_range[1] or y_range[0] == y_range[1]:
        raise ValueError(f"degenerate grid range {x_range} x {y_range}")
    xs = np.linspace(x_range[0], x_range[1], resolution)
    ys = np.linspace(y_range[0], y_range[1], resolution)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    return EvalGrid(Tensor(pts), tuple(x_range), tuple(y_range), resolution)
