"""Real-data samplers for the 2D tasks and an MNIST IDX reader."""

from __future__ import annotations

import gzip
import os
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

GRID_CENTERS = np.array([[-0.5, -0.5], [-0.5, 0.5], [0.5, -0.5], [0.5, 0.5]])
GRID_NOISE = 0.008

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class RingGeometry:
    r_inner: float = 1.0
    r_outer: float = 2.0
    band: float = 0.30

    def __post_init__(self):
        if self.band <= 0 or self.r_inner <= 0:
            raise ValueError("ring radii and band must be positive")
        if not self.r_inner + self.band < self.r_outer - self.band:
            raise ValueError(
                f"ring bands overlap: inner {self.r_inner}±{self.band} vs outer {self.r_outer}±{self.band}"
            )

    @property
    def dead_zone(self) -> tuple[float, float]:
        return (self.r_inner + self.band, self.r_outer - self.band)

    def with_band(self, band: float) -> "RingGeometry":
        return RingGeometry(self.r_inner, self.r_outer, band)


def sample_gaussian(n: int, rng: np.random.Generator) -> np.ndarray:
    if n <= 0:
        raise ValueError("n must be positive")
    return rng.standard_normal((n, 2))


def sample_grid(
    n: int,
    rng: np.random.Generator,
    centers: np.ndarray = GRID_CENTERS,
    sigma: float = GRID_NOISE,
) -> np.ndarray:
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    centers = np.asarray(centers, dtype=np.float64)
    idx = rng.integers(0, len(centers), size=n)
    return centers[idx] + sigma * rng.standard_normal((n, 2))


def sample_ring(n: int, rng: np.random.Generator, geometry: RingGeometry = RingGeometry()) -> np.ndarray:
    """Half the points on each ring; radius noise has std ``band / 3``."""
    n_in = n // 2
    radii = np.concatenate([np.full(n_in, geometry.r_inner), np.full(n - n_in, geometry.r_outer)])
    radii = radii + (geometry.band / 3.0) * rng.standard_normal(n)
    theta = rng.uniform(-np.pi, np.pi, size=n)
    return np.column_stack([radii * np.cos(theta), radii * np.sin(theta)])


def sample_real(dataset: str, n: int, rng: np.random.Generator, geometry: RingGeometry | None = None) -> np.ndarray:
    if dataset == "gaussian":
        return sample_gaussian(n, rng)
    if dataset == "grid":
        return sample_grid(n, rng)
    if dataset == "ring":
        return sample_ring(n, rng, geometry or RingGeometry())
    raise ValueError(f"no 2D sampler for {dataset!r}")


# ---------------------------------------------------------------------------
# MNIST
# ---------------------------------------------------------------------------


class IdxError(ValueError):
    """Base class for malformed IDX input."""


class BadMagicError(IdxError):
    pass


class TruncatedFileError(IdxError):
    pass


class CountMismatchError(IdxError):
    pass


@dataclass
class MnistSet:
    images: np.ndarray  # (n, 784) float64 in [0, 1]
    labels: np.ndarray  # (n,) int64

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise CountMismatchError(f"{len(self.images)} images vs {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)


def _read_bytes(path: str | os.PathLike) -> bytes:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_idx(path: str | os.PathLike, magic: int) -> np.ndarray:
    """Parse a big-endian unsigned-byte IDX file with the expected ``magic``."""
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: shorter than the IDX magic")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise BadMagicError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    ndim = found & 0xFF
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise TruncatedFileError(f"{path}: header truncated")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    count = int(np.prod(dims))
    if len(raw) - head < count:
        raise TruncatedFileError(f"{path}: expected {count} data bytes, found {len(raw) - head}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=head).reshape(dims)


def write_idx(path: str | os.PathLike, array: np.ndarray) -> None:
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


def load_mnist_idx(images_path: str | os.PathLike, labels_path: str | os.PathLike) -> MnistSet:
    images = read_idx(images_path, IMAGE_MAGIC)
    labels = read_idx(labels_path, LABEL_MAGIC)
    if images.ndim != 3 or images.shape[1:] != (28, 28):
        raise IdxError(f"{images_path}: expected n x 28 x 28 images, got {images.shape}")
    if len(images) != len(labels):
        raise CountMismatchError(f"{len(images)} images vs {len(labels)} labels")
    return MnistSet(images.reshape(len(images), 784).astype(np.float64) / 255.0, labels.astype(np.int64))


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _find(directory: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        if (directory / name).exists():
            return directory / name
    raise FileNotFoundError(f"{stem}[.gz] not found in {directory}")


def mnist_dir(data_dir: str | os.PathLike | None = None) -> Path:
    data_dir = data_dir or os.environ.get("LTN_GAN_DATA_DIR")
    if not data_dir:
        raise FileNotFoundError("MNIST location unknown: pass data_dir or set LTN_GAN_DATA_DIR")
    return Path(data_dir)


def load_mnist(split: str = "train", data_dir: str | os.PathLike | None = None) -> MnistSet:
    directory = mnist_dir(data_dir)
    img, lab = MNIST_FILES[split]
    return load_mnist_idx(_find(directory, img), _find(directory, lab))


def class_templates(data: MnistSet, threshold: float = 0.5) -> np.ndarray:
    """Binarized per-class mean image, shape (10, 784)."""
    out = np.zeros((10, 784))
    for k in range(10):
        sel = data.images[data.labels == k]
        if len(sel):
            out[k] = (sel.mean(axis=0) > threshold).astype(np.float64)
    return out


def write_points_csv(path: str | os.PathLike, points: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write("x,y\n")
        for x, y in points:
            fh.write(f"{float(x)!r},{float(y)!r}\n")


def read_points_csv(path: str | os.PathLike) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def write_pgm_montage(path: str | os.PathLike, images: np.ndarray, n_cols: int = 10) -> None:
    """Tile 28x28 images into one binary (P5) grayscale PGM."""
    images = np.asarray(images, dtype=np.float64).reshape(-1, 28, 28)
    if len(images) == 0:
        raise ValueError("no images to write")
    n_rows = -(-len(images) // n_cols)
    canvas = np.zeros((n_rows * 28, n_cols * 28))
    for i, img in enumerate(images):
        r, c = divmod(i, n_cols)
        canvas[r * 28 : (r + 1) * 28, c * 28 : (c + 1) * 28] = img
    pixels = np.clip(np.round(canvas * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if m is None:
        raise ValueError(f"{path}: not a binary PGM")
    width, height = int(m.group(1)), int(m.group(2))
    return np.frombuffer(raw, dtype=np.uint8, count=width * height, offset=m.end()).reshape(height, width)
