"""Datasets: IDX image files, synthetic 2-D sets, seeded batching and splits."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.datasets import make_blobs

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

# canonical two-moons bounding box (noise free), mapped onto [0.05, 0.95]^2
MOONS_BOX = ((-1.0, 2.0), (-0.5, 1.0))
MARGIN = 0.05


class IdxFormatError(ValueError):
    pass


class IdxTruncatedError(IdxFormatError):
    pass


class IdxCountMismatchError(ValueError):
    pass


@dataclass
class Dataset:
    inputs: np.ndarray  # [N, d] float32 in [0, 1]
    labels: np.ndarray  # [N] int64
    num_classes: int
    name: str = ""

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError(f"{self.name}: inputs {self.inputs.shape} vs labels {self.labels.shape}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.inputs.size and (self.inputs.min() < 0 or self.inputs.max() > 1):
            raise ValueError(f"{self.name}: inputs must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"{self.name}: labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx, name=None) -> "Dataset":
        return Dataset(self.inputs[idx], self.labels[idx], self.num_classes, name or self.name)


@dataclass(frozen=True)
class SyntheticSpec:
    kind: str = "two_moons"
    n_samples: int = 1000
    noise_std: float = 0.1
    n_classes: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("two_moons", "gaussian_blobs"):
            raise ValueError(f"unknown synthetic kind {self.kind!r}")
        if self.n_samples <= 0:
            raise ValueError("n_samples must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _read_idx(path, expected_magic: int, kind: str):
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 8:
        raise IdxTruncatedError(f"{path}: {len(raw)} bytes is too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IdxFormatError(
            f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x} for {kind}"
        )
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxTruncatedError(f"{path}: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header < count:
        raise IdxTruncatedError(f"{path}: expected {count} data bytes, found {len(raw) - header}")
    data = np.frombuffer(raw, dtype=np.uint8, count=count, offset=header)
    return data.reshape(dims)


def load_idx(images_path, labels_path, num_classes: int = 10, name: str = "idx") -> Dataset:
    """Read an IDX image/label pair (optionally gzipped); pixels are scaled by 1/255."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, "images")
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, "labels")
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(
            f"{images.shape[0]} images in {images_path} but {labels.shape[0]} labels in {labels_path}"
        )
    inputs = images.reshape(images.shape[0], int(np.prod(images.shape[1:]))).astype(np.float32) / np.float32(255)
    return Dataset(inputs, labels.astype(np.int64), num_classes, name)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 images ``[N, H, W]`` and labels ``[N]`` as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">I", IDX_IMAGES_MAGIC))
        f.write(struct.pack(">3I", *images.shape))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


def moons_arcs(t: np.ndarray):
    """Noise-free moon arcs for ``t`` in [0, pi], before rescaling."""
    outer = np.stack([np.cos(t), np.sin(t)], axis=1)
    inner = np.stack([1 - np.cos(t), 0.5 - np.sin(t)], axis=1)
    return outer, inner


def rescale_moons(points: np.ndarray) -> np.ndarray:
    out = np.empty_like(points, dtype=np.float64)
    for k, (lo, hi) in enumerate(MOONS_BOX):
        out[:, k] = MARGIN + (1 - 2 * MARGIN) * (points[:, k] - lo) / (hi - lo)
    return out


def gen_synthetic(spec: SyntheticSpec) -> Dataset:
    """Deterministic 2-D classification set with coordinates in [0.05, 0.95]^2.

    Two moons use a fixed affine map of the noise-free bounding box, so noisy
    points may land outside the margin band; they are clipped to [0, 1].
    Blobs are rescaled by their own bounding box.
    """
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "two_moons":
        n_outer = spec.n_samples // 2
        n_inner = spec.n_samples - n_outer
        outer, _ = moons_arcs(np.linspace(0, np.pi, n_outer))
        _, inner = moons_arcs(np.linspace(0, np.pi, n_inner))
        points = np.concatenate([outer, inner])
        labels = np.concatenate([np.zeros(n_outer, int), np.ones(n_inner, int)])
        points = points + rng.normal(0.0, spec.noise_std, size=points.shape)
        perm = rng.permutation(spec.n_samples)
        inputs = np.clip(rescale_moons(points[perm]), 0, 1)
        return Dataset(inputs, labels[perm], 2, "two_moons")
    points, labels = make_blobs(
        n_samples=spec.n_samples,
        centers=spec.n_classes,
        n_features=2,
        cluster_std=max(spec.noise_std, 1e-12),
        random_state=int(rng.integers(2**31)),
    )
    lo, hi = points.min(axis=0), points.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    inputs = MARGIN + (1 - 2 * MARGIN) * (points - lo) / span
    return Dataset(inputs, labels, spec.n_classes, "gaussian_blobs")


def batches(dataset: Dataset, batch_size: int, seed: int, epoch: int):
    """Yield ``(x, y)`` over an epoch-seeded permutation; the last partial batch is kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    perm = batch_order(len(dataset), seed, epoch)
    for start in range(0, len(perm), batch_size):
        idx = perm[start:start + batch_size]
        yield dataset.inputs[idx], dataset.labels[idx]


def batch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def split(dataset: Dataset, test_fraction: float, seed: int):
    """Seeded train/test split."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(len(dataset))
    n_test = int(round(test_fraction * len(dataset)))
    return (
        dataset.subset(np.sort(perm[n_test:]), f"{dataset.name}-train"),
        dataset.subset(np.sort(perm[:n_test]), f"{dataset.name}-test"),
    )


def mlxtend_mnist_path() -> Path:
    """Location of the 5,000-image MNIST sample shipped inside the mlxtend wheel."""
    import importlib.util

    spec = importlib.util.find_spec("mlxtend")
    if spec is None or not spec.submodule_search_locations:
        raise FileNotFoundError("mlxtend is not installed (pip install mlxtend)")
    path = Path(spec.submodule_search_locations[0]) / "data" / "data" / "mnist_5k.csv.gz"
    if not path.exists():
        raise FileNotFoundError(path)
    return path


def export_mnist_subset(out_dir, n_test: int = 1000, seed: int = 0) -> dict[str, Path]:
    """Write the mlxtend MNIST sample as train/test IDX files.

    The source is sorted by class; the seeded permutation both splits and
    shuffles it. Rows are 784 pixel values followed by the label.
    """
    table = np.loadtxt(mlxtend_mnist_path(), delimiter=",", dtype=np.int64)
    images = table[:, :-1].reshape(-1, 28, 28)
    labels = table[:, -1]
    perm = np.random.default_rng(seed).permutation(len(labels))
    test_idx, train_idx = perm[:n_test], perm[n_test:]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "train_images": out / "train-images-idx3-ubyte",
        "train_labels": out / "train-labels-idx1-ubyte",
        "test_images": out / "t10k-images-idx3-ubyte",
        "test_labels": out / "t10k-labels-idx1-ubyte",
    }
    write_idx(images[train_idx], labels[train_idx], paths["train_images"], paths["train_labels"])
    write_idx(images[test_idx], labels[test_idx], paths["test_images"], paths["test_labels"])
    return paths
