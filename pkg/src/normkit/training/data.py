"""Datasets: synthetic blobs, IDX (MNIST-format) image subsets, and a byte-level text corpus."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from ..errors import BadMagicError, ContractError, MissingFileError, TruncatedPayloadError

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049
KINDS = ("blobs", "mnist-subset", "tiny-chars")


@dataclass(frozen=True)
class DatasetHandle:
    kind: str
    count: int
    feature_shape: tuple
    num_classes: int
    train_idx: tuple
    valid_idx: tuple
    source: str = ""

    def __post_init__(self):
        if set(self.train_idx) & set(self.valid_idx):
            raise ContractError("train and valid splits overlap")
        if len(self.train_idx) + len(self.valid_idx) > self.count:
            raise ContractError("split sizes exceed example count")


@dataclass(frozen=True)
class Dataset:
    handle: DatasetHandle
    x: np.ndarray
    y: np.ndarray
    vocab: bytes | None = None

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        if name == "train":
            idx = np.asarray(self.handle.train_idx, dtype=np.int64)
        elif name == "valid":
            idx = np.asarray(self.handle.valid_idx, dtype=np.int64)
        else:
            raise ContractError(f"unknown split {name!r}")
        return self.x[idx], self.y[idx]


# ---------------------------------------------------------------- IDX

def _read_bytes(path) -> bytes:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"no such file: {path}")
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def read_idx_images(path, limit: int | None = None) -> np.ndarray:
    """Parse an IDX image file (magic 2051) into a uint8 ``N x rows x cols`` array.

    ``limit`` keeps only the first examples; the payload is still required to be complete.
    """
    raw = _read_bytes(path)
    if len(raw) < 16:
        raise TruncatedPayloadError(f"{path}: header needs 16 bytes, file has {len(raw)}")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGE_MAGIC:
        raise BadMagicError(f"{path}: magic {magic}, expected {IMAGE_MAGIC}")
    need = n * rows * cols
    if len(raw) - 16 < need:
        raise TruncatedPayloadError(f"{path}: header promises {need} pixel bytes, found {len(raw) - 16}")
    images = np.frombuffer(raw, dtype=np.uint8, count=need, offset=16).reshape(n, rows, cols)
    return images[:limit].copy() if limit is not None else images.copy()


def read_idx_labels(path, limit: int | None = None) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) < 8:
        raise TruncatedPayloadError(f"{path}: header needs 8 bytes, file has {len(raw)}")
    magic, n = struct.unpack(">II", raw[:8])
    if magic != LABEL_MAGIC:
        raise BadMagicError(f"{path}: magic {magic}, expected {LABEL_MAGIC}")
    if len(raw) - 8 < n:
        raise TruncatedPayloadError(f"{path}: header promises {n} labels, found {len(raw) - 8}")
    labels = np.frombuffer(raw, dtype=np.uint8, count=n, offset=8)
    return labels[:limit].copy() if limit is not None else labels.copy()


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols))
        fh.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", LABEL_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def write_digits_idx(directory) -> tuple[Path, Path]:
    """Write scikit-learn's bundled 8x8 handwritten digits as an IDX image/label pair.

    Stands in for MNIST where the real files are unavailable.
    """
    from sklearn.datasets import load_digits

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    digits = load_digits()
    images = np.rint(digits.images * (255.0 / 16.0)).astype(np.uint8)
    img_path = directory / "digits-images-idx3-ubyte"
    lbl_path = directory / "digits-labels-idx1-ubyte"
    write_idx_images(img_path, images)
    write_idx_labels(lbl_path, digits.target)
    return img_path, lbl_path


# ---------------------------------------------------------------- loaders

def _blobs(req: dict, seed: int) -> Dataset:
    count = int(req.get("count", 600))
    classes = int(req.get("classes", 3))
    dim = int(req.get("dim", 2))
    spread = float(req.get("std", 0.5))
    radius = float(req.get("radius", 3.0))
    rng = np.random.default_rng(seed)
    angles = 2 * np.pi * np.arange(classes) / classes
    centers = np.zeros((classes, dim))
    centers[:, 0] = radius * np.cos(angles)
    centers[:, 1 % dim] += radius * np.sin(angles)
    y = np.arange(count) % classes
    x = centers[y] + spread * rng.standard_normal((count, dim))
    perm = rng.permutation(count)
    n_valid = int(round(count * float(req.get("valid_fraction", 0.2))))
    handle = DatasetHandle("blobs", count, (dim,), classes,
                           tuple(int(i) for i in perm[n_valid:]), tuple(int(i) for i in perm[:n_valid]),
                           f"blobs(seed={seed})")
    return Dataset(handle, x, y.astype(np.int64))


def _mnist(req: dict, paths: dict) -> Dataset:
    images_path = paths.get("images") or req.get("images")
    labels_path = paths.get("labels") or req.get("labels")
    if not images_path or not labels_path:
        raise MissingFileError("mnist-subset needs 'images' and 'labels' IDX paths")
    count = int(req.get("count", 1000))
    n_valid = int(req.get("valid_count", 200))
    images = read_idx_images(images_path, count + n_valid)
    labels = read_idx_labels(labels_path, count + n_valid)
    n = min(len(images), len(labels))
    images, labels = images[:n], labels[:n]
    n_train = min(count, n)
    x = images.astype(np.float64) / 255.0
    x = x[:, None, :, :]
    handle = DatasetHandle("mnist-subset", n, x.shape[1:], int(req.get("classes", 10)),
                           tuple(range(n_train)), tuple(range(n_train, n)), str(images_path))
    return Dataset(handle, x, labels.astype(np.int64))


def default_corpus_path() -> Path:
    return Path(str(resources.files("normkit") / "data" / "tiny_corpus.txt"))


def _chars(req: dict, paths: dict) -> Dataset:
    path = paths.get("corpus") or req.get("corpus") or default_corpus_path()
    raw = _read_bytes(path)
    limit = int(req.get("max_bytes", 100_000))
    raw = raw[:limit]
    seq_len = int(req.get("seq_len", 32))
    vocab = bytes(sorted(set(raw)))
    lookup = np.zeros(256, dtype=np.int64)
    lookup[list(vocab)] = np.arange(len(vocab))
    tokens = lookup[np.frombuffer(raw, dtype=np.uint8)]
    windows = len(tokens) // (seq_len + 1)
    if windows < 2:
        raise ContractError(f"corpus too short for seq_len={seq_len}")
    seqs = tokens[: windows * (seq_len + 1)].reshape(windows, seq_len + 1)
    n_valid = max(1, int(round(windows * float(req.get("valid_fraction", 0.1)))))
    handle = DatasetHandle("tiny-chars", windows, (len(vocab),), len(vocab),
                           tuple(range(windows - n_valid)), tuple(range(windows - n_valid, windows)), str(path))
    return Dataset(handle, seqs[:, :-1].copy(), seqs[:, 1:].copy(), vocab)


def load_dataset(request, paths: dict | None = None, seed: int = 0) -> Dataset:
    """Build a dataset from a request dict (``{"kind": ..., ...}``) or a bare kind name."""
    req = {"kind": request} if isinstance(request, str) else dict(request)
    paths = dict(paths or {})
    kind = req.get("kind")
    if kind == "blobs":
        return _blobs(req, seed)
    if kind == "mnist-subset":
        return _mnist(req, paths)
    if kind == "tiny-chars":
        return _chars(req, paths)
    raise ContractError(f"unknown dataset kind {kind!r}; expected one of {KINDS}")


def mnist_paths_from_env() -> dict | None:
    """IDX paths under ``$NORMKIT_MNIST_DIR`` when real MNIST files are present there."""
    root = os.environ.get("NORMKIT_MNIST_DIR")
    if not root:
        return None
    for suffix in ("", ".gz"):
        img = Path(root) / f"train-images-idx3-ubyte{suffix}"
        lbl = Path(root) / f"train-labels-idx1-ubyte{suffix}"
        if img.exists() and lbl.exists():
            return {"images": str(img), "labels": str(lbl)}
    return None
