"""Dataset ingestion for MNIST (IDX) and CIFAR-10 (binary batches).

IDX layout: big-endian, magic = two zero bytes, a dtype byte (0x08 =
unsigned byte is the only type used here), and a rank byte, followed by
rank 32-bit extents and the raw payload.  Image files carry magic
0x00000803 (rank 3), label files 0x00000801 (rank 1).

CIFAR-10 binary batches are fixed 3073-byte records: one label byte then
3 x 1024 channel planes of a 32x32 image.

Pixels normalize to [0, 1]; CIFAR additionally subtracts the mean image of
the full training set (kept in the bundle so inference preprocesses
identically).  Validation is carved off the training set by a seeded
shuffle.
"""

from __future__ import annotations

import gzip
import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DataError(Exception):
    """Malformed, truncated, or inconsistent dataset files."""


@dataclass
class Dataset:
    images: np.ndarray  # [N, H, W, C] float64
    labels: np.ndarray  # [N] int64
    name: str = ""

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class DataBundle:
    train: Dataset
    val: Dataset
    test: Dataset
    num_classes: int = 10
    mean_image: np.ndarray | None = None


# ---------------------------------------------------------------------------
# IDX


_IDX_UBYTE = 0x08


def _open_maybe_gz(path: Path):
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Parse one IDX file into a uint8 array; strict about magic and size."""
    path = Path(path)
    with _open_maybe_gz(path) as f:
        raw = f.read()
    if len(raw) < 4:
        raise DataError(f"{path.name}: truncated header")
    zero, dtype, rank = struct.unpack(">HBB", raw[:4])
    if zero != 0:
        raise DataError(f"{path.name}: bad IDX magic {raw[:4].hex()}")
    if dtype != _IDX_UBYTE:
        raise DataError(f"{path.name}: unsupported IDX element type 0x{dtype:02x}")
    header_len = 4 + 4 * rank
    if len(raw) < header_len:
        raise DataError(f"{path.name}: truncated extents")
    extents = struct.unpack(f">{rank}I", raw[4:header_len])
    count = int(np.prod(extents, dtype=np.int64)) if rank else 0
    if len(raw) != header_len + count:
        raise DataError(f"{path.name}: payload is {len(raw) - header_len} bytes, expected {count}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header_len).reshape(extents)


def write_idx(arr: np.ndarray, path) -> None:
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">HBB", 0, _IDX_UBYTE, arr.ndim))
        f.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        f.write(arr.tobytes())


def _find(dirpath: Path, stem: str) -> Path:
    for cand in (dirpath / stem, dirpath / (stem + ".gz")):
        if cand.exists():
            return cand
    raise DataError(f"missing dataset file {stem} under {dirpath}")


def split_train_val(images: np.ndarray, labels: np.ndarray, val_fraction: float,
                    seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Disjoint, exhaustive validation split via a seeded permutation."""
    n = len(labels)
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    n_val = int(round(val_fraction * n))
    vi, ti = perm[:n_val], perm[n_val:]
    return images[ti], labels[ti], images[vi], labels[vi]


def _check_labels(labels: np.ndarray, num_classes: int, name: str) -> None:
    if len(labels) and (labels.min() < 0 or labels.max() >= num_classes):
        raise DataError(f"{name}: label outside [0, {num_classes})")


def load_mnist(path, val_fraction: float = 0.1, seed: int = 0) -> DataBundle:
    """Load the four canonical IDX files from a directory."""
    d = Path(path)
    tr_x = read_idx(_find(d, "train-images-idx3-ubyte"))
    tr_y = read_idx(_find(d, "train-labels-idx1-ubyte")).astype(np.int64)
    te_x = read_idx(_find(d, "t10k-images-idx3-ubyte"))
    te_y = read_idx(_find(d, "t10k-labels-idx1-ubyte")).astype(np.int64)
    if tr_x.ndim != 3 or te_x.ndim != 3:
        raise DataError("MNIST image files must be rank-3 IDX")
    if len(tr_x) != len(tr_y) or len(te_x) != len(te_y):
        raise DataError("MNIST image/label counts disagree")
    _check_labels(tr_y, 10, "train")
    _check_labels(te_y, 10, "test")
    tr = tr_x[..., None].astype(np.float64) / 255.0
    te = te_x[..., None].astype(np.float64) / 255.0
    tx, ty, vx, vy = split_train_val(tr, tr_y, val_fraction, seed)
    return DataBundle(Dataset(tx, ty, "mnist-train"), Dataset(vx, vy, "mnist-val"),
                      Dataset(te, te_y, "mnist-test"))


# ---------------------------------------------------------------------------
# CIFAR-10


CIFAR_RECORD = 3073  # 1 label byte + 32*32*3 pixels


def read_cifar_batch(path) -> tuple[np.ndarray, np.ndarray]:
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % CIFAR_RECORD:
        raise DataError(f"{Path(path).name}: size {raw.size} is not a multiple of {CIFAR_RECORD}")
    rec = raw.reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    images = rec[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return images, labels


def load_cifar10(path, val_fraction: float = 0.1, seed: int = 0,
                 mean_image: np.ndarray | None = None) -> DataBundle:
    """Load the five training batches and the test batch.

    mean_image, when given, overrides the mean computed from the training
    set (inference must subtract the exact mean the checkpoint trained with).
    """
    d = Path(path)
    xs, ys = [], []
    for i in range(1, 6):
        f = d / f"data_batch_{i}.bin"
        if not f.exists():
            raise DataError(f"missing CIFAR-10 batch {f.name} under {d}")
        x, y = read_cifar_batch(f)
        xs.append(x)
        ys.append(y)
    te_f = d / "test_batch.bin"
    if not te_f.exists():
        raise DataError(f"missing CIFAR-10 test batch under {d}")
    te_x, te_y = read_cifar_batch(te_f)
    tr_x = np.concatenate(xs).astype(np.float64) / 255.0
    tr_y = np.concatenate(ys)
    te_x = te_x.astype(np.float64) / 255.0
    _check_labels(tr_y, 10, "train")
    _check_labels(te_y, 10, "test")
    if mean_image is None:
        mean_image = tr_x.mean(axis=0)
    tr_x = tr_x - mean_image
    te_x = te_x - mean_image
    tx, ty, vx, vy = split_train_val(tr_x, tr_y, val_fraction, seed)
    return DataBundle(Dataset(tx, ty, "cifar10-train"), Dataset(vx, vy, "cifar10-val"),
                      Dataset(te_x, te_y, "cifar10-test"), mean_image=mean_image)


# ---------------------------------------------------------------------------
# augmentation


@dataclass
class AugmentConfig:
    shift_h: int = 0      # max horizontal shift, pixels
    shift_v: int = 0      # max vertical shift, pixels
    hflip: bool = False

    def active(self) -> bool:
        return bool(self.shift_h or self.shift_v or self.hflip)


def _shift2d(img: np.ndarray, dv: int, dh: int) -> np.ndarray:
    """Shift with zero fill; dv > 0 moves content down, dh > 0 right."""
    out = np.zeros_like(img)
    h, w = img.shape[:2]
    sv, dvv = (0, dv) if dv >= 0 else (-dv, 0)
    sh, dhh = (0, dh) if dh >= 0 else (-dh, 0)
    out[dvv : h - sv + dvv, dhh : w - sh + dhh] = img[sv : h - dvv + sv, sh : w - dhh + sh]
    return out


def augment_batch(images: np.ndarray, cfg: AugmentConfig, seed: int,
                  epoch: int = 0, base_index: int = 0) -> np.ndarray:
    """Per-sample augmentation with a stream derived from
    (seed, epoch, global sample index), so any batch partitioning of an
    epoch produces bitwise-identical results."""
    h, w = images.shape[1:3]
    if cfg.shift_v > h // 4 or cfg.shift_h > w // 4:
        raise ValueError(f"shift range exceeds 25% of extents {(h, w)}")
    if not cfg.active():
        return images
    out = np.empty_like(images)
    for i in range(len(images)):
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(entropy=seed, spawn_key=(epoch, base_index + i))))
        img = images[i]
        dv = int(rng.integers(-cfg.shift_v, cfg.shift_v + 1)) if cfg.shift_v else 0
        dh = int(rng.integers(-cfg.shift_h, cfg.shift_h + 1)) if cfg.shift_h else 0
        if dv or dh:
            img = _shift2d(img, dv, dh)
        if cfg.hflip and rng.integers(2):
            img = img[:, ::-1]
        out[i] = img
    return out


def file_md5(path) -> str:
    return hashlib.md5(Path(path).read_bytes()).hexdigest()
