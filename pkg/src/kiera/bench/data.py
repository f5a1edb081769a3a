"""IDX reading and construction of the permuted / rotated / split task streams."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

SPLIT_PAIRS = [(0, 1), (2, 3), (4, 5), (6, 7), (8, 9)]
ROTATION_RANGES = [(0.0, 30.0), (31.0, 60.0), (61.0, 90.0), (91.0, 120.0)]
N_PERMUTED = 4


class IdxFormatError(ValueError):
    pass


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def load_idx(path, normalize: bool = True) -> np.ndarray:
    """Read an IDX image (``0x803``) or label (``0x801``) file, optionally gzipped.

    Images come back as ``(n, rows, cols)``, scaled to [0, 1] unless
    ``normalize`` is false (then raw ``uint8``). Labels are ``uint8``.
    """
    data = _read_bytes(path)
    if len(data) < 8:
        raise IdxFormatError(f"{path}: truncated header at byte {len(data)}")
    (magic,) = struct.unpack_from(">I", data, 0)
    if magic == IMAGES_MAGIC:
        if len(data) < 16:
            raise IdxFormatError(f"{path}: truncated header at byte {len(data)}")
        n, rows, cols = struct.unpack_from(">III", data, 4)
        shape, offset = (n, rows, cols), 16
    elif magic == LABELS_MAGIC:
        (n,) = struct.unpack_from(">I", data, 4)
        shape, offset = (n,), 8
    else:
        raise IdxFormatError(f"{path}: unknown magic 0x{magic:08x} at byte 0")
    expected = offset + int(np.prod(shape))
    if len(data) < expected:
        raise IdxFormatError(f"{path}: payload truncated at byte {len(data)}, expected {expected}")
    if len(data) > expected:
        raise IdxFormatError(f"{path}: {len(data) - expected} trailing bytes after byte {expected}")
    arr = np.frombuffer(data, dtype=np.uint8, count=int(np.prod(shape)), offset=offset).reshape(shape)
    if magic == IMAGES_MAGIC and normalize:
        return arr.astype(np.float64) / 255.0
    return arr.copy()


@dataclass
class Dataset:
    train_images: np.ndarray  # uint8 (n, 28, 28)
    train_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray


def _find(root: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx"), stem.replace("-idx", ".idx") + ".gz"):
        if (root / name).exists():
            return root / name
    raise FileNotFoundError(f"{stem}[.gz] not found in {root}")


def load_mnist(root) -> Dataset:
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory {root} does not exist")
    ds = Dataset(
        load_idx(_find(root, "train-images-idx3-ubyte"), normalize=False),
        load_idx(_find(root, "train-labels-idx1-ubyte")),
        load_idx(_find(root, "t10k-images-idx3-ubyte"), normalize=False),
        load_idx(_find(root, "t10k-labels-idx1-ubyte")),
    )
    if len(ds.train_images) != len(ds.train_labels) or len(ds.test_images) != len(ds.test_labels):
        raise IdxFormatError(f"{root}: image and label counts differ")
    return ds


@dataclass
class Task:
    name: str
    train_images: np.ndarray  # float64 (n, pixels) in stream order
    train_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray
    angles: np.ndarray | None = None
    permutation: np.ndarray | None = None

    @property
    def classes(self) -> list[int]:
        return sorted(set(self.train_labels.tolist()))


@dataclass
class TaskStream:
    variant: str
    seed: int
    tasks: list[Task]

    def __len__(self) -> int:
        return len(self.tasks)


def _scale(images: np.ndarray) -> np.ndarray:
    return images.reshape(len(images), -1).astype(np.float64) / 255.0


def rotate_images(images: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Rotate each ``(rows, cols)`` image about its centre (bilinear, zero fill)."""
    out = np.empty(images.shape, dtype=np.float64)
    for i, (img, ang) in enumerate(zip(images, angles)):
        out[i] = ndimage.rotate(img.astype(np.float64), float(ang), reshape=False, order=1, mode="constant", cval=0.0)
    return np.clip(out, 0.0, 1.0)


def make_tasks(
    ds: Dataset,
    variant: str,
    seed: int,
    train_per_task: int | None = None,
    test_per_task: int | None = None,
) -> TaskStream:
    """Build a continual task sequence.

    ``permuted`` and ``rotated`` draw disjoint training subsets (60000/4 each
    by default) and transform the full test set per task; ``split`` filters
    the five class pairs. ``train_per_task``/``test_per_task`` truncate for
    desk-scale runs.
    """
    rng = np.random.default_rng(seed)
    tasks: list[Task] = []
    if variant == "split":
        for a, b in SPLIT_PAIRS:
            tr = np.flatnonzero(np.isin(ds.train_labels, (a, b)))
            tr = rng.permutation(tr)[:train_per_task]
            te = np.flatnonzero(np.isin(ds.test_labels, (a, b)))[:test_per_task]
            tasks.append(Task(f"{a}/{b}", _scale(ds.train_images[tr]), ds.train_labels[tr],
                              _scale(ds.test_images[te]), ds.test_labels[te]))
    elif variant in ("permuted", "rotated"):
        k = N_PERMUTED if variant == "permuted" else len(ROTATION_RANGES)
        order = rng.permutation(len(ds.train_labels))
        per = train_per_task or len(order) // k
        if per * k > len(order):
            raise ValueError(f"{per} samples per task x {k} tasks exceeds the training set")
        te = np.arange(len(ds.test_labels))[:test_per_task]
        for t in range(k):
            tr = order[t * per : (t + 1) * per]
            if variant == "permuted":
                perm = rng.permutation(ds.train_images[0].size)
                tasks.append(Task(f"perm{t + 1}", _scale(ds.train_images[tr])[:, perm], ds.train_labels[tr],
                                  _scale(ds.test_images[te])[:, perm], ds.test_labels[te], permutation=perm))
            else:
                lo, hi = ROTATION_RANGES[t]
                a_tr = rng.uniform(lo, hi, len(tr))
                a_te = rng.uniform(lo, hi, len(te))
                tr_img = rotate_images(ds.train_images[tr] / 255.0, a_tr)
                te_img = rotate_images(ds.test_images[te] / 255.0, a_te)
                tasks.append(Task(f"rot[{lo:g},{hi:g}]", tr_img.reshape(len(tr), -1), ds.train_labels[tr],
                                  te_img.reshape(len(te), -1), ds.test_labels[te], angles=a_tr))
    else:
        raise ValueError(f"unknown variant {variant!r}; expected permuted, rotated or split")
    return TaskStream(variant, seed, tasks)


def labelled_prefix(labels: np.ndarray, per_class: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices of the first ``per_class`` samples of each class, and the rest (stream order kept)."""
    taken: dict[int, int] = {}
    head, rest = [], []
    for i, y in enumerate(labels.tolist()):
        if taken.get(y, 0) < per_class:
            taken[y] = taken.get(y, 0) + 1
            head.append(i)
        else:
            rest.append(i)
    return np.array(head, dtype=np.int64), np.array(rest, dtype=np.int64)
