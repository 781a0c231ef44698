"""Datasets and the labeled / unlabeled / validation split."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DataFormatError

CIFAR_RECORD = 3073
CIFAR_SHAPE = (3, 32, 32)
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILES = ("test_batch.bin",)


@dataclass
class LabeledDataset:
    """Images ``[N, C, H, W]`` plus integer labels.

    Images may be stored as ``uint8`` (scaled by 1/255 on access) or as floats
    already in [0, 1]; :meth:`images` always returns float64.
    """

    store: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.store) != len(self.labels):
            raise ValueError(f"{len(self.store)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.store.shape[1:])

    def images(self, idx=None) -> np.ndarray:
        x = self.store if idx is None else self.store[idx]
        if x.dtype == np.uint8:
            return x.astype(np.float64) / 255.0
        return np.asarray(x, dtype=np.float64)


@dataclass
class LabeledView:
    """Index view onto a :class:`LabeledDataset`."""

    dataset: LabeledDataset
    indices: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)

    def images(self, pos=None) -> np.ndarray:
        idx = self.indices if pos is None else self.indices[pos]
        return self.dataset.images(idx)

    def labels(self, pos=None) -> np.ndarray:
        idx = self.indices if pos is None else self.indices[pos]
        return self.dataset.labels[idx]


@dataclass
class UnlabeledView:
    """Index view that hides labels from the training path.

    Ground truth is reachable only through :meth:`diagnostic_truth`, which the
    pair diagnostics use and nothing else.
    """

    dataset: LabeledDataset
    indices: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)

    def images(self, pos=None) -> np.ndarray:
        idx = self.indices if pos is None else self.indices[pos]
        return self.dataset.images(idx)

    def diagnostic_truth(self, pos) -> np.ndarray:
        return self.dataset.labels[self.indices[pos]]


@dataclass(frozen=True)
class SplitSpec:
    labels_per_class: int
    validation_size: int
    seed: int = 0
    unlabeled_size: Optional[int] = None  # None: everything left over


# ---------------------------------------------------------------- toy shapes

# orientation jitter; larger spreads outrun what the augmentations can tie together
ROTATION_JITTER = np.pi / 8

# the first four are the ones a 4-class run uses; disk and square are kept apart
# because they are hard to tell apart at 32px under scale jitter
SHAPES = ("disk", "triangle", "cross", "ring", "square", "bar", "frame", "half_disk")


def _inside(kind: str, u: np.ndarray, v: np.ndarray, r: float) -> np.ndarray:
    rad = np.hypot(u, v)
    if kind == "disk":
        return rad <= r
    if kind == "square":
        return np.maximum(np.abs(u), np.abs(v)) <= 0.8 * r
    if kind == "triangle":
        out = np.ones_like(u, dtype=bool)
        for a in (np.pi / 2 + np.pi, np.pi / 6, 5 * np.pi / 6):
            out &= u * np.cos(a) + v * np.sin(a) <= 0.5 * r
        return out
    if kind == "cross":
        arm = 0.28 * r
        return ((np.abs(u) <= arm) & (np.abs(v) <= r)) | ((np.abs(v) <= arm) & (np.abs(u) <= r))
    if kind == "ring":
        return (rad <= r) & (rad >= 0.6 * r)
    if kind == "bar":
        return (np.abs(u) <= r) & (np.abs(v) <= 0.25 * r)
    if kind == "frame":
        m = np.maximum(np.abs(u), np.abs(v))
        return (m <= 0.85 * r) & (m >= 0.55 * r)
    if kind == "half_disk":
        return (rad <= r) & (v >= 0)
    raise ValueError(kind)


def generate_toy_shapes(num_classes: int, n_per_class: int, size: int = 32, seed: int = 0) -> LabeledDataset:
    """Balanced single-channel images of procedurally rendered shapes.

    Class ``k`` is shape ``SHAPES[k]`` drawn at a random position, radius and
    rotation with random foreground/background levels and Gaussian pixel noise,
    rendered with 2x2 supersampling.
    """
    if not 2 <= num_classes <= len(SHAPES):
        raise ConfigError(f"toy shapes supports 2..{len(SHAPES)} classes, got {num_classes}")
    if size < 16:
        raise ConfigError(f"toy shapes need size >= 16, got {size}")
    rng = np.random.Generator(np.random.Philox(seed))
    n = num_classes * n_per_class
    labels = np.repeat(np.arange(num_classes), n_per_class)
    labels = labels[rng.permutation(n)]
    ss = 2 * size
    grid = (np.arange(ss) + 0.5) / ss * 2.0 - 1.0
    yy, xx = np.meshgrid(grid, grid, indexing="ij")
    images = np.empty((n, 1, size, size))
    for i, k in enumerate(labels):
        cx, cy = rng.uniform(-0.3, 0.3, size=2)
        r = rng.uniform(0.35, 0.6)
        th = rng.uniform(-ROTATION_JITTER, ROTATION_JITTER)
        fg = rng.uniform(0.55, 1.0)
        bg = rng.uniform(0.0, 0.35)
        du, dv = xx - cx, yy - cy
        u = np.cos(th) * du + np.sin(th) * dv
        v = -np.sin(th) * du + np.cos(th) * dv
        mask = _inside(SHAPES[k], u, v, r).astype(np.float64)
        img = bg + (fg - bg) * mask.reshape(size, 2, size, 2).mean(axis=(1, 3))
        img += rng.normal(0.0, 0.08, size=(size, size))
        images[i, 0] = np.clip(img, 0.0, 1.0)
    return LabeledDataset(images, labels, num_classes)


# ---------------------------------------------------------------- CIFAR-10


def encode_cifar10_records(images: np.ndarray, labels: np.ndarray) -> bytes:
    """Serialize ``uint8 [N, 3, 32, 32]`` images to 3073-byte records."""
    images = np.asarray(images, dtype=np.uint8).reshape(len(images), -1)
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1, 1)
    return np.concatenate([labels, images], axis=1).tobytes()


def decode_cifar10_records(raw: bytes, source: str = "<bytes>") -> tuple[np.ndarray, np.ndarray]:
    if len(raw) == 0 or len(raw) % CIFAR_RECORD:
        raise DataFormatError(f"{source}: size {len(raw)} is not a positive multiple of {CIFAR_RECORD}")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise DataFormatError(f"{source}: label byte {labels.max()} outside 0..9")
    return rec[:, 1:].reshape(-1, *CIFAR_SHAPE).copy(), labels


def load_cifar10_binary(path, split: str = "train") -> LabeledDataset:
    """Read the standard binary CIFAR-10 batches from directory ``path``."""
    files: Sequence[str] = {"train": CIFAR_TRAIN_FILES, "test": CIFAR_TEST_FILES}.get(split)
    if files is None:
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    root = Path(path)
    imgs, labs = [], []
    for name in files:
        f = root / name
        if not f.is_file():
            raise FileNotFoundError(f"CIFAR-10 batch file missing: {f}")
        x, y = decode_cifar10_records(f.read_bytes(), str(f))
        imgs.append(x)
        labs.append(y)
    return LabeledDataset(np.concatenate(imgs), np.concatenate(labs), 10)


def write_cifar10_binary(path, images: np.ndarray, labels: np.ndarray) -> None:
    Path(path).write_bytes(encode_cifar10_records(images, labels))


# ---------------------------------------------------------------- split


def stratified_split(ds: LabeledDataset, spec: SplitSpec) -> tuple[LabeledView, UnlabeledView, LabeledView]:
    """Class-balanced labeled and validation sets; the unlabeled set is the remainder.

    Validation takes ``validation_size // L`` per class, with the remainder
    spread one each over the lowest class indices.
    """
    L = ds.num_classes
    if spec.labels_per_class < 1 or spec.validation_size < 0:
        raise ConfigError("labels_per_class must be >= 1 and validation_size >= 0")
    if spec.labels_per_class * L + spec.validation_size > len(ds):
        raise ConfigError("split asks for more samples than the dataset holds")
    rng = np.random.Generator(np.random.Philox(spec.seed))
    val_per = np.full(L, spec.validation_size // L)
    val_per[: spec.validation_size % L] += 1
    labeled, val, rest = [], [], []
    for k in range(L):
        members = np.flatnonzero(ds.labels == k)
        need = spec.labels_per_class + val_per[k]
        if need > len(members):
            raise ConfigError(f"class {k} has {len(members)} samples, split needs {need}")
        members = members[rng.permutation(len(members))]
        labeled.append(members[: spec.labels_per_class])
        val.append(members[spec.labels_per_class : need])
        rest.append(members[need:])
    rest_all = np.concatenate(rest)
    rest_all = rest_all[rng.permutation(len(rest_all))]
    if spec.unlabeled_size is not None:
        if spec.unlabeled_size > len(rest_all):
            raise ConfigError(f"only {len(rest_all)} samples left for {spec.unlabeled_size} unlabeled")
        rest_all = rest_all[: spec.unlabeled_size]
    return (
        LabeledView(ds, np.sort(np.concatenate(labeled))),
        UnlabeledView(ds, np.sort(rest_all)),
        LabeledView(ds, np.sort(np.concatenate(val))),
    )
