"""Datasets, normalization and augmentation.

Images are float64 arrays shaped [N, C, H, W] with values in [0, 1] before
normalization. All randomness comes from explicitly seeded generators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, FormatError

CIFAR10_RECORD = 1 + 3 * 32 * 32
CIFAR100_RECORD = 2 + 3 * 32 * 32
CIFAR10_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR10_TEST_FILE = "test_batch.bin"


@dataclass
class LabeledImageSet:
    images: np.ndarray
    labels: np.ndarray
    split: str = "train"
    num_classes: int = 10

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise ConfigurationError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ConfigurationError(f"labels outside [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)


@dataclass(frozen=True)
class AugmentPolicy:
    pad: int = 4
    crop: int = 32
    hflip_prob: float = 0.5
    cutout_size: int = 16
    channel_mean: tuple = (0.0, 0.0, 0.0)
    channel_std: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.pad < 0 or self.cutout_size < 0:
            raise ConfigurationError("pad and cutout_size must be non-negative")
        if self.cutout_size > self.crop:
            raise ConfigurationError(f"cutout {self.cutout_size} larger than crop {self.crop}")
        if not 0 <= self.hflip_prob <= 1:
            raise ConfigurationError("hflip_prob must be in [0, 1]")


# ---------------------------------------------------------------------------
# CIFAR-10 binary


def parse_cifar10_bytes(raw: bytes) -> tuple[np.ndarray, np.ndarray]:
    """Decode CIFAR-10 binary records into (uint8 images [N,3,32,32], labels)."""
    n, rest = divmod(len(raw), CIFAR10_RECORD)
    if rest:
        if len(raw) % CIFAR100_RECORD == 0:
            raise FormatError(
                "record size 3074 looks like CIFAR-100, which is not supported", 0
            )
        raise FormatError("truncated CIFAR-10 record", n * CIFAR10_RECORD)
    buf = np.frombuffer(raw, dtype=np.uint8).reshape(n, CIFAR10_RECORD)
    labels = buf[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise FormatError(f"label {labels[bad[0]]} > 9", int(bad[0]) * CIFAR10_RECORD)
    images = buf[:, 1:].reshape(n, 3, 32, 32).copy()
    return images, labels


def write_cifar10_records(path, images: np.ndarray, labels) -> None:
    images = np.asarray(images, dtype=np.uint8).reshape(-1, 3 * 32 * 32)
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1, 1)
    Path(path).write_bytes(np.concatenate([labels, images], axis=1).tobytes())


def read_cifar10_file(path) -> tuple[np.ndarray, np.ndarray]:
    try:
        return parse_cifar10_bytes(Path(path).read_bytes())
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


def read_cifar10(directory) -> tuple[LabeledImageSet, LabeledImageSet]:
    """Load the five training batches and the test batch from ``directory``."""
    directory = Path(directory)
    missing = [f for f in CIFAR10_TRAIN_FILES + (CIFAR10_TEST_FILE,) if not (directory / f).exists()]
    if missing:
        raise FormatError(f"missing CIFAR-10 files in {directory}: {missing}")
    parts = [read_cifar10_file(directory / f) for f in CIFAR10_TRAIN_FILES]
    train_img = np.concatenate([p[0] for p in parts])
    train_lab = np.concatenate([p[1] for p in parts])
    test_img, test_lab = read_cifar10_file(directory / CIFAR10_TEST_FILE)
    return (
        LabeledImageSet(train_img / 255.0, train_lab, "train", 10),
        LabeledImageSet(test_img / 255.0, test_lab, "test", 10),
    )


# ---------------------------------------------------------------------------
# toy set

TOY_SIZE = 16
TOY_CLASSES = 3


def _draw_shape(kind: int, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy, cx = rng.uniform(6.0, size - 6.0, size=2)
    r = rng.uniform(4.0, 6.0)
    dy, dx = yy - cy, xx - cx
    if kind == 0:  # disk
        return (np.hypot(dy, dx) <= r).astype(np.float64)
    if kind == 1:  # hollow square
        cheb = np.maximum(np.abs(dy), np.abs(dx))
        return ((cheb <= r) & (cheb >= r - 1.6)).astype(np.float64)
    # plus sign
    bar = 1.0
    return (((np.abs(dy) <= bar) & (np.abs(dx) <= r)) | ((np.abs(dx) <= bar) & (np.abs(dy) <= r))).astype(
        np.float64
    )


def _toy_split(rng: np.random.Generator, n: int, split: str) -> LabeledImageSet:
    labels = np.arange(n) % TOY_CLASSES
    rng.shuffle(labels)
    palette = np.array([[0.9, 0.3, 0.2], [0.3, 0.8, 0.3], [0.25, 0.35, 0.9]])
    images = np.empty((n, 3, TOY_SIZE, TOY_SIZE))
    for i, y in enumerate(labels):
        mask = _draw_shape(int(y), TOY_SIZE, rng)
        # colour is only weakly tied to the class
        hue = palette[y] if rng.random() < 0.4 else palette[rng.integers(TOY_CLASSES)]
        colour = np.clip(hue + rng.normal(0, 0.15, 3), 0, 1)
        background = rng.uniform(0.1, 0.5, 3)
        img = background[:, None, None] * (1 - mask) + colour[:, None, None] * mask
        img += rng.normal(0, 0.1, img.shape)
        images[i] = np.clip(img, 0, 1)
    return LabeledImageSet(images, labels, split, TOY_CLASSES)


def make_toy_set(seed: int, n_train: int, n_test: int) -> tuple[LabeledImageSet, LabeledImageSet]:
    """Deterministic 3-class 3x16x16 shape dataset (disk / square / plus)."""
    if n_train < 1 or n_test < 1:
        raise ConfigurationError("n_train and n_test must be >= 1")
    train_ss, test_ss = np.random.SeedSequence(seed).spawn(2)
    return (
        _toy_split(np.random.default_rng(train_ss), n_train, "train"),
        _toy_split(np.random.default_rng(test_ss), n_test, "test"),
    )


# ---------------------------------------------------------------------------
# preprocessing


def channel_stats(images: np.ndarray) -> tuple[tuple, tuple]:
    mean = images.mean(axis=(0, 2, 3))
    std = images.std(axis=(0, 2, 3))
    return tuple(float(v) for v in mean), tuple(float(v) for v in std)


def normalize(dataset: LabeledImageSet, policy: AugmentPolicy) -> LabeledImageSet:
    mean = np.asarray(policy.channel_mean, dtype=np.float64)
    std = np.asarray(policy.channel_std, dtype=np.float64)
    if (std <= 0).any():
        raise ConfigurationError(f"channel std must be positive, got {policy.channel_std}")
    images = (dataset.images - mean[None, :, None, None]) / std[None, :, None, None]
    return replace(dataset, images=images)


def cutout_bounds(cy: int, cx: int, size: int, h: int, w: int) -> tuple[int, int, int, int]:
    """Square of side ``size`` starting at (cy - size//2, cx - size//2), clipped."""
    y0, x0 = cy - size // 2, cx - size // 2
    return max(0, y0), min(h, y0 + size), max(0, x0), min(w, x0 + size)


def augment_image(img: np.ndarray, policy: AugmentPolicy, rng: np.random.Generator) -> np.ndarray:
    """Pad, random-crop, maybe flip, then zero one cutout square."""
    c, h, w = img.shape
    if h != policy.crop or w != policy.crop:
        raise ConfigurationError(f"image is {h}x{w}, policy crop is {policy.crop}")
    out = img
    if policy.pad:
        p = policy.pad
        padded = np.pad(img, ((0, 0), (p, p), (p, p)))
        oy, ox = rng.integers(0, 2 * p + 1, size=2)
        out = padded[:, oy : oy + h, ox : ox + w]
    if policy.hflip_prob and rng.random() < policy.hflip_prob:
        out = out[:, :, ::-1]
    out = np.array(out)
    if policy.cutout_size:
        cy, cx = rng.integers(0, h), rng.integers(0, w)
        y0, y1, x0, x1 = cutout_bounds(int(cy), int(cx), policy.cutout_size, h, w)
        out[:, y0:y1, x0:x1] = 0.0
    return out


def sample_rng(key, epoch: int, index: int) -> np.random.Generator:
    """Per-sample generator keyed by (*key, epoch, index)."""
    return np.random.default_rng([*key, epoch, index])


def augment_batch(batch: np.ndarray, policy: AugmentPolicy, key, epoch: int, indices) -> np.ndarray:
    """Augment each image with its own generator.

    The result for a sample depends only on ``key``, ``epoch`` and the sample's
    dataset index, so batching order and sharding do not change it.
    """
    if not len(batch):
        return batch.copy()
    return np.stack(
        [augment_image(img, policy, sample_rng(key, epoch, int(i))) for img, i in zip(batch, indices)]
    )


def cifar_policy(mean=(0.0, 0.0, 0.0), std=(1.0, 1.0, 1.0)) -> AugmentPolicy:
    return AugmentPolicy(4, 32, 0.5, 16, tuple(mean), tuple(std))


def toy_policy(mean=(0.0, 0.0, 0.0), std=(1.0, 1.0, 1.0)) -> AugmentPolicy:
    # CIFAR settings halved for 16x16 images
    return AugmentPolicy(2, TOY_SIZE, 0.5, 8, tuple(mean), tuple(std))


def batches(n: int, batch_size: int, rng: np.random.Generator | None = None):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def num_batches(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)
