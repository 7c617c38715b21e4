"""Datasets: binary ingestion, synthetic generation, and task splitting.

The on-disk format is a flat binary container (magic "SPDS"): header of
little-endian u32 fields (version, sample count, channels, height,
width, class count), then all labels as u16, then all pixels as float32
in [0, 1], sample-major row-major. A dataset directory holds one file
per split: ``train.spds`` and ``test.spds``.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .errors import FormatError, ValidationError
from .rng import substream

SPDS_MAGIC = b"SPDS"
SPDS_VERSION = 1
TRAIN_FILE = "train.spds"
TEST_FILE = "test.spds"


@dataclass
class Dataset:
    """Images (n, c, h, w) float32 in [0, 1] with integer labels."""

    images: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ValidationError(f"images must be (n, c, h, w), got shape {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ValidationError("one label per sample required")

    def __len__(self) -> int:
        return self.images.shape[0]


def write_spds(path, dataset: Dataset) -> None:
    n, c, h, w = dataset.images.shape
    with open(path, "wb") as fh:
        fh.write(SPDS_MAGIC)
        fh.write(struct.pack("<IIIIII", SPDS_VERSION, n, c, h, w, dataset.num_classes))
        fh.write(dataset.labels.astype("<u2").tobytes())
        fh.write(np.ascontiguousarray(dataset.images, dtype="<f4").tobytes())


def read_spds(path) -> Dataset:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != SPDS_MAGIC:
        raise FormatError(f"{path}: bad magic; not a dataset file", offset=0)
    header_end = 4 + 24
    if len(data) < header_end:
        raise FormatError(f"{path}: truncated header", offset=len(data))
    version, n, c, h, w, num_classes = struct.unpack("<IIIIII", data[4:header_end])
    if version != SPDS_VERSION:
        raise FormatError(f"{path}: unsupported version {version}", offset=4)
    labels_end = header_end + 2 * n
    pixels_end = labels_end + 4 * n * c * h * w
    if len(data) != pixels_end:
        raise FormatError(
            f"{path}: expected {pixels_end} bytes, file has {len(data)}",
            offset=min(len(data), labels_end),
        )
    labels = np.frombuffer(data, dtype="<u2", count=n, offset=header_end).astype(np.int64)
    pixels = np.frombuffer(data, dtype="<f4", count=n * c * h * w, offset=labels_end)
    images = pixels.reshape(n, c, h, w).copy()
    return Dataset(images, labels, int(num_classes))


def write_dataset_dir(directory, train: Dataset, test: Dataset) -> None:
    os.makedirs(directory, exist_ok=True)
    write_spds(os.path.join(directory, TRAIN_FILE), train)
    write_spds(os.path.join(directory, TEST_FILE), test)


def read_dataset_dir(directory) -> Tuple[Dataset, Dataset]:
    return (
        read_spds(os.path.join(directory, TRAIN_FILE)),
        read_spds(os.path.join(directory, TEST_FILE)),
    )


def generate_blobs(
    classes: int, samples_per_class: int, image_size: int, seed: int
) -> Tuple[Dataset, Dataset]:
    """Class-conditional Gaussian blobs, split 80/20 into train/test.

    Each class renders a soft blob at a class-specific position and
    scale (centers spread over a ring), with small per-sample jitter and
    pixel noise, so classes are separable by construction.
    """
    if classes < 2:
        raise ValidationError(f"need at least 2 classes, got {classes}")
    if samples_per_class < 5:
        raise ValidationError("need at least 5 samples per class for an 80/20 split")
    rng = substream(seed, "blobs")
    size = image_size
    half = (size - 1) / 2.0
    ring = 0.58 * half
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)

    images = []
    labels = []
    for c in range(classes):
        angle = 2.0 * np.pi * c / classes
        base_cy = half + ring * np.sin(angle)
        base_cx = half + ring * np.cos(angle)
        base_sigma = size / 14.0 * (1.0 + 0.5 * (c % 3))
        for _ in range(samples_per_class):
            cy = base_cy + rng.normal(0.0, size / 40.0)
            cx = base_cx + rng.normal(0.0, size / 40.0)
            sigma = base_sigma * rng.uniform(0.9, 1.1)
            blob = np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma**2)))
            blob += rng.normal(0.0, 0.03, size=blob.shape)
            images.append(np.clip(blob, 0.0, 1.0).astype(np.float32)[None, :, :])
            labels.append(c)

    images_arr = np.stack(images)
    labels_arr = np.asarray(labels, dtype=np.int64)

    train_idx = []
    test_idx = []
    n_train = int(round(samples_per_class * 0.8))
    for c in range(classes):
        idx = np.nonzero(labels_arr == c)[0]
        order = rng.permutation(len(idx))
        train_idx.extend(idx[order[:n_train]])
        test_idx.extend(idx[order[n_train:]])
    train_idx = np.asarray(sorted(train_idx))
    test_idx = np.asarray(sorted(test_idx))
    train = Dataset(images_arr[train_idx], labels_arr[train_idx], classes)
    test = Dataset(images_arr[test_idx], labels_arr[test_idx], classes)
    return train, test


@dataclass
class TaskData:
    """One task's class list and its routed samples.

    ``classes`` holds the original dataset labels, sorted; local label j
    refers to ``classes[j]``. ``class_offset`` is the task's first index
    in the concatenated (global) class vector.
    """

    classes: List[int]
    class_offset: int
    train_images: np.ndarray
    train_labels: np.ndarray  # task-local indices
    test_images: np.ndarray
    test_labels: np.ndarray  # task-local indices

    @property
    def num_classes(self) -> int:
        return len(self.classes)


@dataclass
class TaskStream:
    tasks: List[TaskData]
    image_shape: Tuple[int, int, int]

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)

    @property
    def total_classes(self) -> int:
        return sum(t.num_classes for t in self.tasks)


def split_dataset(train: Dataset, test: Dataset, num_tasks: int, seed: int) -> TaskStream:
    """Shuffle classes by seed and partition them into equal task groups."""
    if num_tasks < 1:
        raise ValidationError(f"num_tasks must be positive, got {num_tasks}")
    num_classes = train.num_classes
    if num_classes % num_tasks != 0:
        raise ValidationError(
            f"{num_classes} classes do not divide evenly into {num_tasks} tasks"
        )
    rng = substream(seed, "split")
    permuted = rng.permutation(num_classes)
    per_task = num_classes // num_tasks

    tasks = []
    offset = 0
    for t in range(num_tasks):
        group = sorted(int(c) for c in permuted[t * per_task : (t + 1) * per_task])
        local = {c: j for j, c in enumerate(group)}

        def route(ds: Dataset):
            mask = np.isin(ds.labels, group)
            images = ds.images[mask]
            labels = np.asarray([local[int(l)] for l in ds.labels[mask]], dtype=np.int64)
            return images, labels

        train_images, train_labels = route(train)
        test_images, test_labels = route(test)
        tasks.append(
            TaskData(group, offset, train_images, train_labels, test_images, test_labels)
        )
        offset += per_task
    return TaskStream(tasks, tuple(train.images.shape[1:]))
