"""In-memory labelled image collections."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError, LabelError
from .groups import group_of


@dataclass(frozen=True)
class LabeledImage:
    pixels: np.ndarray
    class_id: int
    group_id: int
    source_path: str = ""


class Dataset:
    """Images stacked as an (N, 1, H, W) float64 array with class and group ids."""

    def __init__(self, images, labels, paths=None, num_classes=43):
        images = np.asarray(images, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if images.ndim != 4 or images.shape[0] != labels.shape[0]:
            raise DataError(f"images {images.shape} and labels {labels.shape} disagree")
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            raise LabelError(f"class ids must lie in [0, {num_classes})")
        if images.size and not np.all(np.isfinite(images)):
            raise DataError("non-finite pixel values")
        self.num_classes = num_classes
        self.images = images
        self.labels = labels
        self.groups = np.array([group_of(c) for c in labels], dtype=np.int64)
        self.paths = list(paths) if paths is not None else [""] * len(labels)

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i):
        return LabeledImage(self.images[i], int(self.labels[i]), int(self.groups[i]), self.paths[i])

    def subset(self, idx):
        idx = np.asarray(idx)
        return Dataset(self.images[idx], self.labels[idx], [self.paths[i] for i in idx], self.num_classes)
