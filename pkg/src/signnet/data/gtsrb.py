"""GTSRB directory ingestion and export.

Expected layout under ``root``::

    Final_Training/Images/000CC/GT-000CC.csv   (one directory per class)
    Final_Training/Images/000CC/*.ppm
    Final_Test/Images/GT-final_test.csv
    Final_Test/Images/*.ppm

CSV files are semicolon-delimited with the header
``Filename;Width;Height;Roi.X1;Roi.Y1;Roi.X2;Roi.Y2;ClassId``.
"""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from ..errors import DataError
from .dataset import Dataset
from .ppm import read_pnm, to_gray, write_ppm
from .resize import resize_bicubic

log = logging.getLogger(__name__)

HEADER = ["Filename", "Width", "Height", "Roi.X1", "Roi.Y1", "Roi.X2", "Roi.Y2", "ClassId"]
IMAGE_SIZE = 128
NUM_CLASSES = 43
TRAIN_COUNT = 39_209
TEST_COUNT = 12_630
ROOT_ENV = "SIGNNET_GTSRB_ROOT"


def _train_dir(root):
    return Path(root) / "Final_Training" / "Images"


def _test_dir(root):
    return Path(root) / "Final_Test" / "Images"


def read_annotations(csv_path):
    """Parse one GTSRB annotation file into a list of record dicts."""
    csv_path = Path(csv_path)
    try:
        fh = open(csv_path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{csv_path}: {exc.strerror or exc}") from exc
    records = []
    with fh:
        reader = csv.reader(fh, delimiter=";")
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != HEADER:
            raise DataError(f"{csv_path}:1: unexpected header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != len(HEADER):
                raise DataError(f"{csv_path}:{lineno}: expected {len(HEADER)} fields, found {len(row)}")
            try:
                nums = [int(f) for f in row[1:]]
            except ValueError as exc:
                raise DataError(f"{csv_path}:{lineno}: malformed numeric field ({exc})") from exc
            width, height, x1, y1, x2, y2, class_id = nums
            if not 0 <= class_id < NUM_CLASSES:
                raise DataError(f"{csv_path}:{lineno}: class id {class_id} outside [0, {NUM_CLASSES})")
            records.append({
                "path": csv_path.parent / row[0].strip(),
                "width": width, "height": height,
                "roi": (x1, y1, x2, y2), "class_id": class_id,
            })
    return records


def crop_roi(img, roi, path=""):
    """Crop to the inclusive ROI box, clamping it to the image bounds."""
    h, w = img.shape[:2]
    x1, y1, x2, y2 = roi
    cx1, cy1 = min(max(x1, 0), w - 1), min(max(y1, 0), h - 1)
    cx2, cy2 = min(max(x2, cx1), w - 1), min(max(y2, cy1), h - 1)
    if (cx1, cy1, cx2, cy2) != (x1, y1, x2, y2):
        log.warning("%s: ROI %s clamped to image %dx%d", path, roi, w, h)
    return img[cy1:cy2 + 1, cx1:cx2 + 1]


def preprocess(img, roi=None, size=IMAGE_SIZE, path=""):
    """ROI crop -> Rec. 601 gray -> bicubic resize -> clip to [0, 1]."""
    if roi is not None:
        img = crop_roi(img, roi, path)
    gray = to_gray(img)
    return np.clip(resize_bicubic(gray, size, size), 0.0, 1.0)


def _load_record(rec, crop, size):
    img = read_pnm(rec["path"])
    return preprocess(img, rec["roi"] if crop else None, size, str(rec["path"]))


def split_records(root, split):
    if split == "train":
        base = _train_dir(root)
        if not base.is_dir():
            raise DataError(f"{base}: training directory not found")
        records = []
        for class_id in range(NUM_CLASSES):
            d = base / f"{class_id:05d}"
            if not d.is_dir():
                continue
            records.extend(read_annotations(d / f"GT-{class_id:05d}.csv"))
        if not records:
            raise DataError(f"{base}: no class directories with annotations")
        return records
    if split == "test":
        return read_annotations(_test_dir(root) / "GT-final_test.csv")
    raise DataError(f"unknown split {split!r}; use 'train' or 'test'")


def load_gtsrb(root_path, split="train", crop=True, size=IMAGE_SIZE, workers=None, limit=None):
    """Load one split as a :class:`Dataset` of 1 x size x size images in [0, 1].

    Order follows the annotation files regardless of ``workers``.
    """
    records = split_records(root_path, split)
    if limit is not None:
        records = records[:limit]
    workers = workers or min(8, os.cpu_count() or 1)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        images = list(pool.map(lambda r: _load_record(r, crop, size), records))
    arr = np.stack(images)[:, None] if images else np.zeros((0, 1, size, size))
    labels = np.array([r["class_id"] for r in records], dtype=np.int64)
    return Dataset(arr, labels, [str(r["path"]) for r in records])


def default_root():
    return os.environ.get(ROOT_ENV)


def export_gtsrb_layout(dataset, root, split="train"):
    """Write ``dataset`` as 8-bit gray PPMs plus annotation CSVs in the GTSRB layout."""
    root = Path(root)
    rows_by_dir = {}
    for i in range(len(dataset)):
        item = dataset[i]
        if split == "train":
            d = _train_dir(root) / f"{item.class_id:05d}"
            csv_name = f"GT-{item.class_id:05d}.csv"
        else:
            d = _test_dir(root)
            csv_name = "GT-final_test.csv"
        d.mkdir(parents=True, exist_ok=True)
        pix = np.rint(np.clip(item.pixels[0], 0, 1) * 255).astype(np.uint8)
        h, w = pix.shape
        fname = f"{i:05d}.ppm"
        write_ppm(d / fname, np.repeat(pix[:, :, None], 3, axis=2))
        rows_by_dir.setdefault((d, csv_name), []).append([fname, w, h, 0, 0, w - 1, h - 1, item.class_id])
    for (d, csv_name), rows in rows_by_dir.items():
        with open(d / csv_name, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, delimiter=";", lineterminator="\n")
            writer.writerow(HEADER)
            writer.writerows(rows)
