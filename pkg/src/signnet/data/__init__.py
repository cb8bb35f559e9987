"""Dataset ingestion, preprocessing and synthetic stand-ins."""

from .dataset import Dataset, LabeledImage
from .groups import GROUP_MAP, GROUPS, group_name, group_of
from .gtsrb import export_gtsrb_layout, load_gtsrb, preprocess, read_annotations
from .resize import cubic_kernel, resize_bicubic
from .synth import Deformation, synth_dataset, synthetic_splits

__all__ = [
    "Dataset", "LabeledImage", "GROUPS", "GROUP_MAP", "group_of", "group_name",
    "load_gtsrb", "export_gtsrb_layout", "preprocess", "read_annotations",
    "resize_bicubic", "cubic_kernel", "Deformation", "synth_dataset", "synthetic_splits",
]
