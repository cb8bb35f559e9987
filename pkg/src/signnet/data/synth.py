"""Deterministic deformed-glyph images standing in for traffic signs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from .dataset import Dataset

MAX_CLASSES = 43
BACKGROUND = 0.15
FOREGROUND = 0.85
GLYPH_RADIUS = 0.45  # half-extent of a glyph in canvas units (canvas spans [-1, 1])


@dataclass(frozen=True)
class Deformation:
    """Ranges of the random per-image warp.

    ``translation`` is a fraction of the image size, ``rotation`` is in
    degrees, ``scale`` a relative change; each is drawn uniformly from
    [-range, +range].  ``noise`` is the std of additive Gaussian noise.
    """

    translation: float = 0.0
    rotation: float = 0.0
    scale: float = 0.0
    noise: float = 0.0


NONE = Deformation()
STANDARD = Deformation(translation=0.2, rotation=15.0, scale=0.0, noise=0.05)


def _disk(u, v):
    return u * u + v * v <= 0.8 ** 2


def _ring(u, v):
    r2 = u * u + v * v
    return (r2 <= 0.9 ** 2) & (r2 >= 0.6 ** 2)


def _tri_up(u, v):
    return (v <= 0.7) & (np.abs(u) <= (v + 0.9) * 0.6)


def _tri_down(u, v):
    return _tri_up(u, -v)


def _square_outline(u, v):
    m = np.maximum(np.abs(u), np.abs(v))
    return (m <= 0.8) & (m >= 0.55)


def _plus(u, v):
    return ((np.abs(u) <= 0.2) & (np.abs(v) <= 0.85)) | ((np.abs(v) <= 0.2) & (np.abs(u) <= 0.85))


def _cross(u, v):
    a, b = (u + v) / np.sqrt(2), (u - v) / np.sqrt(2)
    return _plus(a, b) & (np.maximum(np.abs(u), np.abs(v)) <= 0.8)


def _bars_h(u, v):
    return (np.abs(u) <= 0.8) & (np.abs(np.abs(v) - 0.4) <= 0.17)


def _arrow(u, v):
    shaft = (np.abs(v) <= 0.15) & (u >= -0.85) & (u <= 0.2)
    head = (u >= 0.1) & (u <= 0.9) & (np.abs(v) <= (0.9 - u) * 0.9)
    return shaft | head


def _diamond(u, v):
    return np.abs(u) + np.abs(v) <= 0.9


def _bars_v(u, v):
    return _bars_h(v, u)


def _square(u, v):
    return np.maximum(np.abs(u), np.abs(v)) <= 0.7


PRIMITIVES = (_disk, _ring, _tri_up, _square_outline, _plus, _cross, _bars_h, _arrow,
              _diamond, _tri_down, _bars_v, _square)


def _outline(shape, inset=0.72):
    return lambda u, v: shape(u, v) & ~shape(u / inset, v / inset)


FRAMES = (_ring, _outline(_tri_up), _square_outline)


def glyph(class_id):
    """Indicator function of the glyph for ``class_id`` on glyph coordinates."""
    if class_id < len(PRIMITIVES):
        return PRIMITIVES[class_id]
    k = class_id - len(PRIMITIVES)
    frame = FRAMES[k // len(PRIMITIVES)]
    inner = PRIMITIVES[k % len(PRIMITIVES)]
    return lambda u, v: frame(u, v) | inner(u / 0.45, v / 0.45)


def render(class_id, size=128, shift=(0.0, 0.0), angle=0.0, scale=1.0):
    """Render one glyph; ``shift`` is in canvas units, ``angle`` in radians."""
    axis = -1.0 + 2.0 * (np.arange(size) + 0.5) / size
    xx, yy = np.meshgrid(axis, axis)
    xs, ys = xx - shift[0], yy - shift[1]
    c, s = np.cos(angle), np.sin(angle)
    u = (c * xs + s * ys) / (scale * GLYPH_RADIUS)
    v = (-s * xs + c * ys) / (scale * GLYPH_RADIUS)
    mask = glyph(class_id)(u, v)
    return np.where(mask, FOREGROUND, BACKGROUND)


def synth_dataset(n_classes, n_per_class, deform=STANDARD, seed=0, size=128):
    """``n_classes * n_per_class`` images, class-major, deterministic under ``seed``."""
    if not 1 <= n_classes <= MAX_CLASSES:
        raise ConfigError(f"n_classes must lie in [1, {MAX_CLASSES}], got {n_classes}")
    if n_per_class < 1:
        raise ConfigError(f"n_per_class must be >= 1, got {n_per_class}")
    rng = np.random.default_rng(seed)
    images, labels, paths = [], [], []
    for cls in range(n_classes):
        for i in range(n_per_class):
            t = rng.uniform(-1, 1, 2) * deform.translation * 2.0
            angle = np.deg2rad(rng.uniform(-1, 1) * deform.rotation)
            scale = 1.0 + rng.uniform(-1, 1) * deform.scale
            img = render(cls, size, tuple(t), angle, scale)
            if deform.noise:
                img = img + rng.normal(0.0, deform.noise, img.shape)
            images.append(np.clip(img, 0.0, 1.0))
            labels.append(cls)
            paths.append(f"synthetic/{seed}/{cls:05d}/{i:05d}")
    return Dataset(np.stack(images)[:, None], labels, paths)


TRAIN_PER_CLASS = 50
TEST_PER_CLASS = 25


def synthetic_splits(n_classes, seed=0, deform=STANDARD, size=128,
                     train_per_class=TRAIN_PER_CLASS, test_per_class=TEST_PER_CLASS):
    """Independent train and test sets; ``seed`` selects the pair deterministically."""
    train = synth_dataset(n_classes, train_per_class, deform, seed=2 * seed, size=size)
    test = synth_dataset(n_classes, test_per_class, deform, seed=2 * seed + 1, size=size)
    return train, test
