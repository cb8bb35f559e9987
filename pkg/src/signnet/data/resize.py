"""Separable bicubic resampling with the Catmull-Rom kernel."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError

CATMULL_ROM_A = -0.5


def cubic_kernel(t, a=CATMULL_ROM_A):
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


def _weights(n_in, n_out, a):
    """(n_out, n_in) interpolation matrix with pixel-centre alignment and edge replication."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src).astype(np.int64)
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    for k in range(-1, 3):
        taps = base + k
        w = cubic_kernel(src - taps, a)
        np.add.at(m, (rows, np.clip(taps, 0, n_in - 1)), w)
    return m


def resize_bicubic(image, out_h, out_w, a=CATMULL_ROM_A):
    """Resize a 2-D array to (out_h, out_w)."""
    if out_h < 1 or out_w < 1:
        raise ConfigError(f"output extents must be >= 1, got {out_h}x{out_w}")
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ConfigError(f"resize_bicubic expects a 2-D image, got shape {img.shape}")
    wy = _weights(img.shape[0], out_h, a)
    wx = _weights(img.shape[1], out_w, a)
    return wy @ img @ wx.T
