"""Spatial transformer layer: localisation net, affine grid, bilinear sampler.

Coordinates are normalized to [-1, 1] with -1 and +1 at the centres of the
first and last pixel, so the identity affine map reproduces its input exactly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .layers import TRAIN, ConvUnit, DenseUnit, Linear, MaxPool, Module
from .tensor import as_tensor, make_result

IDENTITY_THETA = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])

# Pixel coordinates within this distance of an integer are treated as integer,
# so nodes that land on pixel centres reproduce the pixel bit-exactly.
_SNAP = 1e-9


@dataclass(frozen=True)
class STSpec:
    """One localisation network: conv -> [pool] -> conv -> [pool] -> fc -> fc -> 6."""

    conv1_channels: int
    conv1_kernel: int
    conv1_stride: int
    pool1: bool
    conv2_channels: int
    conv2_kernel: int
    conv2_stride: int
    pool2: bool
    fc1_width: int
    fc2_width: int
    regression_outputs: int = 6

    def __post_init__(self):
        if self.regression_outputs != 6:
            raise ConfigError("an affine localisation network regresses exactly 6 values")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# Localisation networks of the three transformer variants.
ST1 = STSpec(128, 5, 2, True, 192, 5, 2, True, 192, 192)
ST2 = STSpec(128, 5, 2, True, 192, 5, 2, False, 192, 192)
ST3 = STSpec(128, 3, 2, False, 192, 3, 1, True, 192, 192)
ST_PRESETS = {"ST1": ST1, "ST2": ST2, "ST3": ST3}


def affine_grid(theta, out_height, out_width):
    """Source coordinates for every output pixel.

    ``theta`` has shape (N, 2, 3) or (N, 6); the result has shape
    (N, out_height, out_width, 2) holding (x_src, y_src).
    """
    if out_height < 1 or out_width < 1:
        raise ConfigError(f"grid extents must be >= 1, got {out_height}x{out_width}")
    t = as_tensor(theta)
    n = t.shape[0]
    if t.size != 6 * n:
        raise ShapeError(f"theta must hold 6 values per batch item, got shape {t.shape}", "theta")
    tm = t.data.reshape(n, 2, 3)
    base = target_coordinates(out_height, out_width).reshape(-1, 3)
    grid = np.matmul(base, tm.transpose(0, 2, 1)).reshape(n, out_height, out_width, 2)

    def backward(g):
        gm = g.reshape(n, -1, 2).transpose(0, 2, 1)
        t.accumulate(np.matmul(gm, base).reshape(t.shape))

    return make_result(grid, (t,), backward)


def target_coordinates(height, width):
    """Homogeneous normalized coordinates (x_o, y_o, 1) of an output raster."""
    xs = _normalized_axis(width)
    ys = _normalized_axis(height)
    base = np.empty((height, width, 3))
    base[..., 0] = xs[None, :]
    base[..., 1] = ys[:, None]
    base[..., 2] = 1.0
    return base


def _normalized_axis(n):
    if n == 1:
        return np.zeros(1)
    return -1.0 + 2.0 * np.arange(n) / (n - 1)


def _to_pixels(coord, extent):
    scale = (extent - 1) / 2.0
    p = (coord + 1.0) * scale
    r = np.rint(p)
    return np.where(np.abs(p - r) < _SNAP, r, p), scale


def bilinear_sample(input, grid):
    """Sample ``input`` (N, C, H, W) at ``grid`` (N, H', W', 2) bilinearly.

    Corners outside the input contribute zero.
    """
    x, gr = as_tensor(input), as_tensor(grid)
    if x.ndim != 4 or gr.ndim != 4 or gr.shape[-1] != 2:
        raise ShapeError(f"bilinear_sample needs (N,C,H,W) input and (N,H',W',2) grid, got {x.shape}, {gr.shape}", "rank")
    if gr.shape[0] != x.shape[0]:
        raise ShapeError(f"grid batch {gr.shape[0]} != input batch {x.shape[0]}", "batch")
    n, c, h, w = x.shape
    ho, wo = gr.shape[1], gr.shape[2]
    px, sx = _to_pixels(gr.data[..., 0].reshape(n, -1), w)
    py, sy = _to_pixels(gr.data[..., 1].reshape(n, -1), h)
    x0 = np.floor(px).astype(np.int64)
    y0 = np.floor(py).astype(np.int64)
    fx = px - x0
    fy = py - y0
    flat = x.data.reshape(n, c, h * w)

    corners = []
    for dy, wy, dwy in ((0, 1.0 - fy, -1.0), (1, fy, 1.0)):
        for dx, wx, dwx in ((0, 1.0 - fx, -1.0), (1, fx, 1.0)):
            yi, xi = y0 + dy, x0 + dx
            valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            idx = np.where(valid, yi * w + xi, 0)
            vals = np.take_along_axis(flat, np.broadcast_to(idx[:, None, :], (n, c, idx.shape[1])), axis=2)
            vals = vals * valid[:, None, :]
            corners.append((idx, valid, wy, wx, dwy, dwx, vals))

    out = np.zeros((n, c, ho * wo))
    for _, _, wy, wx, _, _, vals in corners:
        out += (wy * wx)[:, None, :] * vals
    out = out.reshape(n, c, ho, wo)

    def backward(g):
        g2 = g.reshape(n, c, ho * wo)
        if x.requires_grad:
            base = (np.arange(n)[:, None] * c + np.arange(c)[None, :])[:, :, None] * (h * w)
            acc = np.zeros(n * c * h * w)
            for idx, valid, wy, wx, _, _, _ in corners:
                weight = (wy * wx * valid)[:, None, :] * g2
                target = base + idx[:, None, :]
                acc += np.bincount(target.ravel(), weights=weight.ravel(), minlength=acc.size)
            x.accumulate(acc.reshape(x.shape))
        if gr.requires_grad:
            gx = np.zeros((n, ho * wo))
            gy = np.zeros((n, ho * wo))
            for _, _, wy, wx, dwy, dwx, vals in corners:
                s = (g2 * vals).sum(axis=1)
                gx += s * wy * dwx
                gy += s * wx * dwy
            dgrid = np.stack([gx * sx, gy * sy], axis=-1).reshape(gr.shape)
            gr.accumulate(dgrid)

    return make_result(out, (x, gr), backward)


def _pool_output(extent):
    return ops.out_extent(extent, 2, 2, 0)


class LocalisationNet(Module):
    """Regresses the 6 affine parameters from a feature map.

    The regression layer starts at zero weights with the identity transform
    as bias, so a freshly built transformer passes its input through.
    """

    def __init__(self, in_channels, height, width, spec):
        self.spec = spec
        self.in_channels = in_channels
        self.conv1 = ConvUnit(in_channels, spec.conv1_channels, spec.conv1_kernel, spec.conv1_stride)
        c, h, w = self.conv1.output_shape((in_channels, height, width))
        self.pool1 = MaxPool(2, 2) if spec.pool1 else None
        if self.pool1 is not None:
            h, w = _pool_output(h), _pool_output(w)
        self.conv2 = ConvUnit(c, spec.conv2_channels, spec.conv2_kernel, spec.conv2_stride)
        c, h, w = self.conv2.output_shape((c, h, w))
        self.pool2 = MaxPool(2, 2) if spec.pool2 else None
        if self.pool2 is not None:
            h, w = _pool_output(h), _pool_output(w)
        self.feature_shape = (c, h, w)
        self.fc1 = DenseUnit(c * h * w, spec.fc1_width)
        self.fc2 = DenseUnit(spec.fc1_width, spec.fc2_width)
        self.regression = Linear(spec.fc2_width, spec.regression_outputs)
        self.reset_identity()

    def reset_identity(self):
        self.regression.weight.data = np.zeros_like(self.regression.weight.data)
        self.regression.bias.data = IDENTITY_THETA.copy()

    def forward(self, x, mode=TRAIN, rng=None):
        if x.shape[1] != self.in_channels:
            raise ShapeError(
                f"localisation net expects {self.in_channels} input channels, got {x.shape[1]}", "channels"
            )
        y = self.conv1(x, mode)
        if self.pool1 is not None:
            y = self.pool1(y)
        y = self.conv2(y, mode)
        if self.pool2 is not None:
            y = self.pool2(y)
        y = self.fc1(ops.flatten(y), mode)
        y = self.fc2(y, mode)
        return self.regression(y, mode)


def localize(input, net, mode=TRAIN):
    """Run ``net`` and return theta as an (N, 2, 3) tensor."""
    x = as_tensor(input)
    raw = net(x, mode)
    return ops.reshape(raw, (x.shape[0], 2, 3))


class SpatialTransformer(Module):
    """Localise -> affine grid at the input resolution -> bilinear sample."""

    def __init__(self, in_channels, height, width, spec, label="ST"):
        self.label = label
        self.input_shape = (in_channels, height, width)
        self.loc = LocalisationNet(in_channels, height, width, spec)

    def forward(self, x, mode=TRAIN, rng=None):
        x = as_tensor(x)
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"{self.label} built for {self.input_shape}, got {tuple(x.shape[1:])}", "input")
        theta = localize(x, self.loc, mode)
        grid = affine_grid(theta, x.shape[2], x.shape[3])
        return bilinear_sample(x, grid)

    def output_shape(self, shape):
        return tuple(shape)


def st_layer(input, transformer, mode=TRAIN):
    return transformer(input, mode)
