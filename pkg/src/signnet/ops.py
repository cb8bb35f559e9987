"""Differentiable primitives the traffic-sign network is composed from.

All operators take and return :class:`~signnet.tensor.Tensor` objects,
never mutate their inputs, and attach exact analytic backward rules.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, LabelError, ShapeError, StatisticsError
from .tensor import Parameter, Tensor, as_tensor, make_result

TRAIN = "train"
INFER = "infer"


def _check_mode(mode):
    if mode not in (TRAIN, INFER):
        raise ConfigError(f"mode must be 'train' or 'infer', got {mode!r}")


def out_extent(size, kernel, stride, padding):
    """Output extent of a sliding window, or ConfigError if it is < 1."""
    if kernel < 1 or stride < 1 or padding < 0:
        raise ConfigError(f"invalid window geometry kernel={kernel} stride={stride} padding={padding}")
    n = (size + 2 * padding - kernel) // stride + 1
    if n < 1:
        raise ConfigError(
            f"window kernel={kernel} stride={stride} padding={padding} on extent {size} gives output extent {n}"
        )
    return n


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: tuple = (3, 3)
    stride: int = 1
    padding: int = 0
    has_bias: bool = False

    def __post_init__(self):
        k = self.kernel if isinstance(self.kernel, tuple) else (self.kernel, self.kernel)
        object.__setattr__(self, "kernel", tuple(int(v) for v in k))
        if min(self.kernel) < 1 or self.stride < 1 or self.padding < 0:
            raise ConfigError(f"invalid convolution geometry {self}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError(f"channel counts must be positive: {self}")

    @property
    def weight_shape(self):
        return (self.out_channels, self.in_channels) + self.kernel

    def output_hw(self, h, w):
        kh, kw = self.kernel
        return out_extent(h, kh, self.stride, self.padding), out_extent(w, kw, self.stride, self.padding)


def _pad(x, padding, value=0.0):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=value)


def _windows(xp, kh, kw, stride, ho, wo):
    """Stack every kernel tap: result has shape (N, C, kh*kw, ho, wo)."""
    hi, wi = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    return np.stack(
        [xp[:, :, i:i + hi:stride, j:j + wi:stride] for i in range(kh) for j in range(kw)], axis=2
    )


def _scatter_windows(dcols, padded_shape, kh, kw, stride, ho, wo, padding):
    """Adjoint of :func:`_windows` followed by removal of padding."""
    dxp = np.zeros(padded_shape)
    hi, wi = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    k = 0
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + hi:stride, j:j + wi:stride] += dcols[:, :, k]
            k += 1
    if padding:
        dxp = dxp[:, :, padding:-padding, padding:-padding]
    return dxp


def conv2d(input, weights, bias=None, spec=None):
    """2-D cross-correlation of an (N, C, H, W) batch.

    ``spec`` defaults to stride 1 and no padding with geometry read from
    ``weights`` (shape ``(out, in, kh, kw)``).
    """
    x, w = as_tensor(input), as_tensor(weights)
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects a 4-D input, got shape {x.shape}", "rank")
    if spec is None:
        o, c, kh, kw = w.shape
        spec = ConvSpec(c, o, (kh, kw), has_bias=bias is not None)
    n, c, h, wd = x.shape
    if c != spec.in_channels:
        raise ShapeError(f"conv2d input has {c} channels, spec expects {spec.in_channels}", "channels")
    if w.shape != spec.weight_shape:
        raise ShapeError(f"conv2d weights have shape {w.shape}, expected {spec.weight_shape}", "weights")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (spec.out_channels,):
            raise ShapeError(f"conv2d bias has shape {bias.shape}, expected ({spec.out_channels},)", "bias")
    kh, kw = spec.kernel
    s, p = spec.stride, spec.padding
    ho, wo = spec.output_hw(h, wd)

    xp = _pad(x.data, p)
    pointwise = kh == kw == 1 and s == 1 and p == 0
    if pointwise:
        cols = xp.reshape(n, c, h * wd)
    else:
        cols = _windows(xp, kh, kw, s, ho, wo).reshape(n, c * kh * kw, ho * wo)
    wm = w.data.reshape(spec.out_channels, -1)
    out = np.matmul(wm, cols)
    if bias is not None:
        out = out + bias.data[None, :, None]
    out = out.reshape(n, spec.out_channels, ho, wo)

    parents = (x, w) if bias is None else (x, w, bias)

    def backward(g):
        g2 = g.reshape(n, spec.out_channels, ho * wo)
        if w.requires_grad:
            w.accumulate(np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape))
        if bias is not None and bias.requires_grad:
            bias.accumulate(g2.sum(axis=(0, 2)))
        if x.requires_grad:
            dcols = np.matmul(wm.T, g2)
            if pointwise:
                x.accumulate(dcols.reshape(x.shape))
            else:
                x.accumulate(_scatter_windows(dcols.reshape(n, c, kh * kw, ho, wo), xp.shape, kh, kw, s, ho, wo, p))

    return make_result(out, parents, backward)


def maxpool2d(input, kernel, stride, padding=0):
    """Per-window maximum; ties send the gradient to the first tap in row-major order."""
    x = as_tensor(input)
    n, c, h, w = x.shape
    if padding * 2 > kernel:
        raise ConfigError(f"max-pool padding {padding} exceeds half the kernel {kernel}")
    ho, wo = out_extent(h, kernel, stride, padding), out_extent(w, kernel, stride, padding)
    xp = _pad(x.data, padding, -np.inf)
    hp, wp = xp.shape[2], xp.shape[3]
    hi, wi = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    taps = [(i, j) for i in range(kernel) for j in range(kernel)]

    def tap(i, j):
        return xp[:, :, i:i + hi:stride, j:j + wi:stride]

    out = tap(0, 0).copy()
    for i, j in taps[1:]:
        np.maximum(out, tap(i, j), out=out)

    def backward(g):
        # winning tap per window; walking taps backwards lets the earliest tie overwrite last
        arg = np.zeros(out.shape, dtype=np.intp)
        for k in range(len(taps) - 1, -1, -1):
            np.copyto(arg, k, where=tap(*taps[k]) == out)
        # flat index into xp of each window's winning tap, then one scatter-add
        offsets = np.array([i * wp + j for i, j in taps], dtype=np.intp)
        corner = (np.arange(ho)[:, None] * stride * wp + np.arange(wo)[None, :] * stride)
        planes = (np.arange(n * c) * hp * wp).reshape(n, c, 1, 1)
        flat = planes + corner + offsets[arg]
        dxp = np.bincount(flat.ravel(), weights=g.ravel(), minlength=xp.size).reshape(xp.shape)
        if padding:
            dxp = dxp[:, :, padding:-padding, padding:-padding]
        x.accumulate(dxp)

    return make_result(out, (x,), backward)


def avgpool2d(input, kernel, stride):
    """Per-window mean without padding."""
    x = as_tensor(input)
    n, c, h, w = x.shape
    ho, wo = out_extent(h, kernel, stride, 0), out_extent(w, kernel, stride, 0)
    area = kernel * kernel
    if kernel == stride and h == ho * kernel and w == wo * kernel:
        # non-overlapping windows tile the input exactly
        out = x.data.reshape(n, c, ho, kernel, wo, kernel).mean(axis=(3, 5))

        def backward(g):
            dx = np.broadcast_to((g / area)[:, :, :, None, :, None], (n, c, ho, kernel, wo, kernel))
            x.accumulate(dx.reshape(x.shape))

        return make_result(out, (x,), backward)

    win = _windows(x.data, kernel, kernel, stride, ho, wo)
    out = win.mean(axis=2)

    def backward(g):
        dcols = np.broadcast_to((g / area)[:, :, None], (n, c, area, ho, wo))
        x.accumulate(_scatter_windows(dcols, x.shape, kernel, kernel, stride, ho, wo, 0))

    return make_result(out, (x,), backward)


def linear(input, weights, bias=None):
    """``input @ weights.T + bias`` with weights of shape (K, D)."""
    x, w = as_tensor(input), as_tensor(weights)
    if x.ndim != 2 or w.ndim != 2:
        raise ShapeError(f"linear expects 2-D input and weights, got {x.shape} and {w.shape}", "rank")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear input width {x.shape[1]} does not match weight inner extent {w.shape[1]}", "features")
    out = x.data @ w.data.T
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (w.shape[0],):
            raise ShapeError(f"linear bias has shape {bias.shape}, expected ({w.shape[0]},)", "bias")
        out = out + bias.data
    parents = (x, w) if bias is None else (x, w, bias)

    def backward(g):
        if x.requires_grad:
            x.accumulate(g @ w.data)
        if w.requires_grad:
            w.accumulate(g.T @ x.data)
        if bias is not None and bias.requires_grad:
            bias.accumulate(g.sum(axis=0))

    return make_result(out, parents, backward)


def _channel_view(v, ndim):
    return v.reshape((1, -1) + (1,) * (ndim - 2))


def _channel_axes(ndim):
    return (0,) + tuple(range(2, ndim))


def prelu(input, slope):
    """Rectifier with a learned negative slope per channel (axis 1)."""
    x, a = as_tensor(input), as_tensor(slope)
    if x.ndim < 2 or a.shape != (x.shape[1],):
        raise ShapeError(f"prelu slope shape {a.shape} does not match {x.shape[1] if x.ndim > 1 else '?'} channels", "channels")
    pos = x.data > 0
    scale = np.where(pos, 1.0, _channel_view(a.data, x.ndim))
    out = x.data * scale

    def backward(g):
        if x.requires_grad:
            x.accumulate(g * scale)
        if a.requires_grad:
            a.accumulate((g * np.minimum(x.data, 0.0)).sum(axis=_channel_axes(x.ndim)))

    return make_result(out, (x, a), backward)


@dataclass
class BatchNormState:
    """Learned affine parameters plus running statistics of one BN layer."""

    gamma: Parameter
    beta: Parameter
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.1
    batches_seen: int = 0

    @classmethod
    def create(cls, channels, name="bn", epsilon=1e-5, momentum=0.1):
        return cls(
            gamma=Parameter(np.ones(channels), name=f"{name}.gamma", decay=False),
            beta=Parameter(np.zeros(channels), name=f"{name}.beta", decay=False),
            running_mean=np.zeros(channels),
            running_var=np.ones(channels),
            epsilon=epsilon,
            momentum=momentum,
        )

    @property
    def channels(self):
        return self.gamma.shape[0]


def batchnorm(input, state, mode=TRAIN):
    """Per-channel batch normalization over every axis except 1.

    Train mode normalizes with the biased batch variance and blends the
    unbiased variance into the running estimate.
    """
    _check_mode(mode)
    x = as_tensor(input)
    if x.ndim < 2 or x.shape[1] != state.channels:
        raise ShapeError(f"batchnorm expects {state.channels} channels, got shape {x.shape}", "channels")
    axes = _channel_axes(x.ndim)
    gamma, beta = state.gamma, state.beta
    gv, bv = _channel_view(gamma.data, x.ndim), _channel_view(beta.data, x.ndim)
    count = x.size // state.channels

    if mode == TRAIN:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        m = state.momentum
        unbiased = var * count / (count - 1) if count > 1 else var
        state.running_mean = (1 - m) * state.running_mean + m * mean
        state.running_var = (1 - m) * state.running_var + m * unbiased
        state.batches_seen += 1
    else:
        if state.batches_seen == 0:
            raise StatisticsError("batchnorm inference requested before any training batch was seen")
        mean, var = state.running_mean, state.running_var

    inv_std = 1.0 / np.sqrt(var + state.epsilon)
    xhat = (x.data - _channel_view(mean, x.ndim)) * _channel_view(inv_std, x.ndim)
    out = gv * xhat + bv

    def backward(g):
        g_sum = g.sum(axis=axes)
        gx_sum = (g * xhat).sum(axis=axes)
        if gamma.requires_grad:
            gamma.accumulate(gx_sum)
        if beta.requires_grad:
            beta.accumulate(g_sum)
        if x.requires_grad:
            scale = gv * _channel_view(inv_std, x.ndim)
            if mode == TRAIN:
                s1 = _channel_view(g_sum / count, x.ndim)
                s2 = _channel_view(gx_sum / count, x.ndim)
                x.accumulate(scale * (g - s1 - xhat * s2))
            else:
                x.accumulate(g * scale)

    return make_result(out, (x, gamma, beta), backward)


def dropout(input, rate, mode=TRAIN, rng=None):
    """Inverted dropout; ``rng`` is a seed or ``numpy.random.Generator`` (seed 0 if omitted)."""
    _check_mode(mode)
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    x = as_tensor(input)
    if mode == INFER or rate == 0.0:
        return x
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(0 if rng is None else rng)
    mask = (gen.random(x.shape) >= rate) / (1.0 - rate)
    out = x.data * mask

    def backward(g):
        x.accumulate(g * mask)

    return make_result(out, (x,), backward)


def softmax_xent(logits, labels):
    """Mean softmax cross-entropy.

    Returns ``(loss, probs)`` where ``loss`` is a scalar tensor and
    ``probs`` the row-wise softmax as a plain array.
    """
    z = as_tensor(logits)
    if z.ndim != 2:
        raise ShapeError(f"softmax_xent expects (N, K) logits, got {z.shape}", "rank")
    n, k = z.shape
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.shape[0] != n:
        raise ShapeError(f"{y.shape[0]} labels for {n} rows of logits", "batch")
    bad = (y < 0) | (y >= k)
    if bad.any():
        raise LabelError(f"label {int(y[bad][0])} outside [0, {k})")
    shifted = z.data - z.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    probs = np.exp(log_probs)
    loss = -log_probs[np.arange(n), y].mean()

    def backward(g):
        d = probs.copy()
        d[np.arange(n), y] -= 1.0
        z.accumulate(d * (float(g) / n))

    return make_result(np.asarray(loss), (z,), backward), probs


def concat_channels(inputs):
    """Concatenate (N, Ci, H, W) tensors along the channel axis."""
    xs = [as_tensor(t) for t in inputs]
    if not xs:
        raise ShapeError("concat_channels needs at least one input", "count")
    ref = xs[0].shape
    for i, t in enumerate(xs):
        if t.ndim != 4:
            raise ShapeError(f"input {i} has rank {t.ndim}, expected 4", "rank")
        if (t.shape[0], t.shape[2], t.shape[3]) != (ref[0], ref[2], ref[3]):
            raise ShapeError(
                f"input {i} has shape {t.shape}, incompatible with input 0 shape {ref} outside the channel axis",
                "spatial",
            )
    if len(xs) == 1:
        return xs[0]
    out = np.concatenate([t.data for t in xs], axis=1)
    bounds = np.cumsum([0] + [t.shape[1] for t in xs])

    def backward(g):
        for t, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            t.accumulate(g[:, lo:hi])

    return make_result(out, tuple(xs), backward)


def flatten(input):
    """Collapse all non-batch axes."""
    x = as_tensor(input)
    shape = x.shape
    out = x.data.reshape(shape[0], -1)

    def backward(g):
        x.accumulate(g.reshape(shape))

    return make_result(out, (x,), backward)


def reshape(input, shape):
    x = as_tensor(input)
    old = x.shape
    out = x.data.reshape(shape)

    def backward(g):
        x.accumulate(g.reshape(old))

    return make_result(out, (x,), backward)


def weighted_sum(input, weights):
    """Scalar ``sum(input * weights)`` for a constant weight array."""
    x = as_tensor(input)
    wv = np.asarray(weights, dtype=np.float64)
    out = np.asarray((x.data * wv).sum())

    def backward(g):
        x.accumulate(np.broadcast_to(wv * float(g), x.shape).copy())

    return make_result(out, (x,), backward)
