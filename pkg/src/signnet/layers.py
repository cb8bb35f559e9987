"""Stateful layer objects built on the functional primitives."""

from __future__ import annotations

import numpy as np

from . import ops
from .errors import ConfigError
from .ops import INFER, TRAIN, BatchNormState, ConvSpec
from .tensor import Parameter

PRELU_INIT = 0.25


class Module:
    """Container base class.

    Sub-modules and parameters are discovered from instance attributes
    (including lists of modules) in assignment order, which fixes the
    parameter naming used by checkpoints.
    """

    def forward(self, x, mode=TRAIN, rng=None):
        raise NotImplementedError

    def __call__(self, x, mode=TRAIN, rng=None):
        return self.forward(x, mode=mode, rng=rng)

    def children(self):
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, Module):
                yield key, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{key}.{i}", v

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + key, value
            elif isinstance(value, BatchNormState):
                yield prefix + key + ".gamma", value.gamma
                yield prefix + key + ".beta", value.beta
        for key, child in self.children():
            yield from child.named_parameters(prefix + key + ".")

    def batchnorm_states(self, prefix=""):
        for key, value in vars(self).items():
            if isinstance(value, BatchNormState):
                yield prefix + key, value
        for key, child in self.children():
            yield from child.batchnorm_states(prefix + key + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def modules(self):
        yield self
        for _, child in self.children():
            yield from child.modules()

    def state_dict(self):
        """Parameters and BN running statistics as plain arrays."""
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        for name, bn in self.batchnorm_states():
            state[name + ".running_mean"] = bn.running_mean.copy()
            state[name + ".running_var"] = bn.running_var.copy()
            state[name + ".batches_seen"] = np.array([float(bn.batches_seen)])
        return state

    def load_state_dict(self, state):
        expected = self.state_dict()
        missing = sorted(set(expected) - set(state))
        unexpected = sorted(set(state) - set(expected))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing {missing[:3]}, unexpected {unexpected[:3]}")
        for name, p in self.named_parameters():
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data = np.array(state[name], dtype=np.float64)
        for name, bn in self.batchnorm_states():
            bn.running_mean = np.array(state[name + ".running_mean"], dtype=np.float64)
            bn.running_var = np.array(state[name + ".running_var"], dtype=np.float64)
            bn.batches_seen = int(state[name + ".batches_seen"][0])


class Sequential(Module):
    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x, mode=TRAIN, rng=None):
        for layer in self.layers:
            x = layer(x, mode=mode, rng=rng)
        return x


class ConvUnit(Module):
    """Bias-free convolution -> batch norm -> PReLU."""

    def __init__(self, in_channels, out_channels, kernel, stride=1, padding=None):
        if padding is None:
            padding = (kernel - 1) // 2
        self.spec = ConvSpec(in_channels, out_channels, (kernel, kernel), stride, padding, has_bias=False)
        self.weight = Parameter(np.zeros(self.spec.weight_shape), name="weight")
        self.bn = BatchNormState.create(out_channels)
        self.slope = Parameter(np.full(out_channels, PRELU_INIT), name="slope", decay=False)

    def forward(self, x, mode=TRAIN, rng=None):
        y = ops.conv2d(x, self.weight, None, self.spec)
        y = ops.batchnorm(y, self.bn, mode)
        return ops.prelu(y, self.slope)

    def output_shape(self, shape):
        c, h, w = shape
        return (self.spec.out_channels,) + self.spec.output_hw(h, w)

    @property
    def fan_in(self):
        return self.spec.in_channels * self.spec.kernel[0] * self.spec.kernel[1]


class DenseUnit(Module):
    """Bias-free fully connected layer -> batch norm -> PReLU."""

    def __init__(self, in_features, out_features):
        self.weight = Parameter(np.zeros((out_features, in_features)), name="weight")
        self.bn = BatchNormState.create(out_features)
        self.slope = Parameter(np.full(out_features, PRELU_INIT), name="slope", decay=False)

    def forward(self, x, mode=TRAIN, rng=None):
        if x.ndim != 2:
            x = ops.flatten(x)
        y = ops.linear(x, self.weight)
        y = ops.batchnorm(y, self.bn, mode)
        return ops.prelu(y, self.slope)

    @property
    def fan_in(self):
        return self.weight.shape[1]


class Linear(Module):
    """Plain affine layer with bias; used where no batch norm follows."""

    def __init__(self, in_features, out_features):
        self.weight = Parameter(np.zeros((out_features, in_features)), name="weight")
        self.bias = Parameter(np.zeros(out_features), name="bias")

    def forward(self, x, mode=TRAIN, rng=None):
        if x.ndim != 2:
            x = ops.flatten(x)
        return ops.linear(x, self.weight, self.bias)

    @property
    def fan_in(self):
        return self.weight.shape[1]


class MaxPool(Module):
    def __init__(self, kernel, stride, padding=0):
        self.kernel, self.stride, self.padding = kernel, stride, padding

    def forward(self, x, mode=TRAIN, rng=None):
        return ops.maxpool2d(x, self.kernel, self.stride, self.padding)

    def output_shape(self, shape):
        c, h, w = shape
        return (
            c,
            ops.out_extent(h, self.kernel, self.stride, self.padding),
            ops.out_extent(w, self.kernel, self.stride, self.padding),
        )


class AvgPool(Module):
    def __init__(self, kernel, stride):
        self.kernel, self.stride = kernel, stride

    def forward(self, x, mode=TRAIN, rng=None):
        return ops.avgpool2d(x, self.kernel, self.stride)

    def output_shape(self, shape):
        c, h, w = shape
        return (c, ops.out_extent(h, self.kernel, self.stride, 0), ops.out_extent(w, self.kernel, self.stride, 0))


class Dropout(Module):
    def __init__(self, rate):
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, mode=TRAIN, rng=None):
        return ops.dropout(x, self.rate, mode, rng)

    def output_shape(self, shape):
        return shape


__all__ = [
    "Module", "Sequential", "ConvUnit", "DenseUnit", "Linear", "MaxPool", "AvgPool", "Dropout",
    "PRELU_INIT", "TRAIN", "INFER",
]
