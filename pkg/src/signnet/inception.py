"""Inception blocks: the GoogLeNet module and the traffic-sign variant.

The modified block keeps GoogLeNet's 1x1, 1x1->3x3 and 1x1->5x5 branches and
replaces the pool-projection branch with 1x1 reduce -> 3x3 conv -> 3x3/1
max-pool.  Every convolution is stride 1, shape-preserving, and followed by
batch norm and PReLU.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

from . import ops
from .errors import ConfigError
from .layers import TRAIN, ConvUnit, MaxPool, Module, Sequential

GOOGLE = "google"
MODIFIED = "modified"


@dataclass(frozen=True)
class InceptionSpec:
    """Branch widths in table-column order.

    For the google variant ``n3x3_pool_branch`` is the pool-projection width
    and ``n3x3_reduce_pool`` is ignored.
    """

    n1x1: int
    n3x3_reduce: int
    n3x3: int
    n5x5_reduce: int
    n5x5: int
    n3x3_reduce_pool: int
    n3x3_pool_branch: int
    variant: str = MODIFIED

    def __post_init__(self):
        if self.variant not in (GOOGLE, MODIFIED):
            raise ConfigError(f"unknown inception variant {self.variant!r}")
        active = [self.n1x1, self.n3x3_reduce, self.n3x3, self.n5x5_reduce, self.n5x5, self.n3x3_pool_branch]
        if self.variant == MODIFIED:
            active.append(self.n3x3_reduce_pool)
        if min(active) < 1:
            raise ConfigError(f"inception branch widths must be >= 1: {self}")

    @property
    def out_channels(self):
        return self.n1x1 + self.n3x3 + self.n5x5 + self.n3x3_pool_branch

    def with_variant(self, variant):
        d = asdict(self)
        d["variant"] = variant
        return InceptionSpec(**d)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class Inception(Module):
    """Four parallel branches concatenated along channels."""

    def __init__(self, spec, in_channels):
        self.spec = spec
        self.in_channels = in_channels
        s = spec
        self.branch1 = Sequential([ConvUnit(in_channels, s.n1x1, 1)])
        self.branch3 = Sequential([ConvUnit(in_channels, s.n3x3_reduce, 1), ConvUnit(s.n3x3_reduce, s.n3x3, 3)])
        self.branch5 = Sequential([ConvUnit(in_channels, s.n5x5_reduce, 1), ConvUnit(s.n5x5_reduce, s.n5x5, 5)])
        if s.variant == MODIFIED:
            self.branch_pool = Sequential([
                ConvUnit(in_channels, s.n3x3_reduce_pool, 1),
                ConvUnit(s.n3x3_reduce_pool, s.n3x3_pool_branch, 3),
                MaxPool(3, 1, 1),
            ])
        else:
            self.branch_pool = Sequential([MaxPool(3, 1, 1), ConvUnit(in_channels, s.n3x3_pool_branch, 1)])

    @property
    def branches(self):
        return [self.branch1, self.branch3, self.branch5, self.branch_pool]

    def forward(self, x, mode=TRAIN, rng=None):
        return ops.concat_channels([b(x, mode) for b in self.branches])

    def output_shape(self, shape):
        c, h, w = shape
        if c != self.in_channels:
            raise ConfigError(f"inception block built for {self.in_channels} channels, got {c}")
        return (self.spec.out_channels, h, w)

    def depth(self):
        """Parameterized layers on the longest branch."""
        return 2


def build_modified_inception(spec, in_channels, expected_out=None):
    if spec.variant != MODIFIED:
        raise ConfigError(f"build_modified_inception needs a modified spec, got {spec.variant!r}")
    return _build(spec, in_channels, expected_out)


def build_google_inception(spec, in_channels, expected_out=None):
    if spec.variant != GOOGLE:
        spec = spec.with_variant(GOOGLE)
    return _build(spec, in_channels, expected_out)


def _build(spec, in_channels, expected_out):
    if expected_out is not None and spec.out_channels != expected_out:
        raise ConfigError(
            f"inception branches sum to {spec.out_channels} channels but {expected_out} were declared"
        )
    return Inception(spec, in_channels)
