"""Traffic-sign classifier built from spatial transformers and modified inception blocks.

Everything runs on a small reverse-mode autodiff core over float64 numpy
arrays; see :mod:`signnet.ops` for the primitives and
:mod:`signnet.network` for the layer table and presets.
"""

from .errors import (CheckpointError, ConfigError, DataError, LabelError, NonFiniteGradientError, ShapeError,
                     SignNetError, StatisticsError)
from .network import NetworkSpec, build_network, count_parameters, preset_spec
from .optim import SGDConfig, msra_init
from .tensor import Parameter, Tensor

__version__ = "0.1.0"

__all__ = [
    "Tensor", "Parameter", "NetworkSpec", "build_network", "count_parameters", "preset_spec",
    "SGDConfig", "msra_init", "SignNetError", "ShapeError", "ConfigError", "LabelError",
    "StatisticsError", "NonFiniteGradientError", "DataError", "CheckpointError",
]
