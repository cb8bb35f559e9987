"""MSRA initialization, SGD with momentum and weight decay, and the epoch loop."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import ops
from .errors import ConfigError, DataError, NonFiniteGradientError
from .layers import PRELU_INIT, ConvUnit, DenseUnit, Linear
from .stn import LocalisationNet
from .tensor import Tensor


@dataclass
class SGDConfig:
    learning_rate: float = 0.00032
    momentum: float = 0.9
    weight_decay: float = 0.0918
    batch_size: int = 20
    lr_step_epochs: int = 0
    lr_step_factor: float = 0.1

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")

    def lr_at(self, epoch):
        """Constant rate unless a step schedule is configured."""
        if self.lr_step_epochs <= 0:
            return self.learning_rate
        return self.learning_rate * self.lr_step_factor ** (epoch // self.lr_step_epochs)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown SGD config keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class OptState:
    velocity: dict = field(default_factory=dict)
    step: int = 0
    epoch: int = 0


def msra_std(fan_in, slope=PRELU_INIT):
    return math.sqrt(2.0 / ((1.0 + slope ** 2) * fan_in))


def msra_init(model, rng_seed=0):
    """Draw every conv/fc weight from N(0, 2 / ((1 + a^2) fan_in)).

    Biases start at zero, batch-norm at gamma=1/beta=0, PReLU slopes at 0.25,
    and transformer regression layers at the identity transform.
    """
    rng = np.random.default_rng(rng_seed)
    for module in model.modules():
        if isinstance(module, (ConvUnit, DenseUnit, Linear)):
            w = module.weight
            w.data = rng.standard_normal(w.shape) * msra_std(module.fan_in)
            if isinstance(module, Linear):
                module.bias.data = np.zeros_like(module.bias.data)
            else:
                module.bn.gamma.data = np.ones_like(module.bn.gamma.data)
                module.bn.beta.data = np.zeros_like(module.bn.beta.data)
                module.slope.data = np.full_like(module.slope.data, PRELU_INIT)
    for module in model.modules():
        if isinstance(module, LocalisationNet):
            module.reset_identity()
    return model


def sgd_step(params, grads, state, cfg, lr=None):
    """One momentum step: v <- mu v + (g + wd p); p <- p - lr v.

    ``params`` maps names to parameters, ``grads`` names to arrays.  Weight
    decay is skipped for parameters whose ``decay`` flag is off.
    """
    lr = cfg.learning_rate if lr is None else lr
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if getattr(p, "decay", True) and cfg.weight_decay:
            g = g + cfg.weight_decay * p.data
        v = state.velocity.get(name)
        v = g if v is None else cfg.momentum * v + g
        state.velocity[name] = v
        p.data = p.data - lr * v
    state.step += 1
    return params, state


@dataclass
class EpochReport:
    epoch: int
    mean_loss: float
    top1: float
    steps: int
    losses: list


def batch_rng(seed, step):
    return np.random.default_rng([seed, step])


def train_step(model, images, labels, cfg, state, seed, lr=None):
    """Forward, loss, backward and update on one minibatch; returns (loss, correct)."""
    model.zero_grad()
    logits = model(Tensor(images), mode=ops.TRAIN, rng=batch_rng(seed, state.step))
    loss, probs = ops.softmax_xent(logits, labels)
    loss.backward()
    named = dict(model.named_parameters())
    grads = {n: p.grad for n, p in named.items() if p.grad is not None}
    sgd_step(named, grads, state, cfg, lr)
    return loss.item(), int((probs.argmax(axis=1) == labels).sum())


def epoch_order(n, seed, epoch):
    return np.random.default_rng([seed, epoch, 1]).permutation(n)


def train_epoch(model, dataset, cfg, state, rng_seed=0, on_step=None):
    """One pass over ``dataset`` in seed-determined shuffled minibatches."""
    n = len(dataset)
    if n == 0:
        raise DataError("cannot train on an empty dataset")
    order = epoch_order(n, rng_seed, state.epoch)
    lr = cfg.lr_at(state.epoch)
    losses, correct = [], 0
    for start in range(0, n, cfg.batch_size):
        idx = order[start:start + cfg.batch_size]
        loss, hits = train_step(model, dataset.images[idx], dataset.labels[idx], cfg, state, rng_seed, lr)
        losses.append(loss)
        correct += hits
        if on_step is not None:
            on_step(state.step, loss)
    report = EpochReport(state.epoch, float(np.mean(losses)), correct / n, len(losses), losses)
    state.epoch += 1
    return report


def predict(model, images, batch_size=50):
    """Inference-mode logits for an array of images."""
    out = []
    for start in range(0, len(images), batch_size):
        out.append(model(Tensor(images[start:start + batch_size]), mode=ops.INFER).data)
    return np.concatenate(out, axis=0)
