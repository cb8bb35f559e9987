"""Desk-scale convergence runs on synthetic glyphs, with and without the transformer."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

from .data.synth import synthetic_splits
from .network import build_network, toy_spec
from .optim import OptState, SGDConfig, msra_init, predict, train_epoch

TOY_CLASSES = 8
TOY_EPOCHS = 30
TOY_SEEDS = (0, 1, 2, 3, 4)


@dataclass
class ToyResult:
    seed: int
    with_st: bool
    train_top1: float
    test_top1: float
    final_loss: float
    seconds: float


def toy_trial(seed, with_st=True, epochs=TOY_EPOCHS, cfg=None, splits=None):
    """Train the toy preset from scratch on one seed's synthetic split.

    ``seed`` fixes the data, the initialization and the minibatch order.
    Pass ``splits`` to reuse an already generated ``(train, test)`` pair.
    """
    cfg = cfg or SGDConfig()
    train, test = splits or synthetic_splits(TOY_CLASSES, seed)
    model = msra_init(build_network(toy_spec(with_st)), seed)
    state = OptState()
    t0 = time.perf_counter()
    report = None
    for _ in range(epochs):
        report = train_epoch(model, train, cfg, state, seed)
    test_top1 = float((predict(model, test.images).argmax(axis=1) == test.labels).mean())
    return ToyResult(seed, with_st, report.top1, test_top1, report.mean_loss, time.perf_counter() - t0)


def toy_ablation(seeds=TOY_SEEDS, epochs=TOY_EPOCHS, cfg=None, on_result=None):
    """Run both toy variants on every seed; returns ``(st_results, plain_results)``."""
    with_st, plain = [], []
    for seed in seeds:
        splits = synthetic_splits(TOY_CLASSES, seed)
        for flag, bucket in ((True, with_st), (False, plain)):
            result = toy_trial(seed, flag, epochs, cfg, splits)
            bucket.append(result)
            if on_result is not None:
                on_result(result)
    return with_st, plain


def median_test_top1(results):
    return statistics.median(r.test_top1 for r in results)
