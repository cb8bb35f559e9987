"""Acceptance criteria, one printed PASS/FAIL line each.

Tolerances and budgets are pinned here; a failing criterion fails its test.
"""

import os
import time

import numpy as np
import pytest

from signnet import gradcheck, ops
from signnet.data.gtsrb import ROOT_ENV, TEST_COUNT, TRAIN_COUNT, load_gtsrb
from signnet.inception import GOOGLE
from signnet.network import build_network, count_parameters, table1_spec, toy_spec
from signnet.optim import OptState, SGDConfig, epoch_order, msra_init, train_step
from signnet.stn import st_layer
from signnet.toy import TOY_EPOCHS, TOY_SEEDS, median_test_top1, toy_ablation

TABLE_PARAMS = {
    "conv1": "1.6K", "conv2": "110K",
    "mIncept(3a)": "206K", "mIncept(3b)": "436K", "mIncept(4a)": "395K", "mIncept(4b)": "467K",
    "mIncept(4c)": "546K", "mIncept(4d)": "624K", "mIncept(4e)": "880K", "mIncept(5a)": "965K",
    "mIncept(5b)": "1.2M", "linear": "44K", "ST1": "3M", "ST3a": "1M", "ST3b": "1M",
}

TABLE_SHAPES = [
    ("conv1", (64, 64, 64)), ("pool1", (32, 32, 64)), ("conv2", (32, 32, 192)), ("pool2", (16, 16, 192)),
    ("mIncept(3a)", (16, 16, 288)), ("mIncept(3b)", (16, 16, 480)), ("pool3", (8, 8, 480)),
    ("mIncept(4a)", (8, 8, 512)), ("mIncept(4b)", (8, 8, 512)), ("mIncept(4c)", (8, 8, 512)),
    ("mIncept(4d)", (8, 8, 528)), ("mIncept(4e)", (8, 8, 832)), ("pool4", (4, 4, 832)),
    ("mIncept(5a)", (4, 4, 832)), ("mIncept(5b)", (4, 4, 1024)), ("avgpool", (1, 1, 1024)),
    ("dropout", (1, 1, 1024)), ("linear", (1, 1, 43)), ("softmax", (1, 1, 43)),
]

PARAMS_BUDGET_S = 1.0
SHAPES_BUDGET_S = 1.0
GRADCHECK_BUDGET_S = 120.0
GRADCHECK_THRESHOLD = 1e-4
GRADCHECK_STEP = 1e-5
IDENTITY_INPUTS = 100
TOY_MIN_TEST_TOP1 = 0.95
TOY_BUDGET_S = 15 * 60
GTSRB_STEPS = 200
GTSRB_BLOCK = 50


def test_parameter_count_oracle(acceptance):
    t0 = time.perf_counter()
    ledger = count_parameters(build_network(table1_spec()))
    secs = time.perf_counter() - t0
    rows = {r.name: r for r in ledger.rows}
    wrong = [f"{n} {rows[n].computed_display} vs {shown}" for n, shown in TABLE_PARAMS.items()
             if rows[n].table != shown or not rows[n].match]
    st2_documented = not rows["ST2"].match and bool(rows["ST2"].note)
    ok = not wrong and st2_documented and secs < PARAMS_BUDGET_S
    detail = (f"{len(TABLE_PARAMS) - len(wrong)}/{len(TABLE_PARAMS)} rows match"
              + (f" (mismatch: {'; '.join(wrong)})" if wrong else "")
              + f", ST2 documented mismatch {'yes' if st2_documented else 'no'}, {secs:.3f}s")
    acceptance("parameter-count oracle", ok, detail)
    assert ok, detail


def test_shape_oracle(acceptance):
    t0 = time.perf_counter()
    net = build_network(table1_spec())
    secs = time.perf_counter() - t0
    seen = {r.name: r.output_hwc for r in net.layout}
    deviations = [f"{n} {seen.get(n)} vs {hwc}" for n, hwc in TABLE_SHAPES if seen.get(n) != hwc]
    ok = not deviations and secs < SHAPES_BUDGET_S
    detail = f"{len(TABLE_SHAPES)} output sizes, {len(deviations)} deviations, {secs:.3f}s"
    acceptance("shape oracle", ok, detail + (f" ({'; '.join(deviations)})" if deviations else ""))
    assert ok, deviations


def test_gradient_suite(acceptance):
    assert (gradcheck.THRESHOLD, gradcheck.STEP) == (GRADCHECK_THRESHOLD, GRADCHECK_STEP)
    results, secs = gradcheck.run_all(gradcheck.SCOPES)
    by_scope = {s: [r for r in results if r.scope == s] for s in gradcheck.SCOPES}
    worst = max(r.max_rel_error for r in results)
    cases = {r.case for r in results}
    covered = {"st_layer", "bilinear_sample", "affine_grid", "miniature"} <= cases and any(
        "google" in c for c in cases) and any("modified" in c for c in cases)
    ok = all(r.passed for r in results) and all(by_scope.values()) and covered and secs < GRADCHECK_BUDGET_S
    detail = (f"{sum(r.passed for r in results)}/{len(results)} groups across "
              f"{', '.join(f'{s} ({len(v)})' for s, v in by_scope.items())}, worst {worst:.2e}, {secs:.1f}s")
    acceptance("gradient suite", ok, detail)
    assert ok, gradcheck.format_results([r for r in results if not r.passed])


def test_st_identity_invariant(acceptance):
    rng = np.random.default_rng(2024)
    layers = msra_init(build_network(table1_spec()), 0).transformers()
    layers += msra_init(build_network(toy_spec()), 0).transformers()
    worst = 0.0
    for layer in layers:
        for start in range(0, IDENTITY_INPUTS, 10):
            x = rng.normal(size=(10, *layer.input_shape)) * rng.uniform(0.01, 100)
            worst = max(worst, float(np.max(np.abs(st_layer(x, layer, ops.TRAIN).data - x))))
    ok = worst == 0.0
    labels = ", ".join(getattr(t, "label", "ST") for t in layers)
    acceptance("ST identity invariant", ok, f"max|st(x) - x| = {worst:g} over {IDENTITY_INPUTS} inputs each for {labels}")
    assert ok


@pytest.mark.slow
def test_toy_convergence(acceptance):
    t0 = time.perf_counter()
    with_st, plain = toy_ablation(TOY_SEEDS, TOY_EPOCHS, SGDConfig())
    secs = time.perf_counter() - t0
    med_st, med_plain = median_test_top1(with_st), median_test_top1(plain)
    ok = med_st >= TOY_MIN_TEST_TOP1 and med_plain < med_st and secs < TOY_BUDGET_S
    per_seed = " ".join(f"s{a.seed}:{100 * a.test_top1:.1f}/{100 * b.test_top1:.1f}" for a, b in zip(with_st, plain))
    detail = (f"median test top-1 {100 * med_st:.2f}% with ST vs {100 * med_plain:.2f}% without "
              f"(per seed ST/plain {per_seed}), {secs:.0f}s")
    acceptance("toy convergence", ok, detail)
    assert ok, detail


def test_google_ablation_parity(acceptance):
    modified, google = build_network(table1_spec()), build_network(table1_spec(GOOGLE))
    pairs = list(zip(modified.layout, google.layout))
    same_rows = len(modified.layout) == len(google.layout)
    shape_diffs = [a.name for a, b in pairs if a.type != "inception" and a.output_hwc != b.output_hwc]
    block_diffs = [a.name for a, b in pairs if a.type == "inception" and a.output_hwc != b.output_hwc]
    variants = {b.module.spec.variant for a, b in pairs if b.type == "inception"}
    logits = msra_init(google, 0)(np.random.default_rng(0).normal(size=(2, 1, 128, 128)), mode=ops.TRAIN)
    ok = same_rows and not shape_diffs and not block_diffs and variants == {GOOGLE} and logits.shape == (2, 43)
    detail = (f"{len(pairs)} rows, {sum(a.type != 'inception' for a, _ in pairs)} non-inception shapes identical, "
              f"9 inception blocks {'match' if not block_diffs else 'differ'} in output size, logits {logits.shape}")
    acceptance("google-inception ablation parity", ok, detail)
    assert ok, shape_diffs + block_diffs


def test_gtsrb_environment_gated(acceptance):
    root = os.environ.get(ROOT_ENV)
    if not root:
        acceptance("GTSRB ingestion and 200-step run", None, f"{ROOT_ENV} not set, real data unavailable")
        pytest.skip(f"{ROOT_ENV} not set")
    train = load_gtsrb(root, "train")
    test = load_gtsrb(root, "test")
    model = msra_init(build_network(toy_spec()), 0)
    cfg, state = SGDConfig(), OptState()
    order = epoch_order(len(train), 0, 0)
    losses = []
    for step in range(GTSRB_STEPS):
        idx = order[step * cfg.batch_size:(step + 1) * cfg.batch_size]
        losses.append(train_step(model, train.images[idx], train.labels[idx], cfg, state, 0)[0])
    smoothed = [float(np.mean(losses[i:i + GTSRB_BLOCK])) for i in range(0, GTSRB_STEPS, GTSRB_BLOCK)]
    decreasing = all(b < a for a, b in zip(smoothed, smoothed[1:]))
    ok = len(train) == TRAIN_COUNT and len(test) == TEST_COUNT and decreasing
    detail = (f"{len(train)} train / {len(test)} test items, {GTSRB_BLOCK}-step mean losses "
              + " > ".join(f"{v:.4f}" for v in smoothed))
    acceptance("GTSRB ingestion and 200-step run", ok, detail)
    assert ok, detail
