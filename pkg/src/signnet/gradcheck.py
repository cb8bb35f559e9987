"""Central finite-difference checks of every analytic gradient.

Each case is a scalar function of some named tensors.  The analytic gradient
from one backward pass is compared with ``(f(p + h) - f(p - h)) / 2h`` on a
set of entries per tensor, and the error of a group is reported normwise::

    max |analytic - numeric| / max(max |analytic|, max |numeric|)

which stays meaningful when individual entries are near zero.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import ops
from .inception import GOOGLE, MODIFIED, Inception, InceptionSpec
from .layers import TRAIN
from .network import build_network, miniature_spec
from .optim import msra_init
from .stn import STSpec, SpatialTransformer, affine_grid, bilinear_sample
from .tensor import Parameter, Tensor

STEP = 1e-5
THRESHOLD = 1e-4
SCOPES = ("op", "layer", "network")


@dataclass
class GradCheckResult:
    scope: str
    case: str
    group: str
    max_rel_error: float
    checked: int
    threshold: float = THRESHOLD

    @property
    def passed(self):
        return bool(np.isfinite(self.max_rel_error)) and self.max_rel_error < self.threshold


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    diff = np.abs(analytic - numeric).max(initial=0.0)
    if scale == 0.0:
        return float(diff)
    return float(diff / scale)


def _entries(size, limit, rng):
    if limit is None or size <= limit:
        return np.arange(size)
    return np.sort(rng.choice(size, limit, replace=False))


def check_function(fn, tensors, scope="op", case="", groups=None, max_entries=None, step=STEP, rng=None):
    """Compare analytic and numeric gradients of the scalar ``fn()``.

    ``tensors`` maps names to tensors read by ``fn``; ``groups`` optionally
    maps each name to a reporting group (default: the name itself).  At most
    ``max_entries`` entries per tensor are perturbed.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    for t in tensors.values():
        t.requires_grad = True
        t.grad = None
    fn().backward()
    pairs = {}
    for name, t in tensors.items():
        analytic = np.zeros(t.shape) if t.grad is None else t.grad.copy()
        flat = t.data.reshape(-1)
        idx = _entries(flat.size, max_entries, rng)
        numeric = np.empty(idx.size)
        for k, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            up = fn().item()
            flat[i] = orig - step
            down = fn().item()
            flat[i] = orig
            numeric[k] = (up - down) / (2.0 * step)
        group = name if groups is None else groups[name]
        a, n = pairs.get(group, ([], []))
        a.append(analytic.reshape(-1)[idx])
        n.append(numeric)
        pairs[group] = (a, n)
    return [
        GradCheckResult(scope, case, g, relative_error(np.concatenate(a), np.concatenate(n)), int(sum(x.size for x in a)))
        for g, (a, n) in pairs.items()
    ]


def _projected(out, r):
    """Scalar probe ``sum(out * r)`` so every output entry carries a generic weight."""
    return ops.weighted_sum(out, r)


def _param(rng, *shape, scale=1.0):
    return Tensor(rng.normal(0.0, scale, shape), requires_grad=True)


def _op_cases(rng):
    cases = []

    x, w, b = _param(rng, 2, 3, 7, 6), _param(rng, 4, 3, 3, 3), _param(rng, 4)
    spec = ops.ConvSpec(3, 4, (3, 3), stride=2, padding=1, has_bias=True)
    r = rng.normal(size=(2, 4) + spec.output_hw(7, 6))
    cases.append(("conv2d", lambda x=x, w=w, b=b, s=spec, r=r: _projected(ops.conv2d(x, w, b, s), r),
                  {"input": x, "weights": w, "bias": b}))

    x, w = _param(rng, 2, 2, 6, 6), _param(rng, 3, 2, 5, 5)
    r = rng.normal(size=(2, 3, 2, 2))
    cases.append(("conv2d 5x5 no-bias", lambda x=x, w=w, r=r: _projected(ops.conv2d(x, w), r),
                  {"input": x, "weights": w}))

    x = _param(rng, 2, 3, 7, 7)
    r = rng.normal(size=(2, 3, 4, 4))
    cases.append(("maxpool2d", lambda x=x, r=r: _projected(ops.maxpool2d(x, 3, 2, 1), r), {"input": x}))

    x = _param(rng, 2, 2, 7, 7)
    r = rng.normal(size=(2, 2, 3, 3))
    cases.append(("avgpool2d", lambda x=x, r=r: _projected(ops.avgpool2d(x, 3, 2), r), {"input": x}))

    x, w, b = _param(rng, 4, 5), _param(rng, 3, 5), _param(rng, 3)
    r = rng.normal(size=(4, 3))
    cases.append(("linear", lambda x=x, w=w, b=b, r=r: _projected(ops.linear(x, w, b), r),
                  {"input": x, "weights": w, "bias": b}))

    x, a = _param(rng, 3, 4, 3, 3), Tensor(rng.uniform(0.05, 0.5, 4), requires_grad=True)
    r = rng.normal(size=x.shape)
    cases.append(("prelu", lambda x=x, a=a, r=r: _projected(ops.prelu(x, a), r), {"input": x, "slope": a}))

    for mode in (ops.TRAIN, ops.INFER):
        state = ops.BatchNormState.create(3)
        state.gamma.data = rng.uniform(0.5, 1.5, 3)
        state.beta.data = rng.normal(size=3)
        state.running_mean = rng.normal(size=3)
        state.running_var = rng.uniform(0.5, 2.0, 3)
        state.batches_seen = 1
        x = _param(rng, 4, 3, 3, 3)
        r = rng.normal(size=x.shape)
        cases.append((f"batchnorm {mode}", lambda x=x, s=state, m=mode, r=r: _projected(ops.batchnorm(x, s, m), r),
                      {"input": x, "gamma": state.gamma, "beta": state.beta}))

    x = _param(rng, 4, 6)
    r = rng.normal(size=x.shape)
    cases.append(("dropout", lambda x=x, r=r: _projected(ops.dropout(x, 0.4, ops.TRAIN, rng=7), r), {"input": x}))

    z = _param(rng, 5, 7, scale=2.0)
    y = rng.integers(0, 7, 5)
    cases.append(("softmax_xent", lambda z=z, y=y: ops.softmax_xent(z, y)[0], {"logits": z}))

    a, b = _param(rng, 2, 2, 3, 3), _param(rng, 2, 3, 3, 3)
    r = rng.normal(size=(2, 5, 3, 3))
    cases.append(("concat_channels", lambda a=a, b=b, r=r: _projected(ops.concat_channels([a, b]), r),
                  {"first": a, "second": b}))

    x = _param(rng, 2, 3, 2, 2)
    r = rng.normal(size=(2, 12))
    cases.append(("flatten", lambda x=x, r=r: _projected(ops.flatten(x), r), {"input": x}))

    theta = Tensor(np.tile([0.9, 0.2, 0.1, -0.15, 1.1, -0.05], (2, 1)) + rng.normal(0, 0.05, (2, 6)),
                   requires_grad=True)
    r = rng.normal(size=(2, 4, 5, 2))
    cases.append(("affine_grid", lambda t=theta, r=r: _projected(affine_grid(t, 4, 5), r), {"theta": theta}))

    x = _param(rng, 2, 2, 6, 5)
    grid = Tensor(rng.uniform(-1.2, 1.2, (2, 4, 3, 2)), requires_grad=True)
    r = rng.normal(size=(2, 2, 4, 3))
    cases.append(("bilinear_sample", lambda x=x, g=grid, r=r: _projected(bilinear_sample(x, g), r),
                  {"input": x, "grid": grid}))
    return cases


def _perturb_off_identity(transformer, rng):
    """Move theta away from the identity so sampling nodes fall between pixels."""
    reg = transformer.loc.regression
    reg.weight.data = rng.normal(0.0, 0.05, reg.weight.shape)
    reg.bias.data = np.array([0.85, 0.2, 0.07, -0.15, 0.9, -0.04])


def _module_case(module, x, rng, mode=TRAIN):
    names = dict(module.named_parameters())
    tensors = {"input": x, **names}
    probe = {}

    def fn():
        out = module(x, mode=mode)
        if "r" not in probe:
            probe["r"] = rng.normal(size=out.shape)
        return _projected(out, probe["r"])

    fn()
    return fn, tensors


def _layer_cases(rng, max_entries):
    cases = []
    st_spec = STSpec(3, 3, 2, False, 4, 3, 1, True, 6, 6)
    st = SpatialTransformer(2, 9, 9, st_spec, label="ST")
    msra_init(st, int(rng.integers(1 << 31)))
    _perturb_off_identity(st, rng)
    x = _param(rng, 3, 2, 9, 9)
    fn, tensors = _module_case(st, x, rng)
    cases.append(("st_layer", fn, tensors))

    for variant in (MODIFIED, GOOGLE):
        block = Inception(InceptionSpec(2, 2, 3, 1, 2, 2, 3, variant=variant), 3)
        msra_init(block, int(rng.integers(1 << 31)))
        x = _param(rng, 2, 3, 5, 5)
        fn, tensors = _module_case(block, x, rng)
        cases.append((f"inception {variant}", fn, tensors))
    return [(name, fn, tensors, None, max_entries) for name, fn, tensors in cases]


def _network_case(rng, max_entries):
    net = build_network(miniature_spec())
    msra_init(net, int(rng.integers(1 << 31)))
    for st in net.transformers():
        _perturb_off_identity(st, rng)
    x = _param(rng, 3, *net.spec.input_shape)
    labels = rng.integers(0, net.spec.class_count, 3)

    def fn():
        logits = net(x, mode=TRAIN, rng=np.random.default_rng(11))
        return ops.softmax_xent(logits, labels)[0]

    tensors = {"input": x}
    groups = {"input": "input"}
    for block_name, block in net.named_blocks():
        for pname, p in block.named_parameters():
            key = f"{block_name}.{pname}"
            tensors[key] = p
            groups[key] = block_name
    return [("miniature", fn, tensors, groups, max_entries)]


def run_scope(scope, seed=0, max_entries=8):
    """Run every case of ``scope``; returns a list of :class:`GradCheckResult`."""
    if scope not in SCOPES:
        raise ValueError(f"unknown gradcheck scope {scope!r}; choose from {SCOPES}")
    rng = np.random.default_rng(seed)
    if scope == "op":
        cases = [(name, fn, tensors, None, None) for name, fn, tensors in _op_cases(rng)]
    elif scope == "layer":
        cases = _layer_cases(rng, max_entries)
    else:
        cases = _network_case(rng, max_entries)
    results = []
    for name, fn, tensors, groups, limit in cases:
        results.extend(check_function(fn, tensors, scope, name, groups, limit, rng=rng))
    return results


def format_results(results, seconds=None):
    lines = [f"{'scope':<8}{'case':<22}{'group':<34}{'max rel err':>12}{'n':>6}  status"]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.scope:<8}{r.case:<22}{r.group:<34}{r.max_rel_error:12.3e}{r.checked:6d}  {status}")
    failed = sum(not r.passed for r in results)
    tail = f"{len(results) - failed}/{len(results)} groups below {THRESHOLD:g}"
    if seconds is not None:
        tail += f" in {seconds:.1f}s"
    lines.append(tail)
    return "\n".join(lines)


def run_all(scopes=SCOPES, seed=0):
    t0 = time.perf_counter()
    results = []
    for s in scopes:
        results.extend(run_scope(s, seed))
    return results, time.perf_counter() - t0
