"""Declarative network descriptions, the model builder and parameter audit.

A :class:`NetworkSpec` is an ordered list of plain-dict layer rows mirroring
the rows of the architecture table.  Rows may carry the table's expected
output size (``output_hwc``, height x width x channels) and displayed
parameter count (``table_params``); the builder checks both.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .inception import GOOGLE, MODIFIED, Inception, InceptionSpec
from .layers import TRAIN, AvgPool, ConvUnit, Dropout, Linear, MaxPool, Module
from .stn import ST_PRESETS, SpatialTransformer, STSpec
from .tensor import as_tensor

SPEC_FORMAT = "signnet.network"
SPEC_VERSION = 1
CLASS_COUNT = 43

# Total parameter count claimed in the text accompanying the table.
CLAIMED_TOTAL = 10_500_000
CLAIMED_TOTAL_DISPLAY = "10.5M"


@dataclass
class NetworkSpec:
    name: str
    input_shape: tuple
    layers: list
    class_count: int = CLASS_COUNT
    version: int = SPEC_VERSION
    compare_to_table: bool = True

    def to_dict(self):
        return {
            "format": SPEC_FORMAT,
            "version": self.version,
            "name": self.name,
            "input_shape": list(self.input_shape),
            "class_count": self.class_count,
            "compare_to_table": self.compare_to_table,
            "layers": [dict(r) for r in self.layers],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != SPEC_FORMAT:
            raise ConfigError(f"not a network spec (format={d.get('format')!r})")
        if d.get("version") != SPEC_VERSION:
            raise ConfigError(f"unsupported network spec version {d.get('version')!r}")
        return cls(
            name=d["name"],
            input_shape=tuple(d["input_shape"]),
            layers=[dict(r) for r in d["layers"]],
            class_count=d.get("class_count", CLASS_COUNT),
            version=d["version"],
            compare_to_table=d.get("compare_to_table", True),
        )

    @classmethod
    def from_json(cls, text):
        try:
            return cls.from_dict(json.loads(text))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"malformed network spec: {exc}") from exc

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    def digest(self):
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _incept(name, widths, out_hwc, params, variant=MODIFIED):
    return {"type": "inception", "name": name, "widths": list(widths), "variant": variant,
            "output_hwc": list(out_hwc), "table_params": params}


def table1_spec(variant=MODIFIED):
    """The 128x128 grayscale, 43-class network with four transformers."""
    rows = [
        {"type": "st", "name": "ST1", "st": "ST1", "table_params": "3M"},
        {"type": "conv", "name": "conv1", "out_channels": 64, "kernel": 5, "stride": 2,
         "output_hwc": [64, 64, 64], "table_params": "1.6K"},
        {"type": "maxpool", "name": "pool1", "kernel": 3, "stride": 2, "output_hwc": [32, 32, 64]},
        {"type": "st", "name": "ST2", "st": "ST2", "table_params": "891K"},
        {"type": "conv", "name": "conv2", "out_channels": 192, "kernel": 3, "stride": 1,
         "output_hwc": [32, 32, 192], "table_params": "110K"},
        {"type": "maxpool", "name": "pool2", "kernel": 3, "stride": 2, "output_hwc": [16, 16, 192]},
        {"type": "st", "name": "ST3a", "st": "ST3", "table_params": "1M"},
        _incept("mIncept(3a)", (64, 96, 128, 16, 32, 64, 64), (16, 16, 288), "206K", variant),
        {"type": "st", "name": "ST3b", "st": "ST3", "table_params": "1M"},
        _incept("mIncept(3b)", (128, 128, 192, 32, 96, 64, 64), (16, 16, 480), "436K", variant),
        {"type": "maxpool", "name": "pool3", "kernel": 3, "stride": 2, "output_hwc": [8, 8, 480]},
        _incept("mIncept(4a)", (192, 96, 208, 16, 48, 48, 64), (8, 8, 512), "395K", variant),
        _incept("mIncept(4b)", (160, 112, 224, 24, 64, 48, 64), (8, 8, 512), "467K", variant),
        _incept("mIncept(4c)", (128, 128, 256, 24, 64, 64, 64), (8, 8, 512), "546K", variant),
        _incept("mIncept(4d)", (112, 144, 288, 32, 64, 48, 64), (8, 8, 528), "624K", variant),
        _incept("mIncept(4e)", (256, 160, 320, 32, 128, 48, 128), (8, 8, 832), "880K", variant),
        {"type": "maxpool", "name": "pool4", "kernel": 3, "stride": 2, "output_hwc": [4, 4, 832]},
        _incept("mIncept(5a)", (256, 160, 320, 32, 128, 48, 128), (4, 4, 832), "965K", variant),
        _incept("mIncept(5b)", (320, 192, 320, 48, 128, 32, 256), (4, 4, 1024), "1.2M", variant),
        {"type": "avgpool", "name": "avgpool", "kernel": 4, "stride": 1, "output_hwc": [1, 1, 1024]},
        {"type": "dropout", "name": "dropout", "rate": 0.4, "output_hwc": [1, 1, 1024]},
        {"type": "linear", "name": "linear", "out_features": CLASS_COUNT, "output_hwc": [1, 1, 43],
         "table_params": "44K"},
        {"type": "softmax", "name": "softmax", "output_hwc": [1, 1, 43]},
    ]
    if variant == GOOGLE:
        for r in rows:
            r.pop("table_params", None)
            if r["type"] == "inception":
                r["name"] = r["name"].replace("mIncept", "gIncept")
    name = "table1" if variant == MODIFIED else "table1-google"
    return NetworkSpec(name=name, input_shape=(1, 128, 128), layers=rows, compare_to_table=variant == MODIFIED)


TOY_ST = {"conv1_channels": 8, "conv1_kernel": 5, "conv1_stride": 2, "pool1": True,
          "conv2_channels": 16, "conv2_kernel": 3, "conv2_stride": 1, "pool2": True,
          "fc1_width": 32, "fc2_width": 32, "regression_outputs": 6}
TOY_STEM = 4


def toy_spec(with_st=True):
    """Desk-scale preset: transformer -> conv -> one modified inception -> avg-pool -> linear.

    A 4x4 average-pooling stem first brings the 128 x 128 input down to
    32 x 32.  At full resolution the transformer's regression output moves
    too far per SGD step at the default learning rate and the sampled view
    drifts off the glyph; on the pooled input it stays stable.  The max-pool
    after the convolution and the 4x4 average pooling (which keeps a coarse
    3 x 3 position map) make the classifier fast enough for five-seed runs.
    """
    rows = [{"type": "avgpool", "name": "stem", "kernel": TOY_STEM, "stride": TOY_STEM, "output_hwc": [32, 32, 1]}]
    if with_st:
        rows.append({"type": "st", "name": "ST", "st": dict(TOY_ST), "output_hwc": [32, 32, 1]})
    rows += [
        {"type": "conv", "name": "conv1", "out_channels": 24, "kernel": 5, "stride": 1,
         "output_hwc": [32, 32, 24]},
        {"type": "maxpool", "name": "pool1", "kernel": 3, "stride": 2, "output_hwc": [15, 15, 24]},
        {"type": "inception", "name": "mIncept", "widths": [24, 24, 48, 12, 24, 12, 24], "variant": MODIFIED,
         "output_hwc": [15, 15, 120]},
        {"type": "avgpool", "name": "avgpool", "kernel": 4, "stride": 4, "output_hwc": [3, 3, 120]},
        {"type": "linear", "name": "linear", "out_features": CLASS_COUNT, "output_hwc": [1, 1, 43]},
        {"type": "softmax", "name": "softmax", "output_hwc": [1, 1, 43]},
    ]
    return NetworkSpec(name="toy" if with_st else "toy-no-st", input_shape=(1, 128, 128), layers=rows,
                       compare_to_table=False)


def miniature_spec():
    """Two-block miniature of the full pattern for network-scope gradient checks."""
    tiny_st = {"conv1_channels": 2, "conv1_kernel": 3, "conv1_stride": 2, "pool1": False,
               "conv2_channels": 2, "conv2_kernel": 3, "conv2_stride": 1, "pool2": True,
               "fc1_width": 4, "fc2_width": 4, "regression_outputs": 6}
    rows = [
        {"type": "st", "name": "ST1", "st": dict(tiny_st)},
        {"type": "conv", "name": "conv1", "out_channels": 4, "kernel": 3, "stride": 1},
        {"type": "maxpool", "name": "pool1", "kernel": 3, "stride": 2, "output_hwc": [6, 6, 4]},
        {"type": "st", "name": "ST2", "st": dict(tiny_st)},
        {"type": "inception", "name": "mIncept(a)", "widths": [2, 2, 2, 1, 2, 1, 2], "variant": MODIFIED},
        {"type": "maxpool", "name": "pool2", "kernel": 3, "stride": 2, "output_hwc": [3, 3, 8]},
        {"type": "inception", "name": "mIncept(b)", "widths": [2, 2, 3, 1, 2, 2, 3], "variant": MODIFIED},
        {"type": "avgpool", "name": "avgpool", "kernel": 3, "stride": 1},
        {"type": "dropout", "name": "dropout", "rate": 0.4},
        {"type": "linear", "name": "linear", "out_features": 5},
        {"type": "softmax", "name": "softmax"},
    ]
    return NetworkSpec(name="miniature", input_shape=(1, 12, 12), layers=rows, class_count=5,
                       compare_to_table=False)


PRESETS = {
    "full": lambda: table1_spec(MODIFIED),
    "full-google": lambda: table1_spec(GOOGLE),
    "toy": lambda: toy_spec(True),
    "toy-no-st": lambda: toy_spec(False),
    "miniature": miniature_spec,
}


def preset_spec(name):
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass
class LayoutRow:
    """One built row: its module, chosen padding and resulting (C, H, W) shape."""

    name: str
    type: str
    module: Module | None
    output_shape: tuple
    padding: int | None = None
    expected_hwc: tuple | None = None
    table_params: str | None = None
    details: dict = field(default_factory=dict)

    @property
    def output_hwc(self):
        c, h, w = self.output_shape
        return (h, w, c)


def _matching_padding(size, kernel, stride, expected):
    """Smallest padding whose sliding-window output extent equals ``expected``."""
    for p in range(kernel):
        if (size + 2 * p - kernel) // stride + 1 == expected:
            return p
    return None


def _choose_padding(row, shape, kernel, stride, default):
    if "padding" in row:
        return int(row["padding"])
    if "output_hwc" not in row:
        return default
    expected = row["output_hwc"][0]
    p = _matching_padding(shape[1], kernel, stride, expected)
    if p is None:
        raise ShapeError(
            f"row {row['name']!r}: no padding makes {kernel}x{kernel}/{stride} map {shape[1]} to {expected}",
            row["name"],
        )
    return p


class Network(Module):
    """Built model; ``forward`` returns class logits (softmax lives in the loss)."""

    def __init__(self, spec, rows):
        self.spec = spec
        self._rows = rows
        self.blocks = [r.module for r in rows if r.module is not None]
        self._names = [r.name for r in rows if r.module is not None]

    @property
    def layout(self):
        return list(self._rows)

    def forward(self, x, mode=TRAIN, rng=None):
        x = as_tensor(x)
        if tuple(x.shape[1:]) != tuple(self.spec.input_shape):
            raise ShapeError(f"network expects (N, {self.spec.input_shape}) input, got {x.shape}", "input")
        for block in self.blocks:
            x = block(x, mode=mode, rng=rng)
        return x

    def transformers(self):
        return [m for m in self.blocks if isinstance(m, SpatialTransformer)]

    def named_blocks(self):
        return list(zip(self._names, self.blocks))


def _st_spec(value):
    if isinstance(value, str):
        try:
            return ST_PRESETS[value]
        except KeyError:
            raise ConfigError(f"unknown transformer preset {value!r}") from None
    return STSpec.from_dict(value)


def build_network(spec):
    """Instantiate ``spec`` and check every declared output size.

    Raises :class:`ShapeError` naming the first row whose computed output
    differs from its ``output_hwc`` entry.
    """
    shape = tuple(spec.input_shape)
    rows = []
    for raw in spec.layers:
        kind, name = raw["type"], raw.get("name", raw["type"])
        module, padding, details = None, None, {}
        if kind == "st":
            st = _st_spec(raw["st"])
            module = SpatialTransformer(shape[0], shape[1], shape[2], st, label=name)
            details["st"] = st.to_dict()
        elif kind == "conv":
            k, s = int(raw["kernel"]), int(raw.get("stride", 1))
            padding = _choose_padding(raw, shape, k, s, (k - 1) // 2)
            module = ConvUnit(shape[0], int(raw["out_channels"]), k, s, padding)
        elif kind == "maxpool":
            k, s = int(raw["kernel"]), int(raw["stride"])
            padding = _choose_padding(raw, shape, k, s, 0)
            module = MaxPool(k, s, padding)
        elif kind == "avgpool":
            module = AvgPool(int(raw["kernel"]), int(raw["stride"]))
        elif kind == "inception":
            ispec = InceptionSpec(*raw["widths"], variant=raw.get("variant", MODIFIED))
            module = Inception(ispec, shape[0])
            details["inception"] = ispec.to_dict()
        elif kind == "dropout":
            module = Dropout(float(raw["rate"]))
        elif kind == "linear":
            module = Linear(int(np.prod(shape)), int(raw.get("out_features", spec.class_count)))
        elif kind == "softmax":
            pass
        else:
            raise ConfigError(f"row {name!r}: unknown layer type {kind!r}")

        try:
            if kind == "linear":
                shape = (module.weight.shape[0], 1, 1)
            elif module is not None:
                shape = tuple(module.output_shape(shape))
        except ConfigError as exc:
            raise ShapeError(f"row {name!r}: {exc}", name) from exc

        expected = tuple(raw["output_hwc"]) if "output_hwc" in raw else None
        row = LayoutRow(name, kind, module, shape, padding, expected, raw.get("table_params"), details)
        if expected is not None and row.output_hwc != expected:
            raise ShapeError(
                f"row {name!r}: output {'x'.join(map(str, row.output_hwc))} differs from declared "
                f"{'x'.join(map(str, expected))}",
                name,
            )
        rows.append(row)
    if shape[0] != spec.class_count:
        raise ShapeError(f"network ends with {shape[0]} outputs, expected {spec.class_count} classes", "classes")
    return Network(spec, rows)


# ---------------------------------------------------------------------------
# parameter audit

_AUX_NAMES = ("gamma", "beta", "slope")
_UNITS = {"K": 1_000, "M": 1_000_000}


def parse_display(text):
    """Split a displayed count such as ``'1.6K'`` into (scaled integer, decimals, unit)."""
    text = text.strip()
    unit = text[-1].upper()
    if unit not in _UNITS:
        return int(text), 0, ""
    number = text[:-1]
    whole, _, frac = number.partition(".")
    return int(whole + frac), len(frac), unit


def display_at_precision(value, like):
    """Format ``value`` with the unit and decimal places of ``like``, truncating."""
    _, decimals, unit = parse_display(like)
    scale = _UNITS.get(unit, 1)
    scaled = value * 10 ** decimals // scale
    if decimals:
        s = str(scaled).rjust(decimals + 1, "0")
        return f"{s[:-decimals]}.{s[-decimals:]}{unit}"
    return f"{scaled}{unit}"


def matches_display(value, displayed):
    return display_at_precision(value, displayed) == displayed.strip()


def human_count(value):
    if value >= 1_000_000:
        return f"{value / 1e6:.2f}M"
    if value >= 1_000:
        return f"{value / 1e3:.1f}K"
    return str(value)


@dataclass
class LedgerRow:
    name: str
    type: str
    weights: int
    aux: int
    table: str | None
    computed_display: str | None
    match: bool | None
    note: str = ""


@dataclass
class ParamLedger:
    network: str
    rows: list
    total_weights: int
    total_aux: int
    compared: bool
    depth_census: list

    @property
    def total(self):
        return self.total_weights + self.total_aux

    @property
    def table_total(self):
        """Sum of the displayed table values, in parameters."""
        total = 0
        for r in self.rows:
            if r.table:
                scaled, decimals, unit = parse_display(r.table)
                total += scaled * _UNITS.get(unit, 1) // 10 ** decimals
        return total

    @property
    def depth(self):
        return sum(d for _, d in self.depth_census)

    def mismatches(self):
        return [r for r in self.rows if r.match is False]

    def as_dict(self):
        return {
            "network": self.network,
            "rows": [r.__dict__ for r in self.rows],
            "total_weights": self.total_weights,
            "total_aux": self.total_aux,
            "table_total": self.table_total if self.compared else None,
            "claimed_total": CLAIMED_TOTAL if self.compared else None,
            "depth": self.depth,
            "depth_census": self.depth_census,
        }


ST2_NOTE = ("table value is not reproducible from the ST2 localisation layout "
            "(conv 128 5x5/2, pool, conv 192 5x5/2, fc 192, fc 192)")


def _row_counts(module):
    weights = aux = 0
    for name, p in module.named_parameters():
        if name.rsplit(".", 1)[-1] in _AUX_NAMES:
            aux += p.size
        else:
            weights += p.size
    return weights, aux


def count_parameters(model, policy="table"):
    """Trainable scalars per row.

    ``policy='table'`` counts convolution/linear weights and the biases that
    exist (only where no batch norm follows); batch-norm and PReLU scalars are
    reported separately in ``aux``.  ``policy='all'`` folds them into weights.
    """
    if policy not in ("table", "all"):
        raise ConfigError(f"unknown counting policy {policy!r}")
    compare = model.spec.compare_to_table and policy == "table"
    rows, census = [], []
    for lr in model.layout:
        if lr.module is None:
            continue
        weights, aux = _row_counts(lr.module)
        if policy == "all":
            weights, aux = weights + aux, 0
        if weights == 0 and aux == 0:
            continue
        table = lr.table_params if compare else None
        shown = display_at_precision(weights, table) if table else None
        match = (shown == table) if table else None
        note = ST2_NOTE if (table and not match and lr.details.get("st") == ST_PRESETS["ST2"].to_dict()) else ""
        rows.append(LedgerRow(lr.name, lr.type, weights, aux, table, shown, match, note))
        if lr.type in ("conv", "linear"):
            census.append((lr.name, 1))
        elif lr.type == "inception":
            census.append((lr.name, lr.module.depth()))
    return ParamLedger(
        network=model.spec.name,
        rows=rows,
        total_weights=sum(r.weights for r in rows),
        total_aux=sum(r.aux for r in rows),
        compared=compare,
        depth_census=census,
    )


def format_ledger(ledger):
    lines = [f"parameter ledger: {ledger.network}"]
    head = f"{'row':<14}{'type':<11}{'computed':>12}{'bn+prelu':>10}"
    if ledger.compared:
        head += f"{'shown':>9}{'table':>8}  flag"
    lines.append(head)
    for r in ledger.rows:
        line = f"{r.name:<14}{r.type:<11}{r.weights:>12,}{r.aux:>10,}"
        if ledger.compared:
            if r.table:
                line += f"{r.computed_display:>9}{r.table:>8}  {'MATCH' if r.match else 'MISMATCH'}"
            else:
                line += f"{'':>9}{'':>8}  -"
        lines.append(line)
    lines.append(f"total weights {ledger.total_weights:,} ({human_count(ledger.total_weights)}); "
                 f"bn+prelu {ledger.total_aux:,}; all trainable {ledger.total:,}")
    if ledger.compared:
        lines.append(f"sum of table values {ledger.table_total:,} ({human_count(ledger.table_total)}); "
                     f"text claims around {CLAIMED_TOTAL_DISPLAY}")
        for r in ledger.mismatches():
            note = f": {r.note}" if r.note else ""
            lines.append(f"MISMATCH {r.name}: computed {r.weights:,} vs table {r.table}{note}")
    census = " + ".join(f"{n}:{d}" for n, d in ledger.depth_census)
    lines.append(f"depth census (parameterized layers, transformers and pooling excluded): {ledger.depth}")
    lines.append(f"  {census}")
    return "\n".join(lines)


def format_layout(model):
    lines = [f"layout: {model.spec.name}", f"{'row':<14}{'type':<11}{'output HxWxC':>16}{'pad':>5}  check"]
    for r in model.layout:
        hwc = "x".join(map(str, r.output_hwc))
        pad = "" if r.padding is None else str(r.padding)
        check = "ok" if r.expected_hwc is not None else "-"
        lines.append(f"{r.name:<14}{r.type:<11}{hwc:>16}{pad:>5}  {check}")
    return "\n".join(lines)
