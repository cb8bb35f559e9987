"""Command-line entry point: ``signnet {train,eval,gradcheck,params,dump-spec}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 verification failure (gradient check, checkpoint mismatch, strict audit).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

from . import gradcheck
from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .data.gtsrb import ROOT_ENV, default_root, load_gtsrb
from .data.synth import synthetic_splits
from .errors import CheckpointError, ConfigError, DataError, LabelError, SignNetError
from .metrics import evaluate_predictions
from .network import NetworkSpec, build_network, count_parameters, format_layout, format_ledger, preset_spec
from .optim import OptState, SGDConfig, msra_init, predict, train_epoch

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3

log = logging.getLogger("signnet")


class UsageError(Exception):
    pass


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from exc


def load_run_config(path):
    """Parse ``--config``: a network spec file or a run config.

    A run config is a JSON object holding any ``SGDConfig`` field plus an
    optional ``"network"`` entry (preset name or inline network spec).
    Returns ``(network_spec_or_None, sgd_overrides)``.
    """
    if path is None:
        return None, {}
    d = _read_json(path)
    if not isinstance(d, dict):
        raise UsageError(f"{path}: expected a JSON object")
    if d.get("format") == "signnet.network":
        return NetworkSpec.from_dict(d), {}
    fields = {f.name for f in dataclasses.fields(SGDConfig)}
    unknown = set(d) - fields - {"network"}
    if unknown:
        raise UsageError(f"{path}: unknown config keys {sorted(unknown)}; allowed: {sorted(fields | {'network'})}")
    spec = None
    if "network" in d:
        net = d["network"]
        spec = preset_spec(net) if isinstance(net, str) else NetworkSpec.from_dict(net)
    return spec, {k: v for k, v in d.items() if k != "network"}


def _resolve_spec(args, config_spec):
    if config_spec is not None and args.preset is not None:
        raise UsageError("give either --preset or a network in --config, not both")
    if config_spec is not None:
        return config_spec
    return preset_spec(args.preset or "toy")


def _data_descriptor(args):
    if args.synthetic is not None:
        return {"kind": "synthetic", "classes": args.synthetic, "seed": args.seed}
    root = args.data_root or default_root()
    if not root:
        raise UsageError(f"no data: pass --synthetic N, --data-root DIR or set {ROOT_ENV}")
    return {"kind": "gtsrb", "root": str(root), "crop": True}


def _load_split(desc, split, input_shape):
    size = input_shape[-1]
    if desc["kind"] == "synthetic":
        train, test = synthetic_splits(desc["classes"], desc["seed"], size=size)
        return train if split == "train" else test
    return load_gtsrb(desc["root"], split, crop=desc.get("crop", True), size=size)


def _check_images(dataset, spec):
    if tuple(dataset.images.shape[1:]) != tuple(spec.input_shape):
        raise DataError(f"data has image shape {dataset.images.shape[1:]}, network expects {tuple(spec.input_shape)}")
    if len(dataset) and dataset.labels.max() >= spec.class_count:
        raise LabelError(f"label {int(dataset.labels.max())} outside the {spec.class_count}-way classifier")


def cmd_train(args):
    config_spec, overrides = load_run_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "checkpoint.sgnc"

    if args.resume:
        _, meta, _ = read_checkpoint(args.resume)
        spec = NetworkSpec.from_dict(meta["spec"])
        cfg = SGDConfig.from_dict(meta["sgd"])
        seed, desc, history = meta["seed"], meta["data"], list(meta.get("history", []))
        model = build_network(spec)
        state, _ = load_checkpoint(args.resume, model)
    else:
        spec = _resolve_spec(args, config_spec)
        cfg = SGDConfig.from_dict({**SGDConfig().to_dict(), **overrides})
        seed, history = args.seed, []
        desc = _data_descriptor(args) if args.epochs > 0 else None
        model = msra_init(build_network(spec), seed)
        state = OptState()

    print(f"network {spec.name} (digest {spec.digest()[:12]}), seed {seed}")
    print("sgd " + " ".join(f"{k}={v}" for k, v in cfg.to_dict().items()))

    def meta():
        return {"seed": seed, "sgd": cfg.to_dict(), "data": desc, "history": history}

    if state.epoch >= args.epochs:
        save_checkpoint(ckpt, model, state, meta())
        print(f"wrote checkpoint {ckpt} at epoch {state.epoch} (no training requested)")
        return EXIT_OK

    train = _load_split(desc, "train", spec.input_shape)
    _check_images(train, spec)
    print(f"training on {len(train)} images for epochs {state.epoch + 1}..{args.epochs}")
    log_path = out / "train_log.jsonl"
    with open(log_path, "a", encoding="utf-8") as log_fh:
        while state.epoch < args.epochs:
            t0 = time.perf_counter()
            report = train_epoch(model, train, cfg, state, seed)
            secs = time.perf_counter() - t0
            entry = {"epoch": report.epoch + 1, "mean_loss": report.mean_loss, "train_top1": report.top1,
                     "steps": report.steps, "seconds": round(secs, 3), "losses": report.losses}
            history.append({k: entry[k] for k in ("epoch", "mean_loss", "train_top1")})
            log_fh.write(json.dumps(entry) + "\n")
            print(f"epoch {report.epoch + 1:4d}  loss {report.mean_loss:.6f}  train top-1 {100 * report.top1:7.3f}%  "
                  f"{secs:6.1f}s")
            save_checkpoint(ckpt, model, state, meta())
    print(f"checkpoint {ckpt}")
    return EXIT_OK


def cmd_eval(args):
    if not args.checkpoint:
        raise UsageError("eval needs --checkpoint")
    _, meta, _ = read_checkpoint(args.checkpoint)
    spec = NetworkSpec.from_dict(meta["spec"])
    config_spec, _ = load_run_config(args.config)
    expected = config_spec or (preset_spec(args.preset) if args.preset else None)
    if expected is not None and expected.digest() != spec.digest():
        raise CheckpointError(
            f"checkpoint network {spec.name} ({spec.digest()[:12]}) differs from the requested "
            f"{expected.name} ({expected.digest()[:12]})"
        )
    model = build_network(expected or spec)
    load_checkpoint(args.checkpoint, model)

    if args.synthetic is not None or args.data_root or not meta.get("data"):
        desc = _data_descriptor(args)
    else:
        desc = meta["data"]
    data = _load_split(desc, args.split, spec.input_shape)
    _check_images(data, spec)
    logits = predict(model, data.images)
    report = evaluate_predictions(logits.argmax(axis=1), data.labels)
    text = report.to_text()
    print(text)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval_report.txt").write_text(text + "\n", encoding="utf-8")
    (out / "eval_report.jsonl").write_text(report.to_jsonl(), encoding="utf-8")
    print(f"reports written to {out / 'eval_report.txt'} and {out / 'eval_report.jsonl'}")
    return EXIT_OK


def cmd_gradcheck(args):
    scopes = gradcheck.SCOPES if args.scope == "all" else (args.scope,)
    results, secs = gradcheck.run_all(scopes, seed=args.seed)
    print(gradcheck.format_results(results, secs))
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


def _spec_for_audit(args):
    config_spec, _ = load_run_config(args.config)
    return _resolve_spec(args, config_spec) if (config_spec or args.preset) else preset_spec("full")


def cmd_params(args):
    spec = _spec_for_audit(args)
    t0 = time.perf_counter()
    model = build_network(spec)
    ledger = count_parameters(model)
    print(format_layout(model))
    print()
    print(format_ledger(ledger))
    if args.out:
        Path(args.out).write_text(json.dumps(ledger.as_dict(), indent=2) + "\n", encoding="utf-8")
    log.info("audit took %.3fs", time.perf_counter() - t0)
    unexpected = [r for r in ledger.mismatches() if not r.note]
    return EXIT_VERIFY if (args.strict and unexpected) else EXIT_OK


def cmd_dump_spec(args):
    spec = _spec_for_audit(args)
    text = spec.to_json()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="signnet", description="Traffic-sign classifier with spatial transformers.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress details")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=False):
        sp.add_argument("--config", help="network spec JSON or run config JSON (SGD fields + 'network')")
        sp.add_argument("--preset", choices=["toy", "toy-no-st", "full", "full-google", "miniature"])
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", help="output directory or file")
        if data:
            sp.add_argument("--data-root", help=f"GTSRB root (default: ${ROOT_ENV})")
            sp.add_argument("--synthetic", type=int, metavar="N", help="use N classes of synthetic glyphs")

    t = sub.add_parser("train", help="train a network")
    common(t, data=True)
    t.add_argument("--epochs", type=int, required=True)
    t.add_argument("--checkpoint", help="checkpoint path (default: OUT/checkpoint.sgnc)")
    t.add_argument("--resume", help="continue from this checkpoint up to --epochs")
    t.set_defaults(func=cmd_train, out="runs")

    e = sub.add_parser("eval", help="evaluate a checkpoint in inference mode")
    common(e, data=True)
    e.add_argument("--checkpoint")
    e.add_argument("--split", choices=["train", "test"], default="test")
    e.set_defaults(func=cmd_eval, out="runs")

    g = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    g.add_argument("--scope", choices=[*gradcheck.SCOPES, "all"], default="all")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)

    a = sub.add_parser("params", help="layout and parameter ledger")
    common(a)
    a.add_argument("--strict", action="store_true", help="exit 3 on any undocumented mismatch")
    a.set_defaults(func=cmd_params)

    d = sub.add_parser("dump-spec", help="write a network spec as JSON")
    common(d)
    d.set_defaults(func=cmd_dump_spec)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "epochs", 0) is not None and getattr(args, "epochs", 0) < 0:
        print("error: --epochs must be >= 0", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, LabelError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CheckpointError as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except SignNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
