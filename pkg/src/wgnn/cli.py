"""Command line entry point: ``wgnn <command> [flags]``.

Every command takes ``--config <json>``; flags override the file, the file
overrides built-in defaults. Failures print a single line
``error: <Kind>: <message>`` to stderr and exit nonzero (2 for usage
errors, 1 otherwise).
"""

import argparse
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import datasets as dsm
from .errors import WGNNError
from .neural import save_checkpoint
from .ot import IBPConfig
from .pipelines import (
    TrainConfig,
    completion_defaults,
    curve_csv,
    evaluate,
    run_matrix_completion,
    run_node_classification,
    sweep,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _csv(kind):
    def parse(text):
        items = [x.strip() for x in text.split(",") if x.strip()]
        try:
            return [kind(x) for x in items]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None
    return parse


def _common(p):
    p.add_argument("--config", help="JSON file with settings (flags take precedence)")
    p.add_argument("--out", help="output path")


def _train_flags(p):
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--seeds", type=_csv(int))
    p.add_argument("--k", type=int)
    p.add_argument("--L", type=int)
    p.add_argument("--h", type=int)
    p.add_argument("--eps", type=float, help="entropic regularization")
    p.add_argument("--ibp-iters", type=int)
    p.add_argument("--variant")
    p.add_argument("--rate", type=float, help="masking rate")
    p.add_argument("--mode", help="masking mode: partial or entire")
    p.add_argument("--hidden", type=_csv(int), help="MLP hidden widths, e.g. 128 or 50,50,50")
    p.add_argument("--lr", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--max-epochs", type=int)


def build_parser():
    ap = _Parser(prog="wgnn", description="Wasserstein graph neural networks on incomplete data")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate the synthetic node classification benchmark")
    _common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--sizes", type=_csv(int), help="community sizes")
    p.add_argument("--p-in", type=float)
    p.add_argument("--p-out", type=float)
    p.add_argument("--num-attributes", type=int)
    p.add_argument("--purity", type=float)

    p = sub.add_parser("mask", help="drop feature entries or rows at random")
    _common(p)
    p.add_argument("--features", help="input feature file")
    p.add_argument("--mode")
    p.add_argument("--rate", type=float)
    p.add_argument("--seed", type=int)

    for name, help_ in (("train-nc", "node classification"), ("train-mc", "matrix completion")):
        p = sub.add_parser(name, help=help_)
        _common(p)
        _train_flags(p)
        p.add_argument("--predictions", help="directory for per-seed test predictions")
        p.add_argument("--checkpoint", help="directory for per-seed model checkpoints (.npz)")

    p = sub.add_parser("sweep", help="node classification over a list of masking rates")
    _common(p)
    _train_flags(p)
    p.add_argument("--rates", type=_csv(float))

    p = sub.add_parser("eval", help="score a prediction file against a dataset's test split")
    _common(p)
    p.add_argument("--data")
    p.add_argument("--task", help="classification or completion")
    p.add_argument("--predictions")
    return ap


# config keys accepted per command besides the TrainConfig fields
_TRAIN_KEYS = {"data", "out", "predictions", "checkpoint"}
_FLAG_TO_KEY = {
    "seeds": "seeds", "k": "k", "L": "L", "h": "h", "variant": "variant", "rate": "mask_rate",
    "mode": "mask_mode", "hidden": "mlp_hidden_dims", "lr": "learning_rate", "patience": "patience",
    "max_epochs": "max_epochs",
}


def _load_config(path, allowed):
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise UsageError(f"cannot read config {path}: {err}") from None
    if not isinstance(data, dict):
        raise UsageError("config must be a JSON object")
    unknown = set(data) - set(allowed)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return data


def _merge(config, args, mapping):
    out = dict(config)
    for flag, key in mapping.items():
        value = getattr(args, flag, None)
        if value is not None:
            out[key] = value
    return out


def train_settings(args, base):
    """Merge defaults, config file and flags into ``(TrainConfig, extras)``."""
    train_keys = {f.name for f in fields(TrainConfig)}
    allowed = train_keys | _TRAIN_KEYS | ({"rates"} if args.command == "sweep" else set())
    merged = _merge(_load_config(args.config, allowed), args, {
        **_FLAG_TO_KEY, "data": "data", "out": "out", "rates": "rates",
        "predictions": "predictions", "checkpoint": "checkpoint",
    })
    ibp = asdict(base.ibp)
    ibp.update(merged.pop("ibp", {}) or {})
    if args.eps is not None:
        ibp["epsilon"] = args.eps
    if args.ibp_iters is not None:
        ibp["iterations"] = args.ibp_iters
    extras = {k: merged.pop(k) for k in list(merged) if k not in train_keys}
    settings = {**base.to_dict(), **merged, "ibp": ibp}
    return TrainConfig.from_dict(settings), extras


def _write(text, out):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_synth(args):
    keys = {f.name for f in fields(dsm.SyntheticConfig)} | {"out"}
    merged = _merge(_load_config(args.config, keys), args, {
        "seed": "seed", "sizes": "community_sizes", "p_in": "p_in", "p_out": "p_out",
        "num_attributes": "num_attributes", "purity": "label_purity", "out": "out",
    })
    out = merged.pop("out", None)
    if not out:
        raise UsageError("synth requires --out")
    ds = dsm.gen_synthetic(dsm.SyntheticConfig(**merged))
    fp = dsm.write_citation(ds, out)
    print(json.dumps({"nodes": ds.graph.n, "edges": ds.graph.num_edges, "fingerprint": fp}))


def cmd_mask(args):
    merged = _merge(_load_config(args.config, {"features", "mode", "rate", "seed", "out"}), args,
                    {"features": "features", "mode": "mode", "rate": "rate", "seed": "seed", "out": "out"})
    if not merged.get("features") or not merged.get("out"):
        raise UsageError("mask requires --features and --out")
    spec = dsm.MaskSpec(merged.get("mode", "partial"), float(merged.get("rate", 0.0)), int(merged.get("seed", 0)))
    X = dsm.read_features(merged["features"])
    M = dsm.apply_mask(X, spec)
    Path(merged["out"]).parent.mkdir(parents=True, exist_ok=True)
    dsm.write_features(merged["out"], M)
    print(json.dumps({"observed": int(M.observed_count), "observed_fraction": M.observed_count / M.mask.size}))


def _per_seed_files(report, pred_dir, ckpt_dir):
    for seed in report.predictions:
        if pred_dir:
            Path(pred_dir).mkdir(parents=True, exist_ok=True)
            np.savetxt(Path(pred_dir) / f"seed{seed}.txt", report.predictions[seed], fmt="%.10g")
        if ckpt_dir:
            Path(ckpt_dir).mkdir(parents=True, exist_ok=True)
            save_checkpoint(Path(ckpt_dir) / f"seed{seed}.npz", report.models[seed])


def cmd_train_nc(args):
    cfg, extra = train_settings(args, TrainConfig())
    ds = dsm.load_citation_dir(extra.get("data") or dsm.default_data_dir() / "cora")
    report = run_node_classification(ds, cfg)
    _per_seed_files(report, extra.get("predictions"), extra.get("checkpoint"))
    _write(report.to_json() + "\n", extra.get("out"))


def cmd_train_mc(args):
    cfg, extra = train_settings(args, completion_defaults())
    ds = dsm.load_ratings_dir(extra.get("data") or dsm.default_data_dir() / "ml100k")
    report = run_matrix_completion(ds, cfg)
    _per_seed_files(report, extra.get("predictions"), extra.get("checkpoint"))
    _write(report.to_json() + "\n", extra.get("out"))


def cmd_sweep(args):
    cfg, extra = train_settings(args, TrainConfig())
    rates = extra.get("rates")
    if not rates:
        raise UsageError("sweep requires a non-empty --rates list")
    ds = dsm.load_citation_dir(extra.get("data") or dsm.default_data_dir() / "cora")
    _write(curve_csv(sweep(ds, cfg, rates)), extra.get("out"))


def cmd_eval(args):
    merged = _merge(_load_config(args.config, {"data", "task", "predictions", "out"}), args,
                    {"data": "data", "task": "task", "predictions": "predictions", "out": "out"})
    task = merged.get("task")
    if task not in ("classification", "completion") or not merged.get("data") or not merged.get("predictions"):
        raise UsageError("eval requires --data, --predictions and --task classification|completion")
    if task == "classification":
        ds = dsm.load_citation_dir(merged["data"])
        pred = np.loadtxt(merged["predictions"], ndmin=1).astype(np.int64)
    else:
        ds = dsm.load_ratings_dir(merged["data"])
        pred = np.loadtxt(merged["predictions"], ndmin=1)
    value = evaluate(pred, ds, task)
    metric = "accuracy" if task == "classification" else "rmse"
    _write(json.dumps({"metric": metric, "value": value}) + "\n", merged.get("out"))


COMMANDS = {
    "synth": cmd_synth, "mask": cmd_mask, "train-nc": cmd_train_nc, "train-mc": cmd_train_mc,
    "sweep": cmd_sweep, "eval": cmd_eval,
}


def _fail(kind, message, code):
    message = " ".join(str(message).split())
    print(f"error: {kind}: {message}", file=sys.stderr)
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if not args.command:
            raise UsageError("a command is required: " + ", ".join(COMMANDS))
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        COMMANDS[args.command](args)
    except UsageError as err:
        return _fail("UsageError", err, 2)
    except WGNNError as err:
        return _fail(type(err).__name__, err, 1)
    except (OSError, ValueError, TypeError) as err:
        return _fail(type(err).__name__, err, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
