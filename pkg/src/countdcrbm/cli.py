"""Command-line entry point: ``countdcrbm {generate,train,evaluate,verify}``.

Every command accepts ``--config FILE`` (flat ``key = value`` lines whose
keys match the long flag names, dashes or underscores) and writes a resolved
configuration snapshot into ``--out DIR``. Flags override the file.

Exit codes: 0 success, 1 validation error or failed verification,
2 runtime error (e.g. diverged training).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import verify as verify_mod
from .data import (
    DEFAULT_WINDOW,
    TraceFormatError,
    format_generator_config,
    generate_synthetic,
    generator_config_from_values,
    load_trace,
    read_key_values,
    save_trace,
    split_chronological,
    window_dataset,
)
from .evaluation import majority_baseline, report_table, score_predictions
from .inference import classify_batch
from .model import ModelConfig, UnitKind, init_params, load_params, save_params
from .training import DivergenceError, TrainConfig, train

log = logging.getLogger("countdcrbm")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
HISTORY_SWEEP = (1, 5, 10)
SNAPSHOT_NAME = "run_config.cfg"

# (name, type, default) for options that may come from --config
TRAIN_OPTIONS = [
    ("trace", str, None),
    ("cache", str, None),
    ("history", int, 5),
    ("window", int, DEFAULT_WINDOW),
    ("bin", int, 1),
    ("hidden", int, 15),
    ("kind", str, UnitKind.COUNT.value),
    ("epochs", int, 100),
    ("lr", float, 1e-5),
    ("batch_size", int, 100),
    ("cd_steps", int, 1),
    ("eval_every", int, 10),
    ("train_fraction", float, 0.8),
    ("momentum", float, 0.0),
    ("weight_decay", float, 0.0),
    ("shuffle", "flag", False),
    ("sweep", "flag", False),
    ("seed", int, 0),
    ("out", str, None),
]
EVALUATE_OPTIONS = [
    ("model", str, None),
    ("trace", str, None),
    ("cache", str, None),
    ("window", int, None),
    ("bin", int, None),
    ("train_fraction", float, None),
    ("out", str, None),
]


class UsageError(ValueError):
    pass


def _parse_flag(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def resolve(args: argparse.Namespace, options) -> tuple[dict, list[str]]:
    """Merge defaults < config file < command-line flags; also return unknown file keys."""
    file_values = {}
    if getattr(args, "config", None):
        file_values = {k.replace("-", "_"): v for k, v in read_key_values(args.config).items()}
    known = {name for name, _, _ in options}
    resolved = {}
    for name, kind, default in options:
        value = getattr(args, name, None)
        if value is None and name in file_values:
            raw = file_values[name]
            value = _parse_flag(raw) if kind == "flag" else kind(raw)
        resolved[name] = default if value is None else value
    unknown = sorted(set(file_values) - known)
    return resolved, unknown


def write_snapshot(out_dir: Path, values: dict, command: str) -> None:
    lines = [f"# resolved configuration for `countdcrbm {command}`"]
    for key, value in values.items():
        if value is not None:
            lines.append(f"{key} = {value}")
    (out_dir / SNAPSHOT_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _require(values: dict, *names):
    missing = [n for n in names if values.get(n) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _pick_cache(trace, cache):
    if cache is not None:
        return cache
    if len(trace.miss_streams) == 1:
        return next(iter(trace.miss_streams))
    raise UsageError(f"--cache is required; trace has {sorted(trace.miss_streams)}")


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- generate -----------------------------------------------------------------

def cmd_generate(args) -> int:
    if args.config:
        values = read_key_values(args.config)
    else:
        values = read_key_values(resources.files("countdcrbm") / "configs" / "demo_generator.cfg")
    if not args.out:
        raise UsageError("missing required option: --out")
    if args.seed is not None:
        values["seed"] = str(args.seed)
    if args.length is not None:
        values["length"] = str(args.length)
    config = generator_config_from_values(values)
    out = _out_dir(args.out)
    trace = generate_synthetic(config)
    save_trace(trace, out / "trace.csv")
    (out / SNAPSHOT_NAME).write_text(format_generator_config(config), encoding="utf-8")
    miss_rate = float(np.mean(trace.miss_streams["synthetic"]))
    print(f"wrote {out / 'trace.csv'}: T={trace.length} V={trace.visible_dim} miss_rate={miss_rate:.4f}")
    return EXIT_OK


# -- train ----------------------------------------------------------------------

def _train_one(trace, cache, history_len, values, out: Path):
    dataset = window_dataset(trace, history_len, cache, values["window"], values["bin"])
    train_set, test_set = split_chronological(dataset, values["train_fraction"])
    config = ModelConfig(
        visible_dim=trace.visible_dim,
        hidden_dim=values["hidden"],
        label_dim=2,
        history_len=history_len,
        unit_kind=UnitKind(values["kind"]),
    )
    params = init_params(config, seed=values["seed"], frames=train_set.frames)
    train_config = TrainConfig(
        learning_rate=values["lr"],
        epochs=values["epochs"],
        cd_steps=values["cd_steps"],
        batch_size=values["batch_size"],
        seed=values["seed"],
        shuffle=values["shuffle"],
        eval_every=values["eval_every"],
        momentum=values["momentum"],
        weight_decay=values["weight_decay"],
    )
    params, report = train(params, train_set, test_set, train_config)
    params = params.replace(metadata={
        "cache": cache,
        "window": values["window"],
        "bin": values["bin"],
        "train_fraction": values["train_fraction"],
        "categories": list(trace.categories),
    })
    model_path = out / "model.json"
    save_params(params, model_path)
    report.checkpoint = str(model_path)
    (out / "curves.csv").write_text(report.to_csv(), encoding="utf-8")
    _, baseline = majority_baseline(train_set.labels, test_set.labels)
    scores = {
        "model": f"DCRBM({history_len})",
        "cache": cache,
        "train_samples": len(train_set),
        "test_samples": len(test_set),
        "initial": report.initial.scores.as_dict() | {"recon_error": report.initial.recon_error,
                                                      "bce": report.initial.bce},
        "final": report.final.scores.as_dict() | {"recon_error": report.final.recon_error, "bce": report.final.bce},
        "majority_baseline": baseline.as_dict(),
    }
    (out / "scores.json").write_text(json.dumps(scores, indent=2) + "\n", encoding="utf-8")
    return report, baseline


def cmd_train(args) -> int:
    values, unknown = resolve(args, TRAIN_OPTIONS)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    _require(values, "trace", "out")
    out = _out_dir(values["out"])
    write_snapshot(out, values, "train")
    trace = load_trace(values["trace"])
    cache = _pick_cache(trace, values["cache"])
    histories = HISTORY_SWEEP if values["sweep"] else (values["history"],)
    rows = []
    baseline = None
    for n in histories:
        run_dir = _out_dir(out / f"N{n}") if values["sweep"] else out
        log.info("training DCRBM(%d) on %s", n, cache)
        report, baseline = _train_one(trace, cache, n, values, run_dir)
        rows.append((cache, f"DCRBM({n})", report.final.scores))
    rows.append((cache, "Majority", baseline))
    table, csv_text = report_table(rows)
    (out / "report.csv").write_text(csv_text, encoding="utf-8")
    print(table)
    return EXIT_OK


# -- evaluate ---------------------------------------------------------------------

def cmd_evaluate(args) -> int:
    values, unknown = resolve(args, EVALUATE_OPTIONS)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    _require(values, "model", "trace", "out")
    params = load_params(values["model"])
    meta = params.metadata
    for key, default in (("window", DEFAULT_WINDOW), ("bin", 1), ("train_fraction", 0.8), ("cache", None)):
        if values[key] is None:
            values[key] = meta.get(key, default)
    out = _out_dir(values["out"])
    write_snapshot(out, values, "evaluate")
    trace = load_trace(values["trace"])
    if trace.visible_dim != params.config.visible_dim:
        raise UsageError(
            f"visible_dim mismatch: model expects {params.config.visible_dim} instruction categories, "
            f"trace has {trace.visible_dim}"
        )
    cache = _pick_cache(trace, values["cache"])
    N = params.config.history_len
    dataset = window_dataset(trace, N, cache, values["window"], values["bin"])
    train_set, test_set = split_chronological(dataset, values["train_fraction"])
    _, posterior, predicted = classify_batch(params, test_set.frames, test_set.history)
    model_scores = score_predictions(predicted, test_set.labels)
    _, baseline = majority_baseline(train_set.labels, test_set.labels)

    lines = ["t,truth,predicted,posterior_miss"]
    for t, truth, pred, p in zip(test_set.origin_t, test_set.labels, predicted, posterior[:, 1]):
        lines.append(f"{t},{truth},{pred},{float(p)!r}")
    (out / "predictions.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    table, csv_text = report_table([(cache, f"DCRBM({N})", model_scores), (cache, "Majority", baseline)])
    (out / "report.csv").write_text(csv_text, encoding="utf-8")
    print(table)
    return EXIT_OK


# -- verify -----------------------------------------------------------------------

def cmd_verify(args) -> int:
    results = verify_mod.run_all(seed=args.seed if args.seed is not None else 0, inject=args.inject_fault)
    text = "\n".join(r.line() for r in results)
    print(text)
    failed = [r.name for r in results if not r.passed]
    summary = f"{len(results) - len(failed)}/{len(results)} properties passed"
    print(summary if not failed else summary + "; failed: " + ", ".join(failed))
    if args.out:
        out = _out_dir(args.out)
        write_snapshot(out, {"seed": args.seed, "inject_fault": args.inject_fault}, "verify")
        (out / "verify.txt").write_text(text + "\n" + summary + "\n", encoding="utf-8")
    return EXIT_INVALID if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="countdcrbm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value file; flags override it")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")

    g = sub.add_parser("generate", help="write a synthetic trace")
    common(g)
    g.add_argument("--length", type=int, help="override trace length in cycles")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a Count-DCRBM on a trace")
    common(t)
    t.add_argument("--trace")
    t.add_argument("--cache", help="miss stream name (miss_<name> column)")
    t.add_argument("--history", type=int, help="history length N (default 5)")
    t.add_argument("--sweep", action="store_const", const=True, help="train N = 1, 5 and 10")
    t.add_argument("--window", type=int, help="label horizon in cycles (default 128)")
    t.add_argument("--bin", type=int, help="cycles per frame (default 1)")
    t.add_argument("--hidden", type=int, help="hidden units (default 15)")
    t.add_argument("--kind", choices=[k.value for k in UnitKind])
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float, help="learning rate (default 1e-5)")
    t.add_argument("--batch-size", type=int)
    t.add_argument("--cd-steps", type=int)
    t.add_argument("--eval-every", type=int)
    t.add_argument("--train-fraction", type=float)
    t.add_argument("--momentum", type=float)
    t.add_argument("--weight-decay", type=float)
    t.add_argument("--shuffle", action="store_const", const=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a checkpoint on the test segment of a trace")
    common(e)
    e.add_argument("--model")
    e.add_argument("--trace")
    e.add_argument("--cache")
    e.add_argument("--window", type=int)
    e.add_argument("--bin", type=int)
    e.add_argument("--train-fraction", type=float)
    e.set_defaults(func=cmd_evaluate)

    v = sub.add_parser("verify", help="run the oracle and property suite")
    common(v)
    v.add_argument("--inject-fault", choices=sorted(verify_mod.FAULTS), help=argparse.SUPPRESS)
    v.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (UsageError, TraceFormatError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
