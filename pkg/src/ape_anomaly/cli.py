"""Command line entry point: ``ape-anomaly {train,eval,score,export,synth}``.

Exit status is 0 on success, 2 on usage errors and 1 on runtime errors.
Each command also writes a JSON run manifest (see ``--manifest``).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .core import EventSchema
from .evaluation import REPLACEMENT_MODES, curve_points, evaluate
from .exceptions import ApeError
from .ingest import FORMATS, dataset_stats, filter_new_events, load_dataset, write_jsonl
from .model import load_model
from .synth import SynthConfig, generate_indices, to_rows
from .trainer import LR_DECAYS, NOISE_MODES, PN_MODES, TrainConfig, train

logger = logging.getLogger("ape_anomaly")


def load_schema(path) -> EventSchema:
    return EventSchema.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _dump_json(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text + "\n", encoding="utf-8")
    else:
        sys.stdout.write(text + "\n")


# -- commands ---------------------------------------------------------------------


def cmd_train(args) -> dict:
    schema = load_schema(args.schema)
    data = load_dataset(args.train, schema, fmt=args.format, strict=args.strict)
    cfg = TrainConfig(
        dim=args.dim,
        negatives_per_type=args.negatives,
        batch_size=args.batch_size,
        epochs=args.epochs,
        learning_rate=args.lr,
        lr_decay=args.lr_decay,
        noise_mode=args.noise_mode.replace("-", "_"),
        pn_mode=args.pn_mode,
        weight_mode=args.mode.replace("-", "_"),
        noise_smoothing=args.noise_smoothing,
        seed=args.seed,
        validation_fraction=args.validation_fraction,
        early_stopping=args.early_stopping,
        patience=args.patience,
        workers=args.threads if args.lockfree else 1,
    )
    model, report = train(data, cfg)
    model.save(args.out)
    out = report.to_dict()
    out["data"] = dataset_stats(data)
    out["parse"] = data.stats.to_dict() if data.stats else None
    _dump_json(out, args.report)
    return {"config": cfg.to_dict(), "inputs": [args.train, args.schema], "outputs": [args.out, args.report]}


def cmd_eval(args) -> dict:
    model = load_model(args.model)
    m = model.schema.m
    if not 1 <= args.c <= m:
        raise _UsageError(f"--c must lie in [1, {m}], got {args.c}")
    train_ds = load_dataset(args.train, model.schema, fmt=args.format, vocab=model.vocab, allow_unk=True, strict=args.strict)
    test_all = load_dataset(args.test, model.schema, fmt=args.format, vocab=model.vocab, allow_unk=True, strict=args.strict)
    test = filter_new_events(train_ds, test_all, dedup=args.dedup_test)
    rng = np.random.default_rng(args.seed)
    report, labeled = evaluate(
        model, test, args.c, rng, train=train_ds, mode=args.replacement,
        top=args.top, sample_fraction=args.test_sample_fraction,
    )
    out = report.to_dict()
    out["test"] = dataset_stats(test_all, reference=train_ds)
    _dump_json(out, args.out)
    if args.curves:
        _write_csv(args.curves, ["curve", "threshold", "x", "y"], curve_points(labeled.labels, labeled.scores))
    if args.scores:
        names = model.schema.types
        recs = [
            {**dict(zip(names, row)), "anomaly_score": float(s), "label": int(lab)}
            for row, s, lab in zip(labeled.rows, labeled.scores, labeled.labels)
        ]
        _write_csv(args.scores, [*names, "anomaly_score", "label"], recs)
    return {
        "inputs": [args.model, args.train, args.test],
        "outputs": [args.out, args.curves, args.scores],
        "config": {"c": args.c, "replacement": args.replacement, "dedup_test": args.dedup_test},
    }


def cmd_score(args) -> dict:
    model = load_model(args.model)
    data = load_dataset(args.events, model.schema, fmt=args.format, vocab=model.vocab, allow_unk=True, strict=args.strict)
    scores = model.anomaly_score(data.events)
    order = np.arange(len(scores))
    if args.sort or args.top:
        order = np.argsort(-scores, kind="stable")
    if args.top:
        order = order[: args.top]
    names = model.schema.types
    unk = data.events == np.asarray(model.vocab.arities)
    rows = data.rows()
    fh = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for i in order:
            rec = {
                "event": dict(zip(names, rows[i])),
                "anomaly_score": float(scores[i]),
                "unknown": [names[t] for t in np.flatnonzero(unk[i])],
                "pairs": [
                    {"types": [names[a], names[b]], "contribution": v}
                    for (a, b), v in model.pair_attribution(data.events[i])[:3]
                ],
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    finally:
        if args.out:
            fh.close()
    return {"inputs": [args.model, args.events], "outputs": [args.out]}


def cmd_export(args) -> dict:
    model = load_model(args.model)
    names = model.schema.types
    if args.embeddings:
        with open(args.embeddings, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["type", "entity", *[f"v{k}" for k in range(model.dim)]])
            for t, block in enumerate(model.embeddings):
                for idx, entity in enumerate(model.vocab.entities[t]):
                    w.writerow([names[t], entity, *map(repr, block[idx].tolist())])
    if args.weights:
        W = model.weight_matrix()
        with open(args.weights, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["type", *names[1:]])
            for i in range(model.m - 1):
                w.writerow([names[i], *[repr(float(W[i, j])) if j > i else "" for j in range(1, model.m)]])
    return {"inputs": [args.model], "outputs": [args.embeddings, args.weights]}


def cmd_synth(args) -> dict:
    if args.config:
        cfg = SynthConfig.from_json(Path(args.config).read_text(encoding="utf-8"))
    else:
        try:
            cfg = SynthConfig(
                m=args.m, arities=args.arity, groups=args.groups, rho=args.rho,
                irrelevant_pairs=tuple(tuple(p) for p in args.irrelevant_pair or ()),
                n_events=args.n, seed=args.seed,
            )
        except ValueError as exc:
            raise _UsageError(str(exc)) from exc
    ids = generate_indices(cfg, cfg.n_events + args.n_test)
    rows = to_rows(cfg, ids)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        write_jsonl(rows[: cfg.n_events], cfg.schema, fh)
    if args.n_test:
        if not args.test_out:
            raise _UsageError("--n-test requires --test-out")
        with open(args.test_out, "w", encoding="utf-8", newline="\n") as fh:
            write_jsonl(rows[cfg.n_events:], cfg.schema, fh)
    if args.schema_out:
        _dump_json(cfg.schema.to_dict(), args.schema_out)
    return {"config": cfg.to_dict(), "outputs": [args.out, args.test_out, args.schema_out]}


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "score": cmd_score, "export": cmd_export, "synth": cmd_synth}


class _UsageError(Exception):
    pass


# -- parser -----------------------------------------------------------------------


def _probability(text):
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"{value} is outside [0, 1]")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed")
    common.add_argument("--threads", type=int, default=1, help="cap on worker threads")
    common.add_argument("--format", choices=FORMATS, default=None, help="event file format (default: from extension)")
    common.add_argument("--strict", action="store_true", help="fail on malformed input lines")
    common.add_argument("--manifest", default=None, help="run manifest path (default: <output>.manifest.json)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ape-anomaly", description="Detect anomalous categorical events.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="fit a model on an event log")
    p.add_argument("--train", required=True)
    p.add_argument("--schema", required=True, help="JSON file listing the ordered type names")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--report", default=None, help="training report path (default: stdout)")
    p.add_argument("--dim", type=int, default=10)
    p.add_argument("--negatives", type=int, default=3, help="negative samples per entity type")
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    p.add_argument("--lr-decay", choices=LR_DECAYS, default="linear")
    p.add_argument("--noise-mode", choices=[m.replace("_", "-") for m in NOISE_MODES], default="context-dependent")
    p.add_argument("--pn-mode", choices=PN_MODES, default="approx")
    p.add_argument("--mode", choices=["weighted", "no-weight"], default="weighted")
    p.add_argument("--noise-smoothing", type=float, default=1.0)
    p.add_argument("--validation-fraction", type=float, default=0.1)
    p.add_argument("--early-stopping", action="store_true")
    p.add_argument("--patience", type=int, default=2)
    p.add_argument("--lockfree", action="store_true", help="unsynchronized parallel updates (non-deterministic)")

    p = sub.add_parser("eval", parents=[common], help="inject anomalies into new test events and rank them")
    p.add_argument("--model", required=True)
    p.add_argument("--train", required=True, help="reference log; its events are removed from the test set")
    p.add_argument("--test", required=True)
    p.add_argument("--c", type=int, default=1, help="entities replaced per anomaly")
    p.add_argument("--replacement", choices=REPLACEMENT_MODES, default="uniform")
    p.add_argument("--dedup-test", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--test-sample-fraction", type=float, default=None)
    p.add_argument("--top", type=int, default=20)
    p.add_argument("--out", default=None, help="report path (default: stdout)")
    p.add_argument("--curves", default=None, help="CSV of ROC and PR threshold sweeps")
    p.add_argument("--scores", default=None, help="CSV of (event, score, label)")

    p = sub.add_parser("score", parents=[common], help="score events, one JSON line each")
    p.add_argument("--model", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--sort", action="store_true", help="most anomalous first")
    p.add_argument("--top", type=int, default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("export", parents=[common], help="write embeddings and pair weights as CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--embeddings", default=None)
    p.add_argument("--weights", default=None)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic event log")
    p.add_argument("--config", default=None, help="SynthConfig as JSON (overrides the flags below)")
    p.add_argument("--m", type=int, default=5)
    p.add_argument("--arity", type=int, default=50)
    p.add_argument("--groups", type=int, default=5)
    p.add_argument("--rho", type=_probability, default=0.9)
    p.add_argument("--irrelevant-pair", type=int, nargs=2, action="append", metavar=("I", "J"))
    p.add_argument("--n", type=int, default=20000)
    p.add_argument("--n-test", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--test-out", default=None)
    p.add_argument("--schema-out", default=None)
    return parser


def _primary_output(args):
    for name in ("out", "report", "embeddings", "weights"):
        value = getattr(args, name, None)
        if value:
            return value
    return None


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    started = time.perf_counter()
    try:
        details = COMMANDS[args.command](args)
    except _UsageError as exc:
        parser.error(str(exc))
    except (ApeError, ValueError, OSError, KeyError) as exc:
        print(f"ape-anomaly {args.command}: error: {exc}", file=sys.stderr)
        return 1
    manifest = {
        "command": args.command,
        "argv": argv,
        "arguments": vars(args),
        "seed": args.seed,
        "version": __version__,
        "wall_clock_seconds": time.perf_counter() - started,
        **details,
    }
    path = args.manifest
    if path is None and _primary_output(args):
        path = f"{_primary_output(args)}.manifest.json"
    if path:
        _dump_json(manifest, path)
    else:
        print(json.dumps(manifest, sort_keys=True), file=sys.stderr)
    return 0


def _write_csv(path, fields, records):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(records)


if __name__ == "__main__":
    sys.exit(main())
