"""Command line entry point: ``srsan <subcommand> ...``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import checkpoint as ckpt_io
from .checkpoint import Checkpoint, CheckpointError
from .config import ConfigError, RunConfig, resolve
from .data import (DataError, Session, Vocabulary, preprocess, read_events, read_instances,
                   read_vocab, write_instances, write_vocab)
from .evaluation import MetricsReport, evaluate, popularity_baseline
from .gradcheck import format_report, run_gradcheck
from .model import forward
from .trainer import NonFiniteLossError, fit

log = logging.getLogger("srsan")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

TRAIN_FILE, TEST_FILE, VOCAB_FILE = "train.txt", "test.txt", "vocab.txt"
CHECKPOINT_FILE = "model.ckpt"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# flag -> RunConfig field
FLAG_FIELDS = {
    "seed": "seed", "k": "k", "epochs": "epochs", "d": "d", "heads": "heads", "layers": "layers",
    "ffn_mult": "ffn_mult", "lr": "lr", "l2": "l2", "batch": "batch", "loss": "loss",
    "predict": "predict", "fraction": "fraction", "preset": "preset",
    "holdout_days": "holdout_days", "scale_per_head": "scale_per_head",
}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="key = value config file ([model]/[train]/[data])")
    p.add_argument("--preset", choices=["yoochoose", "diginetica"])
    p.add_argument("--seed", type=int)
    p.add_argument("--data", metavar="PATH")
    p.add_argument("--out", metavar="PATH")
    p.add_argument("--k", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def _add_model_train(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--ffn-mult", dest="ffn_mult", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--l2", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--loss", choices=["literal", "ce"])
    p.add_argument("--predict", choices=["last", "se"])
    p.add_argument("--scale-per-head", dest="scale_per_head", action="store_const", const=True,
                   help="divide attention logits by sqrt(d/h) instead of sqrt(d)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="srsan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("preprocess", help="raw click log -> instance files + vocabulary")
    _add_common(p)
    p.add_argument("--fraction", type=float, help="keep this most recent share of training sessions")
    p.add_argument("--holdout-days", dest="holdout_days", type=float)

    p = sub.add_parser("train", help="train on a preprocessed directory")
    _add_common(p)
    _add_model_train(p)
    p.add_argument("--no-plot", action="store_true")

    p = sub.add_parser("eval", help="HR@k / MRR@k of a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--baseline", action="store_true", help="also report the popularity baseline")

    p = sub.add_parser("recommend", help="top-k next items for one session")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("items", nargs="+", help="raw item ids, oldest first")

    p = sub.add_parser("gradcheck", help="finite-difference check of every gradient")
    _add_common(p)
    p.add_argument("--corrupt", metavar="TENSOR", help=argparse.SUPPRESS)

    p = sub.add_parser("sweep", help="grid over d/heads/layers/ffn_mult")
    _add_common(p)
    _add_model_train(p)
    p.add_argument("--grid", action="append", required=True, metavar="DIM=V1,V2,...",
                   help="e.g. layers=1,2,3 (repeatable)")

    p = sub.add_parser("synth", help="write a synthetic dataset in preprocessed layout")
    _add_common(p)
    p.add_argument("--task", choices=["successor", "first-item"], default="successor")
    p.add_argument("--sessions", type=int, default=2000)
    return parser


def _run_config(args: argparse.Namespace) -> RunConfig:
    overrides = {f: getattr(args, a) for a, f in FLAG_FIELDS.items() if hasattr(args, a)}
    return resolve(config_path=args.config, overrides=overrides)


def _provenance(cfg: RunConfig, args: argparse.Namespace) -> dict:
    # output location is left out so identical runs write identical bytes
    return {"command": args.command, "data": args.data, "config": cfg.to_dict()}


def _header(meta: dict) -> str:
    return "srsan " + json.dumps(meta, sort_keys=True)


def _require(value, flag: str):
    if value is None:
        raise UsageError(f"{flag} is required")
    return value


# --- preprocessed directory -------------------------------------------------------

@dataclass
class Dataset:
    train: list[Session]
    test: list[Session]
    vocab: Vocabulary


def load_dataset(path: str) -> Dataset:
    try:
        with open(os.path.join(path, TRAIN_FILE), encoding="utf-8") as fh:
            train = read_instances(fh)
        with open(os.path.join(path, TEST_FILE), encoding="utf-8") as fh:
            test = read_instances(fh)
        with open(os.path.join(path, VOCAB_FILE), encoding="utf-8") as fh:
            vocab = read_vocab(fh)
    except OSError as exc:
        raise DataError(f"cannot read dataset in {path}: {exc}") from exc
    top = max(max(max(s.items), s.label) for s in train + test)
    if top > len(vocab):
        raise DataError(f"instance index {top} exceeds vocabulary size {len(vocab)}")
    return Dataset(train, test, vocab)


def save_dataset(path: str, ds: Dataset, meta: dict) -> None:
    os.makedirs(path, exist_ok=True)
    header = _header(meta)
    with open(os.path.join(path, TRAIN_FILE), "w", encoding="utf-8") as fh:
        write_instances(fh, ds.train, header)
    with open(os.path.join(path, TEST_FILE), "w", encoding="utf-8") as fh:
        write_instances(fh, ds.test, header)
    with open(os.path.join(path, VOCAB_FILE), "w", encoding="utf-8") as fh:
        write_vocab(fh, ds.vocab, header)


def _load_instances(path: str) -> list[Session]:
    """A preprocessed directory (its test split) or a single instance file."""
    if os.path.isdir(path):
        path = os.path.join(path, TEST_FILE)
    try:
        with open(path, encoding="utf-8") as fh:
            return read_instances(fh)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


# --- subcommands ------------------------------------------------------------------

STATS_COLUMNS = [("clicks", "All the clicks"), ("train_sessions", "Train sessions"),
                 ("test_sessions", "Test sessions"), ("items", "All the items"),
                 ("avg_length", "Avg. length")]


def format_stats(name: str, stats: dict) -> str:
    head = "Dataset\t" + "\t".join(label for _, label in STATS_COLUMNS)
    row = name + "\t" + "\t".join(
        f"{stats[key]:.2f}" if key == "avg_length" else f"{stats[key]:,}" for key, _ in STATS_COLUMNS)
    return head + "\n" + row


def cmd_preprocess(args, cfg: RunConfig) -> int:
    raw = _require(args.data, "--data")
    out = _require(args.out, "--out")
    events, malformed = read_events(raw, cfg.event_format(), cfg.max_malformed)
    result = preprocess(events, cfg.holdout_ms(), cfg.fraction, cfg.min_item_count, cfg.min_session_len)
    stats = {**result.stats, "malformed_lines": malformed}
    meta = _provenance(cfg, args)
    save_dataset(out, Dataset(result.train, result.test, result.vocab), meta)
    with open(os.path.join(out, "stats.json"), "w", encoding="utf-8") as fh:
        json.dump({"stats": stats, "provenance": meta}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    name = os.path.basename(raw) + (f" {cfg.fraction:g}" if cfg.fraction < 1 else "")
    print(format_stats(name, stats))
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    ds = load_dataset(_require(args.data, "--data"))
    out = _require(args.out, "--out")
    os.makedirs(out, exist_ok=True)
    model_config = cfg.model_config(len(ds.vocab))
    meta = _provenance(cfg, args)
    log_path = os.path.join(out, "train_log.jsonl")
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"provenance": meta}, sort_keys=True) + "\n")

        def progress(record: dict) -> None:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            fh.flush()
            print(json.dumps(record, sort_keys=True))

        result = fit(model_config, ds.train, cfg.train_config(), ds.test, progress)
    run_meta = {**meta, "best_epoch": result.best_epoch}
    ckpt_io.save(os.path.join(out, CHECKPOINT_FILE), Checkpoint(model_config, ds.vocab, result.params, run_meta))
    if result.best_report is not None:
        print(f"best epoch {result.best_epoch}: {result.best_report}")
    if result.log and not args.no_plot:
        from .plotting import plot_training_log

        plot_training_log(result.log, os.path.join(out, "training.png"), cfg.k)
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    ck = ckpt_io.load(args.checkpoint)
    instances = _load_instances(_require(args.data, "--data"))
    report = evaluate(ck.params, ck.config, instances, cfg.k)
    payload = {"model": json.loads(report.to_json()), "provenance": _provenance(cfg, args),
               "checkpoint_run": ck.run_config}
    print(report)
    if args.baseline:
        train_path = os.path.join(args.data, TRAIN_FILE) if os.path.isdir(args.data) else None
        if train_path is None:
            raise UsageError("--baseline needs --data to be a preprocessed directory")
        base = popularity_baseline(_load_instances(train_path), instances, cfg.k, ck.config.vocab_size)
        payload["popularity"] = json.loads(base.to_json())
        print(f"popularity baseline: {base}")
    print(report.to_json())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return EXIT_OK


def recommend(ck: Checkpoint, items: list[str], k: int) -> list[tuple[str, float]]:
    """Top-k (raw id, score) pairs; unknown items are dropped with a warning."""
    known = [i for i in items if i in ck.vocab.index_of]
    dropped = [i for i in items if i not in ck.vocab.index_of]
    if dropped:
        log.warning("dropping %d unknown item(s): %s", len(dropped), " ".join(dropped))
    if not known:
        raise DataError("no known item left in the session")
    indices = np.array([ck.vocab.encode(known)])
    scores, _ = forward(ck.params, ck.config, indices, np.array([len(known)]))
    row = scores[0]
    # stable sort on -score keeps ascending index among ties
    order = np.argsort(-row, kind="stable")[:k]
    return [(ck.vocab.ids[j + 1], float(row[j])) for j in order]


def cmd_recommend(args, cfg: RunConfig) -> int:
    ck = ckpt_io.load(args.checkpoint)
    k = args.k if args.k is not None else 20
    for raw, score in recommend(ck, args.items, k):
        print(f"{raw}\t{score:.6f}")
    return EXIT_OK


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    seed = args.seed if args.seed is not None else 0
    results = run_gradcheck(corrupt=args.corrupt, seed=seed)
    print(format_report(results))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump([r.__dict__ | {"passed": r.passed} for r in results], fh, indent=2)
            fh.write("\n")
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


SWEEP_DIMS = ("d", "heads", "layers", "ffn_mult")


def parse_grid(specs: list[str]) -> dict[str, list[int]]:
    grid = {}
    for entry in specs:
        for part in filter(None, (s.strip() for s in entry.split(";"))):
            name, _, values = part.partition("=")
            name = name.strip().replace("-", "_")
            if name not in SWEEP_DIMS:
                raise UsageError(f"cannot sweep {name!r}; choose from {', '.join(SWEEP_DIMS)}")
            try:
                grid[name] = [int(v) for v in values.split(",") if v.strip()]
            except ValueError as exc:
                raise UsageError(f"bad grid values in {part!r}") from exc
            if not grid[name]:
                raise UsageError(f"no values for {name}")
    return grid


def run_sweep(cfg: RunConfig, ds: Dataset, grid: dict[str, list[int]], notice=print) -> list[dict]:
    dims = list(grid)
    rows = []
    for values in itertools.product(*(grid[d] for d in dims)):
        point = dict(zip(dims, values))
        settings = {**{d: getattr(cfg, d) for d in SWEEP_DIMS}, **point}
        if settings["d"] % settings["heads"]:
            notice(f"skipping {point}: d={settings['d']} not divisible by heads={settings['heads']}")
            continue
        point_cfg = RunConfig(**{**cfg.to_dict(), **point})
        mc = point_cfg.model_config(len(ds.vocab))
        result = fit(mc, ds.train, point_cfg.train_config(), ds.test)
        report = evaluate(result.params, mc, ds.test, cfg.k)
        rows.append({**settings, f"hr@{cfg.k}": report.hr, f"mrr@{cfg.k}": report.mrr,
                     "best_epoch": result.best_epoch})
    rows.sort(key=lambda r: (-r[f"hr@{cfg.k}"], -r[f"mrr@{cfg.k}"]))
    return rows


def cmd_sweep(args, cfg: RunConfig) -> int:
    grid = parse_grid(args.grid)
    ds = load_dataset(_require(args.data, "--data"))
    out = _require(args.out, "--out")
    os.makedirs(out, exist_ok=True)
    rows = run_sweep(cfg, ds, grid, notice=lambda msg: print(msg, file=sys.stderr))
    k = cfg.k
    cols = list(SWEEP_DIMS) + [f"hr@{k}", f"mrr@{k}", "best_epoch"]
    lines = ["\t".join(cols)]
    for r in rows:
        lines.append("\t".join(f"{r[c]:.4f}" if isinstance(r[c], float) else str(r[c]) for c in cols))
    table = "\n".join(lines)
    print(table)
    with open(os.path.join(out, "sweep.tsv"), "w", encoding="utf-8") as fh:
        fh.write(f"# {_header(_provenance(cfg, args))}\n{table}\n")
    with open(os.path.join(out, "sweep.json"), "w", encoding="utf-8") as fh:
        json.dump({"provenance": _provenance(cfg, args), "grid": grid, "rows": rows}, fh, indent=2)
        fh.write("\n")
    if rows:
        from .plotting import plot_sweep

        plot_sweep(rows, list(grid), os.path.join(out, "sweep.png"), k)
    return EXIT_OK


def cmd_synth(args, cfg: RunConfig) -> int:
    from .synthetic import first_item_task, successor_task

    out = _require(args.out, "--out")
    seed = cfg.seed
    if args.task == "successor":
        train, test = successor_task(args.sessions, seed=seed)
        n_items = 50
    else:
        train, test = first_item_task(args.sessions, seed=seed)
        n_items = 100
    vocab = Vocabulary.from_ids([f"item{i}" for i in range(1, n_items + 1)])
    meta = {"command": "synth", "task": args.task, "sessions": args.sessions, "seed": seed}
    save_dataset(out, Dataset(train, test, vocab), meta)
    print(f"wrote {len(train)} train / {len(test)} test instances over {n_items} items to {out}")
    return EXIT_OK


COMMANDS = {
    "preprocess": cmd_preprocess, "train": cmd_train, "eval": cmd_eval, "recommend": cmd_recommend,
    "gradcheck": cmd_gradcheck, "sweep": cmd_sweep, "synth": cmd_synth,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _run_config(args)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, UsageError) as exc:
        print(f"srsan: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError) as exc:
        print(f"srsan: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NonFiniteLossError as exc:
        print(f"srsan: numeric failure: {exc}", file=sys.stderr)
        if exc.batch is not None:
            print(f"offending batch indices:\n{exc.batch.indices}\nlabels: {exc.batch.labels}",
                  file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
