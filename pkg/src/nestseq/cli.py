"""Command-line interface: train, tag, eval, bench, check and gen-synth.

Exit codes: 0 success, 1 bad input or validation failure, 2 runtime or
numeric failure. ``NESTSEQ_LOG`` sets the log level (default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence

from . import __version__
from .corpus import ConfigError, CorpusError, Document, SynthConfig, corpus_stats, corpus_types, \
    generate_synthetic, read_corpus, write_corpus
from .decode import ExhaustedError, nested_decode
from .evaluation import AlignmentError, score
from .lattice import ShapeError
from .model import DEFAULT_HASH_SIZE, InputError, ModelConfigError, ModelFormatError, ModelVersionError, \
    TrainConfig, TrainingError, lattices, load_model, predict, save_model, train
from .objective import EXCLUDE_GOLD_PARENT, EXCLUDE_MODEL_BEST, OBJECTIVE_FLAT, OBJECTIVE_NESTED
from .oracle import cross_check
from .tagging import TaggingError

log = logging.getLogger("nestseq")

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 1, 2

_INPUT_ERRORS = (CorpusError, ConfigError, ModelFormatError, ModelVersionError, ModelConfigError, InputError,
                 AlignmentError, TaggingError, ShapeError, OSError, ValueError)
_RUNTIME_ERRORS = (TrainingError, ExhaustedError, FloatingPointError, ArithmeticError, RuntimeError)

_UNLIMITED = {"inf", "none", "unlimited", "∞"}


class UsageError(ValueError):
    pass


def parse_depth(text: str) -> Optional[int]:
    """``"3"`` -> 3; ``"inf"``, ``"none"``, ``"unlimited"`` -> None."""
    if text.strip().lower() in _UNLIMITED:
        return None
    try:
        depth = int(text)
    except ValueError:
        raise UsageError(f"invalid depth {text!r}") from None
    if depth < 1:
        raise UsageError(f"depth must be at least 1, got {depth}")
    return depth


def parse_depth_list(text: str) -> List[Optional[int]]:
    depths = [parse_depth(part) for part in text.split(",") if part.strip()]
    if not depths:
        raise UsageError("empty depth list")
    return depths


def depth_label(depth: Optional[int]) -> str:
    return "∞ (no restriction)" if depth is None else str(depth)


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    corpus = read_corpus(args.train)
    dev = read_corpus(args.dev)
    config = TrainConfig(epochs=args.epochs, lr=args.lr, clip=args.clip, batch_size=args.batch, seed=args.seed,
                         patience=args.patience, hash_size=args.hash_size, exclude=args.exclude,
                         objective=args.objective)
    types = corpus_types(corpus + dev)
    log.info("training on %d sentences, types %s", len(corpus), types)
    started = time.perf_counter()
    params, history = train(corpus, dev, config, types)
    save_model(params, args.out)
    log_path = args.log or f"{args.out}.log.json"
    payload = {
        "config": {k: getattr(config, k) for k in config.__dataclass_fields__},
        "types": params.types,
        "train_sentences": len(corpus),
        "dev_sentences": len(dev),
        "seconds": round(time.perf_counter() - started, 3),
        **history,
    }
    with open(log_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {args.out} (best epoch {history['best_epoch']}, dev F1 {history['best_dev_f1']:.4f})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# tag

_worker_params = None


def _init_worker(model_path: str) -> None:
    global _worker_params
    _worker_params = load_model(model_path)


def _tag_one(job):
    tokens, max_depth = job
    return predict(_worker_params, tokens, max_depth)


def tag_documents(params, docs: Sequence[Document], max_depth: Optional[int] = None, workers: int = 1,
                  model_path: Optional[str] = None) -> List[Document]:
    if workers > 1 and model_path is not None and len(docs) > 1:
        jobs = [(d.tokens, max_depth) for d in docs]
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(model_path,)) as pool:
            preds = list(pool.map(_tag_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        preds = [predict(params, d.tokens, max_depth) for d in docs]
    return [Document(list(d.tokens), list(p), d.id) for d, p in zip(docs, preds)]


def cmd_tag(args) -> int:
    params = load_model(args.model)
    docs = read_corpus(args.input)
    tagged = tag_documents(params, docs, args.max_depth, args.workers, args.model)
    write_corpus(tagged, args.output, by_type=True)
    log.info("tagged %d documents", len(tagged))
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    gold = read_corpus(args.gold)
    pred = read_corpus(args.pred)
    report = score(gold, [d.mentions for d in pred])
    print(report.to_json() if args.json else report.format_table())
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench


def _time_pass(params, docs, max_depth, precomputed) -> float:
    started = time.perf_counter()
    if precomputed is None:
        for d in docs:
            predict(params, d.tokens, max_depth)
    else:
        for d, lats in zip(docs, precomputed):
            nested_decode(lats, len(d.tokens), max_depth)
    return time.perf_counter() - started


def benchmark(params, docs: Sequence[Document], depths: Sequence[Optional[int]], repeats: int = 3,
              decode_only: bool = False) -> List[dict]:
    """Median tokens/second per maximal depth after one warm-up pass.

    By default each pass covers featurization, emission scoring and
    decoding; ``decode_only`` precomputes the lattices first.
    """
    if repeats < 3:
        raise UsageError("at least 3 repetitions are required")
    n_tokens = sum(len(d.tokens) for d in docs)
    precomputed = [lattices(params, params.featurize(d.tokens)) for d in docs] if decode_only else None
    rows = []
    for depth in depths:
        _time_pass(params, docs, depth, precomputed)
        times = [_time_pass(params, docs, depth, precomputed) for _ in range(repeats)]
        median = statistics.median(times)
        rows.append({
            "max_depth": depth,
            "tokens": n_tokens,
            "seconds": median,
            "tokens_per_second": n_tokens / median if median > 0 else float("inf"),
        })
    return rows


def format_bench(rows: Sequence[dict]) -> str:
    labels = [depth_label(r["max_depth"]) for r in rows]
    width = max([len("Maximal depth")] + [len(s) for s in labels])
    lines = [f"{'Maximal depth':<{width}} | # tokens per second", f"{'-' * width}-+--------------------"]
    for label, r in zip(labels, rows):
        lines.append(f"{label:<{width}} | {r['tokens_per_second']:>19,.0f}")
    return "\n".join(lines)


def cmd_bench(args) -> int:
    params = load_model(args.model)
    docs = read_corpus(args.input)
    if not docs:
        raise InputError("benchmark input is empty")
    rows = benchmark(params, docs, args.max_depth, args.repeats, args.decode_only)
    print(json.dumps(rows) if args.json else format_bench(rows))
    return EXIT_OK


# ---------------------------------------------------------------------------
# check


def cmd_check(args) -> int:
    if args.cases < 1:
        raise UsageError("--cases must be positive")
    report = cross_check(args.cases, args.seed)
    for line in report.lines():
        print(line)
    print("OK" if report.ok else "FAILED")
    return EXIT_OK if report.ok else EXIT_RUNTIME


# ---------------------------------------------------------------------------
# gen-synth


def cmd_gen_synth(args) -> int:
    sizes = [int(x) for x in args.splits.split(",")]
    if len(sizes) != 3 or min(sizes) < 0:
        raise UsageError("--splits needs three non-negative sizes: train,dev,test")
    config = SynthConfig(n_sentences=sum(sizes), vocab=args.vocab, max_depth=args.max_depth,
                         nesting_rate=args.nesting_rate, mention_rate=args.mention_rate, seed=args.seed,
                         types=tuple(args.types.split(",")))
    docs = generate_synthetic(config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cut1, cut2 = sizes[0], sizes[0] + sizes[1]
    for name, part in (("train", docs[:cut1]), ("dev", docs[cut1:cut2]), ("test", docs[cut2:])):
        write_corpus(part, out / f"{name}.jsonl")
        log.info("wrote %d documents to %s", len(part), out / f"{name}.jsonl")
    stats = corpus_stats(docs, list(config.types))
    print(json.dumps(stats.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _depth_arg(text: str) -> Optional[int]:
    try:
        return parse_depth(text)
    except UsageError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _depth_list_arg(text: str) -> List[Optional[int]]:
    try:
        return parse_depth_list(text)
    except UsageError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nestseq", description="Nested mention tagging with per-type CRFs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a JSONL corpus")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--log", help="JSON training log (default: <out>.log.json)")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=TrainConfig.lr)
    p.add_argument("--clip", type=float, default=5.0)
    p.add_argument("--batch", type=_positive_int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patience", type=_positive_int, default=TrainConfig.patience)
    p.add_argument("--hash-size", type=_positive_int, default=DEFAULT_HASH_SIZE)
    p.add_argument("--objective", choices=(OBJECTIVE_NESTED, OBJECTIVE_FLAT), default=OBJECTIVE_NESTED)
    p.add_argument("--exclude", choices=(EXCLUDE_GOLD_PARENT, EXCLUDE_MODEL_BEST), default=EXCLUDE_GOLD_PARENT)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("tag", help="predict nested mentions")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--max-depth", type=_depth_arg, default=None, help="levels to decode (default: unlimited)")
    p.add_argument("--workers", type=_positive_int, default=1)
    p.set_defaults(func=cmd_tag)

    p = sub.add_parser("eval", help="score predictions against gold")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="decoding throughput per maximal depth")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--max-depth", type=_depth_list_arg, default=parse_depth_list("1,2,3,4,5,inf"))
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--decode-only", action="store_true", help="exclude featurization and emission scoring")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("check", help="cross-check the dynamic programs against brute force")
    p.add_argument("--cases", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("gen-synth", help="write a synthetic nested corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--splits", default="200,50,50", help="train,dev,test sizes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vocab", type=int, default=SynthConfig.vocab)
    p.add_argument("--max-depth", type=int, default=SynthConfig.max_depth)
    p.add_argument("--nesting-rate", type=float, default=SynthConfig.nesting_rate)
    p.add_argument("--mention-rate", type=float, default=SynthConfig.mention_rate)
    p.add_argument("--types", default=",".join(SynthConfig.types))
    p.set_defaults(func=cmd_gen_synth)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("NESTSEQ_LOG", "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    logging.basicConfig(level=level, stream=sys.stderr, format="%(asctime)s %(name)s %(levelname)s %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; usage problems are input errors here.
        return EXIT_OK if exc.code in (0, None) else EXIT_INPUT
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"nestseq {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except _INPUT_ERRORS as exc:
        print(f"nestseq {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except _RUNTIME_ERRORS as exc:
        print(f"nestseq {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
