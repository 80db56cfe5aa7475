"""``fives`` command line: chained subcommands over on-disk artifacts.

Exit codes: 0 success, 1 verification failure, 2 usage or config error,
3 numeric abort during training.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from . import diffcore as dc
from .checks import ToyConfig, fives_gradcheck
from .data import (
    EncodedTable,
    EmptyTableError,
    LabelError,
    ParseError,
    Preprocessor,
    SchemaError,
    SplitError,
    load_csv,
    load_schema,
    split_dataset,
    split_sizes,
)
from .downstream import cmi_rank_pairs, random_cross_baseline
from .graph import CrossCapError, derive_cross_features, read_crosses_csv, write_crosses_csv
from .pipeline import evaluation_report, lr_with_crosses
from .search import ConfigError, SearchAbort, SearchConfig, SearchResult, architecture_from_logits, fit
from .theory import verify_bound

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
SPLITS = ("train", "val", "test")


class UsageError(Exception):
    """Bad flags, missing files or invalid configs (exit code 2)."""


def _atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_json(path, payload):
    _atomic_write(path, json.dumps(payload, indent=1, sort_keys=True) + "\n")


def write_manifest(path, command, args, started, inputs, outputs, seed=None, config=None):
    """Run record, written in one rename so readers never see a partial file."""
    _write_json(
        path,
        {
            "command": command,
            "argv": args,
            "config": None if config is None else str(config),
            "inputs": [str(p) for p in inputs],
            "outputs": [str(p) for p in outputs],
            "seed": seed,
            "tool_version": __version__,
            "started": started,
            "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        },
    )


def _manifest_path(out):
    out = Path(out)
    return out / "manifest.json" if out.suffix == "" else out.with_name(out.name + ".manifest.json")


def _parse_floats(text, what):
    try:
        values = [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--{what}: expected comma-separated numbers, got {text!r}") from None
    if not values:
        raise UsageError(f"--{what}: no values given")
    return values


def load_split(data_dir, split):
    path = Path(data_dir) / f"{split}.json"
    if not path.exists():
        raise UsageError(f"missing encoded split {path} (run `fives preprocess` first)")
    return EncodedTable.load(path)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_preprocess(args):
    schema, label = load_schema(args.schema)
    if not Path(args.csv).exists():
        raise UsageError(f"CSV file not found: {args.csv}")
    raw = load_csv(args.csv, schema, label)
    table = Preprocessor(schema, args.min_freq, args.multi_granularity).fit_transform(raw)
    fractions = tuple(_parse_floats(args.fractions, "fractions"))
    if args.test_tail:
        # canonical held-out rows at the end of the file; the head is split into train/val
        n_head = table.n_rows - args.test_tail
        if n_head <= 1 or args.test_tail < 1:
            raise SplitError(f"--test-tail {args.test_tail} leaves no rows for train/val")
        head = table.take(np.arange(n_head))
        test = table.take(np.arange(n_head, table.n_rows))
        f_train, f_val = fractions[0], fractions[1]
        n_val = int(np.floor(n_head * f_val / (f_train + f_val) + 1e-9))
        if n_val < 1:
            raise SplitError("validation split would be empty")
        perm = np.random.default_rng(args.seed).permutation(n_head)
        train, val = head.take(np.sort(perm[n_val:])), head.take(np.sort(perm[:n_val]))
    else:
        split_sizes(table.n_rows, fractions)
        train, val, test = split_dataset(table, fractions, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for name, part in zip(SPLITS, (train, val, test)):
        part.save(out / f"{name}.json")
        outputs.append(out / f"{name}.json")
    _write_json(
        out / "summary.json",
        {
            "n_rows": table.n_rows,
            "sizes": {s: p.n_rows for s, p in zip(SPLITS, (train, val, test))},
            "names": table.names,
            "cardinalities": list(table.cardinalities),
            "multi_granularity": args.multi_granularity,
            "min_freq": args.min_freq,
        },
    )
    print(json.dumps({s: p.n_rows for s, p in zip(SPLITS, (train, val, test))}))
    return EXIT_OK, [args.csv, args.schema], outputs, args.seed, None


def _search_config(args):
    if args.config:
        try:
            config = SearchConfig.load(args.config)
        except FileNotFoundError:
            raise UsageError(f"config file not found: {args.config}") from None
        except (json.JSONDecodeError, TypeError, KeyError) as exc:
            raise UsageError(f"bad config {args.config}: {exc}") from None
    else:
        config = SearchConfig()
    overrides = {k: v for k, v in (("seed", args.seed), ("epochs", args.epochs)) if v is not None}
    config = config.replace(**overrides) if overrides else config
    config.validate()
    return config


def cmd_search(args):
    config = _search_config(args)
    train, val = load_split(args.data, "train"), load_split(args.data, "val")

    def log(record):
        print(json.dumps(record), flush=True)

    result = fit(train, val, config, log=log)
    result.save(args.out, train.names)
    outs = [Path(args.out) / f for f in ("adjacency.json", "params.json", "model.json", "config.json", "metrics.ndjson")]
    return EXIT_OK, [args.data], outs, config.seed, args.config


def cmd_extract(args):
    search_dir = Path(args.search_dir)
    if not (search_dir / "params.json").exists():
        raise UsageError(f"{search_dir} does not hold a search result")
    result = SearchResult.load(search_dir)
    names = json.loads((search_dir / "adjacency.json").read_text()).get("feature_names")
    names = names or [f"f{i}" for i in range(result.shape.m)]
    thresholds = _parse_floats(args.thresholds, "thresholds") if args.thresholds else None
    if thresholds is not None:
        thresholds = thresholds[0] if len(thresholds) == 1 else [0.5] + thresholds
        if isinstance(thresholds, list) and len(thresholds) != result.config.K:
            raise UsageError(f"--thresholds needs 1 or K-1={result.config.K - 1} values")
    soft, binary = architecture_from_logits(result.params["H"], result.config, thresholds)
    crosses = derive_cross_features(binary, dedupe=not args.no_dedupe, soft=soft, cap=args.cap)
    write_crosses_csv(args.out, crosses, names)
    print(json.dumps({"n_crosses": len(crosses), "out": str(args.out)}))
    return EXIT_OK, [search_dir], [args.out], None, None


def cmd_lr(args):
    train = load_split(args.data, "train")
    evaluation = load_split(args.data, args.eval_split)
    if args.crosses:
        if not Path(args.crosses).exists():
            raise UsageError(f"crosses file not found: {args.crosses}")
        try:
            crosses = read_crosses_csv(args.crosses, train.names)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        pipeline = "FIVES+LR"
    elif args.baseline == "none":
        crosses, pipeline = [], "LR"
    elif args.baseline == "random":
        crosses = random_cross_baseline(train.n_features, args.top_n, args.max_order, args.seed)
        pipeline = "Random+LR"
    elif args.baseline == "cmi":
        crosses, pipeline = cmi_rank_pairs(train, args.top_n), "CMI+LR"
    else:
        raise UsageError("pass --crosses or --baseline")
    score, _, _ = lr_with_crosses(train, evaluation, crosses, args.l1, args.max_iter, args.tol, args.max_cardinality)
    report = evaluation_report(pipeline, score, crosses, evaluation)
    report["eval_split"] = args.eval_split
    _write_json(args.out, report)
    print(json.dumps({"pipeline": pipeline, "auc": score, "n_crosses": len(crosses)}))
    inputs = [args.data] + ([args.crosses] if args.crosses else [])
    return EXIT_OK, inputs, [args.out], args.seed, None


def cmd_prop1(args):
    report = verify_bound(args.n_samples, args.seed, args.mode, args.c_margin)
    _write_json(args.out, report)
    print(json.dumps({k: report[k] for k in ("n_samples", "n_violations", "n_skipped_degenerate", "max_ratio")}))
    failed = report["n_violations"] > 0
    if args.strict_identities:
        failed = failed or report["n_additivity_failures"] > 0 or report["n_incremental_bound_failures"] > 0
    return (EXIT_VERIFY if failed else EXIT_OK), [], [args.out], args.seed, None


def cmd_gradcheck(args):
    config = ToyConfig()
    if args.config:
        try:
            config = ToyConfig.from_dict(json.loads(Path(args.config).read_text()))
        except FileNotFoundError:
            raise UsageError(f"config file not found: {args.config}") from None
        except (ValueError, TypeError) as exc:
            raise UsageError(f"bad gradcheck config: {exc}") from None
    if args.inject_bug:
        with dc.injected_gradient_bug():
            report = fives_gradcheck(config, args.seed)
    else:
        report = fives_gradcheck(config, args.seed)
    payload = report.to_dict()
    payload.update({"tolerance": args.tolerance, "injected_bug": bool(args.inject_bug), "passed": report.max_rel_error < args.tolerance})
    text = json.dumps(payload, indent=1, sort_keys=True)
    if args.out:
        _atomic_write(args.out, text + "\n")
    print(text)
    code = EXIT_OK if payload["passed"] else EXIT_VERIFY
    return code, [args.config] if args.config else [], [args.out] if args.out else [], args.seed, args.config


# ---------------------------------------------------------------------------
# parser and entry point
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="fives", description="Feature-graph edge search for explicit cross features.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="discretize, merge rare values, encode and split a CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--multi-granularity", action="store_true")
    p.add_argument("--min-freq", type=int, default=5)
    p.add_argument("--fractions", default="0.8,0.1,0.1", help="train,val,test")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-tail", type=int, default=0, help="use the last N rows as the test split")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("search", help="run the bilevel edge search")
    p.add_argument("--data", required=True, help="directory written by preprocess")
    p.add_argument("--config", help="SearchConfig JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("extract", help="write the crosses implied by a search result")
    p.add_argument("--search-dir", required=True)
    p.add_argument("--thresholds", help="one value, or K-1 comma-separated per-layer values")
    p.add_argument("--out", required=True, help="cross list CSV")
    p.add_argument("--no-dedupe", action="store_true")
    p.add_argument("--cap", type=int, default=100_000)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("lr", help="L1 logistic regression with crosses or a baseline")
    p.add_argument("--data", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--crosses", help="cross list CSV from extract")
    group.add_argument("--baseline", choices=("none", "random", "cmi"))
    p.add_argument("--top-n", type=int, default=10, help="crosses kept by the cmi/random baselines")
    p.add_argument("--max-order", type=int, default=2)
    p.add_argument("--eval-split", choices=("val", "test"), default="test")
    p.add_argument("--l1", type=float, default=1.0)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-cardinality", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="evaluation report JSON")
    p.set_defaults(func=cmd_lr)

    p = sub.add_parser("prop1", help="fuzz the mutual-information bound")
    p.add_argument("--n-samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("dirichlet-general", "conditional-product", "both"), default="both")
    p.add_argument("--c-margin", type=float, default=1e-9)
    p.add_argument("--strict-identities", action="store_true", help="also fail on proof-step identity failures")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prop1)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full loss on toy instances")
    p.add_argument("--config", help="JSON with any of m, d, K, n_rows, tau, h, n_instances")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--inject-bug", action="store_true", help="flip gradient signs to exercise the detector")
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def _threads():
    raw = os.environ.get("FIVES_NUM_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"FIVES_NUM_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("FIVES_NUM_THREADS must be >= 1")
    return n


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    try:
        with threadpool_limits(_threads()):
            code, inputs, outputs, seed, config = args.func(args)
    except (UsageError, SchemaError, ConfigError, SplitError, LabelError, ParseError, EmptyTableError, CrossCapError) as exc:
        print(f"fives {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SearchAbort, dc.NumericError, FloatingPointError) as exc:
        print(f"fives {args.command}: numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    out = getattr(args, "out", None)
    if out:
        write_manifest(_manifest_path(out), args.command, argv, started, inputs, outputs, seed, config)
    return code


if __name__ == "__main__":
    sys.exit(main())
