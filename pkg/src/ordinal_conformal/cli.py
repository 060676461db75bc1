"""Command-line entry point.

Subcommands::

    simulate    repeated-split experiment on a synthetic setting
    real-data   same protocol on a user CSV (x1..xd, y) with a remainder split
    fit         fit the classifier on a CSV and save it as JSON
    predict     build prediction regions for a CSV of test inputs
    evaluate    score saved regions against labels, or re-aggregate reports

Exit codes: 0 success, 1 runtime failure, 2 usage error.

``--config FILE`` reads ``key = value`` lines using the long flag names
(``alpha = 0.05, 0.1`` for repeatable flags); explicit flags win.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .classifier import FitConfig, FittedClassifier, fit
from .datagen import DataError, read_csv, remainder_split_spec
from .evaluation import (
    METHODS,
    ExperimentConfig,
    aggregate,
    evaluate,
    read_jsonl,
    run_experiment,
    write_aggregate_csv,
    write_results,
)
from .pvalues import calibration_scores, pvalue_matrix
from .regions import PredictionRegion, region_masks, regions_from_masks

log = logging.getLogger("ordinal_conformal")

SETTING_ALIASES = {
    "gaussian-mixture": "gaussian_mixture",
    "gaussian_mixture": "gaussian_mixture",
    "sparse": "sparse",
}
DEFAULT_ALPHAS = (0.05, 0.1, 0.2)
# config keys that accept comma-separated lists
LIST_KEYS = {"alpha", "method"}


def _open_unit(name: str):
    def convert(text: str) -> float:
        try:
            value = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be a number, got {text!r}")
        if not 0.0 < value < 1.0:
            raise argparse.ArgumentTypeError(f"{name} must lie in (0, 1), got {value}")
        return value

    convert.__name__ = name
    return convert


alpha_type = _open_unit("alpha")
fraction_type = _open_unit("cal-frac")


def positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def method_type(text: str) -> str:
    name = text.replace("-", "_")
    if name not in METHODS:
        raise argparse.ArgumentTypeError(f"unknown method {text!r}; choose from {', '.join(METHODS)}")
    return name


def setting_type(text: str) -> str:
    if text not in SETTING_ALIASES:
        raise argparse.ArgumentTypeError(f"unknown setting {text!r}; choose gaussian-mixture or sparse")
    return SETTING_ALIASES[text]


def read_config_file(path) -> dict[str, list[str] | str]:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    values: dict[str, list[str] | str] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            key = key.lstrip("-").replace("_", "-")
            if key in LIST_KEYS:
                values[key] = [v.strip() for v in value.split(",") if v.strip()]
            else:
                values[key] = value
    return values


def _add_fit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--max-iters", type=positive_int, default=500)
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.add_argument("--ridge", type=float, default=1e-6)


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--reps", type=positive_int, default=1, help="number of repetitions")
    p.add_argument("--alpha", type=alpha_type, action="append", help="miscoverage level (repeatable)")
    p.add_argument("--method", type=method_type, action="append", help="method (repeatable; default all four)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=positive_int, default=1)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    _add_fit_flags(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ordinal-conformal",
        description="Conformal prediction intervals and sets for ordinal labels.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", type=Path, help="key = value file of flag defaults")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthetic repeated-split experiment")
    p.add_argument("--setting", type=setting_type, default="gaussian_mixture")
    p.add_argument("--dim", type=positive_int, default=5, help="feature dimension (sparse setting)")
    p.add_argument("--n", type=positive_int, default=2000, help="samples per repetition")
    p.add_argument("--train-size", type=int, default=500)
    p.add_argument("--cal-size", type=int, default=525)
    p.add_argument("--valid-size", type=int, default=975)
    _add_experiment_flags(p)

    p = sub.add_parser("real-data", help="repeated-split experiment on a CSV file")
    p.add_argument("--in", dest="input", type=Path, required=True, help="CSV with header x1..xd,y")
    p.add_argument("--train-size", type=int, default=500)
    p.add_argument("--cal-frac", type=fraction_type, default=0.35)
    _add_experiment_flags(p)

    p = sub.add_parser("fit", help="fit the classifier and save it as JSON")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="model JSON path")
    _add_fit_flags(p)

    p = sub.add_parser("predict", help="prediction regions for test inputs")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--cal", type=Path, required=True, help="calibration CSV")
    p.add_argument("--in", dest="input", type=Path, required=True, help="test CSV; a y column is ignored")
    p.add_argument("--alpha", type=alpha_type, action="append")
    p.add_argument("--method", type=method_type, action="append")
    p.add_argument("--out", type=Path, required=True, help="regions JSONL path")

    p = sub.add_parser("evaluate", help="metrics for saved regions, or re-aggregate reports")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--regions", type=Path, help="regions JSONL from predict")
    src.add_argument("--reports", type=Path, help="reports.jsonl from simulate/real-data")
    p.add_argument("--in", dest="input", type=Path, help="CSV holding the true labels (with --regions)")
    p.add_argument("--out", type=Path, help="write metrics here instead of stdout")
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    if known.config is None:
        return
    try:
        values = read_config_file(known.config)
    except (OSError, ValueError) as exc:
        parser.error(f"cannot read config: {exc}")
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for sp in subparsers.choices.values():
        defaults = {}
        for action in sp._actions:
            key = next((o[2:] for o in action.option_strings if o.startswith("--")), None)
            if key not in values:
                continue
            raw = values[key]
            try:
                if isinstance(raw, list):
                    defaults[action.dest] = [action.type(v) for v in raw] if action.type else raw
                else:
                    defaults[action.dest] = action.type(raw) if action.type else raw
            except argparse.ArgumentTypeError as exc:
                parser.error(f"config {key}: {exc}")
            action.required = False
        sp.set_defaults(**defaults)


def _experiment_config(args, **setting) -> ExperimentConfig:
    return ExperimentConfig(
        methods=tuple(dict.fromkeys(args.method or METHODS)),
        alphas=tuple(dict.fromkeys(args.alpha or DEFAULT_ALPHAS)),
        repetitions=args.reps,
        seed=args.seed,
        fit=FitConfig(args.max_iters, args.tolerance, args.ridge),
        **setting,
    )


def _print_table(result, stream=None) -> None:
    stream = stream or sys.stdout
    rows = {(r.method, r.alpha, r.metric): r for r in result.aggregate}
    cfg = result.config
    header = f"{'method':<16} {'alpha':>6} {'coverage':>17} {'avg size':>17} {'CCV':>17} {'empty':>7}"
    print(header, file=stream)
    print("-" * len(header), file=stream)
    for method in cfg.methods:
        for alpha in cfg.alphas:
            cells = []
            for metric in ("marginal_coverage", "avg_size", "ccv"):
                row = rows[(method, alpha, metric)]
                cells.append(f"{row.mean:8.4f} ± {row.se:6.4f}")
            empty = rows[(method, alpha, "empty_region_rate")].mean
            print(f"{method:<16} {alpha:>6g} {cells[0]:>17} {cells[1]:>17} {cells[2]:>17} {empty:>7.4f}", file=stream)
    print(f"({cfg.repetitions} repetitions; mean ± standard error)", file=stream)


def cmd_simulate(args) -> int:
    cfg = _experiment_config(
        args,
        setting=args.setting,
        dim=args.dim,
        n_samples=args.n,
        n_train=args.train_size,
        n_cal=args.cal_size,
        n_valid=args.valid_size,
    )
    result = run_experiment(cfg, workers=args.workers)
    paths = write_results(result, args.out)
    _print_table(result)
    log.info("wrote %s", ", ".join(str(p) for p in paths.values()))
    return 0


def cmd_real_data(args) -> int:
    data = read_csv(args.input)
    spec = remainder_split_spec(data.n, args.train_size, args.cal_frac)
    cfg = _experiment_config(
        args,
        setting="csv",
        csv_path=str(args.input),
        n_train=args.train_size,
        cal_frac=args.cal_frac,
    )
    result = run_experiment(cfg, workers=args.workers)
    write_results(
        result,
        args.out,
        {"split_sizes": [spec.n_train, spec.n_cal, spec.n_valid], "n_classes": data.n_classes, "n_rows": data.n},
    )
    _print_table(result)
    return 0


def cmd_fit(args) -> int:
    data = read_csv(args.input)
    model = fit(data, FitConfig(args.max_iters, args.tolerance, args.ridge))
    model.to_json(args.out)
    info = model.info
    print(f"fit {model.n_classes} classes on {data.n} rows x {data.d} features: "
          f"{info.iterations} iterations, loss {info.final_loss:.6f}, converged={info.converged}")
    return 0


def _read_features(path, d: int) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        keep = [i for i, h in enumerate(header) if h != "y"]
        rows = [[float(row[i]) for i in keep] for row in reader if row]
    X = np.array(rows, dtype=float).reshape(len(rows), len(keep))
    if X.shape[1] != d:
        raise DataError(f"{path} has {X.shape[1]} feature columns, model expects {d}")
    return X


def cmd_predict(args) -> int:
    model = FittedClassifier.from_json(args.model)
    cal_data = read_csv(args.cal, n_classes=model.n_classes)
    cal = calibration_scores(model, cal_data.features, cal_data.labels)
    X = _read_features(args.input, model.d)
    scores = model.posterior(X)
    alphas = args.alpha or [0.1]
    methods = args.method or list(METHODS)
    pvals = {mode: pvalue_matrix(cal, scores, mode) for mode in ("marginal", "conditional")}
    with open(args.out, "w") as fh:
        for method in dict.fromkeys(methods):
            mode, kind = METHODS[method]
            for alpha in dict.fromkeys(alphas):
                masks = region_masks(pvals[mode], alpha, kind)
                for i, region in enumerate(regions_from_masks(masks, kind, mode, alpha)):
                    rec = {"index": i, "method": method, **region.to_record()}
                    fh.write(json.dumps(rec) + "\n")
    print(f"wrote regions for {X.shape[0]} inputs to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    if args.reports is not None:
        rows = aggregate(read_jsonl(args.reports))
        write_aggregate_csv(rows, args.out or sys.stdout)
        return 0
    if args.input is None:
        raise DataError("--regions needs --in with the true labels")
    truths = read_csv(args.input).labels
    groups: dict[tuple[str, float], list[tuple[int, PredictionRegion]]] = {}
    with open(args.regions) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            method = rec.get("method", f"{rec['mode']}_{'opi' if rec['kind'] == 'interval' else 'ops'}")
            groups.setdefault((method, rec["alpha"]), []).append((rec.get("index"), PredictionRegion.from_record(rec)))
    out = []
    for (method, alpha), items in groups.items():
        regions = [r for _, r in items]
        idx = [i if i is not None else k for k, (i, _) in enumerate(items)]
        report = evaluate(regions, truths[idx], alpha, method, n_classes=int(truths.max()))
        out.append(json.dumps(report.to_record(), sort_keys=True))
    text = "\n".join(out) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "real-data": cmd_real_data,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (DataError, ValueError, RuntimeError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
