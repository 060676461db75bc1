"""Coverage metrics and the repeated-split experiment harness.

Per repetition the harness generates (or reloads) data, splits it, fits the
classifier on the training part, scores the calibration part and builds a
region for every validation point, method and alpha. One
:class:`EvalReport` is produced per ``(method, alpha, rep)``; aggregation
is a separate, re-runnable reduction over those reports.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .classifier import FitConfig, fit
from .datagen import (
    DataError,
    Dataset,
    SplitSpec,
    gen_gaussian_mixture,
    gen_sparse_model,
    read_csv,
    remainder_split_spec,
    repetition_seed,
    split,
)
from .pvalues import calibration_scores, pvalue_matrix
from .regions import region_masks

log = logging.getLogger(__name__)

# method name -> (p-value mode, region kind)
METHODS = {
    "marginal_opi": ("marginal", "interval"),
    "conditional_opi": ("conditional", "interval"),
    "marginal_ops": ("marginal", "set"),
    "conditional_ops": ("conditional", "set"),
}
SETTINGS = ("gaussian_mixture", "sparse", "csv")


@dataclass(frozen=True)
class EvalReport:
    method: str
    alpha: float
    marginal_coverage: float
    avg_size: float
    per_class_coverage: tuple[float | None, ...]
    ccv: float
    empty_region_rate: float
    n_eval: int
    rep: int = 0
    cal_class_counts: tuple[int, ...] = ()

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["per_class_coverage"] = list(self.per_class_coverage)
        rec["cal_class_counts"] = list(self.cal_class_counts)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> EvalReport:
        rec = dict(rec)
        rec["per_class_coverage"] = tuple(rec["per_class_coverage"])
        rec["cal_class_counts"] = tuple(rec.get("cal_class_counts", ()))
        return cls(**rec)


def ccv(per_class_coverage, alpha: float) -> float:
    """Largest per-class shortfall below ``1 - alpha``; classes given as None are skipped."""
    gaps = [max((1.0 - alpha) - p, 0.0) for p in per_class_coverage if p is not None]
    return max(gaps, default=0.0)


def evaluate_masks(
    masks,
    truths,
    alpha: float,
    method: str = "",
    n_classes: int | None = None,
    rep: int = 0,
    cal_class_counts=(),
) -> EvalReport:
    """Metrics for a boolean ``(m, K)`` region-membership matrix."""
    masks = np.asarray(masks, dtype=bool)
    truths = np.asarray(truths, dtype=np.int64)
    if masks.ndim != 2 or truths.shape != (masks.shape[0],):
        raise ValueError(f"{truths.size} truths for {masks.shape[0]} regions")
    if masks.shape[0] == 0:
        raise ValueError("nothing to evaluate")
    K = masks.shape[1] if n_classes is None else n_classes
    if truths.min() < 1 or truths.max() > K:
        raise ValueError(f"truth labels must lie in 1..{K}")
    covered = masks[np.arange(truths.size), truths - 1]
    per_class: list[float | None] = []
    for y in range(1, K + 1):
        sel = truths == y
        per_class.append(float(covered[sel].mean()) if sel.any() else None)
    missing = [y for y, p in enumerate(per_class, start=1) if p is None]
    if missing:
        log.info("classes %s absent from evaluation truths; excluded from CCV", missing)
    sizes = masks.sum(axis=1)
    return EvalReport(
        method=method,
        alpha=float(alpha),
        marginal_coverage=float(covered.mean()),
        avg_size=float(sizes.mean()),
        per_class_coverage=tuple(per_class),
        ccv=ccv(per_class, alpha),
        empty_region_rate=float(np.mean(sizes == 0)),
        n_eval=int(truths.size),
        rep=rep,
        cal_class_counts=tuple(int(c) for c in cal_class_counts),
    )


def evaluate(regions, truths, alpha: float, method: str = "", n_classes: int | None = None) -> EvalReport:
    """Metrics for a list of :class:`PredictionRegion` against true labels."""
    regions = list(regions)
    truths = np.asarray(truths, dtype=np.int64)
    if len(regions) != truths.size:
        raise ValueError(f"{len(regions)} regions but {truths.size} truths")
    K = n_classes
    if K is None:
        top = max((max(r.labels) for r in regions if r.labels), default=0)
        K = int(max(top, truths.max(initial=0)))
    masks = np.zeros((len(regions), K), dtype=bool)
    for i, r in enumerate(regions):
        if r.labels and r.labels[-1] > K:
            raise ValueError(f"region label {r.labels[-1]} exceeds n_classes={K}")
        masks[i, np.asarray(r.labels, dtype=np.int64) - 1] = True
    return evaluate_masks(masks, truths, alpha, method, K)


@dataclass(frozen=True)
class ExperimentConfig:
    setting: str = "gaussian_mixture"
    dim: int = 5
    csv_path: str | None = None
    methods: tuple[str, ...] = tuple(METHODS)
    alphas: tuple[float, ...] = (0.1,)
    repetitions: int = 1
    n_samples: int = 2000
    n_train: int = 500
    n_cal: int = 525
    n_valid: int = 975
    cal_frac: float = 0.35
    seed: int = 0
    fit: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ValueError(f"setting must be one of {SETTINGS}, got {self.setting!r}")
        if self.setting == "csv" and not self.csv_path:
            raise ValueError("csv setting requires csv_path")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not self.alphas or any(not 0.0 < a < 1.0 for a in self.alphas):
            raise ValueError(f"alphas must lie in (0, 1), got {self.alphas}")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown or not self.methods:
            raise ValueError(f"unknown methods {unknown}; expected a subset of {list(METHODS)}")
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))

    def metadata(self) -> dict:
        meta = asdict(self)
        meta["split_rule"] = (
            "train fixed; calibration = floor(cal_frac * remaining); validation = rest"
            if self.setting == "csv"
            else "fixed sizes (n_train, n_cal, n_valid)"
        )
        meta["seed_rule"] = "repetition r uses numpy SeedSequence(seed, spawn_key=(r,)) spawned into (data, split)"
        return meta


@dataclass
class RepetitionData:
    """Everything the region construction needs for one repetition."""

    rep: int
    cal_scores: object
    valid_scores: np.ndarray
    valid_labels: np.ndarray
    split_sizes: tuple[int, int, int]


def _load(cfg: ExperimentConfig, data_seed) -> tuple[Dataset, SplitSpec]:
    if cfg.setting == "gaussian_mixture":
        data = gen_gaussian_mixture(cfg.n_samples, data_seed)
    elif cfg.setting == "sparse":
        data = gen_sparse_model(cfg.n_samples, cfg.dim, data_seed)
    else:
        data = read_csv(cfg.csv_path)
        return data, remainder_split_spec(data.n, cfg.n_train, cfg.cal_frac)
    return data, SplitSpec(cfg.n_train, cfg.n_cal, cfg.n_valid)


def prepare_repetition(cfg: ExperimentConfig, rep: int, data: Dataset | None = None) -> RepetitionData:
    """Generate, split, fit and score for repetition ``rep``."""
    data_seed, split_seed = repetition_seed(cfg.seed, rep).spawn(2)
    if data is None:
        data, spec = _load(cfg, data_seed)
    elif cfg.setting == "csv":
        spec = remainder_split_spec(data.n, cfg.n_train, cfg.cal_frac)
    else:
        spec = SplitSpec(cfg.n_train, cfg.n_cal, cfg.n_valid)
    spec = SplitSpec(spec.n_train, spec.n_cal, spec.n_valid, split_seed)
    train, cal, valid = split(data, spec)
    model = fit(train, cfg.fit)
    return RepetitionData(
        rep=rep,
        cal_scores=calibration_scores(model, cal.features, cal.labels),
        valid_scores=model.posterior(valid.features),
        valid_labels=valid.labels,
        split_sizes=(train.n, cal.n, valid.n),
    )


def evaluate_repetition(cfg: ExperimentConfig, prepared: RepetitionData) -> list[EvalReport]:
    cal = prepared.cal_scores
    pvals = {}
    reports = []
    for method in cfg.methods:
        mode, kind = METHODS[method]
        if mode not in pvals:
            pvals[mode] = pvalue_matrix(cal, prepared.valid_scores, mode)
        for alpha in cfg.alphas:
            masks = region_masks(pvals[mode], alpha, kind)
            reports.append(
                evaluate_masks(
                    masks,
                    prepared.valid_labels,
                    alpha,
                    method,
                    cal.n_classes,
                    rep=prepared.rep,
                    cal_class_counts=cal.class_counts,
                )
            )
    return reports


def run_repetition(cfg: ExperimentConfig, rep: int, data: Dataset | None = None) -> list[EvalReport]:
    try:
        return evaluate_repetition(cfg, prepare_repetition(cfg, rep, data))
    except (DataError, ValueError) as exc:
        raise RuntimeError(f"repetition {rep}: {exc}") from exc


def _run_rep_star(args):
    return run_repetition(*args)


@dataclass(frozen=True)
class AggregateRow:
    method: str
    alpha: float
    metric: str
    mean: float
    se: float
    reps: int


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    reports: list[EvalReport]
    aggregate: list[AggregateRow]

    def select(self, method: str, alpha: float) -> list[EvalReport]:
        return [r for r in self.reports if r.method == method and r.alpha == alpha]

    def summary(self, method: str, alpha: float, metric: str) -> AggregateRow:
        for row in self.aggregate:
            if row.method == method and row.alpha == alpha and row.metric == metric:
                return row
        raise KeyError((method, alpha, metric))


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    """Run every repetition and aggregate; output order does not depend on ``workers``."""
    data = read_csv(cfg.csv_path) if cfg.setting == "csv" else None
    jobs = [(cfg, rep, data) for rep in range(cfg.repetitions)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_rep = list(pool.map(_run_rep_star, jobs))
    else:
        per_rep = [_run_rep_star(job) for job in jobs]
    reports = [r for batch in per_rep for r in batch]
    return ExperimentResult(cfg, reports, aggregate(reports))


def report_metrics(report: EvalReport) -> dict[str, float | None]:
    """Flat metric name -> value view, the row layout of the tidy CSV."""
    metrics: dict[str, float | None] = {
        "marginal_coverage": report.marginal_coverage,
        "avg_size": report.avg_size,
        "ccv": report.ccv,
        "empty_region_rate": report.empty_region_rate,
    }
    for y, p in enumerate(report.per_class_coverage, start=1):
        metrics[f"coverage_class_{y}"] = p
    return metrics


def mean_se(values) -> tuple[float, float]:
    """Mean and standard error of the mean (0 for a single value)."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def aggregate(reports) -> list[AggregateRow]:
    """Across-repetition mean and standard error of every metric per (method, alpha)."""
    groups: dict[tuple[str, float], list[EvalReport]] = {}
    for r in reports:
        groups.setdefault((r.method, r.alpha), []).append(r)
    rows = []
    for (method, alpha), group in groups.items():
        per_metric: dict[str, list[float]] = {}
        for r in group:
            for name, value in report_metrics(r).items():
                if value is not None:
                    per_metric.setdefault(name, []).append(value)
        for name, values in per_metric.items():
            m, se = mean_se(values)
            rows.append(AggregateRow(method, alpha, name, m, se, len(values)))
    return rows


def write_jsonl(reports, path) -> None:
    with open(path, "w") as fh:
        for r in reports:
            fh.write(json.dumps(r.to_record(), sort_keys=True) + "\n")


def read_jsonl(path) -> list[EvalReport]:
    with open(path) as fh:
        return [EvalReport.from_record(json.loads(line)) for line in fh if line.strip()]


def write_tidy_csv(reports, path) -> None:
    """Long format: one ``method, alpha, rep, metric, value`` row per metric."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "alpha", "rep", "metric", "value"])
        for r in reports:
            for name, value in report_metrics(r).items():
                w.writerow([r.method, repr(r.alpha), r.rep, name, "" if value is None else repr(value)])


def write_aggregate_csv(rows, dest) -> None:
    """Write aggregate rows to a path or an open text stream."""
    if hasattr(dest, "write"):
        _write_aggregate(rows, dest)
        return
    with open(dest, "w", newline="") as fh:
        _write_aggregate(rows, fh)


def _write_aggregate(rows, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["method", "alpha", "metric", "mean", "se", "reps"])
    for row in rows:
        w.writerow([row.method, repr(row.alpha), row.metric, repr(row.mean), repr(row.se), row.reps])


def write_results(result: ExperimentResult, out_dir, extra_meta: dict | None = None) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "reports": out / "reports.jsonl",
        "tidy": out / "results.csv",
        "aggregate": out / "aggregate.csv",
        "metadata": out / "metadata.json",
    }
    write_jsonl(result.reports, paths["reports"])
    write_tidy_csv(result.reports, paths["tidy"])
    write_aggregate_csv(result.aggregate, paths["aggregate"])
    meta = result.config.metadata()
    if extra_meta:
        meta.update(extra_meta)
    with open(paths["metadata"], "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return paths
