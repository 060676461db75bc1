"""Datasets, the two synthetic ordinal settings, splitting and CSV I/O.

Random streams: every function that draws randomness takes ``seed``,
which may be an int, a ``numpy.random.SeedSequence`` or a ready
``numpy.random.Generator``. Experiments derive one independent stream per
repetition with :func:`repetition_seed`, so repetition ``r`` of a run
seeded with ``s`` is reproducible on its own.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# setting 1: class means, mixture weights and correlation
GMM_MEANS = np.array([[-1.0, 0.0], [-1.0, -1.0], [0.0, -1.0], [1.0, -1.0]])
GMM_WEIGHTS = (0.2, 0.8)
GMM_CORRELATION = 0.1
# setting 2: leading coefficients, remaining ones are zero
SPARSE_BETA_HEAD = (1.0, 1.0, 1.0, -math.sqrt(2.0), 1.0)
SPARSE_CORRELATION = 0.5
N_CLASSES_SIM = 4


class DataError(ValueError):
    """Raised for malformed datasets, CSV files or split requests."""


def rng_from(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def repetition_seed(seed: int, rep: int) -> np.random.SeedSequence:
    """Seed for repetition ``rep``: ``SeedSequence(seed, spawn_key=(rep,))``."""
    return np.random.SeedSequence(int(seed), spawn_key=(int(rep),))


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels)
        if X.ndim != 2:
            raise DataError(f"features must be a 2-D array, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise DataError(f"{X.shape[0]} rows but {y.size} labels")
        if not np.all(np.isfinite(X)):
            raise DataError("features must be finite")
        if y.size and not np.all(y == np.round(y)):
            raise DataError("labels must be integers")
        y = y.astype(np.int64)
        if y.size and (y.min() < 1 or y.max() > self.n_classes):
            raise DataError(f"labels must lie in 1..{self.n_classes}")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.n

    def subset(self, index) -> Dataset:
        index = np.asarray(index, dtype=np.int64)
        return Dataset(self.features[index], self.labels[index], self.n_classes)


@dataclass(frozen=True)
class SplitSpec:
    n_train: int
    n_cal: int
    n_valid: int
    seed: int | np.random.SeedSequence | None = 0

    @property
    def total(self) -> int:
        return self.n_train + self.n_cal + self.n_valid


def equicorrelation(d: int, rho: float) -> np.ndarray:
    return (1.0 - rho) * np.eye(d) + rho * np.ones((d, d))


def gen_gaussian_mixture(n: int, seed=None) -> Dataset:
    """Setting 1: four classes in 2-D, each a two-component Gaussian mixture.

    Class ``k`` puts weight 0.2 on ``mean[k]`` and 0.8 on the next mean
    (class 4 wraps around to ``mean[1]``). Labels are uniform over 1..4.
    """
    if n < 1:
        raise DataError("n must be >= 1")
    rng = rng_from(seed)
    chol = np.linalg.cholesky(equicorrelation(2, GMM_CORRELATION))
    labels = rng.integers(1, N_CLASSES_SIM + 1, size=n)
    use_next = rng.random(n) >= GMM_WEIGHTS[0]
    comp = (labels - 1 + use_next) % N_CLASSES_SIM
    X = GMM_MEANS[comp] + rng.standard_normal((n, 2)) @ chol.T
    return Dataset(X, labels, N_CLASSES_SIM)


def sparse_beta(d: int) -> np.ndarray:
    if d < len(SPARSE_BETA_HEAD):
        raise DataError(f"sparse setting needs d >= {len(SPARSE_BETA_HEAD)}, got {d}")
    beta = np.zeros(d)
    beta[: len(SPARSE_BETA_HEAD)] = SPARSE_BETA_HEAD
    return beta


def sparse_labels(features, beta) -> np.ndarray:
    """Label ``k`` when ``(k-1)/4 <= sigmoid(x'beta) < k/4``."""
    eta = np.asarray(features, dtype=float) @ np.asarray(beta, dtype=float)
    f = 1.0 / (1.0 + np.exp(-eta))
    # f rounds to exactly 1.0 for eta > ~37; that belongs in the top class
    return np.minimum(np.floor(N_CLASSES_SIM * f).astype(np.int64) + 1, N_CLASSES_SIM)


def gen_sparse_model(n: int, d: int, seed=None) -> Dataset:
    """Setting 2: equicorrelated standard normals, labels from a sigmoid index.

    Features use a shared factor, ``X_j = sqrt(.5) Z_0 + sqrt(.5) Z_j``,
    which gives unit variances and pairwise covariance 0.5 in any dimension.
    """
    if n < 1:
        raise DataError("n must be >= 1")
    beta = sparse_beta(d)
    rng = rng_from(seed)
    common = rng.standard_normal((n, 1))
    own = rng.standard_normal((n, d))
    X = math.sqrt(SPARSE_CORRELATION) * common + math.sqrt(1.0 - SPARSE_CORRELATION) * own
    return Dataset(X, sparse_labels(X, beta), N_CLASSES_SIM)


def split(data: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Random disjoint (train, calibration, validation) partition of the rows."""
    sizes = (spec.n_train, spec.n_cal, spec.n_valid)
    if any(s < 0 for s in sizes):
        raise DataError(f"split sizes must be non-negative, got {sizes}")
    if spec.total > data.n:
        raise DataError(f"split sizes {sizes} exceed the {data.n} available rows")
    perm = rng_from(spec.seed).permutation(data.n)
    a, b = spec.n_train, spec.n_train + spec.n_cal
    return (
        data.subset(np.sort(perm[:a])),
        data.subset(np.sort(perm[a:b])),
        data.subset(np.sort(perm[b : spec.total])),
    )


def remainder_split_spec(n: int, train_size: int = 500, cal_frac: float = 0.35, seed=0) -> SplitSpec:
    """Fixed training size, then a fraction of what is left for calibration.

    The calibration count is floored; validation gets the rest.
    """
    if not 0.0 < cal_frac < 1.0:
        raise DataError(f"cal_frac must lie in (0, 1), got {cal_frac}")
    if train_size < 1 or train_size >= n:
        raise DataError(f"train size {train_size} leaves nothing out of {n} rows")
    rest = n - train_size
    n_cal = math.floor(cal_frac * rest)
    if n_cal < 1 or rest - n_cal < 1:
        raise DataError(f"{rest} remaining rows cannot be split with cal_frac={cal_frac}")
    return SplitSpec(train_size, n_cal, rest - n_cal, seed)


def write_csv(data: Dataset, path) -> None:
    """Write ``x1..xd, y`` with a header row; labels stay 1-based."""
    header = [f"x{j + 1}" for j in range(data.d)] + ["y"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row, label in zip(data.features, data.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def read_csv(path, label_column: str = "y", n_classes: int | None = None) -> Dataset:
    """Load a numeric design matrix plus a 1-based integer label column.

    Every column other than ``label_column`` is used as a feature. The
    number of classes defaults to the largest label present.
    """
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path} is empty")
        header = [h.strip() for h in header]
        if label_column not in header:
            raise DataError(f"{path} has no label column {label_column!r} (columns: {header})")
        y_col = header.index(label_column)
        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                values = [float(c) for c in row]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-numeric value ({exc})") from exc
            label = values.pop(y_col)
            if label != int(label):
                raise DataError(f"{path}:{lineno}: label {label} is not an integer")
            feats.append(values)
            labels.append(int(label))
    if not labels:
        raise DataError(f"{path} has no data rows")
    y = np.array(labels, dtype=np.int64)
    if y.min() < 1:
        raise DataError(
            f"labels must be 1-based class indices (found {y.min()}); "
            "relabel classes as 1..K"
        )
    K = int(y.max()) if n_classes is None else int(n_classes)
    if K < 2:
        raise DataError("at least 2 classes are required")
    X = np.array(feats, dtype=float).reshape(len(labels), len(header) - 1)
    if X.shape[1] == 0:
        raise DataError(f"{path} has no feature columns")
    return Dataset(X, y, K)
