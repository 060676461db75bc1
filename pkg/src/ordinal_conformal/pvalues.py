"""Split-conformal p-values for classification.

Scores follow the conformity convention: a larger score means the
(feature, label) pair looks more typical. A candidate label is therefore
penalised when its test score is *smaller* than most calibration scores,
and the p-value counts calibration scores that are ``<=`` the test score.

Two flavours are provided:

* marginal p-values pool all ``n`` calibration scores,
* conditional (class-specific, "Mondrian") p-values only use calibration
  points whose label equals the candidate label.

Calibration scores are sorted once, so each query is a binary search.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Literal

import numpy as np

if TYPE_CHECKING:
    from .classifier import FittedClassifier

Mode = Literal["marginal", "conditional"]
MODES: tuple[str, ...] = ("marginal", "conditional")


def _check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    return mode


def _finite(values, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} must be finite")
    return arr


@dataclass(frozen=True)
class CalibrationScores:
    """Calibration conformity scores ``s(X_i, Y_i)`` with their labels.

    Labels are 1-based class indices in ``1..n_classes``. The per-class
    sorted arrays are built on construction and never change.
    """

    scores: np.ndarray
    labels: np.ndarray
    n_classes: int
    _sorted: np.ndarray = field(init=False, repr=False, compare=False)
    _by_class: tuple[np.ndarray, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        scores = _finite(self.scores, "calibration scores").ravel()
        labels = np.asarray(self.labels).ravel()
        if scores.shape != labels.shape:
            raise ValueError(
                f"{scores.size} scores but {labels.size} labels"
            )
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise ValueError("labels must be integers")
        labels = labels.astype(np.int64)
        if labels.size and (labels.min() < 1 or labels.max() > self.n_classes):
            raise ValueError(f"labels must lie in 1..{self.n_classes}")
        scores.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "_sorted", np.sort(scores))
        by_class = tuple(
            np.sort(scores[labels == y]) for y in range(1, self.n_classes + 1)
        )
        object.__setattr__(self, "_by_class", by_class)

    @property
    def n(self) -> int:
        return int(self.scores.size)

    def class_indices(self, y: int) -> np.ndarray:
        """Positions ``I_y`` of calibration points labelled ``y``."""
        self._check_class(y)
        return np.flatnonzero(self.labels == y)

    def class_count(self, y: int) -> int:
        self._check_class(y)
        return int(self._by_class[y - 1].size)

    @property
    def class_counts(self) -> np.ndarray:
        return np.array([a.size for a in self._by_class], dtype=np.int64)

    def _check_class(self, y: int) -> None:
        if not 1 <= int(y) <= self.n_classes:
            raise ValueError(f"class {y} outside 1..{self.n_classes}")


@dataclass(frozen=True)
class PValueVector:
    """Per-class p-values for a single test input, classes ``1..K`` in order."""

    mode: str
    values: tuple[float, ...]

    def __post_init__(self):
        _check_mode(self.mode)
        values = tuple(float(v) for v in self.values)
        if not values:
            raise ValueError("p-value vector must have at least one class")
        if any(not 0.0 < v <= 1.0 for v in values):
            raise ValueError("p-values must lie in (0, 1]")
        object.__setattr__(self, "values", values)

    @property
    def n_classes(self) -> int:
        return len(self.values)

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, y: int) -> float:
        """p-value of 1-based class ``y``."""
        if not 1 <= y <= len(self.values):
            raise IndexError(f"class {y} outside 1..{len(self.values)}")
        return self.values[y - 1]

    def as_array(self) -> np.ndarray:
        return np.array(self.values)


def _rank_pvalues(sorted_scores: np.ndarray, test_scores: np.ndarray) -> np.ndarray:
    # side="right" counts entries <= test, which is the tie convention we want
    counts = np.searchsorted(sorted_scores, test_scores, side="right")
    return (counts + 1.0) / (sorted_scores.size + 1.0)


def marginal_pvalue(cal: CalibrationScores, test_score: float) -> float:
    """``(1 + #{i : s_i <= test_score}) / (n + 1)`` over all calibration points."""
    if cal.n == 0:
        raise ValueError("no calibration data")
    t = _finite(test_score, "test score")
    return float(_rank_pvalues(cal._sorted, t))


def conditional_pvalue(cal: CalibrationScores, y: int, test_score: float) -> float:
    """Class-specific p-value using only calibration points labelled ``y``.

    Returns 1.0 when class ``y`` has no calibration points, so an unseen
    class is never excluded from a region.
    """
    cal._check_class(y)
    t = _finite(test_score, "test score")
    ref = cal._by_class[int(y) - 1]
    if ref.size == 0:
        return 1.0
    return float(_rank_pvalues(ref, t))


def pvalue_matrix(cal: CalibrationScores, test_scores, mode: str = "marginal") -> np.ndarray:
    """Vectorised p-values for many test inputs.

    ``test_scores`` has shape ``(m, K)``: entry ``[j, y-1]`` is the score of
    candidate label ``y`` for test input ``j``. Returns an ``(m, K)`` array.
    """
    _check_mode(mode)
    if cal.n == 0:
        raise ValueError("no calibration data")
    s = _finite(test_scores, "test scores")
    if s.ndim == 1:
        s = s[None, :]
    if s.ndim != 2 or s.shape[1] != cal.n_classes:
        raise ValueError(
            f"test scores must have shape (m, {cal.n_classes}), got {s.shape}"
        )
    if mode == "marginal":
        return _rank_pvalues(cal._sorted, s)
    out = np.ones_like(s)
    for k, ref in enumerate(cal._by_class):
        if ref.size:
            out[:, k] = _rank_pvalues(ref, s[:, k])
    return out


def calibration_scores(model: FittedClassifier, features, labels) -> CalibrationScores:
    """Score each calibration point at its own label, ``s(X_i, Y_i)``."""
    labels = np.asarray(labels, dtype=np.int64)
    probs = model.posterior(features)
    if probs.ndim == 1:
        probs = probs[None, :]
    if labels.shape != (probs.shape[0],):
        raise ValueError("one label per calibration row is required")
    if labels.size and (labels.min() < 1 or labels.max() > model.n_classes):
        raise ValueError(f"labels must lie in 1..{model.n_classes}")
    scores = probs[np.arange(labels.size), labels - 1]
    return CalibrationScores(scores, labels, model.n_classes)


def pvalue_vector(
    cal: CalibrationScores, classifier: FittedClassifier, x, mode: str = "marginal"
) -> PValueVector:
    """p-values of every candidate label for one test input ``x``."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("x must be a single feature vector")
    if classifier.n_classes != cal.n_classes:
        raise ValueError("classifier and calibration disagree on the number of classes")
    scores = classifier.posterior(x)
    return PValueVector(mode, tuple(pvalue_matrix(cal, scores, mode)[0]))
