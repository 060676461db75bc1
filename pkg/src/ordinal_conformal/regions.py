"""Ordinal prediction intervals and prediction sets.

The interval keeps every label accepted by both sequential procedures,
i.e. the contiguous range ``{y_min, ..., y_max}`` spanned by labels with
``p > alpha``. The set keeps exactly the labels with ``p > alpha`` and may
have gaps. Both are returned empty when no label survives.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .multiplicity import acceptance_masks, procedure1_accept, procedure2_accept, procedure3_accept

KINDS = ("interval", "set")


@dataclass(frozen=True)
class PredictionRegion:
    kind: str
    labels: tuple[int, ...]
    mode: str
    alpha: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        labels = tuple(sorted(int(y) for y in self.labels))
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate labels in region")
        if labels and labels[0] < 1:
            raise ValueError("labels are 1-based")
        if self.kind == "interval" and labels and labels[-1] - labels[0] + 1 != len(labels):
            raise ValueError(f"interval region must be contiguous, got {labels}")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "alpha", float(self.alpha))

    def __contains__(self, y) -> bool:
        return y in self.labels

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def is_empty(self) -> bool:
        return not self.labels

    def to_record(self) -> dict:
        return {
            "labels": list(self.labels),
            "kind": self.kind,
            "mode": self.mode,
            "alpha": self.alpha,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record())

    @classmethod
    def from_record(cls, record: dict) -> PredictionRegion:
        return cls(
            kind=record["kind"],
            labels=tuple(record["labels"]),
            mode=record["mode"],
            alpha=record["alpha"],
        )

    @classmethod
    def from_json(cls, text: str) -> PredictionRegion:
        return cls.from_record(json.loads(text))


def _mode_of(p) -> str:
    return getattr(p, "mode", "marginal")


def ordinal_prediction_interval(p, alpha: float) -> PredictionRegion:
    """Intersect the forward and backward sequential acceptance sets."""
    labels = procedure1_accept(p, alpha).accepted & procedure2_accept(p, alpha).accepted
    return PredictionRegion("interval", tuple(labels), _mode_of(p), alpha)


def ordinal_prediction_set(p, alpha: float) -> PredictionRegion:
    """Labels whose hypothesis survives the single-step test."""
    labels = procedure3_accept(p, alpha).accepted
    return PredictionRegion("set", tuple(labels), _mode_of(p), alpha)


def region_masks(pvalues, alpha: float, kind: str) -> np.ndarray:
    """Batch version: ``(m, K)`` boolean membership matrix for ``m`` inputs."""
    if kind == "set":
        return acceptance_masks(pvalues, alpha, "single_step")
    if kind == "interval":
        return acceptance_masks(pvalues, alpha, "forward_sequential") & acceptance_masks(
            pvalues, alpha, "backward_sequential"
        )
    raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")


def regions_from_masks(masks, kind: str, mode: str, alpha: float) -> list[PredictionRegion]:
    masks = np.asarray(masks, dtype=bool)
    return [
        PredictionRegion(kind, tuple(int(y) for y in np.flatnonzero(row) + 1), mode, alpha)
        for row in masks
    ]
