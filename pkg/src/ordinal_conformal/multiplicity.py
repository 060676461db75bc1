"""FWER-controlling tests of the K hypotheses ``H_y: Y = y``.

Exactly one of the K nulls is true for any test input, so each of the
procedures below controls the familywise error rate at ``alpha`` whenever
the p-values are valid.

* ``forward_sequential`` tests ``H_1, H_2, ...`` in order and stops at the
  first acceptance; everything after it is accepted untested.
* ``backward_sequential`` does the same from ``H_K`` down to ``H_1``.
* ``single_step`` rejects ``H_y`` iff ``p_y <= alpha``.

A hypothesis is rejected when ``p <= alpha``, so ``p == alpha`` rejects.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROCEDURES = ("forward_sequential", "backward_sequential", "single_step")


@dataclass(frozen=True)
class AcceptanceSet:
    procedure: str
    accepted: frozenset[int]

    def __contains__(self, y) -> bool:
        return y in self.accepted

    def __len__(self) -> int:
        return len(self.accepted)

    def sorted(self) -> list[int]:
        return sorted(self.accepted)


def _as_pvalues(p) -> np.ndarray:
    values = getattr(p, "values", p)
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size < 1:
        raise ValueError("need at least one p-value")
    return arr


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return alpha


def procedure1_accept(p, alpha: float) -> AcceptanceSet:
    """Forward sequential test; returns ``{y_min, ..., K}`` or the empty set."""
    pv = _as_pvalues(p)
    alpha = _check_alpha(alpha)
    K = pv.size
    accepted: frozenset[int] = frozenset()
    for y in range(1, K + 1):
        if pv[y - 1] > alpha:
            accepted = frozenset(range(y, K + 1))
            break
    return AcceptanceSet("forward_sequential", accepted)


def procedure2_accept(p, alpha: float) -> AcceptanceSet:
    """Backward sequential test; returns ``{1, ..., y_max}`` or the empty set."""
    pv = _as_pvalues(p)
    alpha = _check_alpha(alpha)
    accepted: frozenset[int] = frozenset()
    for y in range(pv.size, 0, -1):
        if pv[y - 1] > alpha:
            accepted = frozenset(range(1, y + 1))
            break
    return AcceptanceSet("backward_sequential", accepted)


def procedure3_accept(p, alpha: float) -> AcceptanceSet:
    """Single-step test with common critical value ``alpha``."""
    pv = _as_pvalues(p)
    alpha = _check_alpha(alpha)
    accepted = frozenset(int(y) for y in np.flatnonzero(pv > alpha) + 1)
    return AcceptanceSet("single_step", accepted)


def acceptance_masks(pvalues, alpha: float, procedure: str) -> np.ndarray:
    """Boolean acceptance matrix for a batch of p-value vectors.

    ``pvalues`` has shape ``(m, K)``; column ``y-1`` of the result is True
    where ``H_y`` is accepted.
    """
    alpha = _check_alpha(alpha)
    pv = np.asarray(pvalues, dtype=float)
    if pv.ndim == 1:
        pv = pv[None, :]
    passed = pv > alpha
    if procedure == "single_step":
        return passed
    if procedure == "forward_sequential":
        return np.logical_or.accumulate(passed, axis=1)
    if procedure == "backward_sequential":
        return np.logical_or.accumulate(passed[:, ::-1], axis=1)[:, ::-1]
    raise ValueError(f"unknown procedure {procedure!r}; expected one of {PROCEDURES}")


def true_null_rejection_rate(pvalues, truths, alpha: float, procedure: str) -> float:
    """Fraction of test inputs whose true-label hypothesis gets rejected.

    With one true null per input this is the empirical FWER.
    """
    truths = np.asarray(truths, dtype=np.int64)
    accepted = acceptance_masks(pvalues, alpha, procedure)
    if truths.shape != (accepted.shape[0],):
        raise ValueError("one truth label per p-value row is required")
    hit = accepted[np.arange(truths.size), truths - 1]
    return float(1.0 - hit.mean())
