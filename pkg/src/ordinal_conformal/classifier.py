"""Multinomial logistic regression used as the black-box scorer.

The model is a full softmax parameterisation (one weight row per class,
intercept in column 0) fit by full-batch gradient descent with Armijo
backtracking on the ridge-penalised mean cross-entropy. Features are
standardised with training statistics before fitting; the stored
constants are reapplied to every later input.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .datagen import Dataset


@dataclass(frozen=True)
class FitConfig:
    max_iters: int = 500
    tolerance: float = 1e-6
    ridge: float = 1e-6


@dataclass(frozen=True)
class TrainingInfo:
    iterations: int
    final_loss: float
    converged: bool
    loss_history: tuple[float, ...] = field(default=(), repr=False)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _augment(Z: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((Z.shape[0], 1)), Z])


def loss_and_grad(coef: np.ndarray, design: np.ndarray, onehot: np.ndarray, ridge: float):
    """Penalised mean cross-entropy and its gradient w.r.t. ``coef`` (K x (d+1)).

    ``design`` already carries the leading column of ones.
    """
    n = design.shape[0]
    logits = design @ coef.T
    logits = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(logits).sum(axis=1))
    nll = np.sum(log_norm - np.sum(logits * onehot, axis=1)) / n
    probs = np.exp(logits - log_norm[:, None])
    loss = nll + 0.5 * ridge * np.sum(coef * coef)
    grad = (probs - onehot).T @ design / n + ridge * coef
    return float(loss), grad


@dataclass(frozen=True)
class FittedClassifier:
    coef: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    info: TrainingInfo | None = None

    def __post_init__(self):
        coef = np.array(self.coef, dtype=float)
        mean = np.array(self.mean, dtype=float).ravel()
        scale = np.array(self.scale, dtype=float).ravel()
        if coef.ndim != 2 or coef.shape[1] != mean.size + 1 or scale.size != mean.size:
            raise ValueError("inconsistent coefficient / standardisation shapes")
        if not (np.all(np.isfinite(coef)) and np.all(np.isfinite(mean)) and np.all(scale > 0)):
            raise ValueError("model parameters must be finite with positive scales")
        for a in (coef, mean, scale):
            a.setflags(write=False)
        object.__setattr__(self, "coef", coef)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "scale", scale)

    @property
    def n_classes(self) -> int:
        return self.coef.shape[0]

    @property
    def d(self) -> int:
        return self.mean.size

    def _design(self, X: np.ndarray) -> np.ndarray:
        if X.shape[-1] != self.d:
            raise ValueError(f"expected {self.d} features, got {X.shape[-1]}")
        if not np.all(np.isfinite(X)):
            raise ValueError("features must be finite")
        return _augment((X - self.mean) / self.scale)

    def posterior(self, x) -> np.ndarray:
        """Class probabilities; shape ``(K,)`` for one input, ``(m, K)`` for a matrix."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return softmax(self._design(x[None, :]) @ self.coef.T)[0]
        if x.ndim != 2:
            raise ValueError("x must be a vector or a matrix of feature rows")
        return softmax(self._design(x) @ self.coef.T)

    def score(self, x, y: int) -> float:
        return score(self, x, y)

    def predict(self, X) -> np.ndarray:
        """Most probable 1-based label for each row."""
        return np.argmax(self.posterior(np.atleast_2d(X)), axis=1) + 1

    def to_dict(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "d": self.d,
            "coefficients": self.coef.tolist(),
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_dict(cls, data: dict) -> FittedClassifier:
        model = cls(data["coefficients"], data["mean"], data["scale"])
        if model.n_classes != data["n_classes"] or model.d != data["d"]:
            raise ValueError("model file dimensions disagree with its coefficients")
        return model

    @classmethod
    def from_json(cls, path) -> FittedClassifier:
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def posterior(model: FittedClassifier, x) -> np.ndarray:
    return model.posterior(x)


def score(model: FittedClassifier, x, y: int) -> float:
    """Conformity score of label ``y``: its estimated posterior probability."""
    if not 1 <= int(y) <= model.n_classes:
        raise ValueError(f"class {y} outside 1..{model.n_classes}")
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("score takes a single feature vector")
    return float(model.posterior(x)[int(y) - 1])


def fit(train: Dataset, config: FitConfig | None = None, init: np.ndarray | None = None) -> FittedClassifier:
    """Fit the ridge-penalised softmax model; deterministic given data and config."""
    config = config or FitConfig()
    X, y, K = train.features, train.labels, train.n_classes
    if train.n == 0:
        raise ValueError("empty training set")
    if np.unique(y).size < 2:
        raise ValueError("training data must contain at least two classes")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    design = _augment((X - mean) / scale)
    onehot = np.zeros((train.n, K))
    onehot[np.arange(train.n), y - 1] = 1.0

    coef = np.zeros((K, design.shape[1])) if init is None else np.array(init, dtype=float)
    loss, grad = loss_and_grad(coef, design, onehot, config.ridge)
    history = [loss]
    step = 1.0
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        gnorm2 = float(np.sum(grad * grad))
        if np.sqrt(gnorm2) <= config.tolerance:
            converged = True
            it -= 1
            break
        # Armijo backtracking; try a larger step first after each success
        step *= 2.0
        while True:
            cand = coef - step * grad
            cand_loss, cand_grad = loss_and_grad(cand, design, onehot, config.ridge)
            if cand_loss <= loss - 0.5 * step * gnorm2 or step < 1e-12:
                break
            step *= 0.5
        if cand_loss > loss:
            # no descent possible at machine precision
            converged = True
            break
        coef, loss, grad = cand, cand_loss, cand_grad
        history.append(loss)
    else:
        converged = bool(np.sqrt(np.sum(grad * grad)) <= config.tolerance)

    info = TrainingInfo(it, loss, converged, tuple(history))
    return FittedClassifier(coef, mean, scale, info)
