"""The 7-category ordinal outcome scale and its probability representations.

Categories are indexed 0..6 internally. Threshold ``t`` (0..5) separates
category ``t`` from ``t + 1``, so ``Pr(y > t)`` is the exceedance probability
at the t-th threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .exceptions import EmptyCategory, ZeroDenominator

CATEGORIES = ("1", "2or3", "4", "5", "6", "7", "8")
THRESHOLDS = (">1", ">3", ">4", ">5", ">6", ">7")
N_CATEGORIES = len(CATEGORIES)
N_THRESHOLDS = len(THRESHOLDS)

_SUM_TOL = 1e-9


@dataclass(frozen=True)
class OutcomeScale:
    categories: tuple = CATEGORIES
    thresholds: tuple = THRESHOLDS

    def category_index(self, label) -> int:
        label = str(label)
        # raw GOSE 2 and 3 share one category
        if label in ("2", "3"):
            label = "2or3"
        return self.categories.index(label)

    def threshold_index(self, label) -> int:
        label = str(label).strip()
        if not label.startswith(">"):
            label = ">" + label
        return self.thresholds.index(label)


SCALE = OutcomeScale()


@dataclass(frozen=True)
class CategoryDistribution:
    p: tuple

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.shape != (N_CATEGORIES,):
            raise ValueError(f"expected {N_CATEGORIES} probabilities, got shape {p.shape}")
        if np.any(p < 0) or np.any(p > 1) or abs(p.sum() - 1.0) > _SUM_TOL:
            raise ValueError("category probabilities must lie in [0, 1] and sum to 1")
        object.__setattr__(self, "p", tuple(float(v) for v in p))

    def to_json(self) -> str:
        return json.dumps({"p": list(self.p)})

    @classmethod
    def from_json(cls, text: str) -> "CategoryDistribution":
        return cls(tuple(json.loads(text)["p"]))


@dataclass(frozen=True)
class ThresholdProfile:
    q: tuple

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if q.shape != (N_THRESHOLDS,):
            raise ValueError(f"expected {N_THRESHOLDS} probabilities, got shape {q.shape}")
        if np.any(q < 0) or np.any(q > 1):
            raise ValueError("exceedance probabilities must lie in [0, 1]")
        if np.any(np.diff(q) > _SUM_TOL):
            raise ValueError("exceedance probabilities must be non-increasing")
        object.__setattr__(self, "q", tuple(float(v) for v in q))

    def to_json(self) -> str:
        return json.dumps({"q": list(self.q)})

    @classmethod
    def from_json(cls, text: str) -> "ThresholdProfile":
        return cls(tuple(json.loads(text)["q"]))


def to_threshold_profile(p):
    """Exceedance probabilities ``q[..., t] = sum(p[..., k] for k > t)``.

    Accepts a :class:`CategoryDistribution` or an array whose last axis has
    length 7; returns the matching type.
    """
    if isinstance(p, CategoryDistribution):
        return ThresholdProfile(tuple(to_threshold_profile(np.asarray(p.p))))
    p = np.asarray(p, dtype=float)
    # reverse cumulative sum, dropping the total
    tail = np.cumsum(p[..., ::-1], axis=-1)[..., ::-1]
    q = tail[..., 1:]
    # round-off can make a tail sum exceed the one before it
    q = np.minimum.accumulate(q, axis=-1)
    return np.clip(q, 0.0, 1.0)


def to_category_distribution(q):
    """Inverse of :func:`to_threshold_profile` for a valid profile."""
    if isinstance(q, ThresholdProfile):
        return CategoryDistribution(tuple(to_category_distribution(np.asarray(q.q))))
    q = np.asarray(q, dtype=float)
    ones = np.ones(q.shape[:-1] + (1,))
    zeros = np.zeros(q.shape[:-1] + (1,))
    ext = np.concatenate([ones, q, zeros], axis=-1)
    return ext[..., :-1] - ext[..., 1:]


def conditional_exceedance(q, lower: int, higher: int) -> float:
    """Pr(y > higher | y > lower) = q[higher] / q[lower]."""
    if isinstance(q, ThresholdProfile):
        q = q.q
    if lower > higher:
        raise ValueError("lower threshold must not exceed higher threshold")
    if q[lower] <= 0:
        raise ZeroDenominator(f"Pr(y > {THRESHOLDS[lower]}) is zero")
    if lower == higher:
        return 1.0
    return float(min(q[higher] / q[lower], 1.0))


def class_weights(labels) -> np.ndarray:
    """Inverse-frequency weights ``N / (7 n_k)``; average weight per patient is 1."""
    labels = np.asarray(labels, dtype=int)
    counts = np.bincount(labels, minlength=N_CATEGORIES)
    if np.any(counts == 0):
        missing = [CATEGORIES[k] for k in np.flatnonzero(counts == 0)]
        raise EmptyCategory(f"no training examples for categories {missing}")
    return len(labels) / (N_CATEGORIES * counts)


def macro_average(values) -> float:
    values = np.asarray(values, dtype=float)
    if values.shape != (N_THRESHOLDS,):
        raise ValueError(f"expected {N_THRESHOLDS} per-threshold values")
    return float(values.mean())


def exceedance_indicators(y) -> np.ndarray:
    """Binary matrix ``1{y > t}`` with one column per threshold."""
    y = np.asarray(y, dtype=int)
    return (y[..., None] > np.arange(N_THRESHOLDS)).astype(float)
