"""Repeated stratified k-fold partitions, bootstrap CIs, BBC-CV and BBCD-CV.

Bootstrap resample ``b`` always draws from ``numpy.random.default_rng([seed, b])``,
so results do not depend on the order in which resamples are evaluated and
different procedures given the same seed see the same patient draws.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from itertools import product

import numpy as np
import pandas as pd

from .exceptions import OrdinalError, TooFewPerClass
from .metrics import MetricReport, PredictionSet, metric_by_name
from .models.network import MlpConfig

FULL_WIDTHS = (128, 256, 512)
DESK_WIDTHS = (8, 16, 32)
DROPOUT_RATES = (0.0, 0.2)


@dataclass
class PartitionPlan:
    repeat: int
    fold: int
    train: np.ndarray
    test: np.ndarray
    validation: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))

    @property
    def train_fit(self) -> np.ndarray:
        """Training rows minus the validation rows."""
        return np.setdiff1d(self.train, self.validation)

    def to_dict(self, ids=None) -> dict:
        conv = (lambda a: [str(ids[i]) for i in a]) if ids is not None else (lambda a: [int(i) for i in a])
        return {"repeat": self.repeat, "fold": self.fold, "train": conv(self.train_fit),
                "validation": conv(self.validation), "test": conv(self.test)}


def save_plans(plans, path, ids=None):
    with open(path, "w") as fh:
        json.dump([p.to_dict(ids) for p in plans], fh)


def stratified_kfold(labels, k: int, rng: np.random.Generator) -> np.ndarray:
    """Fold index per row. Rows are shuffled within class and dealt round-robin,
    continuing the deal across classes so fold sizes stay balanced."""
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    if np.any(counts < k):
        raise TooFewPerClass(f"every class needs at least {k} members; smallest has {counts.min()}")
    folds = np.empty(len(labels), dtype=int)
    offset = 0
    for c in classes:
        members = rng.permutation(np.flatnonzero(labels == c))
        folds[members] = (offset + np.arange(len(members))) % k
        offset += len(members)
    # relabel folds randomly so fold 0 is not systematically the largest
    return rng.permutation(k)[folds]


def stratified_shuffle_split(rows, labels, frac: float = 0.15, seed=0):
    """Split ``rows`` into (train', validation) with |validation| = round(frac |rows|).

    Per-class validation counts come from largest-remainder rounding of
    ``frac * n_class``, so each class keeps its proportion to within one
    patient.
    """
    rows = np.asarray(rows)
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2 or counts.min() < 2:
        raise TooFewPerClass("stratified split needs at least two classes with two members each")
    n_val = int(round(frac * len(rows)))
    exact = frac * counts
    alloc = np.floor(exact).astype(int)
    short = n_val - alloc.sum()
    if short > 0:
        order = np.argsort(-(exact - alloc), kind="stable")
        alloc[order[:short]] += 1
    elif short < 0:
        order = np.argsort(exact - alloc, kind="stable")
        for i in order[:(-short)]:
            alloc[i] -= 1
    val = []
    for c, m in zip(classes, alloc):
        members = rows[labels == c]
        val.append(rng.choice(members, size=m, replace=False))
    val = np.sort(np.concatenate(val))
    return np.setdiff1d(rows, val), val


def stratified_repeated_kfold(labels, repeats: int = 20, folds: int = 5, seed=0,
                              val_frac: float | None = None) -> list[PartitionPlan]:
    """``repeats * folds`` partitions of row indices 0..n-1.

    With ``val_frac`` set, each plan also carries a stratified validation
    subset of its training rows.
    """
    labels = np.asarray(labels)
    plans = []
    for r in range(repeats):
        rng = np.random.default_rng([seed, r])
        assignment = stratified_kfold(labels, folds, rng)
        for f in range(folds):
            test = np.flatnonzero(assignment == f)
            train = np.flatnonzero(assignment != f)
            plan = PartitionPlan(r + 1, f + 1, train, test)
            if val_frac:
                _, plan.validation = stratified_shuffle_split(train, labels[train], val_frac,
                                                              seed=[seed, r, f, 7])
            plans.append(plan)
    return plans


# --------------------------------------------------------------------------
# hyperparameter grid
# --------------------------------------------------------------------------


def build_grid(profile: str = "desk", encoding: str = "multinomial", max_depth: int | None = None,
               **config_kwargs) -> list[MlpConfig]:
    """Every per-layer width combination for each depth, times both dropout rates."""
    if profile == "paper":
        widths, depth = FULL_WIDTHS, 6
    elif profile == "desk":
        widths, depth = DESK_WIDTHS, 3
    else:
        raise ValueError(f"unknown grid profile {profile!r}")
    depth = max_depth or depth
    grid = []
    for n_layers in range(1, depth + 1):
        for ws in product(widths, repeat=n_layers):
            for rate in DROPOUT_RATES:
                grid.append(MlpConfig(widths=ws, dropout=rate, encoding=encoding, **config_kwargs))
    return grid


# --------------------------------------------------------------------------
# pooled predictions and resampling
# --------------------------------------------------------------------------

PROFILE_COLUMNS = [f"q{t + 1}" for t in range(6)]


def pool_to_prediction_set(pool: pd.DataFrame) -> PredictionSet:
    return PredictionSet(pool[PROFILE_COLUMNS].to_numpy(float), pool["true_category"].to_numpy(int),
                         pool["patient_id"].astype(str).to_numpy())


def _as_prediction_set(pool) -> PredictionSet:
    if isinstance(pool, PredictionSet):
        if pool.ids is None:
            return PredictionSet(pool.profiles, pool.labels, np.arange(len(pool)).astype(str))
        return pool
    return pool_to_prediction_set(pool)


class _Resampler:
    """Draws patients (not rows) with replacement; a patient's rows from every
    repeat come along together."""

    def __init__(self, ids):
        self.unique, self.row_patient = np.unique(np.asarray(ids).astype(str), return_inverse=True)

    def draw(self, seed, b):
        rng = np.random.default_rng([seed, b])
        n = len(self.unique)
        counts = np.bincount(rng.integers(0, n, size=n), minlength=n)
        in_bag = np.repeat(np.arange(len(self.row_patient)), counts[self.row_patient])
        out_of_bag = np.flatnonzero(counts[self.row_patient] == 0)
        return in_bag, out_of_bag


def _resolve(metric):
    if isinstance(metric, str):
        return metric, metric_by_name(metric)
    return getattr(metric, "__name__", "metric"), metric


def _summarise(name, values, n_skipped, threshold=None) -> MetricReport:
    values = np.asarray(values, dtype=float)
    if len(values) == 0:
        raise OrdinalError(f"{name}: every bootstrap resample failed")
    lo, hi = np.percentile(values, [2.5, 97.5])
    return MetricReport(name, float(values.mean()), float(lo), float(hi), len(values), threshold, n_skipped)


def _safe(metric, preds):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return metric(preds)
    except OrdinalError:
        return None


def bootstrap_ci(pool, metric, n_resamples: int = 1000, seed=0, out_of_bag: bool = False,
                 threshold: str | None = None) -> MetricReport:
    """Percentile bootstrap over patients for one configuration's pooled predictions.

    With ``out_of_bag=True`` each resample is scored on the patients it did
    not draw instead of the drawn ones.
    """
    preds = _as_prediction_set(pool)
    if len(preds) == 0:
        raise OrdinalError("empty prediction pool")
    name, fn = _resolve(metric)
    sampler = _Resampler(preds.ids)
    values, skipped = [], 0
    for b in range(n_resamples):
        in_bag, oob = sampler.draw(seed, b)
        rows = oob if out_of_bag else in_bag
        v = _safe(fn, preds.take(rows)) if len(rows) else None
        if v is None:
            skipped += 1
        else:
            values.append(v)
    return _summarise(name, values, skipped, threshold)


def _aligned(pools: dict) -> dict:
    sets = {k: _as_prediction_set(v) for k, v in pools.items()}
    ref = next(iter(sets.values()))
    for k, s in sets.items():
        if len(s) != len(ref) or not np.array_equal(s.ids, ref.ids) or not np.array_equal(s.labels, ref.labels):
            raise ValueError(f"pool for config {k!r} is not aligned with the others")
    return sets


def _argbest(values, greater_is_better):
    values = np.asarray(values, dtype=float)
    values = np.where(np.isnan(values), -np.inf if greater_is_better else np.inf, values)
    return int(np.argmax(values) if greater_is_better else np.argmin(values))


def bbc_select(pools: dict, metric="orc", n_resamples: int = 1000, seed=0, greater_is_better: bool = True):
    """Bootstrap bias-corrected selection.

    For each resample the best configuration on the drawn patients is scored
    on the undrawn ones; the distribution of those out-of-bag scores gives a
    selection-bias-corrected estimate and percentile CI. Returns
    ``(chosen config key, MetricReport)`` where the chosen key is the best on
    the full pool.
    """
    sets = _aligned(pools)
    keys = list(sets)
    name, fn = _resolve(metric)
    full = [_safe(fn, sets[k]) for k in keys]
    chosen = keys[_argbest([np.nan if v is None else v for v in full], greater_is_better)]
    sampler = _Resampler(sets[keys[0]].ids)
    values, skipped = [], 0
    for b in range(n_resamples):
        in_bag, oob = sampler.draw(seed, b)
        if len(oob) == 0:
            skipped += 1
            continue
        scores = [_safe(fn, sets[k].take(in_bag)) for k in keys] if len(keys) > 1 else [0.0]
        best = keys[_argbest([np.nan if v is None else v for v in scores], greater_is_better)]
        v = _safe(fn, sets[best].take(oob))
        if v is None:
            skipped += 1
        else:
            values.append(v)
    return chosen, _summarise(name, values, skipped)


@dataclass
class DropoutResult:
    optimal: object
    survivors: list
    win_fraction: dict


def bbcd_dropout(pools: dict, alpha: float = 0.05, n_resamples: int = 1000, seed=0,
                 metric="orc", greater_is_better: bool = True) -> DropoutResult:
    """Drop configurations that fail to match the pooled optimum often enough.

    The optimum is the best configuration on all pooled validation
    predictions. A challenger survives if its score matches or beats the
    optimum's in at least ``alpha * n_resamples`` patient resamples.
    """
    sets = _aligned(pools)
    keys = list(sets)
    _, fn = _resolve(metric)
    full = [_safe(fn, sets[k]) for k in keys]
    optimal = keys[_argbest([np.nan if v is None else v for v in full], greater_is_better)]
    if len(keys) < 2:
        return DropoutResult(optimal, keys, {optimal: 1.0})
    sampler = _Resampler(sets[keys[0]].ids)
    wins = dict.fromkeys(keys, 0)
    for b in range(n_resamples):
        in_bag, _ = sampler.draw(seed, b)
        ref = _safe(fn, sets[optimal].take(in_bag))
        for k in keys:
            if k == optimal:
                continue
            v = _safe(fn, sets[k].take(in_bag))
            if v is None or ref is None:
                continue
            if (v >= ref) if greater_is_better else (v <= ref):
                wins[k] += 1
    wins[optimal] = n_resamples
    survivors = [k for k in keys if wins[k] >= alpha * n_resamples]
    return DropoutResult(optimal, survivors, {k: wins[k] / n_resamples for k in keys})
