"""Ordinal discrimination and threshold-level calibration metrics.

Discrimination metrics rank patients by a scalar score of their threshold
profile (the expected number of thresholds exceeded, ``sum_t q_t``) and are
rank statistics, so any strictly increasing transform of the score leaves
them unchanged.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.special import expit, logit

from .exceptions import DegenerateInput, EmptyCategory, NonConvergence, OneClassOnly, TooFewPoints
from .outcome import N_CATEGORIES, N_THRESHOLDS, THRESHOLDS

CATEGORY_PAIRS = tuple(combinations(range(N_CATEGORIES), 2))
LOGIT_CLIP = 1e-6


@dataclass
class PredictionSet:
    profiles: np.ndarray
    labels: np.ndarray
    ids: np.ndarray | None = None

    def __post_init__(self):
        self.profiles = np.atleast_2d(np.asarray(self.profiles, dtype=float))
        self.labels = np.asarray(self.labels, dtype=int)
        if self.profiles.shape[1] != N_THRESHOLDS:
            raise ValueError(f"profiles need {N_THRESHOLDS} columns")
        if len(self.profiles) != len(self.labels):
            raise ValueError("profiles and labels differ in length")
        if self.ids is not None:
            self.ids = np.asarray(self.ids)
            if len(self.ids) != len(self.labels):
                raise ValueError("ids and labels differ in length")

    def __len__(self):
        return len(self.labels)

    def take(self, rows) -> "PredictionSet":
        return PredictionSet(self.profiles[rows], self.labels[rows],
                             None if self.ids is None else self.ids[rows])


@dataclass
class CalibrationCurve:
    p_pred: np.ndarray
    p_obs: np.ndarray
    threshold: int
    span: float

    def to_csv(self, path):
        order = np.argsort(self.p_pred, kind="stable")
        with open(path, "w") as fh:
            fh.write("p_pred,p_obs\n")
            for a, b in zip(self.p_pred[order], self.p_obs[order]):
                fh.write(f"{a:.10g},{b:.10g}\n")


@dataclass
class RecalibrationFit:
    intercept: float
    slope: float
    threshold: int


@dataclass
class MetricReport:
    metric: str
    estimate: float
    ci_low: float
    ci_high: float
    n_resamples: int
    threshold: str | None = None
    n_skipped: int = 0

    def to_dict(self) -> dict:
        d = {"metric": self.metric, "estimate": self.estimate, "ci_low": self.ci_low,
             "ci_high": self.ci_high, "n_resamples": self.n_resamples}
        if self.threshold is not None:
            d["threshold"] = self.threshold
        if self.n_skipped:
            d["n_skipped"] = self.n_skipped
        return d


# --------------------------------------------------------------------------
# discrimination
# --------------------------------------------------------------------------


def _half_counts(reference_sorted, values):
    """For each value: #reference below it + 0.5 * #reference equal to it."""
    lo = np.searchsorted(reference_sorted, values, side="left")
    hi = np.searchsorted(reference_sorted, values, side="right")
    return (lo + hi) * 0.5


def dichotomous_c(scores, labels) -> float:
    """Probability that a positive outscores a negative; ties count one half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    pos, neg = scores[labels], scores[~labels]
    if len(pos) == 0 or len(neg) == 0:
        raise OneClassOnly("both outcome classes must be present")
    return float(_half_counts(np.sort(neg), pos).sum() / (len(pos) * len(neg)))


def ranking_score(q) -> np.ndarray:
    return np.asarray(q, dtype=float).sum(axis=-1)


def pairwise_concordance(scores, labels):
    """Concordance counts between outcome categories.

    Returns ``(C, N)``: ``C[i, j]`` sums, over patients a in category j and b in
    category i, 1 if a outscores b and 0.5 on a tie; ``N`` holds category
    sizes. For i < j, ``C[i, j] / (N[i] N[j])`` is the pairwise c-index.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    N = np.bincount(labels, minlength=N_CATEGORIES)
    C = np.zeros((N_CATEGORIES, N_CATEGORIES))
    for i in range(N_CATEGORIES):
        if N[i] == 0:
            continue
        ref = np.sort(scores[labels == i])
        C[i] = np.bincount(labels, weights=_half_counts(ref, scores), minlength=N_CATEGORIES)
    return C, N


def pairwise_c_indices(preds: PredictionSet) -> dict:
    C, N = pairwise_concordance(ranking_score(preds.profiles), preds.labels)
    return {(i, j): C[i, j] / (N[i] * N[j]) for i, j in CATEGORY_PAIRS if N[i] and N[j]}


def orc(preds: PredictionSet, skip_empty: bool = False) -> float:
    """Ordinal c-index: unweighted mean of the 21 pairwise c-indices."""
    C, N = pairwise_concordance(ranking_score(preds.profiles), preds.labels)
    if np.any(N == 0):
        if not skip_empty:
            raise EmptyCategory(f"categories without patients: {np.flatnonzero(N == 0).tolist()}")
        if np.count_nonzero(N) < 2:
            raise OneClassOnly("fewer than two outcome categories present")
        warnings.warn("ORC averaged over defined category pairs only", RuntimeWarning, stacklevel=2)
    vals = [C[i, j] / (N[i] * N[j]) for i, j in CATEGORY_PAIRS if N[i] and N[j]]
    return float(np.mean(vals))


def generalized_c(preds: PredictionSet) -> float:
    """Concordant over comparable pairs, i.e. the prevalence-weighted pairwise mean."""
    C, N = pairwise_concordance(ranking_score(preds.profiles), preds.labels)
    if np.count_nonzero(N) < 2:
        raise OneClassOnly("fewer than two outcome categories present")
    iu = np.triu_indices(N_CATEGORIES, k=1)
    return float(C[iu].sum() / np.outer(N, N)[iu].sum())


def somers_dxy(preds: PredictionSet) -> float:
    return 2.0 * generalized_c(preds) - 1.0


def threshold_c(preds: PredictionSet, t: int) -> float:
    return dichotomous_c(preds.profiles[:, t], preds.labels > t)


# --------------------------------------------------------------------------
# calibration
# --------------------------------------------------------------------------


def _threshold_data(preds: PredictionSet, t: int):
    q = preds.profiles[:, t]
    y = (preds.labels > t).astype(float)
    if y.min() == y.max():
        raise OneClassOnly(f"all patients on one side of threshold {THRESHOLDS[t]}")
    return q, y


def calibration_slope(preds: PredictionSet, t: int, max_iter: int = 100, tol: float = 1e-10) -> RecalibrationFit:
    """Logistic recalibration ``logit Pr(y > t) = b0 + b1 logit(q_t)`` by Newton-Raphson."""
    q, y = _threshold_data(preds, t)
    x = logit(np.clip(q, LOGIT_CLIP, 1 - LOGIT_CLIP))
    if np.ptp(x) == 0:
        raise DegenerateInput("all predicted probabilities are equal")
    D = np.column_stack([np.ones_like(x), x])
    beta = np.zeros(2)
    for _ in range(max_iter):
        p = expit(D @ beta)
        grad = D.T @ (y - p)
        H = (D * (p * (1 - p))[:, None]).T @ D
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError as exc:
            raise NonConvergence("singular information matrix in recalibration fit") from exc
        beta = beta + step
        if not np.all(np.isfinite(beta)):
            break
        if np.abs(step).max() < tol * (1 + np.abs(beta).max()):
            return RecalibrationFit(float(beta[0]), float(beta[1]), t)
    raise NonConvergence(f"recalibration fit did not converge at threshold {THRESHOLDS[t]}")


def _tricube_fit(x, y, x0, radius, rw, x_range):
    """Local linear fits at the anchors ``x0`` (vector) with per-anchor ``radius``."""
    r = np.abs(x[None, :] - x0[:, None])
    rad = radius[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(rad > 0, r / np.where(rad > 0, rad, 1.0), 0.0)
        w = np.where(r <= 0.001 * rad, 1.0, np.where(r <= 0.999 * rad, (1 - u ** 3) ** 3, 0.0))
    w = np.where(rad > 0, w, (r == 0).astype(float))
    w = w * rw[None, :]
    total = w.sum(axis=1)
    out = np.full(len(x0), np.nan)
    ok = total > 0
    w = w[ok] / total[ok, None]
    a = w @ x
    b = (w * (x[None, :] - a[:, None]) ** 2).sum(axis=1)
    use_slope = (radius[ok] > 0) & (np.sqrt(b) > 0.001 * x_range)
    b_safe = np.where(use_slope, b, 1.0)
    slope_w = w * (1 + (x0[ok] - a)[:, None] * (x[None, :] - a[:, None]) / b_safe[:, None])
    out[ok] = np.where(use_slope, slope_w @ y, w @ y)
    return out


def lowess(x, y, span: float = 0.75, iterations: int = 0, delta: float | None = None) -> np.ndarray:
    """Locally weighted linear regression with tricube weights.

    Returns fitted values at each ``x``. Fits are computed at anchor values
    spaced at least ``delta`` apart (default 1% of the range of ``x``) and
    linearly interpolated in between; ``delta=0`` fits at every distinct x.
    ``iterations`` adds bisquare robustness passes.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    k = max(2, min(n, int(span * n + 1e-10)))
    x_range = float(np.ptp(x))
    if delta is None:
        delta = 0.01 * x_range
    ux = np.unique(x)
    anchors = [0]
    while anchors[-1] < len(ux) - 1:
        last = anchors[-1]
        j = int(np.searchsorted(ux, ux[last] + delta, side="right")) - 1
        anchors.append(min(max(last + 1, j), len(ux) - 1))
    ax = ux[anchors]
    rw = np.ones(n)
    fitted = np.empty(n)
    for it in range(iterations + 1):
        fits = np.empty(len(ax))
        step = max(1, 2_000_000 // n)
        for lo in range(0, len(ax), step):
            x0 = ax[lo:lo + step]
            radius = np.partition(np.abs(x[None, :] - x0[:, None]), k - 1, axis=1)[:, k - 1]
            fits[lo:lo + step] = _tricube_fit(x, y, x0, radius, rw, x_range)
        fitted = np.interp(x, ax, fits)
        if it == iterations:
            break
        resid = y - fitted
        scale = 6.0 * np.median(np.abs(resid))
        if scale < 1e-7 * np.mean(np.abs(y)):
            break
        u = np.clip(resid / scale, -1, 1)
        rw = (1 - u ** 2) ** 2
    return fitted


def lowess_curve(preds: PredictionSet, t: int, span: float = 0.75, iterations: int = 0,
                 delta: float | None = None) -> CalibrationCurve:
    """Smoothed observed probability of ``y > t`` at each observed ``q_t``."""
    if len(preds) < 20:
        raise TooFewPoints("need at least 20 predictions for a smoothed calibration curve")
    q, y = _threshold_data(preds, t)
    p_obs = np.clip(lowess(q, y, span, iterations, delta), 0.0, 1.0)
    return CalibrationCurve(q.copy(), p_obs, t, span)


def ici(curve: CalibrationCurve) -> float:
    """Integrated calibration index: mean |observed - predicted| over observations."""
    return float(np.mean(np.abs(curve.p_obs - curve.p_pred)))


def niv_ici(pi_above: float) -> float:
    """ICI of uniformly random predictions against a constant outcome rate."""
    if not 0.0 <= pi_above <= 1.0:
        raise ValueError("proportion must lie in [0, 1]")
    return pi_above ** 2 - pi_above + 0.5


# --------------------------------------------------------------------------
# named metrics for resampling code
# --------------------------------------------------------------------------


def _quiet_orc(preds):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return orc(preds, skip_empty=True)


def metric_by_name(name: str):
    """Resolve ``orc``, ``generalized_c``, ``somers_dxy``, ``threshold_c:<t>``,
    ``calibration_slope:<t>`` or ``ici:<t>`` (t is a threshold index 0..5).
    """
    base, _, arg = name.partition(":")
    t = int(arg) if arg else None
    table = {
        "orc": _quiet_orc,
        "generalized_c": generalized_c,
        "somers_dxy": somers_dxy,
        "threshold_c": lambda p: threshold_c(p, t),
        "calibration_slope": lambda p: calibration_slope(p, t).slope,
        "ici": lambda p: ici(lowess_curve(p, t)),
    }
    if base not in table or (base in ("threshold_c", "calibration_slope", "ici") and t is None):
        raise ValueError(f"unknown metric {name!r}")
    return table[base]


GREATER_IS_BETTER = {"orc": True, "generalized_c": True, "somers_dxy": True, "threshold_c": True,
                     "ici": False}
