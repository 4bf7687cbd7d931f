"""Concise-predictor preparation: PMM multiple imputation, one-hot, scaling.

Cohorts are pandas DataFrames with one column per predictor; missing cells
are NaN/None. Categorical columns hold level labels, continuous columns hold
floats.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .exceptions import InsufficientDonors, UnknownCategory
from .tokenizer import PredictorSpec, is_missing

# ridge added to X'X inside the chained regressions; keeps rank-deficient
# one-hot blocks solvable
_CHAIN_RIDGE = 1e-6


def levels_of(spec: PredictorSpec, column: pd.Series | None = None) -> tuple:
    if spec.levels is not None:
        return tuple(spec.levels)
    if column is None:
        raise ValueError(f"{spec.name}: levels unknown")
    vals = [v for v in column if not is_missing(v)]
    return tuple(sorted(set(vals), key=lambda v: (str(type(v)), v)))


def _level_code(levels: tuple, value) -> int:
    try:
        return levels.index(value)
    except ValueError:
        pass
    # CSV round trips turn 4 into "4" or 4.0
    for i, lv in enumerate(levels):
        if str(lv) == str(value):
            return i
        try:
            if float(lv) == float(value):
                return i
        except (TypeError, ValueError):
            continue
    raise UnknownCategory(f"value {value!r} not among levels {levels}")


def one_hot(spec: PredictorSpec, value, levels: tuple | None = None) -> np.ndarray:
    levels = levels or levels_of(spec)
    if is_missing(value):
        raise UnknownCategory(f"{spec.name}: cannot one-hot encode a missing value")
    out = np.zeros(len(levels))
    out[_level_code(levels, value)] = 1.0
    return out


@dataclass
class StandardScaler:
    mean_: np.ndarray | None = None
    scale_: np.ndarray | None = None

    def fit(self, X):
        X = np.asarray(X, dtype=float)
        self.mean_ = X.mean(axis=0)
        self.scale_ = X.std(axis=0)
        return self

    def transform(self, X):
        X = np.asarray(X, dtype=float)
        safe = np.where(self.scale_ > 0, self.scale_, 1.0)
        Z = (X - self.mean_) / safe
        # constant training columns carry no information
        return np.where(self.scale_ > 0, Z, 0.0)

    def fit_transform(self, X):
        return self.fit(X).transform(X)


def standardize(scaler: StandardScaler, x):
    return scaler.transform(x)


# --------------------------------------------------------------------------
# predictive mean matching
# --------------------------------------------------------------------------


def _codes_matrix(df: pd.DataFrame, specs, levels: dict) -> np.ndarray:
    """Numeric view of the cohort: category codes for categoricals, NaN for missing."""
    X = np.full((len(df), len(specs)), np.nan)
    for j, spec in enumerate(specs):
        col = df[spec.name].to_numpy(dtype=object)
        for i, v in enumerate(col):
            if is_missing(v):
                continue
            X[i, j] = _level_code(levels[spec.name], v) if spec.kind == "categorical" else float(v)
    return X


def _decode(X: np.ndarray, specs, levels: dict, index) -> pd.DataFrame:
    out = {}
    for j, spec in enumerate(specs):
        if spec.kind == "categorical":
            lv = levels[spec.name]
            out[spec.name] = [lv[int(c)] for c in X[:, j]]
        else:
            out[spec.name] = X[:, j]
    return pd.DataFrame(out, index=index)


@dataclass
class _ChainState:
    """Regression of one target column on all the others."""

    column: int
    beta_hat: np.ndarray  # (p, L)
    beta_star: np.ndarray  # posterior draw used for recipients
    donor_means: np.ndarray  # (n_donors, L) predicted means of observed training rows
    donor_values: np.ndarray  # (n_donors,)


@dataclass
class ImputationModel:
    specs: list
    levels: dict
    k: int
    iters: int
    seed: int
    centers: np.ndarray
    scales: np.ndarray
    fill_values: np.ndarray
    chains: dict = field(default_factory=dict)
    train_completed: pd.DataFrame | None = None

    def _design(self, X: np.ndarray, target: int) -> np.ndarray:
        cols = [np.ones(len(X))]
        for j, spec in enumerate(self.specs):
            if j == target:
                continue
            if spec.kind == "categorical":
                n_lv = len(self.levels[spec.name])
                codes = X[:, j].astype(int)
                for lv in range(1, n_lv):
                    cols.append((codes == lv).astype(float))
            else:
                cols.append((X[:, j] - self.centers[j]) / self.scales[j])
        return np.column_stack(cols)

    def _targets(self, X_obs_col: np.ndarray, target: int) -> np.ndarray:
        spec = self.specs[target]
        if spec.kind == "categorical":
            n_lv = len(self.levels[spec.name])
            return np.eye(n_lv)[X_obs_col.astype(int)]
        return ((X_obs_col - self.centers[target]) / self.scales[target])[:, None]


def _pmm_draw(pred_rec: np.ndarray, donor_means: np.ndarray, donor_values: np.ndarray,
              k: int, rng: np.random.Generator) -> np.ndarray:
    d2 = ((pred_rec[:, None, :] - donor_means[None, :, :]) ** 2).sum(axis=-1)
    kk = min(k, donor_means.shape[0])
    nearest = np.argpartition(d2, kk - 1, axis=1)[:, :kk]
    pick = rng.integers(0, kk, size=len(pred_rec))
    return donor_values[nearest[np.arange(len(pred_rec)), pick]]


def _fit_chain(model: ImputationModel, X: np.ndarray, observed: np.ndarray, target: int,
               rng: np.random.Generator) -> _ChainState:
    obs = observed[:, target]
    D = model._design(X, target)
    D_obs = D[obs]
    Y = model._targets(X[obs, target], target)
    p = D.shape[1]
    A = D_obs.T @ D_obs + _CHAIN_RIDGE * np.eye(p)
    A_inv = np.linalg.inv(A)
    beta_hat = A_inv @ D_obs.T @ Y
    resid = Y - D_obs @ beta_hat
    dof = max(len(D_obs) - p, 1)
    # Bayesian linear-regression draw: sigma*^2 = SSR / chi2_dof, beta* ~ N(beta_hat, sigma*^2 A^-1)
    chol = np.linalg.cholesky(A_inv + 1e-12 * np.eye(p))
    ssr = (resid ** 2).sum(axis=0)
    sigma_star = np.sqrt(ssr / rng.chisquare(dof, size=Y.shape[1]))
    beta_star = beta_hat + (chol @ rng.standard_normal((p, Y.shape[1]))) * sigma_star
    return _ChainState(target, beta_hat, beta_star, D_obs @ beta_hat, X[obs, target].copy())


def fit_pmm(train: pd.DataFrame, specs, k: int = 5, iters: int = 10, seed: int = 0) -> ImputationModel:
    """Fit a chained-equations predictive-mean-matching imputer on training rows.

    Each incomplete column is regressed on all other columns (one-hot for
    categoricals) for ``iters`` sweeps. The posterior coefficient draw of the
    final sweep is frozen into the model, so one fitted model is one
    stochastic imputation function.
    """
    specs = [s for s in specs if s.kind in ("categorical", "continuous")]
    rng = np.random.default_rng(seed)
    levels = {s.name: levels_of(s, train[s.name]) for s in specs if s.kind == "categorical"}
    X = _codes_matrix(train, specs, levels)
    observed = ~np.isnan(X)
    n_obs = observed.sum(axis=0)
    for j, spec in enumerate(specs):
        if n_obs[j] < k:
            raise InsufficientDonors(f"{spec.name}: {n_obs[j]} observed values, need at least {k}")

    centers = np.zeros(len(specs))
    scales = np.ones(len(specs))
    fill = np.zeros(len(specs))
    for j, spec in enumerate(specs):
        vals = X[observed[:, j], j]
        if spec.kind == "continuous":
            centers[j] = vals.mean()
            scales[j] = vals.std() or 1.0
            fill[j] = vals.mean()
        else:
            fill[j] = np.bincount(vals.astype(int)).argmax()

    model = ImputationModel(specs, levels, k, iters, seed, centers, scales, fill)

    # start from random observed draws, as in the usual chained-equations setup
    for j in range(len(specs)):
        miss = ~observed[:, j]
        if miss.any():
            X[miss, j] = rng.choice(X[observed[:, j], j], size=miss.sum())

    incomplete = [j for j in range(len(specs)) if (~observed[:, j]).any()]
    for _ in range(iters if incomplete else 0):
        for j in incomplete:
            chain = _fit_chain(model, X, observed, j, rng)
            miss = ~observed[:, j]
            pred = model._design(X[miss], j) @ chain.beta_star
            X[miss, j] = _pmm_draw(pred, chain.donor_means, chain.donor_values, k, rng)
            model.chains[j] = chain

    # chains for complete columns are still needed when test rows miss them
    for j in range(len(specs)):
        if j not in model.chains:
            model.chains[j] = _fit_chain(model, X, observed, j, rng)
    model.train_completed = _decode(X, specs, levels, train.index)
    return model


def apply_pmm(model: ImputationModel, rows: pd.DataFrame, rng: np.random.Generator | int | None = None) -> pd.DataFrame:
    """Fill the missing cells of ``rows``; observed cells are returned untouched.

    Each missing value is an observed training value drawn uniformly from the
    ``k`` donors whose predicted means are closest to the cell's predicted
    mean.
    """
    rng = np.random.default_rng(rng)
    specs = model.specs
    X = _codes_matrix(rows, specs, model.levels)
    observed = ~np.isnan(X)
    out = rows.copy()
    if observed.all():
        return out
    for j in range(len(specs)):
        X[~observed[:, j], j] = model.fill_values[j]
    incomplete = [j for j in range(len(specs)) if (~observed[:, j]).any()]
    n_sweeps = model.iters if any((~observed[i]).sum() > 1 for i in range(len(X))) else 1
    for _ in range(max(n_sweeps, 1)):
        for j in incomplete:
            chain = model.chains[j]
            miss = ~observed[:, j]
            pred = model._design(X[miss], j) @ chain.beta_star
            X[miss, j] = _pmm_draw(pred, chain.donor_means, chain.donor_values, model.k, rng)
    filled = _decode(X, specs, model.levels, rows.index)
    for j, spec in enumerate(specs):
        miss = ~observed[:, j]
        if miss.any():
            col = out[spec.name].astype(object)
            col[miss] = filled[spec.name].to_numpy(dtype=object)[miss]
            out[spec.name] = col if spec.kind == "categorical" else col.astype(float)
    return out


def multiply_impute(df: pd.DataFrame, specs, m: int, seed: int = 0, k: int = 5, iters: int = 10) -> pd.DataFrame:
    """``m`` independently imputed copies, stacked with an ``imputation_id`` column."""
    copies = []
    for i in range(m):
        model = fit_pmm(df, specs, k=k, iters=iters, seed=int(np.random.SeedSequence([seed, i]).generate_state(1)[0]))
        done = apply_pmm(model, df, rng=np.random.default_rng([seed, i, 1]))
        done.insert(0, "imputation_id", i + 1)
        copies.append(done)
    return pd.concat(copies)


# --------------------------------------------------------------------------
# design matrices
# --------------------------------------------------------------------------


class DesignEncoder:
    """Maps complete concise-predictor rows to a numeric design matrix.

    Continuous columns are standardised with training statistics. Categorical
    columns are one-hot encoded with the first level dropped as reference, so
    the matrix stays full rank next to a model intercept.
    """

    def __init__(self, specs):
        self.specs = [s for s in specs if s.kind in ("categorical", "continuous")]
        self.levels: dict = {}
        self.scaler = StandardScaler()

    def fit(self, df: pd.DataFrame):
        self.levels = {s.name: levels_of(s, df[s.name]) for s in self.specs if s.kind == "categorical"}
        cont = [s.name for s in self.specs if s.kind == "continuous"]
        self.scaler.fit(df[cont].to_numpy(dtype=float) if cont else np.zeros((len(df), 0)))
        return self

    @property
    def feature_names(self) -> list[str]:
        names = [s.name for s in self.specs if s.kind == "continuous"]
        for s in self.specs:
            if s.kind == "categorical":
                names += [f"{s.name}_{lv}" for lv in self.levels[s.name][1:]]
        return names

    def transform(self, df: pd.DataFrame) -> np.ndarray:
        cont = [s.name for s in self.specs if s.kind == "continuous"]
        blocks = [self.scaler.transform(df[cont].to_numpy(dtype=float))] if cont else []
        for s in self.specs:
            if s.kind != "categorical":
                continue
            lv = self.levels[s.name]
            enc = np.array([one_hot(s, v, lv) for v in df[s.name]]).reshape(len(df), len(lv))
            blocks.append(enc[:, 1:])
        return np.hstack(blocks) if blocks else np.zeros((len(df), 0))

    def fit_transform(self, df):
        return self.fit(df).transform(df)

    def to_dict(self) -> dict:
        return {"specs": [s.to_dict() for s in self.specs],
                "levels": {k: list(v) for k, v in self.levels.items()},
                "mean": np.asarray(self.scaler.mean_).tolist(), "scale": np.asarray(self.scaler.scale_).tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "DesignEncoder":
        enc = cls([PredictorSpec.from_dict(s) for s in d["specs"]])
        enc.levels = {k: tuple(v) for k, v in d["levels"].items()}
        enc.scaler = StandardScaler(np.asarray(d["mean"], dtype=float), np.asarray(d["scale"], dtype=float))
        return enc
