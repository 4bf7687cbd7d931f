"""Multinomial and proportional-odds logistic regression.

Both are fitted by BFGS on the mean negative log-likelihood with analytic
gradients. The ridge penalty ``lam`` acts on slopes only, never on
intercepts or thresholds; ``lam=0`` is plain maximum likelihood.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats
from scipy.special import expit, log_softmax

from ..exceptions import DimensionMismatch, EmptyCategory, NotNested, SeparationError, SingularDesign
from ..outcome import N_CATEGORIES, N_THRESHOLDS, to_threshold_profile

GTOL = 1e-6
MAX_ITER = 500
# a fitted probability this close to 1 for the observed category only
# happens when the likelihood has no finite maximiser
_SEPARATION_PROB = 1.0 - 1e-8


def _check_inputs(X, y):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=int)
    if len(X) != len(y):
        raise DimensionMismatch("X and y have different lengths")
    counts = np.bincount(y, minlength=N_CATEGORIES)
    if len(counts) > N_CATEGORIES or np.any(counts == 0):
        raise EmptyCategory("all 7 outcome categories must be present")
    return X, y


def _check_rank(X, lam):
    if lam > 0:
        return
    D = np.column_stack([np.ones(len(X)), X])
    if np.linalg.matrix_rank(D) < D.shape[1]:
        raise SingularDesign("design matrix (with intercept) is rank deficient; use lam > 0")


def _numeric_hessian(grad, x, h=1e-5):
    k = len(x)
    H = np.empty((k, k))
    for i in range(k):
        e = np.zeros(k)
        e[i] = h
        H[i] = (grad(x + e) - grad(x - e)) / (2 * h)
    return 0.5 * (H + H.T)


@dataclass
class LinearFit:
    loglik: float = np.nan
    n: int = 0
    converged: bool = False
    n_iter: int = 0
    grad_norm: float = np.nan
    cov: np.ndarray | None = field(default=None, repr=False)

    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))


@dataclass
class MnlrModel:
    """Multinomial logit with category "1" as reference.

    ``weights`` is 6 x (d + 1): row k holds [intercept, slopes] of the
    log-odds of category k + 1 versus the reference.
    """

    weights: np.ndarray
    lam: float = 0.0
    fit: LinearFit = field(default_factory=LinearFit)
    kind = "mnlr"

    @property
    def n_features(self) -> int:
        return self.weights.shape[1] - 1

    def logits(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None] if self.n_features == 1 else X[None, :]
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(f"expected {self.n_features} features, got {X.shape[1]}")
        z = X @ self.weights[:, 1:].T + self.weights[:, 0]
        return np.column_stack([np.zeros(len(X)), z])

    def predict_proba(self, X) -> np.ndarray:
        return np.exp(log_softmax(self.logits(X), axis=1))

    def predict_profile(self, X) -> np.ndarray:
        return to_threshold_profile(self.predict_proba(X))


def _mnlr_objective(w_flat, X1, Y, lam, d1):
    W = w_flat.reshape(N_CATEGORIES - 1, d1)
    z = np.column_stack([np.zeros(len(X1)), X1 @ W.T])
    logp = log_softmax(z, axis=1)
    n = len(X1)
    nll = -(Y * logp).sum() / n
    P = np.exp(logp)
    G = -((Y - P)[:, 1:].T @ X1) / n
    if lam > 0:
        slopes = W[:, 1:]
        nll += 0.5 * lam * (slopes ** 2).sum()
        G[:, 1:] += lam * slopes
    return nll, G.ravel()


def _mnlr_hessian(W, X1, lam):
    """Total (not mean) observed information of the multinomial likelihood."""
    z = np.column_stack([np.zeros(len(X1)), X1 @ W.T])
    P = np.exp(log_softmax(z, axis=1))[:, 1:]
    K, d1 = W.shape
    outer = np.einsum("ia,ib->iab", P, P)
    Wmat = -outer
    idx = np.arange(K)
    Wmat[:, idx, idx] += P
    H = np.einsum("iab,ij,ik->ajbk", Wmat, X1, X1).reshape(K * d1, K * d1)
    if lam > 0:
        pen = np.zeros((K, d1))
        pen[:, 1:] = lam * len(X1)
        H += np.diag(pen.ravel())
    return H


def _check_separation(proba_observed, lam):
    if lam == 0 and np.any(proba_observed > _SEPARATION_PROB):
        raise SeparationError(
            "fitted probabilities of 1 for observed outcomes: data are (quasi-)separated; "
            "refit with lam > 0")


def train_mnlr(X, y, lam: float = 1e-4) -> MnlrModel:
    X, y = _check_inputs(X, y)
    _check_rank(X, lam)
    n, d = X.shape
    X1 = np.column_stack([np.ones(n), X])
    Y = np.eye(N_CATEGORIES)[y]
    counts = Y.sum(axis=0)
    w0 = np.zeros((N_CATEGORIES - 1, d + 1))
    w0[:, 0] = np.log(counts[1:] / counts[0])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = optimize.minimize(_mnlr_objective, w0.ravel(), args=(X1, Y, lam, d + 1), jac=True,
                                method="BFGS", options={"gtol": GTOL, "maxiter": MAX_ITER})
    W = res.x.reshape(N_CATEGORIES - 1, d + 1)
    model = MnlrModel(W, lam)
    proba = model.predict_proba(X)
    _check_separation(proba[np.arange(n), y], lam)
    H = _mnlr_hessian(W, X1, lam)
    model.fit = LinearFit(
        loglik=float(np.log(proba[np.arange(n), y]).sum()), n=n,
        converged=bool(np.abs(res.jac).max() < GTOL or res.success), n_iter=int(res.nit),
        grad_norm=float(np.abs(res.jac).max()), cov=np.linalg.pinv(H))
    return model


@dataclass
class PolrModel:
    """Proportional odds: ``Pr(y > t | x) = sigmoid(x . coef - thresholds[t])``."""

    coef: np.ndarray
    thresholds: np.ndarray
    lam: float = 0.0
    fit: LinearFit = field(default_factory=LinearFit)
    kind = "polr"

    @property
    def n_features(self) -> int:
        return len(self.coef)

    def linear_predictor(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None] if self.n_features == 1 else X[None, :]
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(f"expected {self.n_features} features, got {X.shape[1]}")
        return X @ self.coef

    def predict_profile(self, X) -> np.ndarray:
        eta = self.linear_predictor(X)
        return expit(eta[:, None] - self.thresholds[None, :])


def _thresholds_from_free(a):
    theta = np.empty_like(a)
    theta[0] = a[0]
    theta[1:] = a[0] + np.cumsum(np.exp(a[1:]))
    return theta


def _free_from_thresholds(theta):
    return np.concatenate([[theta[0]], np.log(np.diff(theta))])


def _polr_nll_grad_natural(beta, theta, X, y):
    """Mean NLL and its gradient with respect to (beta, theta)."""
    n = len(y)
    eta = X @ beta
    ext = np.concatenate([[-np.inf], theta, [np.inf]])
    u = ext[y + 1] - eta
    lo = ext[y] - eta
    Fu, Fl = expit(u), expit(lo)
    # difference of upper tails is more accurate when both cdfs are near 1
    P = np.where(lo > 0, expit(-lo) - expit(-u), Fu - Fl)
    P = np.maximum(P, 1e-300)
    fu = np.where(np.isfinite(u), Fu * (1 - Fu), 0.0)
    fl = np.where(np.isfinite(lo), Fl * (1 - Fl), 0.0)
    nll = -np.log(P).sum() / n
    d_eta = (fu - fl) / P
    g_beta = X.T @ d_eta / n
    g_theta = np.zeros(N_THRESHOLDS)
    up = y < N_THRESHOLDS
    np.add.at(g_theta, y[up], -fu[up] / P[up])
    down = y > 0
    np.add.at(g_theta, y[down] - 1, fl[down] / P[down])
    return nll, g_beta, g_theta / n


def _polr_objective(params, X, y, lam, d):
    beta, a = params[:d], params[d:]
    theta = _thresholds_from_free(a)
    nll, g_beta, g_theta = _polr_nll_grad_natural(beta, theta, X, y)
    if lam > 0:
        nll += 0.5 * lam * beta @ beta
        g_beta = g_beta + lam * beta
    tail = np.cumsum(g_theta[::-1])[::-1]
    g_a = np.concatenate([[tail[0]], np.exp(a[1:]) * tail[1:]])
    return nll, np.concatenate([g_beta, g_a])


def train_polr(X, y, lam: float = 1e-4) -> PolrModel:
    X, y = _check_inputs(X, y)
    _check_rank(X, lam)
    n, d = X.shape
    cum = np.cumsum(np.bincount(y, minlength=N_CATEGORIES))[:-1] / n
    theta0 = np.log(cum / (1 - cum))
    x0 = np.concatenate([np.zeros(d), _free_from_thresholds(theta0)])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = optimize.minimize(_polr_objective, x0, args=(X, y, lam, d), jac=True,
                                method="BFGS", options={"gtol": GTOL, "maxiter": MAX_ITER})
    beta, theta = res.x[:d], _thresholds_from_free(res.x[d:])
    model = PolrModel(beta, theta, lam)
    proba = _polr_category_proba(model, X)
    _check_separation(proba[np.arange(n), y], lam)

    def grad_natural(p):
        _, gb, gt = _polr_nll_grad_natural(p[:d], p[d:], X, y)
        if lam > 0:
            gb = gb + lam * p[:d]
        return np.concatenate([gb, gt]) * n

    H = _numeric_hessian(grad_natural, np.concatenate([beta, theta]))
    model.fit = LinearFit(
        loglik=float(np.log(np.maximum(proba[np.arange(n), y], 1e-300)).sum()), n=n,
        converged=bool(np.abs(res.jac).max() < GTOL or res.success), n_iter=int(res.nit),
        grad_norm=float(np.abs(res.jac).max()), cov=np.linalg.pinv(H))
    return model


def _polr_category_proba(model: PolrModel, X) -> np.ndarray:
    q = model.predict_profile(X)
    ext = np.column_stack([np.ones(len(q)), q, np.zeros(len(q))])
    return ext[:, :-1] - ext[:, 1:]


def lr_test(full, reduced, df: int, tol: float = 1e-6) -> float:
    """Likelihood-ratio p-value for nested fitted models."""
    stat = 2.0 * (full.fit.loglik - reduced.fit.loglik)
    if stat < -tol * max(1.0, abs(full.fit.loglik)):
        raise NotNested("full model fits worse than the reduced one")
    return float(stats.chi2.sf(max(stat, 0.0), df))


def lr_degrees_of_freedom(n_levels: int) -> int:
    """A k-level categorical predictor enters with k - 1 dummy columns."""
    return n_levels - 1


def combine_pvalues_z(pvals) -> float:
    """Pool p-values across imputations on the z scale.

    Each p becomes z = Phi^-1(1 - p); the mean z is divided by the square
    root of the total variance ``1 + (1 + 1/m) * B`` with ``B`` the
    between-imputation variance of the z scores.
    """
    p = np.asarray(pvals, dtype=float)
    if np.any((p <= 0) | (p >= 1)):
        raise ValueError("p-values must lie strictly inside (0, 1)")
    m = len(p)
    z = stats.norm.isf(p)
    between = z.var(ddof=1) if m > 1 else 0.0
    total = 1.0 + (1.0 + 1.0 / m) * between
    return float(stats.norm.sf(z.mean() / np.sqrt(total)))
