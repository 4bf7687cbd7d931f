"""Feed-forward networks with multinomial or ordinal output heads.

Everything is plain numpy in float64 with hand-written backpropagation, so
gradients can be checked against finite differences.

Two input front-ends share the same dense body and heads:

* :class:`DeepModel` takes a dense design matrix.
* :class:`ApmModel` takes bags of token indices and forms a significance-
  weighted average of learned token embeddings, which plays the role of the
  first hidden layer (no activation).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse
from scipy.special import expit, log_softmax

from ..exceptions import DimensionMismatch, EmptyTokenSet, NonFiniteLoss
from ..outcome import N_CATEGORIES, N_THRESHOLDS, class_weights, exceedance_indicators, to_threshold_profile

EPS = 1e-12
ENCODINGS = ("multinomial", "ordinal")


# --------------------------------------------------------------------------
# heads and losses
# --------------------------------------------------------------------------


def multinomial_head(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return np.exp(log_softmax(z, axis=-1))


def _ordinal_cumulative(raw):
    raw = np.asarray(raw, dtype=float)
    steps = np.minimum(raw[..., 1:], 0.0)
    return np.concatenate([raw[..., :1], raw[..., :1] + np.cumsum(steps, axis=-1)], axis=-1)


def ordinal_head(raw) -> np.ndarray:
    """Monotone exceedance probabilities from 6 unconstrained outputs.

    The first output is the logit at the lowest threshold; every later
    output can only lower the running logit (negative-ReLU step), so the
    profile is non-increasing for any input.
    """
    return expit(_ordinal_cumulative(raw))


def _ordinal_head_backward(raw, d_cum):
    # d c_t / d raw_1 = 1; d c_t / d raw_s = 1{raw_s < 0} for 2 <= s <= t
    tail = np.cumsum(d_cum[..., ::-1], axis=-1)[..., ::-1]
    d_raw = tail.copy()
    d_raw[..., 1:] *= (raw[..., 1:] < 0)
    return d_raw


def weighted_ce_loss(p, y, w) -> np.ndarray:
    """Per-example ``-w[y] * log(p[y] + eps)``."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=int))
    w = np.asarray(w, dtype=float)
    return -w[y] * np.log(p[np.arange(len(y)), y] + EPS)


def weighted_bce_loss(q, y, w) -> np.ndarray:
    """Per-example class-weighted binary cross-entropy summed over thresholds."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=int))
    w = np.asarray(w, dtype=float)
    z = exceedance_indicators(y)
    ll = z * np.log(q + EPS) + (1 - z) * np.log(1 - q + EPS)
    return -w[y] * ll.sum(axis=1)


def _head_loss_and_grad(raw, y, w, encoding):
    """Mean weighted loss over the batch and its gradient w.r.t. raw outputs."""
    n = len(y)
    if encoding == "multinomial":
        p = multinomial_head(raw)
        losses = weighted_ce_loss(p, y, w)
        py = p[np.arange(n), y]
        onehot = np.eye(N_CATEGORIES)[y]
        coef = (-w[y] * py / (py + EPS))[:, None]
        d_raw = coef * (onehot - p)
    else:
        c = _ordinal_cumulative(raw)
        q = expit(c)
        losses = weighted_bce_loss(q, y, w)
        z = exceedance_indicators(y)
        d_q = -w[y][:, None] * (z / (q + EPS) - (1 - z) / (1 - q + EPS))
        d_raw = _ordinal_head_backward(raw, d_q * q * (1 - q))
    return losses.mean(), d_raw / n


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MlpConfig:
    """Hyperparameters of one network configuration.

    ``widths`` lists hidden-layer sizes. For the token model the first width
    is the embedding dimension and the rest are dense layers after averaging.
    """

    widths: tuple = (16,)
    dropout: float = 0.0
    encoding: str = "multinomial"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 200
    patience: int = 10
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 1 or any(w < 1 for w in self.widths):
            raise ValueError("need at least one positive hidden width")
        if self.encoding not in ENCODINGS:
            raise ValueError(f"encoding must be one of {ENCODINGS}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def n_outputs(self) -> int:
        return N_CATEGORIES if self.encoding == "multinomial" else N_THRESHOLDS

    def to_dict(self) -> dict:
        return {"widths": list(self.widths), "dropout": self.dropout, "encoding": self.encoding,
                "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "adam_eps": self.adam_eps,
                "max_epochs": self.max_epochs, "patience": self.patience,
                "batch_size": self.batch_size, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "MlpConfig":
        d = dict(d)
        d["widths"] = tuple(d["widths"])
        return cls(**d)


# --------------------------------------------------------------------------
# networks
# --------------------------------------------------------------------------


def _he(rng, fan_in, fan_out):
    return rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)


class _Network:
    """Dense ReLU body plus output head; subclasses supply the first layer."""

    kind = "network"

    def __init__(self, config: MlpConfig):
        self.config = config
        self.params: dict[str, np.ndarray] = {}
        self.metadata: dict = {}

    # subclasses: produce the input to the dense body and remember what the
    # backward pass needs
    def _front(self, inputs):
        raise NotImplementedError

    def _front_backward(self, cache, d_h0, grads):
        raise NotImplementedError

    @property
    def _dense_widths(self) -> tuple:
        raise NotImplementedError

    def _body_forward(self, h, train, rng, masks=None):
        cache = []
        n_dense = len(self._dense_widths)
        rate = self.config.dropout
        for l in range(n_dense):
            a = h @ self.params[f"W{l}"] + self.params[f"b{l}"]
            out = np.maximum(a, 0.0)
            mask = None
            if masks is not None:
                mask = masks[l]
            elif train and rate > 0:
                mask = (rng.random(out.shape) >= rate) / (1.0 - rate)
            if mask is not None:
                out = out * mask
            cache.append((h, a, mask))
            h = out
        raw = h @ self.params["Wout"] + self.params["bout"]
        return raw, (cache, h)

    def _body_backward(self, body_cache, d_raw, grads):
        cache, h_last = body_cache
        grads["Wout"] = h_last.T @ d_raw
        grads["bout"] = d_raw.sum(axis=0)
        d_h = d_raw @ self.params["Wout"].T
        for l in reversed(range(len(cache))):
            h_in, a, mask = cache[l]
            if mask is not None:
                d_h = d_h * mask
            d_a = d_h * (a > 0)
            grads[f"W{l}"] = h_in.T @ d_a
            grads[f"b{l}"] = d_a.sum(axis=0)
            d_h = d_a @ self.params[f"W{l}"].T
        return d_h

    def raw_output(self, inputs, train=False, rng=None, masks=None):
        h0, _ = self._front(inputs)
        raw, _ = self._body_forward(h0, train, rng, masks)
        return raw

    def raw_from_hidden(self, h0):
        raw, _ = self._body_forward(np.atleast_2d(h0), False, None)
        return raw

    def output_from_hidden(self, h0) -> np.ndarray:
        """Post-activation output nodes: 7 category or 6 threshold probabilities."""
        raw = self.raw_from_hidden(h0)
        if self.config.encoding == "multinomial":
            return multinomial_head(raw)
        return ordinal_head(raw)

    def loss_and_grad(self, inputs, y, w, masks=None, train=False, rng=None):
        """Mean class-weighted loss of a batch and gradients for every parameter."""
        y = np.asarray(y, dtype=int)
        h0, front_cache = self._front(inputs)
        raw, body_cache = self._body_forward(h0, train, rng, masks)
        loss, d_raw = _head_loss_and_grad(raw, y, np.asarray(w, dtype=float), self.config.encoding)
        grads: dict[str, np.ndarray] = {}
        d_h0 = self._body_backward(body_cache, d_raw, grads)
        self._front_backward(front_cache, d_h0, grads)
        return loss, grads

    def loss(self, inputs, y, w) -> float:
        raw = self.raw_output(inputs)
        y = np.asarray(y, dtype=int)
        loss, _ = _head_loss_and_grad(raw, y, np.asarray(w, dtype=float), self.config.encoding)
        return float(loss)

    def predict_proba(self, inputs) -> np.ndarray:
        if self.config.encoding != "multinomial":
            raise ValueError("ordinal heads expose only the threshold profile")
        return multinomial_head(self.raw_output(inputs))

    def predict_profile(self, inputs) -> np.ndarray:
        raw = self.raw_output(inputs)
        if self.config.encoding == "multinomial":
            return to_threshold_profile(multinomial_head(raw))
        return ordinal_head(raw)

    # flat parameter vector, used by optimisers and gradient checks
    def param_names(self) -> list[str]:
        return sorted(self.params)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in self.param_names()])

    def set_flat(self, flat):
        pos = 0
        for k in self.param_names():
            size = self.params[k].size
            self.params[k] = flat[pos:pos + size].reshape(self.params[k].shape).copy()
            pos += size

    def copy_params(self) -> dict:
        return {k: v.copy() for k, v in self.params.items()}


class DeepModel(_Network):
    kind = "deep"

    def __init__(self, config: MlpConfig, n_features: int, rng=None):
        super().__init__(config)
        self.n_features = n_features
        rng = np.random.default_rng(config.seed if rng is None else rng)
        sizes = (n_features,) + config.widths
        for l in range(len(config.widths)):
            self.params[f"W{l}"] = _he(rng, sizes[l], sizes[l + 1])
            self.params[f"b{l}"] = np.zeros(sizes[l + 1])
        self.params["Wout"] = _he(rng, sizes[-1], config.n_outputs)
        self.params["bout"] = np.zeros(config.n_outputs)

    @property
    def _dense_widths(self):
        return self.config.widths

    def _front(self, inputs):
        X = np.asarray(inputs, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(f"expected {self.n_features} features, got {X.shape[1]}")
        return X, None

    def _front_backward(self, cache, d_h0, grads):
        pass


def token_matrix(patients, vocab_size: int) -> sparse.csr_matrix:
    """Row i has ``1/|tokens_i|`` at each of patient i's distinct token indices."""
    rows, cols, vals = [], [], []
    for i, p in enumerate(patients):
        idx = getattr(p, "indices", p)
        idx = np.unique(np.asarray(idx, dtype=int))
        if len(idx) == 0:
            raise EmptyTokenSet(f"patient {i} has no tokens")
        if idx.max() >= vocab_size or idx.min() < 0:
            raise DimensionMismatch("token index outside the model's dictionary")
        rows.append(np.full(len(idx), i))
        cols.append(idx)
        vals.append(np.full(len(idx), 1.0 / len(idx)))
    return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(len(rows), vocab_size))


def embed_average(tokens, emb, sig_logits) -> np.ndarray:
    """``sum_i exp(sig_i) * emb_i / |tokens|`` for one patient's tokens."""
    idx = np.asarray(getattr(tokens, "indices", tokens), dtype=int)
    if len(idx) == 0:
        raise EmptyTokenSet("cannot average an empty token set")
    emb = np.asarray(emb, dtype=float)
    weights = np.exp(np.asarray(sig_logits, dtype=float)[idx])
    return (weights[:, None] * emb[idx]).sum(axis=0) / len(idx)


class ApmModel(_Network):
    kind = "apm"

    def __init__(self, config: MlpConfig, vocab_size: int, rng=None):
        super().__init__(config)
        self.vocab_size = vocab_size
        rng = np.random.default_rng(config.seed if rng is None else rng)
        emb_dim = config.widths[0]
        self.params["emb"] = rng.standard_normal((vocab_size, emb_dim))
        self.params["sig"] = np.zeros(vocab_size)
        sizes = config.widths
        for l in range(len(sizes) - 1):
            self.params[f"W{l}"] = _he(rng, sizes[l], sizes[l + 1])
            self.params[f"b{l}"] = np.zeros(sizes[l + 1])
        self.params["Wout"] = _he(rng, sizes[-1], config.n_outputs)
        self.params["bout"] = np.zeros(config.n_outputs)

    @property
    def _dense_widths(self):
        return self.config.widths[1:]

    def _as_matrix(self, inputs):
        if sparse.issparse(inputs):
            if inputs.shape[1] != self.vocab_size:
                raise DimensionMismatch("token matrix width differs from the dictionary size")
            return inputs.tocsr()
        if isinstance(inputs, (tuple, list)) and inputs and np.isscalar(inputs[0]):
            inputs = [inputs]
        elif hasattr(inputs, "indices") and not isinstance(inputs, (list, tuple)):
            inputs = [inputs]
        return token_matrix(inputs, self.vocab_size)

    def weighted_embeddings(self) -> np.ndarray:
        return np.exp(self.params["sig"])[:, None] * self.params["emb"]

    def _front(self, inputs):
        A = self._as_matrix(inputs)
        return np.asarray(A @ self.weighted_embeddings()), A

    def _front_backward(self, A, d_h0, grads):
        G = np.asarray(A.T @ d_h0)
        s = np.exp(self.params["sig"])
        grads["emb"] = s[:, None] * G
        grads["sig"] = s * (G * self.params["emb"]).sum(axis=1)


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------


class Adam:
    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _take(inputs, idx):
    if sparse.issparse(inputs):
        return inputs[idx]
    return inputs[idx]


def _fit_network(model: _Network, train_inputs, y, val_inputs, y_val, weights=None):
    cfg = model.config
    y = np.asarray(y, dtype=int)
    y_val = np.asarray(y_val, dtype=int)
    w = class_weights(y) if weights is None else np.asarray(weights, dtype=float)
    rng = np.random.default_rng([cfg.seed, 1])
    opt = Adam(model.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    n = len(y)
    best_loss, best_params, best_epoch, stale = np.inf, model.copy_params(), 0, 0
    history = {"train": [], "val": []}
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        running = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = model.loss_and_grad(_take(train_inputs, idx), y[idx], w, train=True, rng=rng)
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"non-finite training loss at epoch {epoch}, batch starting {start}; "
                                    f"config {cfg.to_dict()}")
            opt.step(model.params, grads)
            running += loss * len(idx)
        val_loss = model.loss(val_inputs, y_val, w)
        if not np.isfinite(val_loss):
            raise NonFiniteLoss(f"non-finite validation loss at epoch {epoch}; config {cfg.to_dict()}")
        history["train"].append(running / n)
        history["val"].append(val_loss)
        if val_loss < best_loss:
            best_loss, best_params, best_epoch, stale = val_loss, model.copy_params(), epoch, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.params = best_params
    model.metadata = {"seed": cfg.seed, "stopping_epoch": best_epoch, "epochs_run": len(history["val"]),
                      "best_val_loss": float(best_loss), "train_losses": history["train"],
                      "val_losses": history["val"], "class_weights": list(map(float, w))}
    return model


def train_deep(X, y, config: MlpConfig, X_val, y_val) -> DeepModel:
    """Mini-batch Adam with early stopping on validation loss; returns best weights."""
    X = np.asarray(X, dtype=float)
    model = DeepModel(config, X.shape[1])
    return _fit_network(model, X, y, np.asarray(X_val, dtype=float), y_val)


def train_apm(patients, y, config: MlpConfig, val_patients, y_val, vocab_size: int) -> ApmModel:
    """Train embeddings, significance weights and the dense head jointly."""
    model = ApmModel(config, vocab_size)
    A = token_matrix(patients, vocab_size)
    A_val = token_matrix(val_patients, vocab_size)
    return _fit_network(model, A, y, A_val, y_val)


def with_seed(config: MlpConfig, seed: int) -> MlpConfig:
    return replace(config, seed=int(seed))
