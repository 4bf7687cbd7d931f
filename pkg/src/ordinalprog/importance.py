"""Shapley attribution of token-embedding model outputs to input tokens.

The players are a patient's distinct tokens. A coalition is scored by
averaging only its own tokens' weighted embeddings (dividing by the
coalition size) and feeding the result forward; the empty coalition feeds a
zero vector. Attributions are kept per output node: the 7 category
probabilities of a multinomial head or the 6 threshold probabilities of an
ordinal head.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .exceptions import TooManyTokens, UnmappableToken
from .tokenizer import UNRECOGNISED, split_token

MAX_EXACT_TOKENS = 12


@dataclass
class Attribution:
    tokens: np.ndarray  # dictionary indices, one per player
    values: np.ndarray  # (n_tokens, n_nodes)
    base: np.ndarray  # f(empty coalition) per node
    full: np.ndarray  # f(all tokens) per node

    def node(self, k: int) -> np.ndarray:
        return self.values[:, k]


def _patient_indices(patient) -> np.ndarray:
    return np.unique(np.asarray(list(getattr(patient, "indices", patient)), dtype=int))


def _coalition_outputs(model, weighted, masks) -> np.ndarray:
    masks = np.asarray(masks, dtype=float)
    sizes = masks.sum(axis=1)
    h0 = masks @ weighted
    nonempty = sizes > 0
    h0[nonempty] /= sizes[nonempty, None]
    return model.output_from_hidden(h0)


def coalition_value(model, patient, subset, node: int | None = None):
    """Model output with only ``subset`` (dictionary indices) of the patient's tokens."""
    idx = _patient_indices(patient)
    subset = set(np.asarray(list(subset), dtype=int).tolist())
    mask = np.isin(idx, list(subset))[None, :]
    out = _coalition_outputs(model, model.weighted_embeddings()[idx], mask)[0]
    return out if node is None else float(out[node])


def exact_shapley(model, patient, node: int | None = None) -> Attribution:
    """Shapley values by enumerating all 2^n coalitions (n <= 12)."""
    idx = _patient_indices(patient)
    n = len(idx)
    if n > MAX_EXACT_TOKENS:
        raise TooManyTokens(f"{n} tokens; exact enumeration is limited to {MAX_EXACT_TOKENS}")
    codes = np.arange(2 ** n)
    masks = (codes[:, None] >> np.arange(n)) & 1
    f = _coalition_outputs(model, model.weighted_embeddings()[idx], masks)
    sizes = masks.sum(axis=1)
    fact = np.array([math.factorial(s) for s in range(n + 1)], dtype=float)
    phi = np.zeros((n, f.shape[1]))
    for i in range(n):
        without = codes[(codes >> i) & 1 == 0]
        s = sizes[without]
        w = fact[s] * fact[n - s - 1] / fact[n]
        phi[i] = w @ (f[without | (1 << i)] - f[without])
    attr = Attribution(idx, phi, f[0], f[-1])
    if node is not None:
        attr.values = phi[:, [node]]
        attr.base, attr.full = f[0, [node]], f[-1, [node]]
    return attr


def sampled_shapley(model, patient, n_permutations: int = 1000, seed=0, node: int | None = None,
                    chunk: int = 512) -> Attribution:
    """Permutation-sampling Shapley estimate (unbiased for the exact values)."""
    if n_permutations < 1:
        raise ValueError("need at least one permutation")
    idx = _patient_indices(patient)
    n = len(idx)
    weighted = model.weighted_embeddings()[idx]
    rng = np.random.default_rng(seed)
    phi = None
    done = 0
    while done < n_permutations:
        m = min(chunk, n_permutations - done)
        perms = np.argsort(rng.random((m, n)), axis=1)
        # position of each player in its permutation; prefix k holds players at positions < k
        pos = np.argsort(perms, axis=1)
        masks = pos[:, None, :] < np.arange(n + 1)[None, :, None]
        f = _coalition_outputs(model, weighted, masks.reshape(-1, n)).reshape(m, n + 1, -1)
        diffs = f[:, 1:] - f[:, :-1]
        if phi is None:
            phi = np.zeros((n, f.shape[2]))
            base, full = f[0, 0], f[0, -1]
        np.add.at(phi, perms.ravel(), diffs.reshape(m * n, -1))
        done += m
    phi /= n_permutations
    attr = Attribution(idx, phi, base, full)
    if node is not None:
        attr.values = phi[:, [node]]
        attr.base, attr.full = base[[node]], full[[node]]
    return attr


def shapley(model, patient, n_permutations: int = 0, seed=0) -> Attribution:
    """Exact values when the patient has at most 12 tokens, sampled otherwise."""
    n = len(_patient_indices(patient))
    if n <= MAX_EXACT_TOKENS:
        return exact_shapley(model, patient)
    if n_permutations < 1:
        raise TooManyTokens(f"{n} tokens need sampling, but no permutation budget was given")
    return sampled_shapley(model, patient, n_permutations, seed)


# --------------------------------------------------------------------------
# aggregation
# --------------------------------------------------------------------------


def predictor_of(token: str) -> str:
    if token == UNRECOGNISED:
        return UNRECOGNISED
    parts = split_token(token)
    if parts is None:
        raise UnmappableToken(f"token {token!r} does not parse as Name_Value")
    return parts[0]


@dataclass
class ImportanceTable:
    token_node: pd.DataFrame  # predictor, token, node, mean_abs_shap
    tokens: pd.Series  # token -> score summed over nodes
    predictors: pd.Series  # predictor -> max token score

    def to_csv(self, path):
        self.token_node.to_csv(path, index=False)

    def ranking(self) -> list[dict]:
        best_token = {}
        for tok, score in self.tokens.items():
            p = predictor_of(tok)
            if p not in best_token or score > self.tokens[best_token[p]]:
                best_token[p] = tok
        return [{"rank": r + 1, "predictor": p, "score": float(s), "top_token": best_token[p]}
                for r, (p, s) in enumerate(self.predictors.items())]

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.ranking(), fh, indent=1)


def aggregate_importance(records: pd.DataFrame) -> ImportanceTable:
    """Mean absolute attribution per token and node, and per predictor.

    ``records`` has columns ``partition, patient_id, token, node, shap``.
    Absolute values are averaged over the partitions in which a patient was
    scored, then over the whole patient set (a patient without the token
    contributes zero). A token's overall score sums its node scores; a
    predictor scores the maximum over its tokens.
    """
    df = records.copy()
    df["token"] = df["token"].astype(str)
    df["predictor"] = [predictor_of(t) for t in df["token"]]
    df["abs"] = df["shap"].abs()
    n_patients = df["patient_id"].nunique()
    per_patient = df.groupby(["predictor", "token", "node", "patient_id"], sort=True)["abs"].mean()
    token_node = (per_patient.groupby(level=["predictor", "token", "node"]).sum() / n_patients)
    token_node = token_node.rename("mean_abs_shap").reset_index()
    tokens = token_node.groupby("token")["mean_abs_shap"].sum()
    pred_of_token = token_node.drop_duplicates("token").set_index("token")["predictor"]
    predictors = tokens.groupby(pred_of_token.reindex(tokens.index)).max()
    predictors = predictors.sort_values(ascending=False, kind="stable")
    tokens = tokens.sort_values(ascending=False, kind="stable")
    return ImportanceTable(token_node, tokens, predictors)


def attribution_records(attr: Attribution, dictionary, patient_id, partition, node_labels=None) -> pd.DataFrame:
    n_tokens, n_nodes = attr.values.shape
    labels = node_labels if node_labels is not None else list(range(n_nodes))
    return pd.DataFrame({
        "partition": partition,
        "patient_id": str(patient_id),
        "token": np.repeat([dictionary.token_at(i) for i in attr.tokens], n_nodes),
        "node": np.tile(labels, n_tokens),
        "shap": attr.values.ravel(),
    })
