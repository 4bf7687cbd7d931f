import numpy as np
import pandas as pd
import pytest

from ordinalprog.exceptions import InsufficientDonors, UnknownCategory
from ordinalprog.preprocess import (DesignEncoder, StandardScaler, apply_pmm, fit_pmm, multiply_impute, one_hot,
                                    standardize)
from ordinalprog.tokenizer import PredictorSpec

MARSHALL = ("No visible pathology", "Diffuse injury II", "Diffuse injury III", "Diffuse injury IV",
            "Mass lesion", "Non-evacuated mass lesion")
SPECS = [PredictorSpec("X1", "continuous"), PredictorSpec("X2", "continuous"),
         PredictorSpec("G", "categorical", levels=(1, 2, 3))]


def _frame(n, seed, miss=0.2):
    rng = np.random.default_rng(seed)
    x1 = rng.normal(size=n)
    x2 = 2 * x1 + rng.normal(scale=0.5, size=n) + 3
    g = np.where(x1 < -0.5, 1, np.where(x1 < 0.5, 2, 3))
    df = pd.DataFrame({"X1": x1, "X2": x2, "G": g.astype(object)})
    truth = df.copy()
    if miss:
        df.loc[rng.random(n) < miss, "X2"] = np.nan
    return df, truth


def test_one_hot():
    gcs = PredictorSpec("GCSm", "categorical", levels=tuple(range(1, 7)))
    np.testing.assert_array_equal(one_hot(gcs, 6), [0, 0, 0, 0, 0, 1])
    ct = PredictorSpec("MarshallCT", "categorical", levels=MARSHALL)
    np.testing.assert_array_equal(one_hot(ct, "Diffuse injury II"), [0, 1, 0, 0, 0, 0])
    with pytest.raises(UnknownCategory):
        one_hot(gcs, 7)
    # CSV round trips hand back strings or floats
    np.testing.assert_array_equal(one_hot(gcs, "6"), one_hot(gcs, 6.0))


def test_standardize():
    sc = StandardScaler(np.array([50.0]), np.array([10.0]))
    assert standardize(sc, [[70.0]])[0, 0] == 2
    assert standardize(sc, [[50.0]])[0, 0] == 0
    const = StandardScaler().fit(np.full((5, 1), 3.0))
    assert np.all(const.transform(np.array([[1.0], [9.0]])) == 0)


def test_standardized_training_moments():
    X = np.random.default_rng(0).normal(5, 3, size=(200, 4))
    Z = StandardScaler().fit_transform(X)
    np.testing.assert_allclose(Z.mean(axis=0), 0, atol=1e-9)
    np.testing.assert_allclose(Z.var(axis=0), 1, atol=1e-9)


def test_pmm_identity_without_missing():
    df, _ = _frame(100, 0, miss=0)
    model = fit_pmm(df, SPECS, seed=0)
    pd.testing.assert_frame_equal(apply_pmm(model, df, 1), df)


def test_pmm_all_missing_column():
    df, _ = _frame(50, 0, miss=0)
    df["X2"] = np.nan
    with pytest.raises(InsufficientDonors):
        fit_pmm(df, SPECS)


def test_pmm_values_from_observed_support():
    df, _ = _frame(200, 1, miss=0.3)
    df.loc[df.index[:20], "G"] = np.nan
    model = fit_pmm(df.iloc[:150], SPECS, seed=3)
    observed_x2 = set(df.iloc[:150]["X2"].dropna())
    observed_g = set(df.iloc[:150]["G"].dropna())
    out = apply_pmm(model, df.iloc[150:], rng=5)
    assert not out.isna().any().any()
    miss = df.iloc[150:]["X2"].isna()
    assert set(out.loc[miss[miss].index, "X2"]) <= observed_x2
    assert set(model.train_completed["X2"]) <= observed_x2 | set()
    assert set(model.train_completed["G"]) <= observed_g
    # observed cells are untouched
    obs = ~miss
    np.testing.assert_array_equal(out.loc[obs[obs].index, "X2"], df.iloc[150:].loc[obs[obs].index, "X2"])


def test_pmm_k1_is_deterministic_given_model():
    df, _ = _frame(150, 2)
    model = fit_pmm(df.iloc[:100], SPECS, k=1, seed=0)
    a = apply_pmm(model, df.iloc[100:], rng=1)
    b = apply_pmm(model, df.iloc[100:], rng=99)
    pd.testing.assert_frame_equal(a, b)


def test_pmm_mcar_mean_recovery():
    # Monte-Carlo over 100 seeds: imputed means of a linearly predictable column
    # scatter around the hidden values' mean within 3 standard errors
    diffs, inside = [], 0
    for seed in range(100):
        df, truth = _frame(300, seed)
        model = fit_pmm(df, SPECS, seed=seed, iters=5)
        miss = df["X2"].isna().to_numpy()
        imputed = model.train_completed["X2"].to_numpy()[miss]
        hidden = truth["X2"].to_numpy()[miss]
        d = imputed.mean() - truth["X2"].mean()
        se = truth["X2"].std() / np.sqrt(miss.sum())
        inside += abs(d) <= 3 * se
        diffs.append(imputed.mean() - hidden.mean())
    assert inside >= 95
    diffs = np.array(diffs)
    assert abs(diffs.mean()) <= 3 * diffs.std(ddof=1) / np.sqrt(len(diffs))


def test_multiply_impute_agrees_on_observed_cells():
    df, _ = _frame(120, 4)
    out = multiply_impute(df, SPECS, m=3, seed=1, iters=3)
    assert sorted(out["imputation_id"].unique()) == [1, 2, 3]
    obs = df["X2"].notna()
    copies = [c.drop(columns="imputation_id") for _, c in out.groupby("imputation_id")]
    for c in copies:
        np.testing.assert_array_equal(c.loc[obs, "X2"], df.loc[obs, "X2"])
    miss = ~obs
    assert any(not np.array_equal(copies[0].loc[miss, "X2"], c.loc[miss, "X2"]) for c in copies[1:])


def test_design_encoder_round_trip():
    df, _ = _frame(60, 5, miss=0)
    enc = DesignEncoder(SPECS).fit(df)
    X = enc.transform(df)
    assert X.shape == (60, 2 + 2)
    assert enc.feature_names == ["X1", "X2", "G_2", "G_3"]
    np.testing.assert_allclose(X[:, :2].mean(axis=0), 0, atol=1e-12)
    again = DesignEncoder.from_dict(enc.to_dict())
    np.testing.assert_array_equal(again.transform(df), X)
    # full rank next to an intercept
    D = np.column_stack([np.ones(60), X])
    assert np.linalg.matrix_rank(D) == D.shape[1]
