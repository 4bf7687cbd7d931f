import json

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from ordinalprog.io import read_cohort, read_schema
from ordinalprog.metrics import PredictionSet, orc
from ordinalprog.synthetic import (TARGET_PROPORTIONS, CohortSpec, SyntheticPredictor, default_cohort_spec,
                                   generate_cohort, latent_score, oracle_profile, predictor_sets, write_cohort)


@pytest.fixture(scope="module")
def spec():
    return default_cohort_spec(n=3000, seed=1)


def test_null_effects_match_threshold_marginals(spec):
    null = CohortSpec(spec.scaled(0.0).predictors, spec.thresholds, n=20_000, seed=4)
    _, labels = generate_cohort(null)
    exceed = expit(-np.asarray(null.thresholds))
    p = -np.diff(np.concatenate([[1.0], exceed, [0.0]]))
    freq = np.bincount(labels, minlength=7) / len(labels)
    assert np.all(np.abs(freq - p) <= 3 * np.sqrt(p * (1 - p) / len(labels)))


def test_default_marginals_near_targets():
    _, labels = generate_cohort(default_cohort_spec(n=20_000, seed=2))
    freq = np.bincount(labels, minlength=7) / len(labels)
    np.testing.assert_allclose(freq, TARGET_PROPORTIONS, atol=0.015)


def test_deterministic_files(tmp_path):
    spec = default_cohort_spec(n=1200, seed=3, missing=0.1)
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    pa = write_cohort(spec, tmp_path / "a")
    pb = write_cohort(spec, tmp_path / "b")
    for key in pa:
        assert pa[key].read_bytes() == pb[key].read_bytes()
    other = write_cohort(default_cohort_spec(n=1200, seed=4, missing=0.1), tmp_path, "other")
    assert other["cohort"].read_bytes() != pa["cohort"].read_bytes()


def test_missing_directory(tmp_path):
    with pytest.raises(FileNotFoundError):
        write_cohort(default_cohort_spec(n=50), tmp_path / "nope")


def test_complete_when_no_missingness(spec):
    df, _ = generate_cohort(spec)
    assert not df.isna().any().any()


def test_missingness_rates_and_mar():
    spec = default_cohort_spec(n=8000, seed=5, missing=0.2)
    df, _ = generate_cohort(spec)
    rates = df[[p.name for p in spec.predictors if p.missing > 0]].isna().mean()
    assert rates.between(0.12, 0.28).all()
    # MAR columns go missing more often for older patients
    mar = [p for p in spec.predictors if p.driver == "Age"]
    assert mar
    old = df["Age"] > df["Age"].median()
    for p in mar:
        assert df.loc[old, p.name].isna().mean() > df.loc[~old, p.name].isna().mean()


def test_oracle_formula(spec):
    df, _ = generate_cohort(spec)
    q = oracle_profile(spec, df)
    eta = np.zeros(len(df))
    for p in spec.predictors:
        if p.kind == "continuous":
            eta += p.effect * (df[p.name].astype(float) - p.mean) / p.sd
        elif p.kind == "binary":
            eta += p.effect * df[p.name].astype(float)
        else:
            eta += df[p.name].map(dict(zip(p.levels, p.level_effects))).astype(float)
    expected = 1 / (1 + np.exp(-(eta.to_numpy()[:, None] - np.asarray(spec.thresholds)[None, :])))
    np.testing.assert_allclose(q, expected, atol=1e-12)
    assert np.all(np.diff(q, axis=1) <= 0)


def test_oracle_constant_under_null(spec):
    null = spec.scaled(0.0)
    df, _ = generate_cohort(null)
    q = oracle_profile(null, df)
    assert np.ptp(q, axis=0).max() == 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_oracle_monotone_in_latent_score(seed):
    spec = default_cohort_spec(n=40, seed=seed)
    df, _ = generate_cohort(spec)
    eta = latent_score(spec, df)
    q = oracle_profile(spec, df)
    order = np.argsort(eta)
    assert np.all(np.diff(q[order], axis=0) >= 0)


def test_oracle_orc_increases_with_effect_size(spec):
    scores = []
    for factor in (0.0, 0.25, 0.5, 1.0, 2.0):
        s = CohortSpec(spec.scaled(factor).predictors, spec.thresholds, n=6000, seed=7)
        df, labels = generate_cohort(s)
        q = oracle_profile(s, df)
        scores.append(orc(PredictionSet(q, labels)))
    assert scores[0] == 0.5
    assert all(a < b for a, b in zip(scores, scores[1:]))


def test_predictor_tiers(spec):
    sets = predictor_sets(spec)
    concise = {s.name for s in sets["concise"]}
    extended = {s.name for s in sets["extended"]}
    assert len(concise) == 10 and concise < extended
    assert len(sets["all"]) == len(spec.predictors)
    kinds = {s.kind for s in sets["concise"]}
    assert {"continuous", "categorical"} <= kinds
    assert any(s.kind == "text" for s in sets["all"])


def test_spec_validation_and_round_trip(spec):
    with pytest.raises(ValueError):
        CohortSpec(spec.predictors, (1, 0, 2, 3, 4, 5))
    with pytest.raises(ValueError):
        SyntheticPredictor("x", "continuous", missing=1.0)
    again = CohortSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
    assert again == spec


def test_written_files_read_back(tmp_path):
    spec = default_cohort_spec(n=300, seed=8, missing=0.05)
    paths = write_cohort(spec, tmp_path)
    schema = read_schema(paths["schema"])
    df, labels = read_cohort(paths["cohort"], schema)
    ref, ref_labels = generate_cohort(spec)
    np.testing.assert_array_equal(labels, ref_labels)
    assert list(df["patient_id"]) == list(ref["patient_id"])
    for p in spec.predictors:
        assert df[p.name].isna().sum() == ref[p.name].isna().sum()
    truth = CohortSpec.from_dict(json.loads(paths["truth"].read_text()))
    assert truth == spec
