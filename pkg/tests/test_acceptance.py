"""The twelve acceptance criteria, each at its stated tolerance.

Every test records a one-line verdict (shown in the pytest terminal summary
and printed when this file is run as a script) before asserting.
"""

import time

import numpy as np
import pytest
from scipy.special import expit

from conftest import ACCEPTANCE
from oracles import brute_c_index, brute_pair_c, finite_difference_check, sample_categories, set_enumeration_orc
from ordinalprog.cli import main
from ordinalprog.importance import exact_shapley, sampled_shapley
from ordinalprog.io import Schema
from ordinalprog.metrics import (CATEGORY_PAIRS, PredictionSet, calibration_slope, generalized_c, ici,
                                 lowess_curve, niv_ici, orc, ranking_score, somers_dxy)
from ordinalprog.models import ApmModel, DeepModel, MlpConfig, ordinal_head, token_matrix, train_mnlr, train_polr
from ordinalprog.pipeline import RunConfig, run_family
from ordinalprog.synthetic import default_cohort_spec, generate_cohort
from ordinalprog.validation import bbcd_dropout, build_grid, stratified_repeated_kfold

CUTS = np.array([-2.0, -1.0, -0.3, 0.3, 1.0, 2.0])


def verdict(n, ok, detail):
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)
    assert ok, line


def profiles(s):
    return expit(np.asarray(s, float)[:, None] - CUTS[None, :])


# 1 -------------------------------------------------------------------------


def test_01_metric_identities():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(30, 60))
        labels = rng.integers(0, 7, n)
        labels[:7] = np.arange(7)
        s = np.round(labels * rng.uniform(0, 1) + rng.normal(size=n), 1)
        preds = PredictionSet(profiles(s), labels)
        score = ranking_score(preds.profiles)
        pair_mean = np.mean([brute_pair_c(score, labels, a, b) for a, b in CATEGORY_PAIRS])
        worst = max(worst, abs(orc(preds) - pair_mean),
                    abs(somers_dxy(preds) - (2 * generalized_c(preds) - 1)),
                    abs(generalized_c(preds) - brute_c_index(score, labels)))
    elapsed = time.perf_counter() - start
    verdict(1, worst <= 1e-12 and elapsed < 60, f"max deviation {worst:.1e} over 200 sets in {elapsed:.1f}s")


# 2 -------------------------------------------------------------------------


def test_02_set_enumeration():
    worst = 0.0
    for seed in range(40):
        rng = np.random.default_rng(seed)
        labels = np.repeat(np.arange(7), rng.integers(1, 4, 7))
        s = np.round(labels * 0.4 + rng.normal(size=len(labels)), 1)
        preds = PredictionSet(profiles(s), labels)
        exact = set_enumeration_orc(ranking_score(preds.profiles), labels, exact=True)
        worst = max(worst, abs(orc(preds) - float(exact)))
    cat = np.arange(7)
    three_wrong = orc(PredictionSet(profiles([1, 0, 3, 2, 5, 4, 6]), cat))
    reversed_ = orc(PredictionSet(profiles(-cat), cat))
    # "exact" up to double rounding: the oracle is a rational, ORC a float
    ok = worst <= 1e-13 and abs(three_wrong - (1 - 3 / 21)) <= 1e-13 and round(three_wrong, 2) == 0.86 and reversed_ == 0.0
    verdict(2, ok, f"max deviation {worst:.1e}; C = {three_wrong:.4f}; reversal ORC {reversed_} (21 switches)")


# 3 -------------------------------------------------------------------------


def _niv_ici(pi, n, seed):
    rng = np.random.default_rng(seed)
    q = rng.random(n)
    labels = np.where(rng.random(n) < pi, 6, 0)
    return ici(lowess_curve(PredictionSet(np.repeat(q[:, None], 6, axis=1), labels), 0))


def test_03_ici_no_information():
    at_08 = _niv_ici(0.8, 100_000, 0)
    grid = {pi: _niv_ici(pi, 100_000, int(pi * 10)) for pi in np.round(np.arange(0.1, 1.0, 0.1), 1)}
    worst = max(abs(v - niv_ici(pi)) for pi, v in grid.items())
    ok = abs(at_08 - 0.34) <= 0.01 and worst <= 0.01
    verdict(3, ok, f"ICI at pi=0.8 is {at_08:.4f}; max grid gap {worst:.4f}")


# 4 -------------------------------------------------------------------------


def test_04_calibration_slope():
    calibrated = sharpened = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        z = rng.normal(0, 1.5, 2000)
        y = rng.random(2000) < expit(z)
        labels = np.where(y, 6, 0)
        good = calibration_slope(PredictionSet(np.repeat(expit(z)[:, None], 6, axis=1), labels), 0).slope
        sharp = calibration_slope(PredictionSet(np.repeat(expit(2 * z)[:, None], 6, axis=1), labels), 0).slope
        calibrated += abs(good - 1) <= 0.1
        sharpened += abs(sharp - 0.5) <= 0.07
    ok = calibrated >= 45 and sharpened >= 45
    verdict(4, ok, f"slope 1 +/- 0.1 in {calibrated}/50 seeds; doubled-logit slope 0.5 +/- 0.07 in {sharpened}/50")


# 5 -------------------------------------------------------------------------


def test_05_fig1b(capsys):
    profile = "0.1273615,0.1228617,0.0661974,0.0261596,0.0216245,0.0038411"
    code = main(["report", "--profile", profile, "--lower", ">1", "--higher", ">3,>4"])
    out = capsys.readouterr().out
    ok = code == 0 and "| GOSE >1) = 96.5%" in out and "Pr(GOSE >4 | GOSE >1) = 52.0%" in out
    with capsys.disabled():
        verdict(5, ok, "report prints 96.5% for (>1, >3) and 52.0% for (>1, >4)")


# 6 -------------------------------------------------------------------------


def test_06_gradients():
    worst = {}
    for name in ("DeepMN", "DeepOR", "APM-MN", "APM-OR"):
        enc = "multinomial" if name.endswith("MN") else "ordinal"
        errs = []
        for point in range(10):
            rng = np.random.default_rng([6, point, len(name), enc == "ordinal"])
            y = np.arange(14) % 7
            w = rng.random(7) + 0.5
            if name.startswith("Deep"):
                m = DeepModel(MlpConfig(widths=(5, 4), encoding=enc, dropout=0.2), 3)
                m.set_flat(rng.normal(scale=0.7, size=m.get_flat().size))
                X = rng.normal(size=(14, 3))
                masks = [(rng.random((14, 5)) >= 0.2) / 0.8, (rng.random((14, 4)) >= 0.2) / 0.8]
                errs.append(finite_difference_check(m, X, y, w, masks=masks))
            else:
                m = ApmModel(MlpConfig(widths=(4, 3), encoding=enc), 9)
                m.set_flat(rng.normal(scale=0.7, size=m.get_flat().size))
                A = token_matrix([rng.choice(9, size=rng.integers(1, 5), replace=False) for _ in range(14)], 9)
                errs.append(finite_difference_check(m, A, y, w))
        worst[name] = max(errs)
    ok = max(worst.values()) < 1e-4
    verdict(6, ok, "max relative error " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


# 7 -------------------------------------------------------------------------


def test_07_ordinal_monotone():
    rng = np.random.default_rng(7)
    raw = rng.normal(size=(100_000, 6)) * rng.choice([0.1, 1.0, 10.0, 100.0], size=(100_000, 1))
    q = ordinal_head(raw)
    violations = int(np.sum(np.diff(q, axis=1) > 0))
    verdict(7, violations == 0, f"{violations} increasing steps in 100000 profiles")


# 8 -------------------------------------------------------------------------

THETA = (-1.5, -0.6, -0.3, 0.3, 0.9, 1.8)
BETA = np.array([0.8, -0.5])
W_TRUE = np.array([[-0.2, 0.3, -0.4], [-0.8, 0.5, 0.0], [-0.1, 0.7, 0.2],
                   [-0.3, 0.9, -0.3], [-0.2, 1.1, 0.4], [-0.3, 1.3, -0.1]])


def test_08_estimator_recovery():
    seeds_ok = {"POLR": 0, "MNLR": 0}
    for seed in range(100):
        rng = np.random.default_rng([8, seed])
        X = rng.normal(size=(5000, 2))
        y = ((X @ BETA + rng.logistic(size=5000))[:, None] > np.asarray(THETA)[None, :]).sum(axis=1)
        m = train_polr(X, y, lam=0)
        est, truth = np.concatenate([m.coef, m.thresholds]), np.concatenate([BETA, THETA])
        seeds_ok["POLR"] += bool(np.all(np.abs(est - truth) <= 3 * m.fit.standard_errors()))
        z = np.column_stack([np.zeros(5000), X @ W_TRUE[:, 1:].T + W_TRUE[:, 0]])
        p = np.exp(z - z.max(axis=1, keepdims=True))
        y = sample_categories(p / p.sum(axis=1, keepdims=True), rng)
        m = train_mnlr(X, y, lam=0)
        seeds_ok["MNLR"] += bool(np.all(np.abs(m.weights.ravel() - W_TRUE.ravel()) <= 3 * m.fit.standard_errors()))
    ok = min(seeds_ok.values()) >= 95
    verdict(8, ok, "seeds with every parameter inside 3 SE: "
            + ", ".join(f"{k} {v}/100" for k, v in seeds_ok.items()))


# 9 -------------------------------------------------------------------------


def test_09_shapley():
    worst_gap = worst_eff = 0.0
    for seed in range(5):
        rng = np.random.default_rng([9, seed])
        m = ApmModel(MlpConfig(widths=(5, 4), encoding=["multinomial", "ordinal"][seed % 2], seed=seed), 30)
        m.params["sig"] = rng.normal(0, 0.5, 30)
        patient = np.sort(rng.choice(30, size=8, replace=False))
        exact = exact_shapley(m, patient)
        est = sampled_shapley(m, patient, 20_000, seed=seed)
        worst_gap = max(worst_gap, np.abs(est.values - exact.values).max())
        worst_eff = max(worst_eff, np.abs(exact.values.sum(axis=0) - (exact.full - exact.base)).max())
    ok = worst_gap < 0.01 and worst_eff < 1e-12
    verdict(9, ok, f"max sampled-vs-exact gap {worst_gap:.4f}; efficiency residual {worst_eff:.1e}")


# 10 ------------------------------------------------------------------------


def test_10_cardinalities():
    n_grid = len(build_grid("paper"))
    _, labels = generate_cohort(default_cohort_spec(n=1550, seed=10))
    plans = stratified_repeated_kfold(labels, 20, 5, seed=10)
    glob = np.bincount(labels, minlength=7) / len(labels)
    bound = all(np.all(np.abs(np.bincount(labels[p.test], minlength=7) / len(p.test) - glob) <= 1 / len(p.test))
                for p in plans)
    ok = n_grid == 2184 and len(plans) == 100 and bound
    verdict(10, ok, f"{n_grid} full-grid configurations; {len(plans)} partitions; stratification bound "
            f"{'holds' if bound else 'broken'} on every plan")


# 11 ------------------------------------------------------------------------


def test_11_bbcd():
    rng = np.random.default_rng(11)
    labels = rng.integers(0, 7, 300)
    labels[:7] = np.arange(7)
    n_configs = len(build_grid("desk"))
    pools = {f"c{i:02d}": PredictionSet(profiles(labels * rng.uniform(0, 1) + rng.normal(size=300)), labels,
                                        np.arange(300).astype(str)) for i in range(n_configs - 1)}
    pools["best"] = PredictionSet(profiles(labels), labels, np.arange(300).astype(str))
    res = bbcd_dropout(pools, 0.05, 1000, seed=0)
    dominance = res.survivors == ["best"]

    fractions = []
    for seed in range(50):
        rng = np.random.default_rng([11, seed])
        labels = rng.integers(0, 7, 200)
        labels[:7] = np.arange(7)
        signal = labels * 0.3
        noise_pools = {c: PredictionSet(profiles(signal + rng.normal(size=200)), labels,
                                        np.arange(200).astype(str)) for c in range(20)}
        out = bbcd_dropout(noise_pools, 0.05, 200, seed=seed)
        fractions.append(len(out.survivors) / 20)
    mean_frac = float(np.mean(fractions))
    ok = dominance and mean_frac >= 0.9 * 0.05
    verdict(11, ok, f"dominant config leaves {len(res.survivors)} survivor of {n_configs}; "
            f"exchangeable configs keep {mean_frac:.2f} on average (alpha 0.05)")


# 12 ------------------------------------------------------------------------


def test_12_table4_direction():
    start = time.perf_counter()
    spec = default_cohort_spec(n=1550, seed=0)
    df, labels = generate_cohort(spec)
    schema = Schema(spec.schema)
    ids = df["patient_id"].to_numpy()
    plans = stratified_repeated_kfold(labels, 2, 5, seed=0, val_frac=0.15)
    est = {}
    for name, family, pset, depth in (("CPM", "polr", "concise", None), ("eCPM", "polr", "extended", None),
                                      ("APM", "apm_or", "concise", 1)):
        cfg = RunConfig(seed=0, repeats=2, folds=5, boot=1000, metrics=("orc",), predictor_set=pset,
                        token_set="all", max_depth=depth)
        est[name] = run_family(family, df, labels, ids, schema, plans, cfg).bbc
    elapsed = time.perf_counter() - start
    cpm, ecpm, apm = est["CPM"], est["eCPM"], est["APM"]
    ok = (apm.ci_low > cpm.ci_high and cpm.estimate < ecpm.estimate < apm.estimate and elapsed < 1800)
    verdict(12, ok, "BBC-CV ORC " + "; ".join(f"{k} {r.estimate:.3f} [{r.ci_low:.3f}, {r.ci_high:.3f}]"
                                            for k, r in est.items()) + f"; {elapsed / 60:.1f} min")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
