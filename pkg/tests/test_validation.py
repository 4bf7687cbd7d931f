import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from ordinalprog.exceptions import TooFewPerClass
from ordinalprog.metrics import PredictionSet, orc
from ordinalprog.validation import (PROFILE_COLUMNS, bbc_select, bbcd_dropout, bootstrap_ci, build_grid,
                                    pool_to_prediction_set, stratified_repeated_kfold, stratified_shuffle_split)

CUTS = np.array([-2.0, -1.0, -0.3, 0.3, 1.0, 2.0])


def make_pool(scores, labels, ids=None):
    q = expit(np.asarray(scores, float)[:, None] - CUTS[None, :])
    ids = np.arange(len(labels)).astype(str) if ids is None else ids
    return PredictionSet(q, np.asarray(labels), np.asarray(ids).astype(str))


def cohort_labels(n, seed):
    rng = np.random.default_rng(seed)
    labels = rng.choice(7, size=n, p=[0.2, 0.1, 0.15, 0.15, 0.1, 0.15, 0.15])
    labels[:35] = np.repeat(np.arange(7), 5)
    return labels


# ------------------------------------------------------------------ partitions


def test_hundred_plans_partition_each_repeat():
    labels = cohort_labels(300, 0)
    plans = stratified_repeated_kfold(labels, 20, 5, seed=1)
    assert len(plans) == 100
    for r in range(1, 21):
        tests = [p.test for p in plans if p.repeat == r]
        assert len(tests) == 5
        allrows = np.concatenate(tests)
        assert len(allrows) == 300 and len(np.unique(allrows)) == 300
    for p in plans:
        assert len(np.intersect1d(p.train, p.test)) == 0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 6))
def test_stratification_bound(seed, k):
    labels = cohort_labels(200, seed)
    glob = np.bincount(labels, minlength=7) / len(labels)
    for p in stratified_repeated_kfold(labels, 2, k, seed=seed):
        prop = np.bincount(labels[p.test], minlength=7) / len(p.test)
        assert np.all(np.abs(prop - glob) <= 1 / len(p.test) + 1e-12)


def test_perfect_stratification_small():
    labels = np.array([0] * 5 + [1] * 5)
    for p in stratified_repeated_kfold(labels, 3, 5, seed=2):
        assert sorted(labels[p.test]) == [0, 1]


def test_plans_deterministic():
    labels = cohort_labels(150, 3)
    a = stratified_repeated_kfold(labels, 2, 5, seed=4)
    b = stratified_repeated_kfold(labels, 2, 5, seed=4)
    c = stratified_repeated_kfold(labels, 2, 5, seed=5)
    assert all(np.array_equal(x.test, y.test) for x, y in zip(a, b))
    assert not all(np.array_equal(x.test, y.test) for x, y in zip(a, c))


def test_too_few_per_class():
    with pytest.raises(TooFewPerClass):
        stratified_repeated_kfold(np.array([0, 0, 0, 1, 1, 1, 1, 1]), 1, 5)


def test_shuffle_split():
    rows = np.arange(100)
    labels = np.repeat([0, 1, 2, 3], 25)
    tr, val = stratified_shuffle_split(rows, labels, 0.15, seed=0)
    assert len(val) == 15 and len(tr) == 85
    assert len(np.intersect1d(tr, val)) == 0
    counts = np.bincount(labels[val], minlength=4)
    assert np.all(np.abs(counts - 15 / 4) <= 1)
    with pytest.raises(TooFewPerClass):
        stratified_shuffle_split(rows, np.zeros(100, int), 0.15)


def test_validation_within_train():
    labels = cohort_labels(200, 6)
    for p in stratified_repeated_kfold(labels, 2, 5, seed=0, val_frac=0.15):
        assert np.all(np.isin(p.validation, p.train))
        assert len(p.validation) == round(0.15 * len(p.train))


# ------------------------------------------------------------------- bootstrap


def _oracle_percentile_bootstrap(scores, labels, B, seed):
    """Row-level redraw with the same per-resample generators; percentiles by
    explicit order statistics with linear interpolation."""
    n = len(labels)
    patients = sorted(str(i) for i in range(n))  # resampler indexes patients in sorted-id order
    vals = []
    for b in range(B):
        rng = np.random.default_rng([seed, b])
        idx = np.array([int(patients[k]) for k in rng.integers(0, n, size=n)])
        vals.append(orc(make_pool(scores[idx], labels[idx])))
    vals = sorted(vals)

    def pct(p):
        h = (len(vals) - 1) * p
        lo = int(np.floor(h))
        hi = min(lo + 1, len(vals) - 1)
        return vals[lo] + (h - lo) * (vals[hi] - vals[lo])

    return sum(vals) / len(vals), pct(0.025), pct(0.975)


def test_bootstrap_matches_second_implementation():
    labels = cohort_labels(150, 7)
    scores = labels * 0.4 + np.random.default_rng(0).normal(size=150)
    rep = bootstrap_ci(make_pool(scores, labels), "orc", n_resamples=200, seed=11)
    mean, lo, hi = _oracle_percentile_bootstrap(scores, labels, 200, 11)
    assert rep.estimate == pytest.approx(mean, abs=1e-12)
    assert rep.ci_low == pytest.approx(lo, abs=1e-12)
    assert rep.ci_high == pytest.approx(hi, abs=1e-12)
    assert rep.n_resamples == 200


def test_bootstrap_degenerate_and_single():
    labels = cohort_labels(80, 1)
    rep = bootstrap_ci(make_pool(np.zeros(80), labels), "orc", n_resamples=50, seed=0)
    assert rep.estimate == rep.ci_low == rep.ci_high == 0.5
    pool = make_pool(labels + np.random.default_rng(1).normal(size=80), labels)
    one = bootstrap_ci(pool, "orc", n_resamples=1, seed=3)
    rng = np.random.default_rng([3, 0])
    patients = np.array(sorted(str(i) for i in range(80))).astype(int)
    rows = patients[rng.integers(0, 80, 80)]
    assert one.estimate == pytest.approx(orc(pool.take(rows)))


def test_bootstrap_deterministic():
    labels = cohort_labels(100, 2)
    pool = make_pool(labels + np.random.default_rng(2).normal(size=100), labels)
    a = bootstrap_ci(pool, "generalized_c", 100, seed=5)
    b = bootstrap_ci(pool, "generalized_c", 100, seed=5)
    assert a == b


def test_bootstrap_groups_patient_rows():
    # the same patient predicted in two repeats is drawn as one unit
    labels = cohort_labels(60, 4)
    s = labels + np.random.default_rng(0).normal(size=60)
    ids = np.arange(60).astype(str)
    pool = make_pool(np.concatenate([s, s + 0.1]), np.concatenate([labels, labels]), np.concatenate([ids, ids]))
    single = make_pool(s, labels, ids)
    a = bootstrap_ci(pool, "threshold_c:2", 30, seed=1)
    assert a.n_resamples == 30
    # identical copies reproduce the single-pool bootstrap exactly
    twin = make_pool(np.concatenate([s, s]), np.concatenate([labels, labels]), np.concatenate([ids, ids]))
    assert bootstrap_ci(twin, "threshold_c:2", 30, seed=1).estimate == pytest.approx(
        bootstrap_ci(single, "threshold_c:2", 30, seed=1).estimate, abs=1e-12)


def test_pool_frame_round_trip():
    labels = cohort_labels(40, 0)
    pool = make_pool(labels.astype(float), labels)
    df = pd.DataFrame(pool.profiles, columns=PROFILE_COLUMNS)
    df["patient_id"] = pool.ids
    df["true_category"] = labels
    back = pool_to_prediction_set(df)
    np.testing.assert_array_equal(back.profiles, pool.profiles)
    assert bootstrap_ci(df, "orc", 20, seed=0) == bootstrap_ci(pool, "orc", 20, seed=0)


# ---------------------------------------------------------------------- BBC-CV


def test_bbc_single_config_is_out_of_bag_bootstrap():
    labels = cohort_labels(120, 8)
    pool = make_pool(labels * 0.5 + np.random.default_rng(3).normal(size=120), labels)
    chosen, rep = bbc_select({"a": pool}, "orc", 100, seed=9)
    oob = bootstrap_ci(pool, "orc", 100, seed=9, out_of_bag=True)
    assert chosen == "a"
    assert (rep.estimate, rep.ci_low, rep.ci_high, rep.n_resamples) == (
        oob.estimate, oob.ci_low, oob.ci_high, oob.n_resamples)


def test_bbc_dominant_config():
    labels = cohort_labels(120, 9)
    good = make_pool(labels.astype(float), labels)
    bad = make_pool(-labels.astype(float), labels)
    chosen, rep = bbc_select({"bad": bad, "good": good}, "orc", 100, seed=0)
    assert chosen == "good"
    oob = bootstrap_ci(good, "orc", 100, seed=0, out_of_bag=True)
    assert rep.estimate == oob.estimate == 1.0


def test_bbc_corrects_winners_curse():
    lower = 0
    gaps = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        labels = rng.integers(0, 2, 60) * 6
        pools = {c: make_pool(rng.normal(size=60), labels) for c in range(10)}
        naive = max(_two_class_c(p) for p in pools.values())
        _, rep = bbc_select(pools, "threshold_c:0", 60, seed=seed)
        lower += rep.estimate <= naive
        gaps.append(naive - rep.estimate)
    assert lower >= 95
    assert np.mean(gaps) > 0.05


def _two_class_c(p):
    from ordinalprog.metrics import threshold_c
    return threshold_c(p, 0)


# ----------------------------------------------------------------------- BBCD


def test_bbcd_ties_survive_and_dominated_drop():
    labels = cohort_labels(150, 10)
    s = labels * 0.5 + np.random.default_rng(1).normal(size=150)
    best = make_pool(s, labels)
    pools = {"opt": best, "twin": make_pool(s, labels), "worse": make_pool(-labels.astype(float), labels)}
    res = bbcd_dropout(pools, alpha=0.05, n_resamples=200, seed=0)
    assert res.optimal == "opt"
    assert set(res.survivors) == {"opt", "twin"}


def test_bbcd_never_drops_optimum():
    rng = np.random.default_rng(0)
    labels = cohort_labels(100, 11)
    pools = {c: make_pool(labels * (c / 10) + rng.normal(size=100), labels) for c in range(8)}
    res = bbcd_dropout(pools, 0.05, 100, seed=1)
    assert res.optimal in res.survivors
    assert res.win_fraction[res.optimal] == 1.0


def test_bbcd_rounds_monotone():
    # 78 configurations with graded skill; validation pools grow by one
    # repeat per round and only survivors continue
    rng = np.random.default_rng(4)
    labels = cohort_labels(150, 12)
    skill = rng.uniform(0, 1, len(build_grid("desk")))
    active = list(range(len(skill)))
    counts = [len(active)]
    pools = {c: [] for c in active}
    for rnd in range(3):
        for c in active:
            pools[c].append(labels * skill[c] + rng.normal(size=150))
        ids = np.tile(np.arange(150).astype(str), rnd + 1)
        lab = np.tile(labels, rnd + 1)
        sets = {c: make_pool(np.concatenate(pools[c]), lab, ids) for c in active}
        res = bbcd_dropout(sets, 0.05, 100, seed=rnd)
        active = res.survivors
        counts.append(len(active))
    assert all(a >= b for a, b in zip(counts, counts[1:]))
    assert counts[-1] < counts[0]


# ------------------------------------------------------------------------ grid


def test_grid_sizes():
    full = build_grid("paper")
    assert len(full) == 2184
    assert sum(len(c.widths) == 1 for c in full) == 6
    desk = build_grid("desk")
    assert len(desk) == 78
    assert {w for c in desk for w in c.widths} == {8, 16, 32}
    assert {c.dropout for c in desk} == {0.0, 0.2}
    assert len(build_grid("desk", max_depth=1)) == 6
    with pytest.raises(ValueError):
        build_grid("huge")
