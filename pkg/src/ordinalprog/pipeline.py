"""End-to-end cross-validated runs.

partition -> impute/encode or tokenise -> train every active configuration
-> pool out-of-fold predictions -> configuration dropout between repeats
-> bias-corrected selection -> bootstrap metrics and calibration curves.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .io import Schema, records
from .metrics import GREATER_IS_BETTER, PredictionSet, ici, lowess_curve
from .models import model_to_dict, train_mnlr, train_polr
from .models.network import train_apm, train_deep, with_seed
from .preprocess import DesignEncoder, apply_pmm, fit_pmm
from .tokenizer import Tokenizer, encode_patient, fit_dictionary
from .validation import (PROFILE_COLUMNS, bbc_select, bbcd_dropout, bootstrap_ci, build_grid, save_plans,
                         stratified_repeated_kfold)

log = logging.getLogger("ordinalprog")

FAMILIES = {
    "mnlr": ("linear", "multinomial"),
    "polr": ("linear", "ordinal"),
    "deep_mn": ("deep", "multinomial"),
    "deep_or": ("deep", "ordinal"),
    "apm_mn": ("apm", "multinomial"),
    "apm_or": ("apm", "ordinal"),
}

DEFAULT_METRICS = (["orc", "generalized_c", "somers_dxy"]
                   + [f"threshold_c:{t}" for t in range(6)]
                   + [f"calibration_slope:{t}" for t in range(6)]
                   + [f"ici:{t}" for t in range(6)])


@dataclass
class RunConfig:
    seed: int = 0
    repeats: int = 20
    folds: int = 5
    val_frac: float = 0.15
    boot: int = 1000
    alpha: float = 0.05
    grid: str = "desk"
    models: tuple = ("mnlr", "polr")
    predictor_set: str = "concise"
    token_set: str = "all"
    jobs: int = 1
    dropout_after: tuple | None = None  # repeats after which dropout runs; None = every repeat but the last
    max_depth: int | None = None
    max_epochs: int = 200
    lam: float = 1e-4
    metrics: tuple = tuple(DEFAULT_METRICS)

    def validate(self):
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.repeats < 1 or self.folds < 2:
            raise ValueError("need repeats >= 1 and folds >= 2")
        if not 0.0 < self.val_frac < 1.0:
            raise ValueError("val-frac must lie in (0, 1)")
        if self.boot < 1:
            raise ValueError("boot must be at least 1")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.grid not in ("paper", "desk"):
            raise ValueError(f"unknown grid profile {self.grid!r}")
        unknown = [m for m in self.models if m not in FAMILIES]
        if unknown or not self.models:
            raise ValueError(f"unknown model families {unknown}; choose from {sorted(FAMILIES)}")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")
        return self

    def dropout_rounds(self) -> set:
        if self.dropout_after is None:
            return set(range(1, self.repeats))
        return {int(r) for r in self.dropout_after if 1 <= int(r) <= self.repeats}


def derive_seed(*keys) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


# --------------------------------------------------------------------------
# per-partition inputs
# --------------------------------------------------------------------------


def _impute_encode(df: pd.DataFrame, specs, fit_rows, other_rows: list, seed: int):
    """Impute from ``fit_rows`` (PMM fitted there), encode every row set with
    training statistics. Returns the encoder and the matrices."""
    cols = [s.name for s in specs]
    fit_df = df.iloc[fit_rows][cols]
    if fit_df.isna().any().any() or any(df.iloc[r][cols].isna().any().any() for r in other_rows):
        imputer = fit_pmm(fit_df, specs, seed=seed)
        fit_df = imputer.train_completed
        others = [apply_pmm(imputer, df.iloc[r][cols], rng=np.random.default_rng([seed, i + 1]))
                  for i, r in enumerate(other_rows)]
    else:
        others = [df.iloc[r][cols] for r in other_rows]
    enc = DesignEncoder(specs).fit(fit_df)
    return enc, enc.transform(fit_df), [enc.transform(o) for o in others]


def _tokenise(df: pd.DataFrame, specs, fit_rows, other_rows: list):
    tok = Tokenizer(specs).fit(records(df.iloc[fit_rows], specs))
    fit_tokens = [tok.tokens(r) for r in records(df.iloc[fit_rows], specs)]
    dictionary = fit_dictionary(fit_tokens)
    fit_p = [encode_patient(t, dictionary) for t in fit_tokens]
    others = [[encode_patient(tok.tokens(r), dictionary) for r in records(df.iloc[rows], specs)]
              for rows in other_rows]
    return tok, dictionary, fit_p, others


@dataclass
class _Prepared:
    kind: str
    fit: object
    y_fit: np.ndarray
    val: object
    y_val: np.ndarray | None
    test: object
    meta: dict


def prepare(kind: str, df, labels, schema: Schema, plan, cfg: RunConfig) -> _Prepared:
    seed = derive_seed(cfg.seed, plan.repeat, plan.fold, 11)
    if kind == "linear":
        specs = schema.subset(cfg.predictor_set)
        enc, X, (X_test,) = _impute_encode(df, specs, plan.train, [plan.test], seed)
        return _Prepared(kind, X, labels[plan.train], None, None, X_test, {"encoder": enc.to_dict()})
    fit_rows = plan.train_fit
    if kind == "deep":
        specs = schema.subset(cfg.predictor_set)
        enc, X, (X_val, X_test) = _impute_encode(df, specs, fit_rows, [plan.validation, plan.test], seed)
        return _Prepared(kind, X, labels[fit_rows], X_val, labels[plan.validation], X_test,
                         {"encoder": enc.to_dict()})
    specs = schema.subset(cfg.token_set)
    tok, dictionary, fit_p, (val_p, test_p) = _tokenise(df, specs, fit_rows, [plan.validation, plan.test])
    return _Prepared(kind, fit_p, labels[fit_rows], val_p, labels[plan.validation], test_p,
                     {"tokenizer": tok.to_dict(), "dictionary": list(dictionary.tokens),
                      "vocab_size": len(dictionary)})


def _train_one(family: str, config, prep: _Prepared, lam: float):
    kind, encoding = FAMILIES[family]
    if kind == "linear":
        model = (train_mnlr if encoding == "multinomial" else train_polr)(prep.fit, prep.y_fit, lam=lam)
        return None, model.predict_profile(prep.test), model
    if kind == "deep":
        model = train_deep(prep.fit, prep.y_fit, config, prep.val, prep.y_val)
    else:
        model = train_apm(prep.fit, prep.y_fit, config, prep.val, prep.y_val, prep.meta["vocab_size"])
    return model.predict_profile(prep.val), model.predict_profile(prep.test), model


def _task(args):
    family, ci, config, prep, lam = args
    try:
        val, test, model = _train_one(family, config, prep, lam)
        return ci, val, test, model_to_dict(model), None
    except Exception as exc:  # recorded per partition, the run continues
        return ci, None, None, None, f"{type(exc).__name__}: {exc}"


def _pool_frame(config_id, ids, repeat, profiles, labels) -> pd.DataFrame:
    frame = pd.DataFrame(np.asarray(profiles), columns=PROFILE_COLUMNS)
    frame.insert(0, "repeat", repeat)
    frame.insert(0, "patient_id", np.asarray(ids).astype(str))
    frame.insert(0, "config_id", config_id)
    frame["true_category"] = np.asarray(labels, dtype=int)
    return frame


# --------------------------------------------------------------------------
# one model family
# --------------------------------------------------------------------------


@dataclass
class FamilyResult:
    family: str
    chosen: str
    configs: dict
    survivors_per_round: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    test_pool: pd.DataFrame | None = None
    val_pool: pd.DataFrame | None = None
    models: list = field(default_factory=list)
    bbc: object = None
    reports: list = field(default_factory=list)
    curves: dict = field(default_factory=dict)


def run_family(family: str, df, labels, ids, schema, plans, cfg: RunConfig, executor=None) -> FamilyResult:
    kind, encoding = FAMILIES[family]
    if kind == "linear":
        configs = {"linear": None}
    else:
        grid = build_grid(cfg.grid, encoding, cfg.max_depth, max_epochs=cfg.max_epochs)
        configs = {f"c{i:04d}": c for i, c in enumerate(grid)}
    active = list(configs)
    test_parts = {c: [] for c in configs}
    val_parts = {c: [] for c in configs}
    models = {c: [] for c in configs}
    failures, rounds = [], []
    dropout_rounds = cfg.dropout_rounds()
    log.info("%s: %d configuration(s), %d partitions", family, len(configs), len(plans))

    for r in sorted({p.repeat for p in plans}):
        for plan in (p for p in plans if p.repeat == r):
            prep = prepare(kind, df, labels, schema, plan, cfg)
            tasks = []
            for cid in active:
                conf = configs[cid]
                if conf is not None:
                    conf = with_seed(conf, derive_seed(cfg.seed, plan.repeat, plan.fold, int(cid[1:])))
                tasks.append((family, cid, conf, prep, cfg.lam))
            results = executor.map(_task, tasks) if executor is not None else map(_task, tasks)
            for cid, val, test, model, err in results:
                if err is not None:
                    failures.append({"family": family, "config_id": cid, "repeat": plan.repeat,
                                     "fold": plan.fold, "error": err})
                    log.warning("%s %s r%d f%d failed: %s", family, cid, plan.repeat, plan.fold, err)
                    continue
                test_parts[cid].append(_pool_frame(cid, ids[plan.test], plan.repeat, test, labels[plan.test]))
                if val is not None:
                    val_parts[cid].append(_pool_frame(cid, ids[plan.validation], plan.repeat, val,
                                                      labels[plan.validation]))
                model["metadata"].update({"family": family, "config_id": cid, "repeat": plan.repeat,
                                          "fold": plan.fold, "test_ids": [str(i) for i in ids[plan.test]],
                                          **prep.meta})
                models[cid].append(model)
        if len(configs) > 1:
            # a configuration that failed anywhere has an incomplete pool
            failed = {f["config_id"] for f in failures}
            active = [c for c in active if c not in failed]
        if r in dropout_rounds and len(active) > 1:
            pools = {c: pd.concat(val_parts[c], ignore_index=True) for c in active}
            res = bbcd_dropout(pools, cfg.alpha, cfg.boot, derive_seed(cfg.seed, r, 23))
            for c in set(active) - set(res.survivors):
                models[c] = []
            active = list(res.survivors)
            rounds.append({"after_repeat": r, "optimal": res.optimal, "survivors": len(active)})
            log.info("%s: dropout after repeat %d leaves %d configuration(s)", family, r, len(active))

    usable = [c for c in active if test_parts[c]]
    if not usable:
        return FamilyResult(family, "", {}, rounds, failures)
    test_pools = {c: pd.concat(test_parts[c], ignore_index=True) for c in usable}
    if len(usable) > 1:
        lengths = {len(p) for p in test_pools.values()}
        if len(lengths) > 1:
            keep = max(lengths)
            test_pools = {c: p for c, p in test_pools.items() if len(p) == keep}
    chosen, bbc = bbc_select(test_pools, "orc", cfg.boot, cfg.seed)
    result = FamilyResult(family, chosen, {c: (asdict(configs[c]) if configs[c] is not None else None)
                                           for c in test_pools},
                          rounds, failures, pd.concat(test_pools.values(), ignore_index=True))
    if any(val_parts[c] for c in test_pools):
        result.val_pool = pd.concat([pd.concat(val_parts[c]) for c in test_pools if val_parts[c]],
                                    ignore_index=True)
    result.models = models[chosen]
    result.bbc = bbc
    chosen_pool = test_pools[chosen]
    for name in cfg.metrics:
        base, _, t = name.partition(":")
        greater = GREATER_IS_BETTER.get(base)
        rep = bootstrap_ci(chosen_pool, name, cfg.boot, cfg.seed, threshold=t or None)
        d = rep.to_dict()
        d["greater_is_better"] = greater
        result.reports.append(d)
    preds = PredictionSet(chosen_pool[PROFILE_COLUMNS].to_numpy(float), chosen_pool["true_category"].to_numpy(int))
    for t in range(6):
        try:
            curve = lowess_curve(preds, t)
            result.curves[t] = curve
            log.info("%s: threshold %d ICI %.4f", family, t, ici(curve))
        except Exception as exc:
            failures.append({"family": family, "config_id": chosen, "curve": t, "error": str(exc)})
    return result


# --------------------------------------------------------------------------
# writing
# --------------------------------------------------------------------------


def write_family(result: FamilyResult, out: Path):
    fam = out / result.family
    (fam / "curves").mkdir(parents=True, exist_ok=True)
    (fam / "models").mkdir(exist_ok=True)
    if result.test_pool is not None:
        result.test_pool.to_csv(fam / "predictions_test.csv", index=False, float_format="%.10g")
    if result.val_pool is not None:
        result.val_pool.to_csv(fam / "predictions_val.csv", index=False, float_format="%.10g")
    metrics = {"family": result.family, "chosen_config": result.chosen,
               "chosen_settings": result.configs.get(result.chosen),
               "bbc_cv": result.bbc.to_dict() if result.bbc is not None else None,
               "bootstrap": result.reports, "dropout_rounds": result.survivors_per_round,
               "n_failures": len(result.failures)}
    (fam / "metrics.json").write_text(json.dumps(metrics, indent=1))
    for t, curve in result.curves.items():
        curve.to_csv(fam / "curves" / f"threshold_{t + 1}.csv")
    for m in result.models:
        meta = m["metadata"]
        with open(fam / "models" / f"r{meta['repeat']:02d}_f{meta['fold']:02d}.json", "w") as fh:
            json.dump(m, fh)


def run(df: pd.DataFrame, labels, schema: Schema, cfg: RunConfig, out) -> dict:
    """Execute the configured run and write everything under ``out``.

    Returns the manifest; ``manifest["failures"]`` lists per-partition
    training failures (the run itself keeps going).
    """
    cfg.validate()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    ids = df[schema.id_column].astype(str).to_numpy()
    labels = np.asarray(labels, dtype=int)
    plans = stratified_repeated_kfold(labels, cfg.repeats, cfg.folds, cfg.seed, cfg.val_frac)
    save_plans(plans, out / "partitions.json", ids)
    families, failures = {}, []
    executor = ProcessPoolExecutor(cfg.jobs) if cfg.jobs > 1 else None
    try:
        for family in cfg.models:
            result = run_family(family, df, labels, ids, schema, plans, cfg, executor)
            write_family(result, out)
            failures += result.failures
            orc_report = result.bbc.to_dict() if result.bbc is not None else None
            families[family] = {"chosen_config": result.chosen, "bbc_orc": orc_report,
                                "dropout_rounds": result.survivors_per_round}
    finally:
        if executor is not None:
            executor.shutdown()
    manifest = {"version": __version__, "config": {**asdict(cfg), "models": list(cfg.models)},
                "n_patients": int(len(df)), "n_partitions": len(plans),
                "schema": schema.to_dict(), "families": families, "failures": failures}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, default=list))
    return manifest
