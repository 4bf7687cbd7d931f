"""Synthetic cohorts with a known ordered-logit outcome mechanism.

Every predictor shifts a latent score ``eta``; the outcome category is the
number of thresholds the noisy score ``eta + e`` (standard logistic ``e``)
exceeds, so ``Pr(y > t | x) = sigmoid(eta - theta_t)`` exactly.

Predictors come in three tiers. Concise predictors mirror the usual
admission baseline and are available to every model. Extended predictors
are categorical signals added to the concise set for the extended
regression model. Token-only predictors (free text, high-cardinality codes)
reach only the token-embedding model. Noise predictors carry no signal.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

import numpy as np
import pandas as pd
from scipy.optimize import brentq
from scipy.special import expit, logit

from .outcome import CATEGORIES, N_THRESHOLDS
from .tokenizer import PredictorSpec

# marginal outcome proportions over categories 1, 2or3, 4, 5, 6, 7, 8
TARGET_PROPORTIONS = (0.205, 0.169, 0.077, 0.146, 0.129, 0.133, 0.140)
CHUNK = 1000
ID_COLUMN = "patient_id"
OUTCOME_COLUMN = "GOSE"


@dataclass(frozen=True)
class SyntheticPredictor:
    """One generated column.

    ``kind`` is ``continuous`` (normal with ``mean``/``sd``; latent shift is
    ``effect`` per SD), ``binary`` (``probs[1]`` chance of 1; shift
    ``effect``), ``categorical`` or ``text`` (``levels`` drawn with
    ``probs``; shift ``level_effects[level]``). ``driver`` makes missingness
    depend on another column (MAR); otherwise it is MCAR.
    """

    name: str
    kind: str
    tier: str = "concise"  # concise | extended | token | noise
    category: str = "Emergency care and ICU admission"
    effect: float = 0.0
    levels: tuple = ()
    probs: tuple = ()
    level_effects: tuple = ()
    mean: float = 0.0
    sd: float = 1.0
    missing: float = 0.0
    driver: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.missing < 1.0:
            raise ValueError(f"{self.name}: missingness rate must lie in [0, 1)")
        if self.kind in ("categorical", "text"):
            if len(self.levels) != len(self.probs) or len(self.levels) != len(self.level_effects):
                raise ValueError(f"{self.name}: levels, probs and level_effects must align")

    def schema(self) -> PredictorSpec:
        sets = {"concise": ("concise", "extended"), "extended": ("extended",)}.get(self.tier, ())
        if self.kind == "continuous":
            return PredictorSpec(self.name, "continuous", self.category, sets=sets)
        if self.kind == "binary":
            return PredictorSpec(self.name, "categorical", self.category, levels=(0, 1), sets=sets)
        if self.kind == "categorical":
            return PredictorSpec(self.name, "categorical", self.category, levels=self.levels, sets=sets)
        return PredictorSpec(self.name, "text", self.category, sets=sets)


@dataclass(frozen=True)
class CohortSpec:
    predictors: tuple
    thresholds: tuple
    n: int = 1550
    seed: int = 0

    def __post_init__(self):
        th = np.asarray(self.thresholds, dtype=float)
        if th.shape != (N_THRESHOLDS,) or np.any(np.diff(th) < 0):
            raise ValueError("need 6 non-decreasing thresholds")
        names = [p.name for p in self.predictors]
        if len(set(names)) != len(names):
            raise ValueError("duplicate predictor names")
        for p in self.predictors:
            if p.driver is not None and p.driver not in names:
                raise ValueError(f"{p.name}: unknown missingness driver {p.driver!r}")

    @property
    def schema(self) -> list[PredictorSpec]:
        return [p.schema() for p in self.predictors]

    def scaled(self, factor: float) -> "CohortSpec":
        """Same cohort with every effect multiplied by ``factor``."""
        preds = tuple(replace(p, effect=p.effect * factor,
                              level_effects=tuple(e * factor for e in p.level_effects))
                      for p in self.predictors)
        return replace(self, predictors=preds)

    def to_dict(self) -> dict:
        return {"n": self.n, "seed": self.seed, "thresholds": list(self.thresholds),
                "predictors": [asdict(p) for p in self.predictors]}

    @classmethod
    def from_dict(cls, d: dict) -> "CohortSpec":
        preds = []
        for p in d["predictors"]:
            p = dict(p)
            for k in ("levels", "probs", "level_effects"):
                p[k] = tuple(p.get(k, ()))
            preds.append(SyntheticPredictor(**p))
        return cls(tuple(preds), tuple(d["thresholds"]), d["n"], d["seed"])


def _cat(name, kind, tier, category, levels, probs, effects, **kw):
    return SyntheticPredictor(name, kind, tier, category, levels=tuple(levels), probs=tuple(probs),
                              level_effects=tuple(effects), **kw)


def default_predictors(missing: float = 0.0) -> tuple:
    """Ten concise admission predictors, four extended signals, two token-only
    signals and three noise columns."""
    em, img, inj, lab, demo = ("Emergency care and ICU admission", "Brain imaging",
                               "Injury characteristics and severity", "Laboratory measurements",
                               "Demographics and socioeconomic status")
    m = missing
    return (
        SyntheticPredictor("Age", "continuous", "concise", demo, effect=-0.7, mean=50.0, sd=19.0),
        _cat("GCSm", "categorical", "concise", em, range(1, 7), (0.25, 0.07, 0.07, 0.12, 0.22, 0.27),
             (-1.0, -0.8, -0.6, -0.3, 0.0, 0.3), missing=m, driver="Age"),
        _cat("UnreactivePupils", "categorical", "concise", em, ("none", "one", "two"),
             (0.78, 0.09, 0.13), (0.0, -0.5, -1.1), missing=m),
        SyntheticPredictor("Hypoxia", "binary", "concise", em, effect=-0.35, probs=(0.85, 0.15),
                           missing=m),
        SyntheticPredictor("Hypotension", "binary", "concise", em, effect=-0.4, probs=(0.85, 0.15),
                           missing=m),
        _cat("MarshallCT", "categorical", "concise", img, range(1, 7), (0.15, 0.35, 0.1, 0.05, 0.3, 0.05),
             (0.4, 0.2, -0.3, -0.6, -0.2, -0.5), missing=m, driver="Age"),
        SyntheticPredictor("tSAH", "binary", "concise", img, effect=-0.45, probs=(0.35, 0.65), missing=m),
        SyntheticPredictor("EDH", "binary", "concise", img, effect=0.2, probs=(0.8, 0.2), missing=m),
        SyntheticPredictor("Glucose", "continuous", "concise", lab, effect=-0.25, mean=8.0, sd=2.5,
                           missing=m, driver="Age"),
        SyntheticPredictor("Hb", "continuous", "concise", lab, effect=0.2, mean=13.0, sd=2.0, missing=m),
        # extended admission signals
        _cat("GFAPBand", "categorical", "extended", "Protein biomarkers", range(1, 6), (0.2,) * 5,
             (0.6, 0.3, 0.0, -0.3, -0.6)),
        _cat("NFLBand", "categorical", "extended", "Protein biomarkers", range(1, 6), (0.2,) * 5,
             (0.5, 0.25, 0.0, -0.25, -0.5)),
        _cat("ISSBand", "categorical", "extended", inj, range(1, 5), (0.25,) * 4, (0.45, 0.15, -0.15, -0.45)),
        _cat("Employment", "categorical", "extended", demo, ("employed", "retired", "student", "unemployed"),
             (0.5, 0.25, 0.1, 0.15), (0.3, -0.2, 0.3, -0.3)),
        # token-only signals
        _cat("ICUNote", "text", "token", "End-of-day assessments",
             ("Stable, weaning sedation", "Refractory ICP", "Extubated and alert", "Seizure activity",
              "Awaiting neurosurgery", "Family meeting held"),
             (0.2, 0.15, 0.2, 0.15, 0.15, 0.15), (0.4, -0.9, 0.9, -0.6, -0.3, 0.0)),
        _cat("TILMax", "categorical", "token", "ICU monitoring and management", range(0, 10), (0.1,) * 10,
             (0.8, 0.6, 0.4, 0.2, 0.0, -0.1, -0.3, -0.5, -0.7, -0.9)),
        # noise
        _cat("Site", "categorical", "noise", "Transitions of care", range(1, 9), (0.125,) * 8, (0.0,) * 8),
        SyntheticPredictor("Sodium", "continuous", "noise", lab, mean=140.0, sd=4.0, missing=m),
        _cat("Shift", "text", "noise", "Bihourly assessments", ("day", "night"), (0.5, 0.5), (0.0, 0.0)),
    )


# --------------------------------------------------------------------------
# generation
# --------------------------------------------------------------------------


def _draw_columns(predictors, n: int, rng: np.random.Generator) -> tuple[dict, np.ndarray]:
    """Complete columns plus the latent score."""
    cols, eta = {}, np.zeros(n)
    for p in predictors:
        if p.kind == "continuous":
            x = rng.normal(p.mean, p.sd, n)
            eta += p.effect * (x - p.mean) / p.sd
            cols[p.name] = np.round(x, 3)
        elif p.kind == "binary":
            x = (rng.random(n) < p.probs[1]).astype(int)
            eta += p.effect * x
            cols[p.name] = x
        else:
            code = rng.choice(len(p.levels), size=n, p=np.asarray(p.probs) / np.sum(p.probs))
            eta += np.asarray(p.level_effects, dtype=float)[code]
            cols[p.name] = np.asarray(p.levels, dtype=object)[code]
    return cols, eta


def _standardised(values) -> np.ndarray:
    try:
        x = np.asarray(values, dtype=float)
    except (TypeError, ValueError):
        _, x = np.unique(np.asarray(values, dtype=str), return_inverse=True)
        x = x.astype(float)
    sd = x.std()
    return (x - x.mean()) / sd if sd > 0 else np.zeros_like(x)


def _missing_mask(p: SyntheticPredictor, cols: dict, rng: np.random.Generator, n: int) -> np.ndarray:
    if p.missing == 0:
        return np.zeros(n, dtype=bool)
    u = rng.random(n)
    if p.driver is None:
        return u < p.missing
    prob = expit(logit(p.missing) + _standardised(cols[p.driver]))
    return u < prob


def _chunk(spec: CohortSpec, start: int, stop: int, chunk_id: int) -> pd.DataFrame:
    n = stop - start
    rng = np.random.default_rng([spec.seed, chunk_id, 0])
    cols, eta = _draw_columns(spec.predictors, n, rng)
    noise = rng.logistic(size=n)
    y = (eta[:, None] + noise[:, None] > np.asarray(spec.thresholds)[None, :]).sum(axis=1)
    mrng = np.random.default_rng([spec.seed, chunk_id, 1])
    masks = {p.name: _missing_mask(p, cols, mrng, n) for p in spec.predictors}
    df = pd.DataFrame({ID_COLUMN: [f"P{i:06d}" for i in range(start, stop)]})
    for p in spec.predictors:
        col = pd.Series(cols[p.name], dtype=object if p.kind in ("categorical", "text") else None)
        if masks[p.name].any():
            col = col.astype(object) if p.kind == "binary" else col
            col[masks[p.name]] = np.nan
        df[p.name] = col.to_numpy()
    df[OUTCOME_COLUMN] = np.asarray(CATEGORIES, dtype=object)[y]
    df["_y"] = y
    return df


def generate_cohort(spec: CohortSpec) -> tuple[pd.DataFrame, np.ndarray]:
    """Draw the cohort; returns the table and integer labels 0..6.

    Rows are produced in blocks of 1000 patients, each with its own derived
    random stream, so any id range can be regenerated independently.
    """
    parts = [_chunk(spec, s, min(s + CHUNK, spec.n), i) for i, s in enumerate(range(0, spec.n, CHUNK))]
    df = pd.concat(parts, ignore_index=True)
    labels = df.pop("_y").to_numpy(dtype=int)
    return df, labels


def latent_score(spec: CohortSpec, x: pd.DataFrame) -> np.ndarray:
    """``eta`` for complete rows (columns named after the predictors)."""
    eta = np.zeros(len(x))
    for p in spec.predictors:
        col = x[p.name]
        if p.kind == "continuous":
            eta += p.effect * (col.to_numpy(dtype=float) - p.mean) / p.sd
        elif p.kind == "binary":
            eta += p.effect * col.to_numpy(dtype=float)
        else:
            lookup = {str(lv): e for lv, e in zip(p.levels, p.level_effects)}
            eta += np.array([lookup[str(v)] for v in col], dtype=float)
    return eta


def oracle_profile(spec: CohortSpec, x: pd.DataFrame) -> np.ndarray:
    """True ``Pr(y > t | x)`` for each threshold, shape (n, 6)."""
    eta = latent_score(spec, x)
    return expit(eta[:, None] - np.asarray(spec.thresholds, dtype=float)[None, :])


def calibrate_thresholds(predictors, proportions=TARGET_PROPORTIONS, n_mc: int = 200_000, seed: int = 0) -> tuple:
    """Thresholds whose implied marginal category frequencies match ``proportions``."""
    p = np.asarray(proportions, dtype=float)
    p = p / p.sum()
    exceed = 1.0 - np.cumsum(p)[:-1]
    _, eta = _draw_columns(predictors, n_mc, np.random.default_rng([seed, 99]))
    out = []
    for target in exceed:
        out.append(brentq(lambda th: expit(eta - th).mean() - target, -30, 30, xtol=1e-10))
    return tuple(float(v) for v in np.maximum.accumulate(out))


def default_cohort_spec(n: int = 1550, seed: int = 0, missing: float = 0.0, signal: float = 1.0) -> CohortSpec:
    preds = CohortSpec(default_predictors(missing), (0.0,) * 6).scaled(signal).predictors
    return CohortSpec(preds, calibrate_thresholds(preds), n, seed)


def predictor_sets(spec: CohortSpec) -> dict:
    """Schema entries per model input set: ``concise``, ``extended`` and ``all``."""
    schema = spec.schema
    return {"concise": [s for s in schema if "concise" in s.sets],
            "extended": [s for s in schema if "extended" in s.sets],
            "all": schema}


# --------------------------------------------------------------------------
# files
# --------------------------------------------------------------------------


def schema_dict(spec: CohortSpec) -> dict:
    return {"id_column": ID_COLUMN, "outcome_column": OUTCOME_COLUMN,
            "predictors": [s.to_dict() for s in spec.schema]}


def write_cohort(spec: CohortSpec, out_dir, stem: str = "cohort") -> dict:
    """Write ``<stem>.csv``, ``<stem>_schema.json`` and ``<stem>_truth.json``."""
    from pathlib import Path

    out = Path(out_dir)
    if not out.is_dir():
        raise FileNotFoundError(f"output directory {out} does not exist")
    df, _ = generate_cohort(spec)
    paths = {"cohort": out / f"{stem}.csv", "schema": out / f"{stem}_schema.json",
             "truth": out / f"{stem}_truth.json"}
    df.to_csv(paths["cohort"], index=False)
    paths["schema"].write_text(json.dumps(schema_dict(spec), indent=1))
    paths["truth"].write_text(json.dumps(spec.to_dict(), indent=1))
    return paths
