"""Reading cohort CSV files and their schema JSON."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .outcome import SCALE
from .tokenizer import PredictorSpec


@dataclass
class Schema:
    predictors: list
    id_column: str = "patient_id"
    outcome_column: str = "GOSE"

    def subset(self, name: str) -> list:
        """Predictors in a named set; ``all`` returns every predictor."""
        if name == "all":
            return list(self.predictors)
        chosen = [p for p in self.predictors if name in p.sets]
        if not chosen:
            raise ValueError(f"no predictors belong to set {name!r}")
        return chosen

    def to_dict(self) -> dict:
        return {"id_column": self.id_column, "outcome_column": self.outcome_column,
                "predictors": [p.to_dict() for p in self.predictors]}


def read_schema(path) -> Schema:
    with open(path) as fh:
        d = json.load(fh)
    return Schema([PredictorSpec.from_dict(p) for p in d["predictors"]],
                  d.get("id_column", "patient_id"), d.get("outcome_column", "GOSE"))


def read_cohort(path, schema: Schema) -> tuple[pd.DataFrame, np.ndarray]:
    """Cohort table with typed columns, plus integer outcome labels 0..6."""
    dtypes = {schema.id_column: str, schema.outcome_column: str}
    for p in schema.predictors:
        dtypes[p.name] = float if p.kind == "continuous" else str
    df = pd.read_csv(path, dtype=dtypes, keep_default_na=True)
    missing = [c for c in dtypes if c not in df.columns]
    if missing:
        raise ValueError(f"cohort file lacks columns {missing}")
    for p in schema.predictors:
        if p.kind != "continuous":
            df[p.name] = df[p.name].astype(object)
    labels = np.array([SCALE.category_index(v) for v in df[schema.outcome_column]], dtype=int)
    return df, labels


def records(df: pd.DataFrame, specs) -> list[dict]:
    """Row dicts restricted to the given predictors, NaN for missing."""
    names = [s.name for s in specs]
    return df[names].to_dict("records")
