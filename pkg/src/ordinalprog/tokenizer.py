"""Turn heterogeneous patient records into sets of string tokens.

Each predictor observation becomes one token:

* categorical  -> ``Name_Value`` (integer codes zero-padded, e.g. ``GCSTotalScore_04``)
* continuous   -> ``Name_BINk`` with k in 1..20 from training-set quantiles
* text         -> ``Name_`` + lower-cased alphanumerics of the text
* missing      -> ``Name_NA``
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .exceptions import EmptyTrainingSet, TooFewValues

UNRECOGNISED = "<unrecognised>"
MISSING = "NA"
KINDS = ("categorical", "continuous", "text")

PREDICTOR_CATEGORIES = (
    "Emergency care and ICU admission",
    "Brain imaging",
    "ICU monitoring and management",
    "Injury characteristics and severity",
    "End-of-day assessments",
    "Laboratory measurements",
    "Medical and behavioural history",
    "Medications",
    "Bihourly assessments",
    "Demographics and socioeconomic status",
    "Protein biomarkers",
    "Surgery",
    "Haemostatic markers",
    "Transitions of care",
)

_NON_ALNUM = re.compile(r"[^a-z0-9]")


@dataclass(frozen=True)
class PredictorSpec:
    """Schema entry for one predictor.

    ``levels`` lists the allowed values of a categorical predictor (needed for
    one-hot encoding); ``sets`` names the predictor sets it belongs to, e.g.
    ``("concise",)`` or ``("extended",)``. Every predictor is tokenised.
    """

    name: str
    kind: str
    category: str = PREDICTOR_CATEGORIES[0]
    levels: tuple | None = None
    width: int = 2
    sets: tuple = ()

    def __post_init__(self):
        if not self.name:
            raise ValueError("predictor name must be non-empty")
        if "_" in self.name:
            raise ValueError(f"predictor name {self.name!r} must not contain '_'")
        if self.kind not in KINDS:
            raise ValueError(f"unknown predictor kind {self.kind!r}")
        if self.category not in PREDICTOR_CATEGORIES:
            raise ValueError(f"unknown predictor category {self.category!r}")
        if self.levels is not None:
            object.__setattr__(self, "levels", tuple(self.levels))
        object.__setattr__(self, "sets", tuple(self.sets))

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind, "category": self.category,
             "width": self.width, "sets": list(self.sets)}
        if self.levels is not None:
            d["levels"] = list(self.levels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PredictorSpec":
        return cls(name=d["name"], kind=d["kind"],
                   category=d.get("category", PREDICTOR_CATEGORIES[0]),
                   levels=tuple(d["levels"]) if d.get("levels") is not None else None,
                   width=int(d.get("width", 2)), sets=tuple(d.get("sets", ())))


@dataclass(frozen=True)
class BinEdges:
    name: str
    cuts: tuple

    def __post_init__(self):
        cuts = tuple(float(c) for c in self.cuts)
        if any(b < a for a, b in zip(cuts, cuts[1:])):
            raise ValueError("cut points must be non-decreasing")
        object.__setattr__(self, "cuts", cuts)

    @property
    def n_bins(self) -> int:
        return len(self.cuts) + 1

    def assign(self, value) -> np.ndarray | int:
        """1-based bin of ``value``.

        Bins are left-closed, so a value equal to a single cut point goes to
        the bin above it. A value sitting on a run of tied cut points goes to
        the lowest bin touching the run (the bins inside the run are empty).
        Values outside the training range clamp to the first or last bin.
        """
        cuts = np.asarray(self.cuts)
        v = np.asarray(value, dtype=float)
        left = np.searchsorted(cuts, v, side="left")
        right = np.searchsorted(cuts, v, side="right")
        bins = left + 1 + (right - left == 1)
        return int(bins) if bins.ndim == 0 else bins

    def to_dict(self) -> dict:
        return {"name": self.name, "cuts": list(self.cuts)}

    @classmethod
    def from_dict(cls, d: dict) -> "BinEdges":
        return cls(d["name"], tuple(d["cuts"]))


@dataclass
class TokenDictionary:
    tokens: list = field(default_factory=lambda: [UNRECOGNISED])

    def __post_init__(self):
        if not self.tokens or self.tokens[0] != UNRECOGNISED:
            raise ValueError(f"index 0 must be {UNRECOGNISED!r}")
        self._index = {t: i for i, t in enumerate(self.tokens)}
        if len(self._index) != len(self.tokens):
            raise ValueError("duplicate tokens in dictionary")

    def __len__(self):
        return len(self.tokens)

    def lookup(self, token: str) -> int:
        return self._index.get(token, 0)

    def token_at(self, i: int) -> str:
        return self.tokens[i]

    def to_json(self) -> str:
        return json.dumps({"tokens": self.tokens})

    @classmethod
    def from_json(cls, text: str) -> "TokenDictionary":
        return cls(list(json.loads(text)["tokens"]))


@dataclass(frozen=True)
class TokenisedPatient:
    patient_id: str
    indices: tuple


def normalize_text(s: str) -> str:
    return _NON_ALNUM.sub("", str(s).lower())


def fit_quantile_bins(name: str, values, n_bins: int = 20) -> BinEdges:
    values = np.asarray(values, dtype=float)
    values = values[~np.isnan(values)]
    if len(values) < n_bins:
        raise TooFewValues(f"{name}: need at least {n_bins} observed values, got {len(values)}")
    probs = np.arange(1, n_bins) / n_bins
    return BinEdges(name, tuple(np.quantile(values, probs, method="linear")))


def is_missing(value) -> bool:
    if value is None:
        return True
    if isinstance(value, float) and math.isnan(value):
        return True
    return isinstance(value, str) and value.strip() == ""


def _format_categorical(value, width: int) -> str:
    if isinstance(value, (int, np.integer)) or (isinstance(value, (float, np.floating)) and float(value).is_integer()):
        return str(int(value)).zfill(width)
    s = str(value).strip()
    if re.fullmatch(r"-?\d+", s):
        return str(int(s)).zfill(width)
    return normalize_text(s)


def tokenize_value(spec: PredictorSpec, value, bins: BinEdges | None = None) -> str:
    if is_missing(value):
        return f"{spec.name}_{MISSING}"
    if spec.kind == "categorical":
        return f"{spec.name}_{_format_categorical(value, spec.width)}"
    if spec.kind == "continuous":
        if bins is None:
            raise ValueError(f"{spec.name}: continuous value needs fitted bins")
        return f"{spec.name}_BIN{bins.assign(float(value))}"
    return f"{spec.name}_{normalize_text(value)}"


def split_token(token: str) -> tuple[str, str] | None:
    """Parse ``Name_Value`` back into its parts; ``None`` if it has no separator."""
    name, sep, value = token.partition("_")
    if not sep or not name:
        return None
    return name, value


class Tokenizer:
    """Fits per-predictor quantile bins and tokenises records.

    Records are mappings ``predictor name -> value``; extra predictor values
    can be supplied as lists (e.g. several medications), each producing a
    token.
    """

    def __init__(self, specs, n_bins: int = 20):
        self.specs = list(specs)
        self.n_bins = n_bins
        self.bins: dict[str, BinEdges] = {}

    def fit(self, records):
        self.bins = {}
        for spec in self.specs:
            if spec.kind != "continuous":
                continue
            vals = [r.get(spec.name) for r in records]
            vals = [float(v) for v in vals if not is_missing(v)]
            self.bins[spec.name] = fit_quantile_bins(spec.name, vals, self.n_bins)
        return self

    def tokens(self, record) -> list[str]:
        out = []
        for spec in self.specs:
            value = record.get(spec.name)
            values = value if isinstance(value, (list, tuple)) else [value]
            if not values:
                values = [None]
            for v in values:
                bins = self.bins.get(spec.name) if not is_missing(v) else None
                out.append(tokenize_value(spec, v, bins))
        return sorted(set(out))

    def to_dict(self) -> dict:
        return {"n_bins": self.n_bins,
                "specs": [s.to_dict() for s in self.specs],
                "bins": {k: b.to_dict() for k, b in self.bins.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "Tokenizer":
        tok = cls([PredictorSpec.from_dict(s) for s in d["specs"]], d.get("n_bins", 20))
        tok.bins = {k: BinEdges.from_dict(b) for k, b in d["bins"].items()}
        return tok


def fit_dictionary(token_sets) -> TokenDictionary:
    token_sets = list(token_sets)
    if not token_sets:
        raise EmptyTrainingSet("cannot build a token dictionary from no patients")
    vocab = set()
    for toks in token_sets:
        vocab.update(toks)
    vocab.discard(UNRECOGNISED)
    return TokenDictionary([UNRECOGNISED] + sorted(vocab))


def encode_patient(tokens, dictionary: TokenDictionary, patient_id: str = "") -> TokenisedPatient:
    idx = sorted({dictionary.lookup(t) for t in tokens})
    return TokenisedPatient(str(patient_id), tuple(idx))
