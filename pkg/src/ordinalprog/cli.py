"""Command-line entry point: ``ordinalprog {synth,run,report,importance}``.

Exit codes: 0 success, 1 partial failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .exceptions import OrdinalError, ZeroDenominator
from .io import read_cohort, read_schema, records
from .outcome import THRESHOLDS, ThresholdProfile, conditional_exceedance
from .pipeline import FAMILIES, RunConfig, run

log = logging.getLogger("ordinalprog")


class UsageError(Exception):
    pass


def _threshold(label: str) -> int:
    s = str(label).strip()
    if not s.startswith(">"):
        s = ">" + s
    if s not in THRESHOLDS:
        raise UsageError(f"unknown threshold {label!r}; use one of {', '.join(THRESHOLDS)}")
    return THRESHOLDS.index(s)


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


# --------------------------------------------------------------------------
# synth
# --------------------------------------------------------------------------


def cmd_synth(args) -> int:
    from .synthetic import default_cohort_spec, write_cohort

    out = Path(args.out)
    if not out.is_dir():
        raise UsageError(f"output directory {out} does not exist")
    spec = default_cohort_spec(n=args.n, seed=args.seed, missing=args.missing, signal=args.signal)
    paths = write_cohort(spec, out, args.stem)
    for k, p in paths.items():
        print(f"{k}: {p}")
    return 0


# --------------------------------------------------------------------------
# run
# --------------------------------------------------------------------------


def _load(args):
    for p in (args.cohort, args.schema):
        if not Path(p).is_file():
            raise UsageError(f"file {p} does not exist")
    schema = read_schema(args.schema)
    df, labels = read_cohort(args.cohort, schema)
    return schema, df, labels


def cmd_run(args) -> int:
    cfg = RunConfig(seed=args.seed, repeats=args.repeats, folds=args.folds, val_frac=args.val_frac,
                    boot=args.boot, alpha=args.alpha, grid=args.grid, models=tuple(_csv_list(args.models)),
                    predictor_set=args.predictor_set, token_set=args.token_set, jobs=args.jobs,
                    dropout_after=tuple(int(r) for r in _csv_list(args.dropout_after))
                    if args.dropout_after is not None else None,
                    max_depth=args.max_depth, max_epochs=args.max_epochs)
    if args.metrics:
        cfg.metrics = tuple(_csv_list(args.metrics))
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    schema, df, labels = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    log.addHandler(handler)
    level = log.level
    log.setLevel(logging.INFO)
    try:
        manifest = run(df, labels, schema, cfg, out)
    finally:
        log.setLevel(level)
        log.removeHandler(handler)
        handler.close()
    for fam, info in manifest["families"].items():
        orc = info["bbc_orc"]
        if orc:
            print(f"{fam}: ORC {orc['estimate']:.4f} [{orc['ci_low']:.4f}, {orc['ci_high']:.4f}] "
                  f"config {info['chosen_config']}")
        else:
            print(f"{fam}: no usable predictions")
    return 1 if manifest["failures"] else 0


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------


def _profile_from_model(args) -> np.ndarray:
    from .models import load_model, predict
    from .preprocess import DesignEncoder
    from .tokenizer import TokenDictionary, Tokenizer, encode_patient

    model = load_model(args.model)
    schema, df, _ = _load(args)
    rows = df[df[schema.id_column].astype(str) == str(args.patient_id)]
    if rows.empty:
        raise UsageError(f"patient {args.patient_id!r} not in cohort")
    meta = model.metadata
    if "tokenizer" in meta:
        tok = Tokenizer.from_dict(meta["tokenizer"])
        dictionary = TokenDictionary(list(meta["dictionary"]))
        inputs = [encode_patient(tok.tokens(r), dictionary) for r in records(rows, tok.specs)]
    elif "encoder" in meta:
        enc = DesignEncoder.from_dict(meta["encoder"])
        cols = [s.name for s in enc.specs]
        if rows[cols].isna().any().any():
            raise UsageError("patient has missing predictor values; tabular models need complete rows")
        inputs = enc.transform(rows[cols])
    else:
        raise UsageError("model file lacks input-encoding metadata")
    return predict(model, inputs)["profile"][0]


def cmd_report(args) -> int:
    if args.profile:
        try:
            q = np.array([float(v) for v in _csv_list(args.profile)])
        except ValueError as exc:
            raise UsageError(f"bad profile: {exc}") from exc
    elif args.model and args.cohort and args.schema and args.patient_id is not None:
        q = _profile_from_model(args)
    else:
        raise UsageError("give --profile, or --model with --cohort, --schema and --patient-id")
    try:
        ThresholdProfile(tuple(q))
    except (OrdinalError, ValueError) as exc:
        raise UsageError(f"invalid threshold profile: {exc}") from exc
    lower = _threshold(args.lower)
    higher = [_threshold(h) for h in _csv_list(args.higher)] if args.higher else []
    if any(h < lower for h in higher):
        raise UsageError("thresholds must be ordered from low to high")
    lines = []
    for label, v in zip(THRESHOLDS, q):
        lines.append({"threshold": label, "probability": float(v)})
    chain = [{"threshold": THRESHOLDS[lower], "given": None, "probability": float(q[lower])}]
    for h in higher:
        entry = {"threshold": THRESHOLDS[h], "given": THRESHOLDS[lower]}
        try:
            entry["probability"] = conditional_exceedance(q, lower, h)
        except ZeroDenominator:
            entry["probability"] = None
            entry["flag"] = "zero denominator"
        chain.append(entry)
    if args.json:
        print(json.dumps({"profile": lines, "chain": chain}, indent=1))
        return 0
    print("Pr(GOSE > t):")
    for line in lines:
        print(f"  {line['threshold']:>3}  {100 * line['probability']:.1f}%")
    for entry in chain:
        if entry["given"] is None:
            print(f"Pr(GOSE {entry['threshold']}) = {100 * entry['probability']:.1f}%")
        elif entry["probability"] is None:
            print(f"Pr(GOSE {entry['threshold']} | GOSE {entry['given']}) undefined: zero denominator")
        else:
            print(f"Pr(GOSE {entry['threshold']} | GOSE {entry['given']}) = {100 * entry['probability']:.1f}%")
    return 0


# --------------------------------------------------------------------------
# importance
# --------------------------------------------------------------------------


def cmd_importance(args) -> int:
    from .importance import MAX_EXACT_TOKENS, aggregate_importance, attribution_records, exact_shapley, sampled_shapley
    from .models import ApmModel, load_model
    from .tokenizer import TokenDictionary, Tokenizer, encode_patient

    src = Path(args.model)
    files = sorted(src.glob("*.json")) if src.is_dir() else [src]
    if not files or not all(f.is_file() for f in files):
        raise UsageError(f"no model files at {src}")
    schema, df, _ = _load(args)
    id_col = schema.id_column
    frames = []
    for part, path in enumerate(files):
        model = load_model(path)
        if not isinstance(model, ApmModel):
            raise UsageError(f"{path} is not a token-embedding model")
        meta = model.metadata
        tok = Tokenizer.from_dict(meta["tokenizer"])
        dictionary = TokenDictionary(list(meta["dictionary"]))
        wanted = meta.get("test_ids")
        rows = df[df[id_col].astype(str).isin(set(wanted))] if wanted else df
        labels = list(THRESHOLDS) if model.config.encoding == "ordinal" else None
        for pid, rec in zip(rows[id_col].astype(str), records(rows, tok.specs)):
            patient = encode_patient(tok.tokens(rec), dictionary, pid)
            if len(patient.indices) <= MAX_EXACT_TOKENS:
                attr = exact_shapley(model, patient)
            elif args.permutations < 1:
                raise UsageError(f"patient {pid} has {len(patient.indices)} tokens; "
                                 f"set --permutations >= 1 for sampling")
            else:
                attr = sampled_shapley(model, patient, args.permutations, [args.seed, part])
            frames.append(attribution_records(attr, dictionary, pid, part, labels))
    table = aggregate_importance(pd.concat(frames, ignore_index=True))
    out = Path(args.out)
    if not out.is_dir():
        raise UsageError(f"output directory {out} does not exist")
    table.to_csv(out / "importance_tokens.csv")
    table.to_json(out / "importance_ranking.json")
    for row in table.ranking()[:args.top]:
        print(f"{row['rank']:>3}  {row['predictor']:<24} {row['score']:.5f}  ({row['top_token']})")
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ordinalprog", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic cohort (CSV, schema JSON, truth JSON)")
    p.add_argument("--n", type=int, default=1550)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")
    p.add_argument("--stem", default="cohort")
    p.add_argument("--missing", type=float, default=0.0, help="missingness rate of incomplete predictors")
    p.add_argument("--signal", type=float, default=1.0, help="multiplier on every generating effect")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="repeated cross-validation of model families")
    p.add_argument("--cohort", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--val-frac", type=float, default=0.15)
    p.add_argument("--boot", type=int, default=1000)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--grid", choices=("paper", "desk"), default="desk")
    p.add_argument("--models", default="mnlr,polr", help=f"comma list from {','.join(FAMILIES)}")
    p.add_argument("--predictor-set", default="concise", help="schema set for tabular models")
    p.add_argument("--token-set", default="all", help="schema set for token models")
    p.add_argument("--dropout-after", default=None, help="comma list of repeats after which dropout runs")
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--max-epochs", type=int, default=200)
    p.add_argument("--metrics", default=None, help="comma list of metric names")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="threshold profile and conditional exceedance chain")
    p.add_argument("--profile", help="six comma-separated exceedance probabilities")
    p.add_argument("--model")
    p.add_argument("--cohort")
    p.add_argument("--schema")
    p.add_argument("--patient-id")
    p.add_argument("--lower", default=">1")
    p.add_argument("--higher", default="", help="comma list of higher thresholds")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("importance", help="Shapley token attributions aggregated to predictors")
    p.add_argument("--model", required=True, help="model JSON or a directory of partition models")
    p.add_argument("--cohort", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--permutations", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--top", type=int, default=15)
    p.set_defaults(func=cmd_importance)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OrdinalError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
