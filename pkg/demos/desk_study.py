"""A small end-to-end study: concise vs extended regression vs the token model.

Writes a synthetic cohort, runs repeated cross-validation for three model
families with the CLI, and ranks predictors of the token model by Shapley
importance. Takes a few minutes on one core.

Run: python3 demos/desk_study.py [output_dir]
"""

import json
import sys
from pathlib import Path

from ordinalprog.cli import main

out = Path(sys.argv[1] if len(sys.argv) > 1 else "desk_study_out")
out.mkdir(exist_ok=True)

main(["synth", "--n", "1000", "--seed", "11", "--missing", "0.05", "--out", str(out)])
cohort = ["--cohort", str(out / "cohort.csv"), "--schema", str(out / "cohort_schema.json")]
common = ["--seed", "11", "--repeats", "2", "--folds", "5", "--boot", "500", "--metrics", "orc,somers_dxy,ici:2"]

# CPM and eCPM differ only in the predictor set fed to the regression
main(["run", *cohort, "--out", str(out / "cpm"), "--models", "polr", *common])
main(["run", *cohort, "--out", str(out / "ecpm"), "--models", "polr", "--predictor-set", "extended", *common])
# the token model sees every predictor; a depth-1 grid keeps it quick
main(["run", *cohort, "--out", str(out / "apm"), "--models", "apm_or", "--max-depth", "1",
      "--max-epochs", "100", *common])

for name, fam in (("cpm", "polr"), ("ecpm", "polr"), ("apm", "apm_or")):
    metrics = json.loads((out / name / fam / "metrics.json").read_text())
    bbc = metrics["bbc_cv"]
    print(f"{name:>5}: BBC-CV ORC {bbc['estimate']:.3f} [{bbc['ci_low']:.3f}, {bbc['ci_high']:.3f}]")

main(["importance", "--model", str(out / "apm" / "apm_or" / "models"), *cohort, "--out", str(out / "apm"),
      "--permutations", "200", "--top", "10"])
