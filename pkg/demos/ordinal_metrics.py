"""Discrimination and calibration of ordinal predictions on a synthetic cohort.

The generating model is known, so the Bayes-optimal profile gives a ceiling
for every metric. A deliberately overconfident copy shows what a calibration
slope below one looks like.

Run: python3 demos/ordinal_metrics.py
"""

import numpy as np
from scipy.special import expit, logit

from ordinalprog.metrics import (PredictionSet, calibration_slope, generalized_c, ici, lowess_curve, niv_ici, orc,
                                 somers_dxy, threshold_c)
from ordinalprog.outcome import THRESHOLDS
from ordinalprog.synthetic import default_cohort_spec, generate_cohort, oracle_profile

spec = default_cohort_spec(n=4000, seed=3)
df, labels = generate_cohort(spec)
q = oracle_profile(spec, df)

truth = PredictionSet(q, labels)
sharp = PredictionSet(expit(2 * logit(q)), labels)  # same ranking, twice the confidence

print(f"ORC {orc(truth):.3f}  generalised c {generalized_c(truth):.3f}  Somers' Dxy {somers_dxy(truth):.3f}")
print(f"overconfident copy: ORC {orc(sharp):.3f} (rank statistics do not move)")

print("\nthreshold   c      slope(true)  slope(sharp)  ICI(true)  ICI(sharp)  ICI(no info)")
for t, label in enumerate(THRESHOLDS):
    pi = np.mean(labels > t)
    print(f"  {label:>3}    {threshold_c(truth, t):.3f}    {calibration_slope(truth, t).slope:6.2f}"
          f"       {calibration_slope(sharp, t).slope:6.2f}      {ici(lowess_curve(truth, t)):.3f}"
          f"      {ici(lowess_curve(sharp, t)):.3f}      {niv_ici(pi):.3f}")

# smoothed curves can be written out for plotting elsewhere
# lowess_curve(truth, 2).to_csv("curve_gt4.csv")
