"""Turning one patient's threshold profile into a chain of conditional chances.

Run: python3 demos/prognosis_report.py
"""

import numpy as np

from ordinalprog import THRESHOLDS, conditional_exceedance, to_category_distribution

# six exceedance probabilities Pr(GOSE > t), t = 1, 3, 4, 5, 6, 7
q = np.array([0.1273615, 0.1228617, 0.0661974, 0.0261596, 0.0216245, 0.0038411])

print("Pr(GOSE > t)")
for t, v in zip(THRESHOLDS, q):
    print(f"  {t:>3}  {100 * v:5.1f}%")

# the same information as a distribution over the 7 outcome categories
p = to_category_distribution(q)
print("category probabilities:", np.round(p, 4), "sum", p.sum())

# given the patient survives (GOSE > 1), how likely is each better outcome?
for higher in (1, 2, 3, 4, 5):
    c = conditional_exceedance(q, 0, higher)
    print(f"Pr(GOSE {THRESHOLDS[higher]} | GOSE >1) = {100 * c:.1f}%")

# the CLI prints the same chain:
#   ordinalprog report --profile 0.1273615,0.1228617,0.0661974,0.0261596,0.0216245,0.0038411 --higher ">3,>4"
