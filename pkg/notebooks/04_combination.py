"""
Combining statistics
====================

Fisher's method and the harmonic mean p-value merge per-statistic
p-values. The DoSE baseline instead sums kernel density estimates of the
raw statistics.
"""

import math

import numpy as np

from oodkit import DoseKde, chi2_survival, fisher_combine, harmonic_combine

c = fisher_combine([math.exp(-1), math.exp(-1)])
print("Fisher: value", c.value, " combined p", c.combined_p, " (3 e^-2 =", 3 * math.exp(-2), ")")
print("chi2 survival, 2 dof at -2 ln 0.3:", chi2_survival(-2 * math.log(0.3), 2))
print("harmonic mean p of (0.1, 0.3):", harmonic_combine([0.1, 0.3]).combined_p)

# under the global null with independent tests, Fisher's value is chi2 with 2k dof
rng = np.random.default_rng(3)
u = rng.uniform(size=(20000, 2))
print("mean Fisher value for two uniform p-values:", fisher_combine(u).value.mean(), "(chi2_4 mean is 4)")

# DoSE: fit on in-distribution statistic pairs, score new pairs
train_stats = np.column_stack([rng.gamma(4.0, size=2000), rng.exponential(size=2000)])
kde = DoseKde(train_stats)
print("DoSE score, typical point:", round(kde.score([4.0, 0.5]), 3), " atypical point:", round(kde.score([15.0, 6.0]), 3))
