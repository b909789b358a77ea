"""
Calibrating statistics into p-values
====================================

The null distribution of each statistic is an empirical CDF built from
held-out in-distribution data. For batches, validation datasets are
bootstrapped. Under H0 the resulting p-values are uniform.
"""

import numpy as np

from oodkit import BootstrapPlan, RecordSet, build_null, compute_statistics, consecutive_batches, fit_gaussian, ks_uniform, p_value, summarize

rng = np.random.default_rng(2)
train, val, test = (rng.standard_normal((n, 16)) for n in (5000, 3000, 2000))
model = fit_gaussian(train)
summary = summarize(RecordSet.from_model(model, train))
val_rec = RecordSet.from_model(model, val)
test_rec = RecordSet.from_model(model, test)

# single examples: the null is just the validation statistics
for kind in ("score", "typicality"):
    null = build_null(val_rec, BootstrapPlan(len(val_rec)), kind, summary)
    p = p_value(null, compute_statistics(kind, test_rec, summary))
    print(f"{kind:10s} n=1  KS distance to uniform {ks_uniform(p):.4f}")

# batches of 5: resample validation datasets with replacement
plan = BootstrapPlan(5000, 5, "with_replacement", seed=0)
null = build_null(val_rec, plan, "score", summary)
p = p_value(null, compute_statistics("score", test_rec, summary, consecutive_batches(2000, 5)))
print(f"score      n=5  KS distance to uniform {ks_uniform(p):.4f}")

# the smallest attainable p-value is 1/(n+1)
print("p-value far in the tail:", p_value(null, 1e6), "=", 1 / (null.n + 1))
