"""
Diagonal Fisher information and the test statistics
====================================================

One streaming pass over training gradients gives the diagonal FIM and
the training means. Statistics are then evaluated on batches of test
records.
"""

import numpy as np

from oodkit import RecordSet, RunningMoments, TrainingSummary, compute_statistics, consecutive_batches, fit_gaussian

rng = np.random.default_rng(1)
train = rng.standard_normal((5000, 8))
model = fit_gaussian(train)

# streaming accumulation in chunks; merge() combines partial results
records = RecordSet.from_model(model, train)
left = RunningMoments.empty(records.n_params).accumulate_batch(records.log_density[:2500], records.gradients[:2500])
right = RunningMoments.empty(records.n_params).accumulate_batch(records.log_density[2500:], records.gradients[2500:])
summary = TrainingSummary.from_moments(left.merge(right))
print("FIM diagonal (mean block):", np.round(summary.fim.diag[:8], 3))
print("FIM diagonal (log-variance block):", np.round(summary.fim.diag[8:], 3))

inliers = RecordSet.from_model(model, rng.standard_normal((400, 8)))
shifted = RecordSet.from_model(model, rng.standard_normal((400, 8)) + 0.3)
batches = consecutive_batches(400, 4)

for kind in ("score", "typicality", "mmd_fisher", "grad_norm", "neg_log_density"):
    a = compute_statistics(kind, inliers, summary, batches)
    b = compute_statistics(kind, shifted, summary, batches)
    print(f"{kind:16s} in-dist mean {a.mean():8.3f}   shifted mean {b.mean():8.3f}")
