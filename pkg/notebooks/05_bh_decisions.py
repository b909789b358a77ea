"""
Benjamini-Hochberg decisions
============================

Turn a set of p-values into accept/reject decisions that control the
false discovery rate, and trace Type I/II errors over alpha.
"""

import numpy as np

from oodkit import HypothesisBatch, benjamini_hochberg, error_curves

rep = benjamini_hochberg(HypothesisBatch(np.array(["a", "b", "c", "d"]), [0.01, 0.02, 0.03, 0.5]), 0.05)
print("rejected:", rep.rejected_ids.tolist(), " threshold:", rep.threshold)

rng = np.random.default_rng(4)
fdr = []
for _ in range(100):
    p = np.r_[rng.uniform(size=500), rng.beta(0.1, 1.0, size=500)]
    labels = np.r_[np.zeros(500, bool), np.ones(500, bool)]
    fdr.append(error_curves(HypothesisBatch(None, p, labels), (0.05, 0.1, 0.2))["fdr"])
print("mean FDR at alpha = 0.05, 0.1, 0.2:", np.round(np.mean(fdr, axis=0), 4))

curves = error_curves(HypothesisBatch(None, p, labels))
for a in (0.05, 0.2, 0.5):
    i = int(np.argmin(np.abs(curves["alpha"] - a)))
    print(f"alpha={a:.2f}  type I {curves['type1'][i]:.3f}  type II {curves['type2'][i]:.3f}")
