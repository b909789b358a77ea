"""Benjamini-Hochberg decisions and Type I/II error curves."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import CapabilityError, ValidationError

DEFAULT_ALPHAS = tuple(np.round(np.arange(0.01, 1.0, 0.01), 2))


@dataclass(frozen=True, eq=False)
class HypothesisBatch:
    ids: np.ndarray
    p_values: np.ndarray
    labels: Optional[np.ndarray] = None  # True = outlier

    def __post_init__(self):
        p = np.asarray(self.p_values, dtype=np.float64).ravel()
        ids = np.arange(p.size) if self.ids is None else np.asarray(self.ids)
        if ids.shape != p.shape:
            raise ValidationError("ids and p-values have different lengths")
        if p.size == 0:
            raise ValidationError("need at least one hypothesis")
        if not np.all(np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
            raise ValidationError("p-values must be finite and in [0, 1]")
        labels = self.labels
        if labels is not None:
            labels = np.asarray(labels, dtype=bool).ravel()
            if labels.shape != p.shape:
                raise ValidationError("labels and p-values have different lengths")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "p_values", p)
        object.__setattr__(self, "labels", labels)


@dataclass(frozen=True, eq=False)
class DecisionReport:
    rejected_ids: np.ndarray
    threshold: float
    alpha: float
    rejected: np.ndarray  # boolean mask aligned with the batch
    curves: dict = field(default_factory=dict)


def _bh_cut(p_values, alpha):
    if not 0 < alpha < 1:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
    p = np.sort(np.asarray(p_values, dtype=np.float64))
    m = p.size
    passing = np.flatnonzero(p <= alpha * np.arange(1, m + 1) / m)
    if passing.size == 0:
        return 0, 0.0
    return passing[-1] + 1, float(p[passing[-1]])


def bh_threshold(p_values, alpha):
    """Largest p_(k) with p_(k) <= k alpha / m, or 0 when nothing passes."""
    return _bh_cut(p_values, alpha)[1]


def benjamini_hochberg(batch, alpha) -> DecisionReport:
    """Step-up BH procedure; every p-value at or below the threshold is rejected."""
    k, threshold = _bh_cut(batch.p_values, alpha)
    if k:
        rejected = batch.p_values <= threshold
    else:
        rejected = np.zeros(batch.p_values.size, dtype=bool)
    return DecisionReport(batch.ids[rejected], threshold, float(alpha), rejected)


def error_curves(batch, alphas=DEFAULT_ALPHAS):
    """Type I, Type II and empirical FDR of BH at each alpha.

    Returns a dict of equal-length arrays keyed by
    ``alpha, type1, type2, fdr, n_rejected``.
    """
    if batch.labels is None:
        raise CapabilityError("error curves need true inlier/outlier labels")
    alphas = np.asarray(alphas, dtype=np.float64)
    outlier = batch.labels
    n_out = outlier.sum()
    n_in = outlier.size - n_out
    type1, type2, fdr, n_rej = [], [], [], []
    for a in alphas:
        rej = benjamini_hochberg(batch, a).rejected
        false_rej = np.sum(rej & ~outlier)
        type1.append(false_rej / n_in if n_in else 0.0)
        type2.append(np.sum(~rej & outlier) / n_out if n_out else 0.0)
        fdr.append(false_rej / max(1, rej.sum()))
        n_rej.append(int(rej.sum()))
    return {
        "alpha": alphas,
        "type1": np.asarray(type1, dtype=np.float64),
        "type2": np.asarray(type2, dtype=np.float64),
        "fdr": np.asarray(fdr, dtype=np.float64),
        "n_rejected": np.asarray(n_rej),
    }
