"""Combining per-statistic p-values (or raw statistics) into one OOD score."""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import DegenerateError, UnsupportedError, ValidationError


@dataclass(frozen=True, eq=False)
class CombinedScore:
    """``value`` is larger-is-more-OOD; ``combined_p`` is None for DoSE."""

    method: str
    value: object
    combined_p: Optional[object] = None


def _check_p(p):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim == 0 or p.shape[-1] < 1:
        raise ValidationError("need at least one p-value")
    if not np.all(np.isfinite(p)) or np.any(p <= 0) or np.any(p > 1):
        raise ValidationError("p-values must lie in (0, 1]")
    return p


def _scalar(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


def chi2_survival(x, dof):
    """Survival function of the chi-squared distribution for even ``dof``.

    Uses the Erlang form exp(-x/2) * sum_{i<k} (x/2)^i / i!, k = dof/2,
    summed in log space.
    """
    if dof < 2 or dof % 2:
        raise UnsupportedError(f"chi2_survival supports even dof >= 2 only, got {dof}")
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ValidationError("chi-squared argument must be finite and >= 0")
    k = dof // 2
    half = x[..., None] / 2.0
    i = np.arange(k)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_terms = i * np.log(half) - gammaln(i + 1)
    # 0 * log(0) for the i = 0 term
    log_terms[..., 0] = 0.0
    out = np.exp(logsumexp(log_terms, axis=-1) - x / 2.0)
    return _scalar(np.minimum(out, 1.0))


def fisher_combine(p) -> CombinedScore:
    """Fisher's method: ``-2 sum ln p_j`` with its chi-squared(2k) survival.

    ``p`` has shape ``(k,)`` or ``(N, k)`` (one row per test example).
    """
    p = _check_p(p)
    value = -2.0 * np.log(p).sum(axis=-1)
    value = np.maximum(value, 0.0)
    return CombinedScore("fisher", _scalar(value), chi2_survival(value, 2 * p.shape[-1]))


def harmonic_combine(p, weights=None) -> CombinedScore:
    """Weighted harmonic mean p-value, equal weights by default.

    ``value`` is ``-ln(combined_p)`` so that larger means more OOD.
    """
    p = _check_p(p)
    k = p.shape[-1]
    if weights is None:
        w = np.full(k, 1.0 / k)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (k,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValidationError("weights must be a non-negative vector summing to 1")
    hm = w.sum() / (w / p).sum(axis=-1)
    hm = np.minimum(hm, 1.0)
    return CombinedScore("harmonic", _scalar(-np.log(hm)), _scalar(hm))


def scott_bandwidth(values):
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size < 2:
        raise DegenerateError("KDE needs at least 2 values")
    std = values.std(ddof=1)
    if not std > 0:
        raise DegenerateError("zero-spread series gives a degenerate KDE bandwidth")
    return std * values.size ** (-1.0 / 5.0)


class GaussianKde1d:
    """One-dimensional Gaussian-kernel density estimate."""

    def __init__(self, values, bandwidth=None):
        self.values = np.asarray(values, dtype=np.float64).ravel()
        self.bandwidth = scott_bandwidth(self.values) if bandwidth is None else float(bandwidth)
        if not self.bandwidth > 0:
            raise DegenerateError("bandwidth must be positive")

    def log_density(self, t, chunk=4096):
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        h = self.bandwidth
        norm = np.log(self.values.size * h) + 0.5 * np.log(2 * np.pi)
        out = np.empty(t.size)
        for start in range(0, t.size, chunk):
            z = (t[start:start + chunk, None] - self.values[None, :]) / h
            out[start:start + chunk] = logsumexp(-0.5 * z * z, axis=1) - norm
        return out


class DoseKde:
    """Density-of-states baseline: sum of per-statistic KDE log-densities.

    Fit on in-distribution statistic values (``{kind: values}`` or an
    ``(N, k)`` array); the score is the negated summed log-density.
    """

    def __init__(self, train_stats, bandwidths=None):
        if isinstance(train_stats, dict):
            self.kinds = list(train_stats)
            columns = [train_stats[k] for k in self.kinds]
        else:
            arr = np.atleast_2d(np.asarray(train_stats, dtype=np.float64))
            self.kinds = list(range(arr.shape[1]))
            columns = list(arr.T)
        if bandwidths is None:
            bandwidths = [None] * len(columns)
        self.kdes = [GaussianKde1d(c, b) for c, b in zip(columns, bandwidths)]

    def score(self, test_stats):
        t = np.asarray(test_stats, dtype=np.float64)
        single = t.ndim <= 1
        t = t.reshape(1, -1) if single else t
        if t.shape[1] != len(self.kdes):
            raise ValidationError(f"expected {len(self.kdes)} statistics per point, got {t.shape[1]}")
        total = sum(kde.log_density(t[:, j]) for j, kde in enumerate(self.kdes))
        return float(-total[0]) if single else -total


def dose_kde_combine(train_stats, test_point_stats, bandwidths=None) -> CombinedScore:
    return CombinedScore("dose_kde", DoseKde(train_stats, bandwidths).score(test_point_stats))


COMBINERS = ("fisher", "harmonic", "dose")
