"""Null distributions of statistics and eCDF p-values.

The null of each statistic is estimated on a held-out validation set, either
by evaluating it on every validation example (single-sample detection) or by
bootstrapping datasets of the test batch size.
"""

from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .errors import ValidationError
from .statistics import GradientRecord, RecordSet, as_kind, as_record_set, compute_statistics

RESAMPLE_MODES = ("with_replacement", "without_replacement", "per_example")
DEFAULT_N_DATASETS = 10000


@dataclass(frozen=True, eq=False)
class EmpiricalCdf:
    sorted_values: np.ndarray

    def __post_init__(self):
        v = np.sort(np.asarray(self.sorted_values, dtype=np.float64).ravel())
        if v.size == 0:
            raise ValidationError("an eCDF needs at least one value")
        if not np.all(np.isfinite(v)):
            raise ValidationError("eCDF values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "sorted_values", v)

    @property
    def n(self):
        return self.sorted_values.size

    def __call__(self, t):
        """Right-continuous F(t) = #{values <= t} / n."""
        t = np.asarray(t, dtype=np.float64)
        out = np.searchsorted(self.sorted_values, t, side="right") / self.n
        return float(out) if out.ndim == 0 else out

    def p_value(self, t):
        return p_value(self, t)


def p_value(cdf, t):
    """Upper-tail p-value ``(1 + #{null >= t}) / (n + 1)``.

    Ties count toward the tail. Accepts a scalar or an array of observed values.
    """
    t = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(t)):
        raise ValidationError("observed statistic must be finite")
    n_ge = cdf.n - np.searchsorted(cdf.sorted_values, t, side="left")
    out = (1.0 + n_ge) / (cdf.n + 1.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class BootstrapPlan:
    n_datasets: int
    dataset_size: int = 1
    resample: str = "per_example"
    seed: int = 0

    def __post_init__(self):
        if self.resample not in RESAMPLE_MODES:
            raise ValidationError(f"unknown resample mode {self.resample!r}")
        if self.dataset_size < 1 or self.n_datasets < 1:
            raise ValidationError("dataset size and number of datasets must be >= 1")
        if self.resample == "per_example" and self.dataset_size != 1:
            raise ValidationError("per_example mode requires dataset_size = 1")

    def check(self, n_validation):
        if n_validation < 1:
            raise ValidationError("validation set is empty")
        if self.resample == "per_example" and self.n_datasets != n_validation:
            raise ValidationError("per_example mode requires n_datasets = validation size")
        if self.resample == "without_replacement" and self.dataset_size > n_validation:
            raise ValidationError(
                f"dataset size {self.dataset_size} exceeds validation size {n_validation} without replacement"
            )

    def batches(self, n_validation):
        """(S, M') index array of bootstrap datasets, or None for per_example."""
        self.check(n_validation)
        if self.resample == "per_example":
            return None
        rng = np.random.default_rng(self.seed)
        if self.resample == "with_replacement":
            return rng.integers(0, n_validation, size=(self.n_datasets, self.dataset_size))
        # without replacement inside each dataset: M' smallest of S x N uniform keys
        out = np.empty((self.n_datasets, self.dataset_size), dtype=np.intp)
        chunk = max(1, int(2e7 // n_validation))
        for start in range(0, self.n_datasets, chunk):
            rows = min(chunk, self.n_datasets - start)
            keys = rng.random((rows, n_validation))
            out[start:start + rows] = np.argpartition(keys, self.dataset_size - 1, axis=1)[:, :self.dataset_size]
        return out

    def to_dict(self):
        return {
            "n_datasets": self.n_datasets,
            "dataset_size": self.dataset_size,
            "resample": self.resample,
            "seed": self.seed,
        }


def default_plan(batch_size, n_validation, seed=0, n_datasets=DEFAULT_N_DATASETS):
    if batch_size == 1:
        return BootstrapPlan(n_validation, 1, "per_example", seed)
    if batch_size == 2:
        return BootstrapPlan(n_datasets, 2, "without_replacement", seed)
    return BootstrapPlan(n_datasets, batch_size, "with_replacement", seed)


def build_null(validation, plan, kind, summary=None):
    """Null eCDF of ``kind`` from validation records under ``plan``.

    ``validation`` is a record collection; in per_example mode it may also be
    a plain array of precomputed per-example statistic values.
    """
    kind = as_kind(kind)
    is_records = isinstance(validation, RecordSet) or (
        isinstance(validation, (list, tuple)) and len(validation) > 0 and isinstance(validation[0], GradientRecord)
    )
    if not is_records:
        values = np.asarray(validation, dtype=np.float64).ravel()
        if plan.resample != "per_example":
            raise ValidationError("bootstrap modes need records, not precomputed statistic values")
        plan.check(values.size)
        return EmpiricalCdf(values)
    records = as_record_set(validation)
    if summary is None:
        raise ValidationError("a training summary is needed to evaluate statistics on records")
    batches = plan.batches(len(records))
    return EmpiricalCdf(compute_statistics(kind, records, summary, batches))


def ks_uniform(p_values):
    """Kolmogorov-Smirnov distance between p-values and Uniform(0, 1)."""
    return float(sps.kstest(np.asarray(p_values, dtype=np.float64), "uniform").statistic)


def null_p_value_uniformity_check(model, validation, test_null_sample, summary, kind="score"):
    """KS distance of single-sample p-values of fresh H0 data from uniform."""
    val = RecordSet.from_model(model, validation)
    test = RecordSet.from_model(model, test_null_sample)
    null = build_null(val, BootstrapPlan(len(val)), kind, summary)
    return ks_uniform(p_value(null, compute_statistics(kind, test, summary)))
