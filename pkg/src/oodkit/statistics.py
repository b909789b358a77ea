"""One-sided OOD test statistics computed from per-example model outputs.

Every statistic follows the convention that larger values are more
out-of-distribution. Statistics of a batch of ``n`` examples average the
log-densities and gradients over the batch before taking norms, so ``n = 1``
gives the single-sample form.
"""

import enum
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import CapabilityError, ValidationError
from .fisher import DEFAULT_EPSILON, DEFAULT_XI, DiagonalFim, RunningMoments, finalize_fim, whiten
from .models import DiagonalGaussianModel, GmmModel, check_data


class StatisticKind(str, enum.Enum):
    SCORE = "score"
    TYPICALITY = "typicality"
    GRAD_NORM = "grad_norm"
    NEG_LOG_DENSITY = "neg_log_density"
    MMD_FISHER = "mmd_fisher"
    MMD_TYPICALITY = "mmd_typicality"
    MAHALANOBIS = "mahalanobis"

    def __str__(self):
        return self.value

    @property
    def needs_gradient(self):
        return self in GRADIENT_KINDS


GRADIENT_KINDS = frozenset({StatisticKind.SCORE, StatisticKind.GRAD_NORM, StatisticKind.MMD_FISHER})
RECORD_KINDS = tuple(k for k in StatisticKind if k is not StatisticKind.MAHALANOBIS)


def as_kind(kind):
    try:
        return StatisticKind(str(kind))
    except ValueError:
        raise ValidationError(f"unknown statistic kind {kind!r}") from None


@dataclass(frozen=True, eq=False)
class GradientRecord:
    id: int
    log_density: float
    gradient: Optional[np.ndarray] = None


class RecordSet:
    """Columnar collection of gradient records.

    ``gradients`` is an ``(N, P)`` array or ``None`` when the producer only
    exported log-densities.
    """

    def __init__(self, ids, log_density, gradients=None):
        self.log_density = np.atleast_1d(np.asarray(log_density, dtype=np.float64))
        n = self.log_density.size
        self.ids = np.arange(n, dtype=np.uint64) if ids is None else np.asarray(ids, dtype=np.uint64)
        if self.ids.shape != (n,):
            raise ValidationError("ids and log-densities have different lengths")
        if not np.all(np.isfinite(self.log_density)):
            raise ValidationError("non-finite log-density in records")
        if gradients is not None:
            gradients = np.asarray(gradients, dtype=np.float64)
            if gradients.ndim != 2 or gradients.shape[0] != n:
                raise ValidationError("gradient array must have shape (N, P)")
            if not np.all(np.isfinite(gradients)):
                raise ValidationError("non-finite gradient entries in records")
        self.gradients = gradients

    def __len__(self):
        return self.log_density.size

    @property
    def has_gradient(self):
        return self.gradients is not None

    @property
    def n_params(self):
        return None if self.gradients is None else self.gradients.shape[1]

    @classmethod
    def from_model(cls, model, data, ids=None, with_gradient=True):
        x = check_data(data, dim=model.dim)
        grads = model.grad_log_density(x) if with_gradient else None
        return cls(ids, model.log_density(x), grads)

    @classmethod
    def from_records(cls, records):
        records = list(records)
        if not records:
            raise ValidationError("empty record batch")
        has = [r.gradient is not None for r in records]
        if any(has) and not all(has):
            raise ValidationError("mixed records with and without gradients")
        grads = np.vstack([np.asarray(r.gradient, dtype=np.float64) for r in records]) if all(has) else None
        return cls([r.id for r in records], [r.log_density for r in records], grads)

    def subset(self, index):
        index = np.asarray(index)
        grads = None if self.gradients is None else self.gradients[index]
        return RecordSet(self.ids[index], self.log_density[index], grads)

    def __iter__(self):
        for i in range(len(self)):
            g = None if self.gradients is None else self.gradients[i]
            yield GradientRecord(int(self.ids[i]), float(self.log_density[i]), g)


def as_record_set(batch):
    if isinstance(batch, RecordSet):
        if len(batch) == 0:
            raise ValidationError("empty record batch")
        return batch
    if isinstance(batch, GradientRecord):
        return RecordSet.from_records([batch])
    return RecordSet.from_records(batch)


@dataclass(frozen=True, eq=False)
class TrainingSummary:
    mean_log_density: float
    mean_gradient: np.ndarray
    fim: DiagonalFim
    n_train: int

    def __post_init__(self):
        if not np.isfinite(self.mean_log_density):
            raise ValidationError("training mean log-density must be finite")
        g = np.asarray(self.mean_gradient, dtype=np.float64).ravel()
        if g.size != len(self.fim):
            raise ValidationError("mean gradient and FIM lengths differ")
        object.__setattr__(self, "mean_gradient", g)

    @property
    def n_params(self):
        return self.mean_gradient.size

    @classmethod
    def from_moments(cls, moments, epsilon=DEFAULT_EPSILON, xi=DEFAULT_XI, mode="diagonal"):
        if mode == "identity":
            if moments.count == 0:
                finalize_fim(moments)  # raises the empty-accumulator error
            fim = DiagonalFim.identity(moments.n_params)
        else:
            fim = finalize_fim(moments, epsilon=epsilon, xi=xi)
        return cls(moments.mean_log_density, moments.mean_gradient, fim, moments.count)

    def with_fim(self, fim):
        return TrainingSummary(self.mean_log_density, self.mean_gradient, fim, self.n_train)


def summarize(records, epsilon=DEFAULT_EPSILON, xi=DEFAULT_XI, mode="diagonal", chunk=4096):
    """Single pass over training records -> :class:`TrainingSummary`."""
    if isinstance(records, RecordSet):
        if not records.has_gradient:
            raise CapabilityError("training summary needs gradients")
        moments = RunningMoments.empty(records.n_params)
        for start in range(0, len(records), chunk):
            stop = start + chunk
            moments = moments.accumulate_batch(records.log_density[start:stop], records.gradients[start:stop])
    else:
        moments = None
        for rec in records:
            if moments is None:
                if rec.gradient is None:
                    raise CapabilityError("training summary needs gradients")
                moments = RunningMoments.empty(np.asarray(rec.gradient).size)
            moments = moments.accumulate(rec)
        if moments is None:
            moments = RunningMoments.empty(0)
    return TrainingSummary.from_moments(moments, epsilon=epsilon, xi=xi, mode=mode)


def _require_gradients(records, summary, name):
    if not records.has_gradient:
        raise CapabilityError(f"statistic '{name}' needs gradients but the records carry none")
    if records.n_params != summary.n_params:
        raise ValidationError(
            f"statistic '{name}': record layout length {records.n_params} != summary layout length {summary.n_params}"
        )


def _mean_gradient(batch, summary, name):
    records = as_record_set(batch)
    _require_gradients(records, summary, name)
    return records.gradients.mean(axis=0)


def score_statistic(batch, summary) -> float:
    """Norm of the whitened batch-mean gradient (square root of Rao's score statistic)."""
    g = _mean_gradient(batch, summary, "score")
    return float(np.linalg.norm(whiten(summary.fim, g)))


def grad_norm_statistic(batch, summary) -> float:
    g = _mean_gradient(batch, summary, "grad_norm")
    return float(np.linalg.norm(g))


def mmd_fisher_statistic(batch, summary) -> float:
    g = _mean_gradient(batch, summary, "mmd_fisher")
    return float(np.linalg.norm(whiten(summary.fim, summary.mean_gradient - g)))


def typicality_statistic(batch, summary) -> float:
    records = as_record_set(batch)
    return float(abs(records.log_density.mean() - summary.mean_log_density))


mmd_typicality_statistic = typicality_statistic


def neg_log_density_statistic(batch, summary=None) -> float:
    records = as_record_set(batch)
    return float(-records.log_density.mean())


def mahalanobis_statistic(model, x):
    """Squared Mahalanobis distance to the closest mixture component.

    Larger is more OOD. ``x`` may be one point or an (N, D) batch.
    """
    if isinstance(model, DiagonalGaussianModel):
        means, variances = model.mean[None, :], model.var[None, :]
    elif isinstance(model, GmmModel):
        means, variances = model.means, model.variances
    else:
        raise ValidationError("Mahalanobis score needs a Gaussian or diagonal GMM model")
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    pts = check_data(arr, dim=means.shape[1])
    quad = (((pts[:, None, :] - means[None, :, :]) ** 2) / variances[None, :, :]).sum(axis=2)
    out = quad.min(axis=1)
    return float(out[0]) if single else out


_BATCH_FUNCS = {
    StatisticKind.SCORE: score_statistic,
    StatisticKind.TYPICALITY: typicality_statistic,
    StatisticKind.GRAD_NORM: grad_norm_statistic,
    StatisticKind.NEG_LOG_DENSITY: neg_log_density_statistic,
    StatisticKind.MMD_FISHER: mmd_fisher_statistic,
    StatisticKind.MMD_TYPICALITY: mmd_typicality_statistic,
}


def statistic(kind, batch, summary):
    """Evaluate one statistic kind on one batch of records."""
    kind = as_kind(kind)
    if kind is StatisticKind.MAHALANOBIS:
        raise CapabilityError("statistic 'mahalanobis' is computed from a model and data, not records")
    return _BATCH_FUNCS[kind](batch, summary)


def _from_means(kind, ld_mean, g_mean, summary):
    if kind in (StatisticKind.TYPICALITY, StatisticKind.MMD_TYPICALITY):
        return np.abs(ld_mean - summary.mean_log_density)
    if kind is StatisticKind.NEG_LOG_DENSITY:
        return -ld_mean
    if kind is StatisticKind.SCORE:
        return np.linalg.norm(whiten(summary.fim, g_mean), axis=-1)
    if kind is StatisticKind.GRAD_NORM:
        return np.linalg.norm(g_mean, axis=-1)
    if kind is StatisticKind.MMD_FISHER:
        return np.linalg.norm(whiten(summary.fim, summary.mean_gradient - g_mean), axis=-1)
    raise CapabilityError(f"statistic '{kind}' is not computable from records")


def compute_statistics(kind, records, summary, batches=None, chunk=2048):
    """Vectorised statistic over many batches.

    ``batches`` is an integer array of shape ``(S, n)`` indexing ``records``;
    ``None`` evaluates every record on its own (``n = 1``). Returns ``(S,)``.
    """
    kind = as_kind(kind)
    records = as_record_set(records)
    if kind.needs_gradient:
        _require_gradients(records, summary, kind.value)
    if batches is None:
        g = records.gradients if kind.needs_gradient else None
        return np.asarray(_from_means(kind, records.log_density, g, summary), dtype=np.float64)
    batches = np.asarray(batches, dtype=np.intp)
    if batches.ndim != 2 or batches.shape[1] < 1:
        raise ValidationError("batches must be an (S, n) index array")
    out = np.empty(batches.shape[0])
    for start in range(0, batches.shape[0], chunk):
        idx = batches[start:start + chunk]
        ld = records.log_density[idx].mean(axis=1)
        g = records.gradients[idx].mean(axis=1) if kind.needs_gradient else None
        out[start:start + chunk] = _from_means(kind, ld, g, summary)
    return out


def consecutive_batches(n_items, batch_size):
    """Split ``range(n_items)`` into consecutive batches, dropping the remainder."""
    if batch_size < 1:
        raise ValidationError("batch size must be >= 1")
    n_full = n_items // batch_size
    if n_full == 0:
        raise ValidationError(f"need at least {batch_size} items for one batch, got {n_items}")
    return np.arange(n_full * batch_size).reshape(n_full, batch_size)


def statistic_table(kinds: Sequence, records, summary, batch_size=1):
    """Dict kind -> per-batch values for several kinds at once."""
    batches = None if batch_size == 1 else consecutive_batches(len(records), batch_size)
    return {as_kind(k): compute_statistics(k, records, summary, batches) for k in kinds}
