"""AUROC, correlation diagnostics, the Gaussian two-regime harness and the
end-to-end detection pipeline."""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from . import fileio
from .calibration import BootstrapPlan, EmpiricalCdf, default_plan, p_value
from .combination import DoseKde, fisher_combine, harmonic_combine
from .decision import DEFAULT_ALPHAS, HypothesisBatch, error_curves
from .errors import DegenerateError, OodkitError, StageError, ValidationError
from .models import (
    HALF_NORMAL_MEAN,
    DiagonalGaussianModel,
    fit_gaussian,
    fit_model,
    sample_dirac_zero,
    sample_truncated_normal,
)
from .statistics import (
    RecordSet,
    StatisticKind,
    as_kind,
    compute_statistics,
    consecutive_batches,
    mahalanobis_statistic,
    summarize,
)

logger = logging.getLogger(__name__)


def auroc(in_scores, out_scores):
    """Probability that an OOD score exceeds an in-distribution one, ties half.

    Computed from average ranks (Mann-Whitney U).
    """
    a = np.asarray(in_scores, dtype=np.float64).ravel()
    b = np.asarray(out_scores, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValidationError("AUROC needs two non-empty populations")
    ranks = rankdata(np.concatenate([a, b]))
    u = ranks[a.size:].sum() - b.size * (b.size + 1) / 2.0
    return float(u / (a.size * b.size))


def pearson_correlation(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size or a.size < 2:
        raise ValidationError("need two equal-length vectors with at least 2 entries")
    da, db = a - a.mean(), b - b.mean()
    denom = np.sqrt((da @ da) * (db @ db))
    if denom == 0:
        raise DegenerateError("correlation undefined for a zero-variance vector")
    return float(np.clip((da @ db) / denom, -1.0, 1.0))


# -- Gaussian two-regime harness ----------------------------------------------------

@dataclass
class FailureModeReport:
    d: int
    n_batch: int
    rows: list  # (case, statistic, auroc)
    score_sq_gap: float  # empirical gap of the squared score in sum-over-batch form
    score_sq_gap_expected: float  # 2 d mu_TN^2
    dirac_score_at_zero: float  # under the exact model N(0, I)
    dirac_score_at_zero_fitted: float
    stats: dict = field(default_factory=dict, repr=False)

    def auroc(self, case, kind):
        for c, k, v in self.rows:
            if c == case and k == str(kind):
                return v
        raise KeyError((case, kind))

    def write_csv(self, path):
        fileio.write_csv(path, ["case", "statistic", "auroc"], self.rows)


def run_gaussian_failure_modes(d, n_batch=2, seed=0, n_train=5000, n_batches=500):
    """Score vs typicality on the two high-dimensional Gaussian regimes.

    A mean-only N(theta, I) model is fitted to N(0, I_d) draws. Case
    ``truncated``: batches of ``n_batch`` positive half-normal vectors against
    in-distribution batches. Case ``dirac``: single all-zero points against
    in-distribution singletons.
    """
    if d < 2:
        raise ValidationError("d must be >= 2")
    rng = np.random.default_rng(seed)
    model = fit_gaussian(rng.standard_normal((n_train, d)), mean_only=True)
    summary = summarize(RecordSet.from_model(model, rng.standard_normal((n_train, d))))
    kinds = (StatisticKind.SCORE, StatisticKind.TYPICALITY, StatisticKind.MMD_FISHER)
    rows, stats = [], {}

    batches = consecutive_batches(n_batches * n_batch, n_batch)
    id_rec = RecordSet.from_model(model, rng.standard_normal((n_batches * n_batch, d)))
    tn_rec = RecordSet.from_model(model, sample_truncated_normal(d, n_batches * n_batch, rng.integers(2**63)))
    for kind in kinds:
        s_in = compute_statistics(kind, id_rec, summary, batches)
        s_out = compute_statistics(kind, tn_rec, summary, batches)
        stats[("truncated", str(kind))] = (s_in, s_out)
        rows.append(("truncated", str(kind), auroc(s_in, s_out)))
    s_in, s_out = stats[("truncated", "score")]
    # score of a batch in sum form is n * ||whitened mean gradient||
    gap = n_batch ** 2 * (np.mean(s_out ** 2) - np.mean(s_in ** 2))

    single_in = RecordSet.from_model(model, rng.standard_normal((n_batches, d)))
    dirac = RecordSet.from_model(model, sample_dirac_zero(d, n_batches))
    for kind in kinds:
        s_in = compute_statistics(kind, single_in, summary)
        s_out = compute_statistics(kind, dirac, summary)
        stats[("dirac", str(kind))] = (s_in, s_out)
        rows.append(("dirac", str(kind), auroc(s_in, s_out)))

    exact = DiagonalGaussianModel.standard(d)
    zero = RecordSet.from_model(exact, np.zeros((1, d)))
    return FailureModeReport(
        d=d,
        n_batch=n_batch,
        rows=rows,
        score_sq_gap=float(gap),
        score_sq_gap_expected=2.0 * d * HALF_NORMAL_MEAN ** 2,
        dirac_score_at_zero=float(compute_statistics("score", zero, summary)[0]),
        dirac_score_at_zero_fitted=float(stats[("dirac", "score")][1][0]),
        stats=stats,
    )


# -- pipeline ------------------------------------------------------------------------

SPLITS = ("train", "validation", "test_in", "test_out")


@dataclass
class ExperimentSpec:
    """Everything needed to run the detection pipeline reproducibly.

    Either ``data`` (arrays per split, with a model family or fitted
    ``model``) or ``records`` (:class:`RecordSet` per split, e.g. read from
    externally produced gradient-record files) must be given. ``test_out``
    is optional; without it no AUROC or error curves are produced.
    """

    kinds: tuple = ("score", "typicality")
    combiner: str = "fisher"
    family: str = "gaussian"
    fit_options: dict = field(default_factory=dict)
    model: object = None
    data: Optional[dict] = None
    records: Optional[dict] = None
    batch_size: int = 1
    plan: Optional[BootstrapPlan] = None
    n_datasets: int = 10000
    fim_epsilon: float = 1e-8
    fim_xi: float = 1.0
    fim_mode: str = "diagonal"
    alphas: tuple = DEFAULT_ALPHAS
    bh_route: str = "chi2"
    seed: int = 0
    echo: dict = field(default_factory=dict)  # config as given, written to spec.json

    def __post_init__(self):
        self.kinds = tuple(as_kind(k) for k in self.kinds)
        if len(set(self.kinds)) != len(self.kinds) or not self.kinds:
            raise ValidationError("statistic kinds must be non-empty and distinct")
        if self.combiner not in ("fisher", "harmonic", "dose"):
            raise ValidationError(f"unknown combiner {self.combiner!r}")
        if self.bh_route not in ("chi2", "ecdf"):
            raise ValidationError(f"unknown BH p-value route {self.bh_route!r}")
        if (self.data is None) == (self.records is None):
            raise ValidationError("give exactly one of data or records")
        if self.batch_size < 1:
            raise ValidationError("batch size must be >= 1")
        source = self.data if self.data is not None else self.records
        for split in ("validation", "test_in"):
            if split not in source:
                raise ValidationError(f"missing split {split!r}")
        if self.records is not None and StatisticKind.MAHALANOBIS in self.kinds:
            raise ValidationError("Mahalanobis score needs an in-process model")
        if StatisticKind.MAHALANOBIS in self.kinds and self.batch_size != 1:
            raise ValidationError("Mahalanobis score is single-sample only")


@dataclass
class PipelineReport:
    kinds: tuple
    ids: dict
    stats: dict
    pvalues: dict
    combined: dict
    nulls: dict
    auroc: dict
    curves: Optional[dict]
    summary: object
    model: object
    echo: dict
    plan: BootstrapPlan

    def write(self, out_dir):
        """Persist every artifact of the run into ``out_dir``."""
        out = Path(out_dir)
        (out / "nulls").mkdir(parents=True, exist_ok=True)
        with open(out / "spec.json", "w", encoding="utf-8") as fh:
            json.dump(self.echo, fh, indent=2, sort_keys=True)
            fh.write("\n")
        if self.model is not None:
            fileio.save_model(out / "model.bin", self.model)
        fileio.save_summary(out / "summary.bin", self.summary)
        prov = {"plan": self.plan.to_dict(), "model": fileio.model_hash(self.model) if self.model else None}
        for kind, cdf in self.nulls.items():
            fileio.save_null(out / "nulls" / f"{kind}.null", cdf, kind, prov)

        rows = []
        for split in self.stats:
            for kind in self.kinds:
                for i, v in zip(self.ids[split], self.stats[split][kind]):
                    rows.append((split, int(i), str(kind), float(v)))
        fileio.write_csv(out / "stats.csv", ["split", "id", "kind", "value"], rows)
        rows = []
        for split in self.pvalues:
            for kind in self.kinds:
                for i, v in zip(self.ids[split], self.pvalues[split][kind]):
                    rows.append((split, int(i), str(kind), float(v)))
        fileio.write_csv(out / "pvalues.csv", ["split", "id", "kind", "p_value"], rows)
        rows = []
        for split, by_method in self.combined.items():
            for method, (value, cp) in by_method.items():
                for i, v, c in zip(self.ids[split], value, cp):
                    rows.append((split, int(i), method, float(v), float(c)))
        fileio.write_csv(out / "combined.csv", ["split", "id", "method", "value", "combined_p"], rows)
        fileio.write_csv(out / "auroc.csv", ["name", "auroc"], [(k, float(v)) for k, v in self.auroc.items()])
        if self.curves is not None:
            c = self.curves
            fileio.write_csv(
                out / "bh_curves.csv",
                ["alpha", "type1", "type2", "fdr", "n_rejected"],
                [(float(a), float(t1), float(t2), float(f), int(r))
                 for a, t1, t2, f, r in zip(c["alpha"], c["type1"], c["type2"], c["fdr"], c["n_rejected"])],
            )
        return out


def _stage(name):
    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except StageError:
                raise
            except (OodkitError, ValueError, OSError) as exc:
                raise StageError(name, exc) from exc
        return inner
    return wrap


@_stage("fit")
def _fit_stage(spec):
    if spec.records is not None:
        return None
    if spec.model is not None:
        return spec.model
    if "train" not in spec.data:
        raise ValidationError("no training data and no fitted model")
    opts = dict(spec.fit_options)
    opts.setdefault("seed", spec.seed)
    return fit_model(spec.family, spec.data["train"], **opts)


def _records(spec, model, split):
    if spec.records is not None:
        return spec.records.get(split)
    if split not in spec.data:
        return None
    return RecordSet.from_model(model, spec.data[split])


@_stage("fim")
def _summary_stage(spec, model):
    train = _records(spec, model, "train")
    if train is None:
        raise ValidationError("training records or data are needed for the FIM/summary")
    return summarize(train, epsilon=spec.fim_epsilon, xi=spec.fim_xi, mode=spec.fim_mode)


def _stat_values(kind, spec, model, split, records, summary, batches):
    if kind is StatisticKind.MAHALANOBIS:
        return mahalanobis_statistic(model, spec.data[split])
    return compute_statistics(kind, records, summary, batches)


@_stage("calibrate")
def _null_stage(spec, model, summary, validation):
    plan = spec.plan or default_plan(spec.batch_size, len(validation), spec.seed, spec.n_datasets)
    if plan.dataset_size != spec.batch_size:
        raise ValidationError("bootstrap dataset size must equal the test batch size")
    batches = plan.batches(len(validation))
    raw = {k: _stat_values(k, spec, model, "validation", validation, summary, batches) for k in spec.kinds}
    return plan, raw, {k: EmpiricalCdf(v) for k, v in raw.items()}


@_stage("stats")
def _test_stage(spec, model, summary, split, records):
    batches = None if spec.batch_size == 1 else consecutive_batches(len(records), spec.batch_size)
    stats = {k: _stat_values(k, spec, model, split, records, summary, batches) for k in spec.kinds}
    ids = records.ids if batches is None else records.ids[batches[:, 0]]
    return ids, stats


def _p_matrix(stats, nulls, kinds):
    return np.column_stack([p_value(nulls[k], stats[k]) for k in kinds])


@_stage("combine")
def _combine_stage(spec, null_raw, nulls, pvalues, stats):
    kinds = spec.kinds
    null_p = _p_matrix(null_raw, nulls, kinds)
    dose = DoseKde({k: null_raw[k] for k in kinds})
    null_values = {
        "fisher": np.atleast_1d(fisher_combine(null_p).value),
        "harmonic": np.atleast_1d(harmonic_combine(null_p).value),
        "dose": np.atleast_1d(dose.score(np.column_stack([null_raw[k] for k in kinds]))),
    }
    combined_nulls = {m: EmpiricalCdf(v) for m, v in null_values.items()}
    out = {}
    for split in pvalues:
        pm = np.column_stack([pvalues[split][k] for k in kinds])
        fc = fisher_combine(pm)
        hc = harmonic_combine(pm)
        dv = np.atleast_1d(dose.score(np.column_stack([stats[split][k] for k in kinds])))
        res = {
            "fisher": (np.atleast_1d(fc.value), np.atleast_1d(fc.combined_p)),
            "harmonic": (np.atleast_1d(hc.value), np.atleast_1d(hc.combined_p)),
            "dose": (dv, np.atleast_1d(p_value(combined_nulls["dose"], dv))),
        }
        if spec.bh_route == "ecdf":
            for m in ("fisher", "harmonic"):
                res[m] = (res[m][0], np.atleast_1d(p_value(combined_nulls[m], res[m][0])))
        out[split] = res
    return out, combined_nulls


def run_pipeline(spec: ExperimentSpec) -> PipelineReport:
    """Fit, summarise, calibrate, score, combine and evaluate, in that order."""
    model = _fit_stage(spec)
    summary = _summary_stage(spec, model)
    validation = _stage("calibrate")(_records)(spec, model, "validation")
    plan, null_raw, nulls = _null_stage(spec, model, summary, validation)

    ids, stats, pvalues = {}, {}, {}
    for split in ("test_in", "test_out"):
        records = _stage("stats")(_records)(spec, model, split)
        if records is None:
            continue
        ids[split], stats[split] = _test_stage(spec, model, summary, split, records)
        pvalues[split] = {k: np.atleast_1d(p_value(nulls[k], stats[split][k])) for k in spec.kinds}

    combined, _ = _combine_stage(spec, null_raw, nulls, pvalues, stats)

    scores, curves = {}, None
    if "test_out" in stats:
        try:
            for k in spec.kinds:
                scores[f"stat:{k}"] = auroc(stats["test_in"][k], stats["test_out"][k])
            for m in ("fisher", "harmonic", "dose"):
                scores[f"combined:{m}"] = auroc(combined["test_in"][m][0], combined["test_out"][m][0])
            p_all = np.concatenate([combined["test_in"][spec.combiner][1], combined["test_out"][spec.combiner][1]])
            labels = np.concatenate([np.zeros(len(ids["test_in"]), bool), np.ones(len(ids["test_out"]), bool)])
            curves = error_curves(HypothesisBatch(None, p_all, labels), spec.alphas)
        except (OodkitError, ValueError) as exc:
            raise StageError("evaluate", exc) from exc

    return PipelineReport(
        kinds=spec.kinds,
        ids=ids,
        stats=stats,
        pvalues=pvalues,
        combined=combined,
        nulls=nulls,
        auroc=scores,
        curves=curves,
        summary=summary,
        model=model,
        echo=spec.echo,
        plan=plan,
    )
