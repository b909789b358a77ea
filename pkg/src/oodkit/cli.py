"""``oodkit`` command line interface.

Errors are reported on stderr as one JSON object
``{"error": <code>, "message": <text>}``; usage errors exit with status 2,
all other failures with status 1.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import fileio
from .calibration import BootstrapPlan, EmpiricalCdf, build_null, default_plan, p_value
from .combination import DoseKde, fisher_combine, harmonic_combine
from .config import read_config, resolve_seed, spec_from_config
from .decision import HypothesisBatch, benjamini_hochberg, error_curves
from .errors import ConfigError, OodkitError, StageError, ValidationError
from .evaluation import auroc, run_gaussian_failure_modes, run_pipeline
from .fisher import RunningMoments
from .models import MODEL_FAMILIES, fit_model
from .statistics import RecordSet, TrainingSummary, as_kind, compute_statistics, consecutive_batches


class UsageError(ValidationError):
    code = "usage_error"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _kinds(text):
    return [as_kind(k.strip()) for k in text.split(",") if k.strip()]


def _load_records(args, summary=None):
    expected = None if summary is None else summary.n_params
    if args.records:
        return fileio.read_gradient_records(args.records, expected_params=expected)
    if not (args.model and args.data):
        raise UsageError("give --records, or both --model and --data")
    model = fileio.load_model(args.model)
    return RecordSet.from_model(model, fileio.load_matrix(args.data))


def cmd_fit(args):
    data = fileio.load_matrix(args.data)
    model = fit_model(args.model, data, k=args.k, q=args.q, seed=resolve_seed(args.seed), mean_only=args.mean_only)
    fileio.save_model(args.out, model)
    if args.records_out:
        fileio.write_gradient_records(args.records_out, RecordSet.from_model(model, data))
    return {"model": model.family, "n_params": len(model.params), "out": args.out}


def cmd_fim(args):
    with fileio.RecordReader(args.records) as reader:
        if not reader.has_gradient:
            raise OodkitError("record file carries no gradients; the FIM needs them")
        moments = RunningMoments.empty(reader.n_params)
        for chunk in reader.chunks():
            moments = moments.accumulate_batch(chunk.log_density, chunk.gradients)
    summary = TrainingSummary.from_moments(moments, epsilon=args.epsilon, xi=args.xi, mode=args.mode)
    fileio.save_summary(args.out, summary)
    return {"n_train": summary.n_train, "n_params": summary.n_params, "out": args.out}


def cmd_stats(args):
    summary = fileio.load_summary(args.summary)
    records = _load_records(args, summary)
    if args.save_records:
        fileio.write_gradient_records(args.save_records, records)
    batches = None if args.batch_size == 1 else consecutive_batches(len(records), args.batch_size)
    table = {k: compute_statistics(k, records, summary, batches) for k in _kinds(args.kinds)}
    ids = records.ids if batches is None else records.ids[batches[:, 0]]
    fileio.write_stat_records(args.out, ids, table)
    return {"rows": len(ids) * len(table), "out": args.out}


def cmd_calibrate(args):
    summary = fileio.load_summary(args.summary)
    records = _load_records(args, summary)
    seed = resolve_seed(args.seed)
    if args.resample:
        n_ds = len(records) if args.resample == "per_example" else args.n_datasets
        plan = BootstrapPlan(n_ds, args.batch_size, args.resample, seed)
    else:
        plan = default_plan(args.batch_size, len(records), seed, args.n_datasets)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    nulls = {}
    for kind in _kinds(args.kinds):
        nulls[kind] = build_null(records, plan, kind, summary)
        fileio.save_null(out_dir / f"{kind}.null", nulls[kind], kind, {"plan": plan.to_dict()})
    result = {"kinds": [str(k) for k in nulls], "plan": plan.to_dict(), "out_dir": str(out_dir)}
    if args.stats:
        ids, table = fileio.read_stat_records(args.stats)
        missing = [str(k) for k in nulls if k not in table]
        if missing:
            raise ValidationError(f"statistics file lacks kinds {missing}")
        pvals = {k: np.atleast_1d(p_value(nulls[k], table[k])) for k in nulls}
        fileio.write_stat_records(args.pvalues_out, ids, pvals)
        result["pvalues"] = args.pvalues_out
    return result


def cmd_combine(args):
    ids, table = fileio.read_stat_records(args.input)
    kinds = sorted(table, key=str)
    mat = np.column_stack([table[k] for k in kinds])
    if args.method == "fisher":
        res = fisher_combine(mat)
        value, cp = np.atleast_1d(res.value), np.atleast_1d(res.combined_p)
    elif args.method == "harmonic":
        res = harmonic_combine(mat)
        value, cp = np.atleast_1d(res.value), np.atleast_1d(res.combined_p)
    else:
        if not args.train:
            raise UsageError("--method dose needs --train with in-distribution statistics")
        _, train = fileio.read_stat_records(args.train)
        kde = DoseKde({k: train[k] for k in kinds})
        value = np.atleast_1d(kde.score(mat))
        cp = np.atleast_1d(p_value(EmpiricalCdf(kde.score(np.column_stack([train[k] for k in kinds]))), value))
    fileio.write_csv(
        args.out, ["id", "value", "combined_p"], [(int(i), float(v), float(c)) for i, v, c in zip(ids, value, cp)]
    )
    return {"method": args.method, "rows": len(ids), "out": args.out}


def _read_column(path, column):
    rows = fileio.read_csv(path)
    if not rows or column not in rows[0]:
        raise ValidationError(f"{path}: missing column {column!r}")
    return np.array([int(r["id"]) for r in rows]), np.array([float(r[column]) for r in rows])


def cmd_bh(args):
    ids, p = _read_column(args.input, args.column)
    labels = None
    if args.labels:
        lab = {int(r["id"]): r["label"].strip().lower() in ("1", "outlier", "true") for r in fileio.read_csv(args.labels)}
        labels = np.array([lab[int(i)] for i in ids])
    batch = HypothesisBatch(ids, p, labels)
    report = benjamini_hochberg(batch, args.alpha)
    if args.out:
        fileio.write_csv(args.out, ["id", "p_value", "rejected"],
                         [(int(i), float(v), int(r)) for i, v, r in zip(ids, p, report.rejected)])
    if args.curves:
        c = error_curves(batch)
        fileio.write_csv(args.curves, ["alpha", "type1", "type2", "fdr", "n_rejected"],
                         [(float(a), float(t1), float(t2), float(f), int(n)) for a, t1, t2, f, n in
                          zip(c["alpha"], c["type1"], c["type2"], c["fdr"], c["n_rejected"])])
    return {"alpha": args.alpha, "threshold": report.threshold, "n_rejected": int(report.rejected.sum())}


def cmd_auroc(args):
    _, a = _read_column(args.in_scores, args.column)
    _, b = _read_column(args.out_scores, args.column)
    return {"auroc": auroc(a, b)}


def cmd_run(args):
    doc = read_config(args.config)
    base = Path(args.config).parent if Path(args.config).exists() else None
    spec = spec_from_config(doc, base_dir=base, seed=args.seed)
    out = args.out_dir or doc.get("output_dir")
    if not out:
        raise UsageError("no output directory (use --out-dir or output_dir in the config)")
    report = run_pipeline(spec)
    report.write(out)
    return {"out_dir": str(out), "auroc": report.auroc}


def cmd_gaussian_demo(args):
    report = run_gaussian_failure_modes(args.d, n_batch=args.n_batch, seed=resolve_seed(args.seed),
                                        n_train=args.n_train, n_batches=args.n_batches)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "auroc.csv")
    summary = {
        "d": report.d,
        "n_batch": report.n_batch,
        "score_sq_gap": report.score_sq_gap,
        "score_sq_gap_expected": report.score_sq_gap_expected,
        "dirac_score_at_zero": report.dirac_score_at_zero,
    }
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def build_parser():
    parser = _Parser(prog="oodkit", description="Statistical OOD detection with generative models.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("fit", help="fit a model to a data matrix")
    p.add_argument("--model", choices=MODEL_FAMILIES, required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, help="GMM components")
    p.add_argument("--q", type=int, help="PPCA latent dimension")
    p.add_argument("--mean-only", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--records-out", help="also export training gradient records")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("fim", help="training summary (diagonal FIM, means) from a record file")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epsilon", type=float, default=1e-8)
    p.add_argument("--xi", type=float, default=1.0)
    p.add_argument("--mode", choices=("diagonal", "identity"), default="diagonal")
    p.set_defaults(func=cmd_fim)

    for name, func, helptext in (
        ("stats", cmd_stats, "per-example or per-batch statistics as id,kind,value CSV"),
        ("calibrate", cmd_calibrate, "null eCDFs from validation records"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--summary", required=True)
        p.add_argument("--records")
        p.add_argument("--model")
        p.add_argument("--data")
        p.add_argument("--kinds", default="score,typicality")
        p.add_argument("--batch-size", type=int, default=1)
        p.set_defaults(func=func)
        if name == "stats":
            p.add_argument("--out", required=True)
            p.add_argument("--save-records")
        else:
            p.add_argument("--out-dir", required=True)
            p.add_argument("--resample", choices=("per_example", "with_replacement", "without_replacement"))
            p.add_argument("--n-datasets", type=int, default=10000)
            p.add_argument("--seed", type=int)
            p.add_argument("--stats", help="statistics CSV to convert into p-values")
            p.add_argument("--pvalues-out", default="pvalues.csv")

    p = sub.add_parser("combine", help="combine per-kind p-values (or statistics for dose)")
    p.add_argument("--method", choices=("fisher", "harmonic", "dose"), default="fisher")
    p.add_argument("--input", required=True)
    p.add_argument("--train", help="in-distribution statistics CSV (dose only)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_combine)

    p = sub.add_parser("bh", help="Benjamini-Hochberg decisions")
    p.add_argument("--input", required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--column", default="combined_p")
    p.add_argument("--labels", help="CSV with id,label (outlier/inlier)")
    p.add_argument("--out")
    p.add_argument("--curves", help="write alpha,type1,type2,fdr CSV (needs --labels)")
    p.set_defaults(func=cmd_bh)

    p = sub.add_parser("auroc", help="AUROC between in- and out-distribution score files")
    p.add_argument("--in", dest="in_scores", required=True)
    p.add_argument("--out", dest="out_scores", required=True)
    p.add_argument("--column", default="value")
    p.set_defaults(func=cmd_auroc)

    p = sub.add_parser("run", help="run the full pipeline from a JSON config")
    p.add_argument("--config", required=True, help="config path or bundled name (h0-gaussian, shift-gaussian)")
    p.add_argument("--out-dir")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("gaussian-demo", help="score vs typicality on truncated-normal and Dirac OOD data")
    p.add_argument("--d", type=int, default=1000)
    p.add_argument("--n-batch", type=int, default=2)
    p.add_argument("--n-train", type=int, default=5000)
    p.add_argument("--n-batches", type=int, default=500)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", default="gaussian_demo")
    p.set_defaults(func=cmd_gaussian_demo)
    return parser


def _fail(exc, status):
    payload = {"error": getattr(exc, "code", type(exc).__name__), "message": str(exc)}
    if isinstance(exc, StageError):
        payload["stage"] = exc.stage
    sys.stderr.write(json.dumps(payload) + "\n")
    return status


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        result = args.func(args)
    except (UsageError, ConfigError) as exc:
        return _fail(exc, 2)
    except (OodkitError, ValueError, OSError) as exc:
        return _fail(exc, 1)
    sys.stdout.write(json.dumps(result, sort_keys=True, default=float) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
