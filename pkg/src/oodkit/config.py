"""JSON run configuration -> :class:`~oodkit.evaluation.ExperimentSpec`.

A data source is either a file path (``.npy``, ``.csv``, IDX) or a synthetic
block such as ``{"distribution": "normal", "n": 5000, "d": 16}``. Synthetic
sources draw from independent streams derived from the run seed and the
split name, so configs are reproducible.
"""

import copy
import json
import os
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import fileio
from .calibration import BootstrapPlan, default_plan
from .errors import ConfigError, ValidationError
from .evaluation import SPLITS, ExperimentSpec
from .models import MODEL_FAMILIES, sample_dirac_zero, sample_truncated_normal
from .statistics import StatisticKind

_SYNTHETIC = {
    "type": "object",
    "properties": {
        "distribution": {"enum": ["normal", "truncated_normal", "dirac"]},
        "n": {"type": "integer", "minimum": 1},
        "d": {"type": "integer", "minimum": 1},
        "loc": {"type": "number"},
        "scale": {"type": "number", "exclusiveMinimum": 0},
    },
    "required": ["distribution", "n", "d"],
    "additionalProperties": False,
}
_SOURCE = {"oneOf": [{"type": "string"}, _SYNTHETIC]}

SCHEMA = {
    "type": "object",
    "properties": {
        "model": {
            "type": "object",
            "properties": {
                "family": {"enum": list(MODEL_FAMILIES)},
                "path": {"type": "string"},
                "k": {"type": "integer", "minimum": 1},
                "q": {"type": "integer", "minimum": 1},
                "mean_only": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "data": {
            "type": "object",
            "properties": {s: _SOURCE for s in SPLITS},
            "required": ["validation", "test_in"],
            "additionalProperties": False,
        },
        "records": {
            "type": "object",
            "properties": {s: {"type": "string"} for s in SPLITS},
            "required": ["train", "validation", "test_in"],
            "additionalProperties": False,
        },
        "statistics": {
            "type": "array",
            "items": {"enum": [k.value for k in StatisticKind]},
            "minItems": 1,
            "uniqueItems": True,
        },
        "combiner": {"enum": ["fisher", "harmonic", "dose"]},
        "batch_size": {"type": "integer", "minimum": 1},
        "bootstrap": {
            "type": "object",
            "properties": {
                "resample": {"enum": ["with_replacement", "without_replacement", "per_example"]},
                "n_datasets": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "fim": {
            "type": "object",
            "properties": {
                "epsilon": {"type": "number", "minimum": 0},
                "xi": {"type": "number"},
                "mode": {"enum": ["diagonal", "identity"]},
            },
            "additionalProperties": False,
        },
        "alphas": {
            "type": "array",
            "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "minItems": 1,
        },
        "bh_route": {"enum": ["chi2", "ecdf"]},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
    },
    "oneOf": [{"required": ["data"]}, {"required": ["records"]}],
    "additionalProperties": False,
}

BUNDLED = {"h0-gaussian": "h0_gaussian.json", "shift-gaussian": "shift_gaussian.json"}


def resolve_seed(seed=None):
    """Explicit seed, else ``$OODKIT_SEED``, else 0."""
    if seed is not None:
        return int(seed)
    env = os.environ.get("OODKIT_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ValidationError(f"OODKIT_SEED must be an integer, got {env!r}") from None
    return 0


def read_config(path_or_name):
    """Load a config document from a path or a bundled config name."""
    if isinstance(path_or_name, dict):
        return copy.deepcopy(path_or_name)
    if str(path_or_name) in BUNDLED:
        text = resources.files("oodkit").joinpath("data", BUNDLED[str(path_or_name)]).read_text("utf-8")
        return json.loads(text)
    try:
        with open(path_or_name, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path_or_name}: invalid JSON ({exc})") from None


def validate_config(doc):
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None


def _synthetic(src, seed, split_index):
    rng = np.random.default_rng([seed, split_index])
    n, d = src["n"], src["d"]
    dist = src["distribution"]
    loc, scale = src.get("loc", 0.0), src.get("scale", 1.0)
    if dist == "normal":
        return loc + scale * rng.standard_normal((n, d))
    if dist == "truncated_normal":
        return loc + scale * sample_truncated_normal(d, n, rng.integers(2**63))
    return loc + sample_dirac_zero(d, n)


def load_source(src, seed, split):
    if isinstance(src, str):
        return fileio.load_matrix(src)
    return _synthetic(src, seed, SPLITS.index(split))


def spec_from_config(doc, base_dir=None, seed=None):
    """Validate ``doc`` and materialise its data into an ExperimentSpec."""
    validate_config(doc)
    base = Path(base_dir) if base_dir else Path.cwd()
    seed = resolve_seed(seed if seed is not None else doc.get("seed"))

    def path(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    model_cfg = doc.get("model", {})
    model = None
    if "path" in model_cfg:
        model = fileio.load_model(path(model_cfg["path"]))
    fit_options = {}
    family = model_cfg.get("family", "gaussian")
    if family == "gmm" and "k" in model_cfg:
        fit_options["k"] = model_cfg["k"]
    if family == "ppca" and "q" in model_cfg:
        fit_options["q"] = model_cfg["q"]
    if family == "gaussian" and model_cfg.get("mean_only"):
        fit_options["mean_only"] = True

    data = records = None
    if "data" in doc:
        data = {}
        for split, src in doc["data"].items():
            data[split] = load_source(str(path(src)) if isinstance(src, str) else src, seed, split)
    else:
        records = {s: fileio.read_gradient_records(path(p)) for s, p in doc["records"].items()}

    batch_size = doc.get("batch_size", 1)
    boot = doc.get("bootstrap", {})
    plan = None
    if boot:
        n_val = len(records["validation"]) if records else data["validation"].shape[0]
        base_plan = default_plan(batch_size, n_val, seed, boot.get("n_datasets", 10000))
        mode = boot.get("resample", base_plan.resample)
        n_ds = n_val if mode == "per_example" else boot.get("n_datasets", base_plan.n_datasets)
        plan = BootstrapPlan(n_ds, batch_size, mode, seed)
    fim = doc.get("fim", {})
    kwargs = {}
    if "alphas" in doc:
        kwargs["alphas"] = tuple(doc["alphas"])
    echo = copy.deepcopy(doc)
    echo["seed"] = seed
    return ExperimentSpec(
        kinds=tuple(doc.get("statistics", ("score", "typicality"))),
        combiner=doc.get("combiner", "fisher"),
        family=family,
        fit_options=fit_options,
        model=model,
        data=data,
        records=records,
        batch_size=batch_size,
        plan=plan,
        fim_epsilon=fim.get("epsilon", 1e-8),
        fim_xi=fim.get("xi", 1.0),
        fim_mode=fim.get("mode", "diagonal"),
        bh_route=doc.get("bh_route", "chi2"),
        seed=seed,
        echo=echo,
        **kwargs,
    )
