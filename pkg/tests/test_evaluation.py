import filecmp

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oodkit.errors import DegenerateError, StageError, ValidationError
from oodkit.evaluation import ExperimentSpec, auroc, pearson_correlation, run_gaussian_failure_modes, run_pipeline
from oodkit.models import fit_gaussian
from oodkit.statistics import RecordSet


class TestAuroc:
    def test_perfect(self):
        assert auroc([0, 1], [2, 3]) == 1.0

    def test_pairwise(self):
        assert auroc([1, 3], [2, 4]) == 0.75

    def test_ties(self):
        assert auroc([1, 2, 3], [1, 2, 3]) == 0.5

    def test_empty(self):
        with pytest.raises(ValidationError):
            auroc([], [1.0])

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(-5, 5), min_size=1, max_size=20), st.lists(st.integers(-5, 5), min_size=1, max_size=20))
    def test_brute_force(self, a, b):
        pairs = [(y > x) + 0.5 * (y == x) for x in a for y in b]
        assert auroc(a, b) == pytest.approx(sum(pairs) / len(pairs), abs=1e-12)


class TestPearson:
    def test_self(self, rng):
        a = rng.normal(size=10)
        assert pearson_correlation(a, a) == pytest.approx(1.0)
        assert pearson_correlation(a, -a) == pytest.approx(-1.0)

    def test_degenerate(self):
        with pytest.raises(DegenerateError):
            pearson_correlation(np.ones(5), np.arange(5.0))


class TestFailureModes:
    def test_small(self):
        rep = run_gaussian_failure_modes(200, n_batch=2, seed=3, n_train=2000, n_batches=200)
        assert rep.auroc("truncated", "score") > 0.95
        assert rep.dirac_score_at_zero == 0.0
        assert rep.auroc("dirac", "typicality") == 1.0

    def test_deterministic(self, tmp_path):
        a = run_gaussian_failure_modes(50, seed=1, n_train=500, n_batches=50)
        b = run_gaussian_failure_modes(50, seed=1, n_train=500, n_batches=50)
        a.write_csv(tmp_path / "a.csv")
        b.write_csv(tmp_path / "b.csv")
        assert filecmp.cmp(tmp_path / "a.csv", tmp_path / "b.csv", shallow=False)


def shift_spec(seed=0, **kw):
    r = np.random.default_rng(seed)
    data = {
        "train": r.standard_normal((1000, 4)),
        "validation": r.standard_normal((600, 4)),
        "test_in": r.standard_normal((200, 4)),
        "test_out": r.standard_normal((200, 4)) + 1.0,
    }
    return ExperimentSpec(kinds=("score", "typicality", "mmd_fisher"), data=data, seed=seed, **kw)


class TestPipeline:
    def test_shift_detected(self):
        rep = run_pipeline(shift_spec())
        assert rep.auroc["stat:score"] > 0.7
        assert rep.auroc["combined:fisher"] > 0.7
        assert rep.curves is not None

    def test_report_files(self, tmp_path):
        run_pipeline(shift_spec()).write(tmp_path)
        for name in ("spec.json", "model.bin", "summary.bin", "stats.csv", "pvalues.csv", "combined.csv",
                     "auroc.csv", "bh_curves.csv", "nulls/score.null", "nulls/typicality.null"):
            assert (tmp_path / name).exists(), name

    def test_byte_identical(self, tmp_path):
        run_pipeline(shift_spec(seed=5)).write(tmp_path / "a")
        run_pipeline(shift_spec(seed=5)).write(tmp_path / "b")
        for name in ("stats.csv", "pvalues.csv", "combined.csv", "auroc.csv", "bh_curves.csv", "model.bin"):
            assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name, shallow=False), name

    def test_records_parity(self):
        spec = shift_spec()
        rep = run_pipeline(spec)
        model = fit_gaussian(spec.data["train"])
        records = {k: RecordSet.from_model(model, v) for k, v in spec.data.items()}
        rep2 = run_pipeline(ExperimentSpec(kinds=spec.kinds, records=records, seed=spec.seed))
        for split in rep.stats:
            for kind in spec.kinds:
                np.testing.assert_array_equal(rep.stats[split][kind], rep2.stats[split][kind])
        assert rep.auroc == rep2.auroc

    def test_batched_with_bootstrap(self):
        rep = run_pipeline(shift_spec(batch_size=4, n_datasets=500))
        assert rep.plan.resample == "with_replacement"
        assert rep.auroc["stat:score"] > 0.9

    def test_stage_error(self):
        spec = shift_spec()
        spec.data["validation"] = spec.data["validation"][:, :2]
        with pytest.raises(StageError) as info:
            run_pipeline(spec)
        assert info.value.stage

    def test_spec_validation(self):
        with pytest.raises(ValidationError):
            ExperimentSpec(data={"validation": np.zeros((2, 2))})
        with pytest.raises(ValidationError):
            ExperimentSpec(combiner="median", data={"validation": np.zeros((2, 2)), "test_in": np.zeros((2, 2))})
