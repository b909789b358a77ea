import numpy as np
import pytest

from oodkit.calibration import (
    BootstrapPlan,
    EmpiricalCdf,
    build_null,
    default_plan,
    ks_uniform,
    null_p_value_uniformity_check,
    p_value,
)
from oodkit.errors import ValidationError
from oodkit.models import fit_gaussian
from oodkit.statistics import RecordSet, compute_statistics, summarize


def test_per_example_null():
    null = build_null([3.0, 1.0, 2.0], BootstrapPlan(3), "score")
    np.testing.assert_array_equal(null.sorted_values, [1, 2, 3])


def test_median_cdf():
    values = np.random.default_rng(0).normal(size=101)
    cdf = EmpiricalCdf(values)
    assert abs(cdf(np.median(values)) - 0.5) <= 1 / 101


def test_empty_validation():
    with pytest.raises(ValidationError):
        build_null([], BootstrapPlan(1), "score")


class TestPValue:
    def test_floor(self):
        assert p_value(EmpiricalCdf([1.0, 2.0, 3.0]), 10.0) == 1 / 4

    def test_ceiling(self):
        cdf = EmpiricalCdf([1.0, 2.0, 3.0])
        assert p_value(cdf, 1.0) == 1.0
        assert p_value(cdf, -5.0) == 1.0

    def test_direct_count(self):
        assert p_value(EmpiricalCdf([1.0, 2.0, 3.0, 4.0]), 2.5) == 0.6

    def test_brute_force(self, rng):
        null = rng.normal(size=50)
        t = rng.normal(size=30)
        brute = [(1 + np.sum(null >= x)) / 51 for x in t]
        np.testing.assert_array_equal(p_value(EmpiricalCdf(null), t), brute)

    def test_non_finite(self):
        with pytest.raises(ValidationError):
            p_value(EmpiricalCdf([1.0]), np.nan)


class TestPlans:
    def test_defaults(self):
        assert default_plan(1, 30).resample == "per_example"
        assert default_plan(2, 30).resample == "without_replacement"
        assert default_plan(5, 30).resample == "with_replacement"
        assert default_plan(5, 30).n_datasets == 10000

    def test_without_replacement_distinct(self):
        b = BootstrapPlan(200, 5, "without_replacement", seed=3).batches(12)
        assert b.shape == (200, 5)
        assert all(len(set(row)) == 5 for row in b.tolist())
        assert b.min() >= 0 and b.max() < 12

    def test_without_replacement_too_large(self):
        with pytest.raises(ValidationError):
            BootstrapPlan(10, 5, "without_replacement").batches(4)

    def test_seeded(self):
        a = BootstrapPlan(50, 3, "with_replacement", seed=1).batches(20)
        b = BootstrapPlan(50, 3, "with_replacement", seed=1).batches(20)
        np.testing.assert_array_equal(a, b)

    def test_bootstrap_null_from_records(self, rng):
        m = fit_gaussian(rng.normal(size=(100, 2)))
        val = RecordSet.from_model(m, rng.normal(size=(40, 2)))
        s = summarize(RecordSet.from_model(m, rng.normal(size=(100, 2))))
        plan = BootstrapPlan(300, 2, "without_replacement", seed=0)
        null = build_null(val, plan, "score", s)
        np.testing.assert_array_equal(null.sorted_values, np.sort(compute_statistics("score", val, s, plan.batches(40))))

    def test_bootstrap_needs_records(self):
        with pytest.raises(ValidationError):
            build_null([1.0, 2.0], BootstrapPlan(5, 2, "with_replacement"), "score")


class TestUniformity:
    def test_ideal_grid(self):
        n = 200
        assert ks_uniform(np.arange(1, n + 1) / (n + 1)) <= 1 / (n + 1)

    def _setup(self, shift):
        r = np.random.default_rng(21)
        m = fit_gaussian(r.standard_normal((5000, 4)))
        s = summarize(RecordSet.from_model(m, r.standard_normal((5000, 4))))
        return m, r.standard_normal((3000, 4)), r.standard_normal((2000, 4)) + shift, s

    def test_h0(self):
        m, val, test, s = self._setup(0.0)
        assert null_p_value_uniformity_check(m, val, test, s) < 0.05

    def test_shifted(self):
        m, val, test, s = self._setup(3.0)
        assert null_p_value_uniformity_check(m, val, test, s) > 0.5
