import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oodkit.decision import HypothesisBatch, benjamini_hochberg, bh_threshold, error_curves
from oodkit.errors import CapabilityError, ValidationError


def batch(p, labels=None):
    return HypothesisBatch(None, np.asarray(p, dtype=float), labels)


def test_hand_example():
    rep = benjamini_hochberg(HypothesisBatch(np.array(["a", "b", "c", "d"]), [0.01, 0.02, 0.03, 0.5]), 0.05)
    assert list(rep.rejected_ids) == ["a", "b", "c"]
    assert rep.threshold == 0.03


def test_step_up_not_step_down():
    # p_(1) fails its own bound but p_(2) passes, so both are rejected
    rep = benjamini_hochberg(batch([0.04, 0.045]), 0.05)
    assert rep.rejected.sum() == 2


def test_all_ones():
    rep = benjamini_hochberg(batch([1.0, 1.0, 1.0]), 0.5)
    assert rep.rejected.sum() == 0
    assert rep.threshold == 0.0


def test_zero_p_values_rejected():
    assert benjamini_hochberg(batch([0.0, 0.0, 0.9]), 0.05).rejected.sum() == 2


@pytest.mark.parametrize("p,alpha", [(0.04, 0.05), (0.05, 0.05), (0.06, 0.05)])
def test_single_hypothesis(p, alpha):
    assert bool(benjamini_hochberg(batch([p]), alpha).rejected[0]) == (p <= alpha)


@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1, 1.5])
def test_alpha_range(alpha):
    with pytest.raises(ValidationError):
        bh_threshold([0.1], alpha)


def test_curves_limit():
    p = np.linspace(0.001, 0.9, 20)
    labels = np.arange(20) % 2 == 0
    c = error_curves(batch(p, labels), [0.99])
    assert c["type1"][0] == 1.0
    assert c["type2"][0] == 0.0


def test_curves_need_labels():
    with pytest.raises(CapabilityError):
        error_curves(batch([0.1, 0.2]))


def test_fdr_brute_force(rng):
    p = rng.uniform(size=50)
    labels = rng.uniform(size=50) < 0.3
    c = error_curves(batch(p, labels), [0.2])
    rej = benjamini_hochberg(batch(p), 0.2).rejected
    assert c["fdr"][0] == np.sum(rej & ~labels) / max(1, rej.sum())


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=40))
def test_monotone_in_alpha(p):
    b = batch(p)
    prev = None
    for a in (0.01, 0.05, 0.1, 0.2, 0.5, 0.9):
        rej = benjamini_hochberg(b, a).rejected
        if prev is not None:
            assert np.all(rej >= prev)
        prev = rej
