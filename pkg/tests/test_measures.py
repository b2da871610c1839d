import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import wasserstein_distance
from statsmodels.stats.proportion import proportion_confint

from fellerlab.errors import DomainError
from fellerlab.measures import (EmpiricalMeasure, FiniteMeasure, TestFunction, ball_hit_fraction,
                                bin_edges_from_spec, bin_masses, expectation, hat_function,
                                tv_binned, tv_finite, w1_empirical_1d, wilson_interval)


def fm(*p):
    return FiniteMeasure.from_vector(p)


def em(*s):
    return EmpiricalMeasure(np.array(s, dtype=float))


# ---- oracle values -------------------------------------------------------

def test_tv_finite_examples():
    assert tv_finite(fm(0.5, 0.5), fm(0.5, 0.5)) == 0
    assert tv_finite(fm(1, 0), fm(0, 1)) == 1
    assert tv_finite(fm(0.5, 0.5), fm(0.25, 0.75)) == pytest.approx(0.25, abs=1e-15)


def test_tv_finite_rejects_mismatched_supports():
    with pytest.raises(DomainError):
        tv_finite(fm(0.5, 0.5), fm(0.2, 0.3, 0.5))
    with pytest.raises(DomainError):
        tv_finite(FiniteMeasure([0, 1], [0.5, 0.5]), FiniteMeasure([0, 2], [0.5, 0.5]))


def test_finite_measure_invariants():
    with pytest.raises(DomainError):
        FiniteMeasure([0, 0], [0.5, 0.5])
    with pytest.raises(DomainError):
        fm(0.6, 0.6)
    with pytest.raises(DomainError):
        fm(1.5, -0.5)


def test_w1_examples():
    assert w1_empirical_1d(em(0, 1), em(0, 1)) == 0
    assert w1_empirical_1d(em(0, 0), em(1, 1)) == 1
    assert w1_empirical_1d(em(0, 2), em(1, 1)) == 1


def test_w1_matches_scipy_on_unequal_counts():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=37), rng.normal(1.0, 2.0, size=51)
    assert w1_empirical_1d(EmpiricalMeasure(a), EmpiricalMeasure(b)) == pytest.approx(
        wasserstein_distance(a, b), rel=1e-12)


def test_w1_empty_rejected():
    with pytest.raises(DomainError):
        EmpiricalMeasure([])


def test_tv_binned_examples():
    bins = [0, 0.5, 1]
    a = EmpiricalMeasure(np.full(100, 0.1))
    b = EmpiricalMeasure(np.full(100, 0.9))
    c = EmpiricalMeasure(np.r_[np.full(50, 0.1), np.full(50, 0.9)])
    assert tv_binned(a, a, bins) == 0
    assert tv_binned(a, b, bins) == 1
    assert tv_binned(a, c, bins) == pytest.approx(0.5)


def test_overflow_bins_keep_every_sample():
    mu = em(-5, 0.2, 0.7, 1.0, 9)
    m = bin_masses(mu, [0, 0.5, 1])
    assert m.tolist() == pytest.approx([0.2, 0.2, 0.4, 0.2])
    assert m.sum() == pytest.approx(1.0)


def test_bin_spec_forms():
    assert bin_edges_from_spec([0, 1, 3]).tolist() == [0, 1, 3]
    assert bin_edges_from_spec({"min": 0, "max": 1, "count": 4}).tolist() == [0, 0.25, 0.5, 0.75, 1]
    with pytest.raises(DomainError):
        bin_masses(em(0.1), [0, 0])


def test_hat_examples():
    f = hat_function(0, 1)
    assert f(0) == 1
    assert f(1) == 0 and f(-1) == 0
    assert hat_function(2, 0.5)(2.25) == pytest.approx(0.5)
    assert f.sup_norm == 1 and f.lip_const == 1
    with pytest.raises(DomainError):
        hat_function(0, 0)


def test_ball_hit_fraction_examples():
    inside = em(*np.zeros(100))
    assert ball_hit_fraction(inside, 0, 1)[0] == 1.0
    assert ball_hit_fraction(em(*np.full(100, 5.0)), 0, 1)[0] == 0.0
    mu = EmpiricalMeasure(np.r_[np.zeros(25), np.full(75, 3.0)])
    est, lo, hi = ball_hit_fraction(mu, 0, 1)
    assert est == 0.25
    assert (lo, hi) == pytest.approx((0.175, 0.344), abs=1e-3)


@pytest.mark.parametrize("k,n,conf", [(25, 100, 0.95), (0, 50, 0.95), (50, 50, 0.99), (3, 1000, 0.9)])
def test_wilson_matches_statsmodels(k, n, conf):
    lo, hi = wilson_interval(k / n, n, conf)
    ref = proportion_confint(k, n, alpha=1 - conf, method="wilson")
    assert (lo, hi) == pytest.approx(ref, abs=1e-12)


def test_expectation_examples():
    f = hat_function(0, 1)
    assert expectation(FiniteMeasure([0, 1], [1.0, 0.0]), f) == 1
    assert expectation(em(0.3), f) == pytest.approx(f(0.3))
    assert expectation(em(-0.5, 0.5), f) == pytest.approx(0.5)


def test_custom_test_function_is_clipped():
    g = TestFunction.custom(lambda x: 3 * x, sup_norm=1, lip_const=3)
    assert g(5.0) == 1 and g(-5.0) == -1


def test_csv_round_trip(tmp_path):
    mu = EmpiricalMeasure([0.1, 1 / 3, -2.5])
    mu.to_csv(tmp_path / "e.csv")
    back = EmpiricalMeasure.from_csv(tmp_path / "e.csv")
    assert np.array_equal(back.samples, mu.samples) and back.is_uniform
    assert (tmp_path / "e.csv").read_text().splitlines()[0] == "sample,weight"
    nu = fm(0.2, 0.3, 0.5)
    nu.to_csv(tmp_path / "f.csv")
    assert np.array_equal(FiniteMeasure.from_csv(tmp_path / "f.csv").probs, nu.probs)


# ---- properties ----------------------------------------------------------

prob_vec = st.lists(st.floats(0.0, 1.0), min_size=4, max_size=4).filter(lambda v: sum(v) > 1e-3)


def _norm(v):
    v = np.asarray(v)
    return FiniteMeasure.from_vector(v / v.sum())


@given(prob_vec, prob_vec, prob_vec)
def test_tv_finite_is_a_bounded_metric(a, b, c):
    a, b, c = _norm(a), _norm(b), _norm(c)
    assert tv_finite(a, b) == pytest.approx(tv_finite(b, a))
    assert 0 <= tv_finite(a, b) <= 1
    assert tv_finite(a, c) <= tv_finite(a, b) + tv_finite(b, c) + 1e-12


samples = st.lists(st.floats(-5, 5), min_size=1, max_size=40)


@given(samples, samples, samples)
def test_tv_binned_is_a_bounded_metric(a, b, c):
    bins = np.linspace(-4, 4, 9)
    a, b, c = EmpiricalMeasure(a), EmpiricalMeasure(b), EmpiricalMeasure(c)
    ab = tv_binned(a, b, bins)
    assert ab == pytest.approx(tv_binned(b, a, bins))
    assert 0 <= ab <= 1
    assert tv_binned(a, c, bins) <= ab + tv_binned(b, c, bins) + 1e-12


@given(samples, samples, st.integers(1, 4))
def test_refining_bins_never_decreases_tv(a, b, split):
    coarse = np.linspace(-4, 4, 5)
    fine = np.linspace(-4, 4, 4 * split + 1)  # contains every coarse edge
    a, b = EmpiricalMeasure(a), EmpiricalMeasure(b)
    assert tv_binned(a, b, coarse) <= tv_binned(a, b, fine) + 1e-12


@given(prob_vec, prob_vec, st.floats(0.05, 3), st.floats(-1, 4))
def test_expectation_gap_bounded_by_tv(a, b, eps, z):
    a, b = _norm(a), _norm(b)
    f = hat_function(z, eps)
    gap = abs(expectation(a, f) - expectation(b, f))
    assert gap <= 2 * f.sup_norm * tv_finite(a, b) + 1e-12


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=50), st.floats(-10, 10))
def test_w1_of_translation_is_shift(s, c):
    mu = EmpiricalMeasure(s)
    shifted = mu.translate(c)
    assert w1_empirical_1d(mu, shifted) == pytest.approx(abs(c), abs=1e-9)


@settings(max_examples=200)
@given(st.floats(-10, 10), st.floats(0.01, 5), st.lists(st.floats(-20, 20), min_size=1, max_size=30))
def test_hat_sandwich(z, eps, s):
    s = np.asarray(s)
    f = hat_function(z, eps)
    v = f(s)
    assert np.all(0.5 * (np.abs(s - z) < eps / 2) <= v + 1e-15)
    assert np.all(v <= (np.abs(s - z) < eps))
    assert np.all((-1 <= v) & (v <= 1))
