import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from mvsgnn.errors import AllZeroGradients, BudgetExceedsN
from mvsgnn.solver import (
    G_value, objective, optimal_probs, oracle_probs, quickselect_threshold, uplift_smallest, variance_stats,
)


@st.composite
def instances(draw, max_n=64):
    n = draw(st.integers(1, max_n))
    g = draw(st.lists(st.floats(0, 1e3, allow_nan=False), min_size=n, max_size=n))
    assume(max(g) > 0)
    B = draw(st.integers(1, n))
    return np.array(g), B


def grid_mu_oracle(g, B):
    """Bisection on the water level: sum min(1, g/mu) = B."""
    lo, hi = 1e-300, g.sum() / B * 4 + 1
    f = lambda mu: np.minimum(1, g / mu).sum() - B
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if f(mid) > 0 else (lo, mid)
    return hi


def test_uniform_example():
    pv = optimal_probs([1, 1, 1, 1], 2)
    assert np.allclose(pv.probs, 0.5) and pv.kappa == 4


def test_clamped_example():
    pv = optimal_probs([1, 1, 10], 2)
    assert np.allclose(pv.probs, [0.5, 0.5, 1]) and pv.kappa == 2 and pv.mu == pytest.approx(2)


def test_boundary_example():
    pv = optimal_probs([1, 1, 1, 3], 2)
    assert np.allclose(pv.probs, [1 / 3, 1 / 3, 1 / 3, 1])


def test_quickselect_examples():
    assert quickselect_threshold([2.0] * 5, 2) == pytest.approx(2.0 * 5 / 2, rel=1e-12)
    assert quickselect_threshold([3.7], 1) == pytest.approx(3.7)


def test_full_budget_and_dominant():
    assert np.array_equal(oracle_probs([1, 5, 2], 3).probs, [1, 1, 1])
    assert np.array_equal(optimal_probs([1, 5, 2], 3).probs, [1, 1, 1])
    g = np.array([1.0, 2.0, 100.0])
    pv = oracle_probs(g, 1)
    assert pv.probs[2] == pytest.approx(100 / 103)
    assert pv.probs[0] / pv.probs[1] == pytest.approx(0.5)


def test_errors():
    with pytest.raises(AllZeroGradients):
        optimal_probs([0, 0], 1)
    with pytest.raises(BudgetExceedsN):
        optimal_probs([1, 2], 3)
    with pytest.raises(AllZeroGradients):
        quickselect_threshold([0.0], 1)


@pytest.mark.parametrize("scale", [5e-324, 1e-308, 1e300])
def test_extreme_scales(scale):
    g = np.array([0.0, 0.0, 1.0, 3.0]) * scale
    pv = optimal_probs(g, 2)
    pv.check()
    assert np.allclose(pv.probs, optimal_probs([0.0, 0.0, 1.0, 3.0], 2).probs)
    assert quickselect_threshold(g, 2) == pytest.approx(pv.mu, rel=1e-12)


def test_zero_entries_floored():
    pv = optimal_probs([0, 1, 2, 3], 2)
    assert np.all(pv.probs > 0)
    assert pv.probs.sum() == pytest.approx(2, abs=1e-9)


@given(instances())
def test_feasible_and_matches_oracle(case):
    g, B = case
    pv = optimal_probs(g, B)
    pv.check()
    assert np.allclose(pv.probs, oracle_probs(g, B).probs, rtol=0, atol=1e-10)
    gf = np.maximum(g / g.max(), 1e-12)
    assert np.allclose(pv.probs, np.minimum(1, gf / (pv.mu / g.max())), atol=1e-10)


@given(instances())
def test_quickselect_equals_closed_form(case):
    g, B = case
    assert quickselect_threshold(g, B) == pytest.approx(optimal_probs(g, B).mu, rel=1e-12)


@given(instances(max_n=20))
def test_mu_matches_bisection(case):
    g, B = case
    gf = np.maximum(g / g.max(), 1e-12)
    pv = optimal_probs(g, B)
    if pv.kappa < g.size or np.any(pv.probs < 1):
        assert np.minimum(1, gf / grid_mu_oracle(gf, B)) == pytest.approx(pv.probs, abs=1e-8)


@given(instances(max_n=12), st.integers(0, 2**32 - 1))
def test_beats_random_feasible(case, seed):
    g, B = case
    assume(B <= 6)
    rng = np.random.default_rng(seed)
    best = objective(g, optimal_probs(g, B).probs)
    assert best <= objective(g, oracle_probs(g, B).probs) * (1 + 1e-12)
    n = g.size
    for _ in range(200):
        p = rng.dirichlet(np.ones(n)) * B
        for _ in range(n):  # clip to 1 and spread the excess
            over = p > 1
            if not over.any():
                break
            p[over] = 1
            free = ~over & (p < 1)
            p[free] += (B - p.sum()) * p[free] / p[free].sum()
        p = np.clip(p, 1e-300, 1)
        assert best <= objective(g, p) * (1 + 1e-12)


@given(instances(), st.integers(-20, 20))
def test_scale_invariance(case, e):
    g, B = case
    base = optimal_probs(g, B).probs
    assert np.array_equal(optimal_probs(g * 2.0**e, B).probs, base)
    assert np.allclose(optimal_probs(g * 3.7, B).probs, base, rtol=1e-13, atol=0)


@given(instances())
def test_monotone(case):
    g, B = case
    p = optimal_probs(g, B).probs
    order = np.argsort(g, kind="stable")
    assert np.all(np.diff(p[order]) >= -1e-15)


def test_identity_interior_example():
    g = np.array([1.0, 1.0, 10.0])
    pv = optimal_probs(g, 1)
    assert np.allclose(pv.probs, [1 / 12, 1 / 12, 10 / 12])
    vs = variance_stats(g, pv)
    assert vs.kappa_is_n
    assert abs(vs.gap - vs.gap_closed_form) <= 1e-12


def test_uniform_gap_zero():
    vs = variance_stats(np.full(5, 2.0), optimal_probs(np.full(5, 2.0), 2))
    assert vs.gap == 0.0
    assert vs.G_value == pytest.approx(G_value(np.full(5, 2.0), np.full(5, 0.4)))


@given(instances())
def test_uplift_reaches_kappa_n(case):
    g, B = case
    u = uplift_smallest(g, B)
    assert np.all(u >= g) and u.max() == g.max()
    assert B * u.max() <= u.sum() * (1 + 1e-12)
    pv = optimal_probs(u, B)
    assert np.all(pv.probs <= 1)
    vs = variance_stats(u, pv)
    assert abs(vs.gap - vs.gap_closed_form) <= 1e-9 * max(1, vs.gap)
    assert vs.gap >= -1e-12 * vs.G_uniform


def test_uplift_examples():
    # full budget forces every entry to the max, so the gap vanishes exactly
    assert np.array_equal(uplift_smallest([1.0, 2.0, 3.0], 3), [3.0, 3.0, 3.0])
    g = np.array([1.0, 1.0, 1.0, 43.382702548314725])
    assert optimal_probs(uplift_smallest(g, 3), 3).kappa == 4
    assert np.array_equal(uplift_smallest([1.0, 2.0, 3.0], 1), [1.0, 2.0, 3.0])
