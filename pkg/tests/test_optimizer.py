import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flpsr import distributions as D
from flpsr import optimizer as O
from flpsr.optimizer import Method
from flpsr.welfare import w_one_values

# one-facility optima at q=0.5, frozen from the solver (Table 1 left prints these to two decimals)
FROZEN_Q05 = {(2, 3): 0.4172, (4, 2): 0.6180, (5, 2): 0.6374, (6, 2): 0.6495, (6, 3): 0.5786, (2, 6): 0.3505}


def test_mixture_optimum_is_q_over_two(mixture):
    sol = O.optimize_one(mixture, 0.4)
    assert sol.percentile == pytest.approx(0.2, abs=1e-9)
    assert sol.method is Method.CLOSED_FORM_MONOTONE


def test_beta62_table_value():
    assert O.optimize_one(D.beta(6, 2), 0.5).percentile == pytest.approx(0.65, abs=0.01)


@pytest.mark.parametrize("a", [2, 3.5, 6])
@pytest.mark.parametrize("q", [0.2, 0.5, 0.9])
def test_symmetric_beta_median(a, q):
    sol = O.optimize_one(D.beta(a, a), q)
    assert sol.percentile == pytest.approx(0.5, abs=1e-12)
    assert sol.method is Method.CLOSED_FORM_SYMMETRIC_SP


def test_appendix_beta23_q02():
    assert O.optimize_one(D.beta(2, 3), 0.2).percentile == pytest.approx(0.41, abs=0.01)


@pytest.mark.parametrize("ab,p", sorted(FROZEN_Q05.items()))
def test_frozen_one_facility_values(ab, p):
    assert O.optimize_one(D.beta(*ab), 0.5).percentile == pytest.approx(p, abs=1e-4)


def test_linear_density_decile(linear):
    sol = O.optimize_one(linear, 0.2)
    assert sol.percentile == pytest.approx(0.1, abs=1e-12)


def test_uniform_flat_interval(unif):
    sol = O.optimize_one(unif, 0.4)
    assert sol.percentile == pytest.approx(0.2, abs=1e-12)
    assert sol.flat_interval == pytest.approx((0.2, 0.8), abs=1e-3)
    assert sol.w_min == pytest.approx(0.04, abs=1e-10)


def test_single_dipped_picks_better_endpoint():
    d = D.beta(0.5, 0.7)
    sol = O.optimize_one(d, 0.3)
    assert sol.method is Method.CLOSED_FORM_SD
    lo, hi = O.lemma_window(d, 0.3)
    wl, wh = w_one_values(d, 0.3, np.array([lo, hi]))
    assert sol.position == pytest.approx(lo if wl <= wh else hi)


def test_invalid_capacity(unif):
    with pytest.raises(ValueError):
        O.optimize_one(unif, 0.0)
    with pytest.raises(ValueError):
        O.optimize_one(unif, 0.5, method="newton")


def test_unbounded_density_at_ball_edge():
    sol = O.optimize_one(D.beta(1.0, 0.5), 0.5)
    assert sol.position == pytest.approx(0.9375, abs=1e-9)
    assert sol.w_min == pytest.approx(0.03125, abs=1e-9)


@given(st.floats(0.4, 7.0), st.floats(0.4, 7.0), st.floats(0.05, 0.95))
def test_window_and_grid_domination(a, b, q):
    d = D.beta(a, b)
    sol = O.optimize_one(d, q)
    lo, hi = O.lemma_window(d, q)
    assert lo - 1e-9 <= sol.position <= hi + 1e-9
    grid = w_one_values(d, q, np.linspace(0, 1, 2001))
    assert sol.w_min <= grid.min() + 1e-6
    assert sol.limit_sw == pytest.approx(q - sol.w_min)


@pytest.mark.parametrize("ab", [(1, 2), (1, 4), (3, 1), (2, 2), (4, 4), (6, 6)])
@pytest.mark.parametrize("q", [0.3, 0.6])
def test_forced_bisection_agrees_with_closed_form(ab, q):
    d = D.beta(*ab)
    closed = O.optimize_one(d, q)
    numeric = O.optimize_one(d, q, method="bisection")
    assert closed.method is not Method.BISECTION_ON_DERIVATIVE
    assert numeric.percentile == pytest.approx(closed.percentile, abs=1e-4)


@given(st.floats(0.5, 7.0), st.floats(0.5, 7.0), st.floats(0.1, 0.9))
def test_mirror_symmetry(a, b, q):
    d = D.beta(a, b)
    p = O.optimize_one(d, q).percentile
    pm = O.optimize_one(d.mirrored(), q).percentile
    if d.class_tag.value == "single_dipped":
        lo, hi = O.lemma_window(d, q)
        wl, wh = w_one_values(d, q, np.array([lo, hi]))
        if abs(wl - wh) < 1e-12:  # tie: both sides return their left endpoint
            return
    assert pm == pytest.approx(1 - p, abs=1e-6)


# --------------------------------------------------------------------------
# two facilities


def _brute_es(d, q1, q2, step=0.001):
    """Dense scan over percentile pairs with p2 - p1 >= q1 + q2."""
    Q = q1 + q2
    p1 = np.arange(0, 1 - Q + 1e-12, step)
    w1 = w_one_values(d, q1, d.quantile(p1))
    p2_all = np.arange(0, 1 + 1e-12, step)
    w2_all = w_one_values(d, q2, d.quantile(p2_all))
    best = (np.inf, None)
    for i, p in enumerate(p1):
        ok = p2_all >= p + Q - 1e-12
        j = int(np.argmin(np.where(ok, w2_all, np.inf)))
        if w1[i] + w2_all[j] < best[0]:
            best = (w1[i] + w2_all[j], (p, p2_all[j]))
    return best


@pytest.fixture(scope="module")
def tent_minimisers(tent):
    return O.unconstrained_two_minimizers(tent, (0.2, 0.2))


def test_tent_unconstrained_minimiser(tent, tent_minimisers):
    target = tent.quantile([0.4, 0.6])
    assert tent_minimisers.pairs[0] == pytest.approx(target, abs=0.01)
    y1, y2 = tent_minimisers.pairs[0]
    assert tent.cdf(y2) - tent.cdf(y1) < 0.4
    assert tent_minimisers.skipped > 0


def test_uniform_unconstrained_plateau(unif):
    mins = O.unconstrained_two_minimizers(unif, (0.2, 0.2))
    assert mins.w_min == pytest.approx(0.02, abs=1e-6)
    assert np.all(np.abs(mins.w_values - 0.02) <= 1e-6)
    assert len(mins.pairs) > 10


def test_single_dipped_unconstrained_endpoints(sd_quadratic):
    mins = O.unconstrained_two_minimizers(sd_quadratic, (0.2, 0.2))
    target = sd_quadratic.quantile([0.1, 0.9])
    assert any(np.allclose(p, target, atol=0.01) for p in mins.pairs)


def test_feasibility_verdicts(beta22, unif, sd_quadratic, tent):
    assert not O.es_optimal_feasible(beta22, (0.2, 0.2))
    for d in (beta22, unif, sd_quadratic, tent):
        v = O.es_optimal_feasible(d, (0.4, 0.3))
        assert not v and "2/3" in v.reason
    v = O.es_optimal_feasible(sd_quadratic, (0.3, 0.3))
    assert v.feasible
    assert v.witness == pytest.approx(tuple(sd_quadratic.quantile([0.15, 0.85])), abs=1e-12)


def test_feasibility_by_search_for_asymmetric_dip():
    # asymmetric single-dipped law: no closed-form shortcut, the grid decides
    d = D.polynomial([4.0, -12.0, 11.0])
    assert d.class_tag.value == "single_dipped" and not d.symmetric
    v = O.es_optimal_feasible(d, (0.2, 0.2), grid=200)
    assert v.reason
    if v.feasible:
        y1, y2 = v.witness
        assert d.cdf(y2) - d.cdf(y1) >= 0.4 - 1e-9


def test_best_es_beta22_printed_q03(beta22):
    sol = O.best_es_two(beta22, (0.3, 0.3))
    assert sol.percentiles == pytest.approx((0.2, 0.8), abs=0.015)
    assert sol.es_optimal_feasible is False


def test_best_es_beta22_q02_derived(beta22):
    sol = O.best_es_two(beta22, (0.2, 0.2), check_feasibility=False)
    w, pair = _brute_es(beta22, 0.2, 0.2)
    assert sol.percentiles == pytest.approx(pair, abs=0.005)
    assert sol.percentiles == pytest.approx((0.30, 0.70), abs=0.005)
    assert abs(sol.w_min - w) <= 0.001


def test_best_es_beta62(beta62):
    sol = O.best_es_two(beta62, (0.3, 0.3), check_feasibility=False)
    assert sol.percentiles == pytest.approx((0.27, 0.87), abs=0.015)
    sol2 = O.best_es_two(beta62, (0.2, 0.2), check_feasibility=False)
    w, pair = _brute_es(beta62, 0.2, 0.2)
    assert sol2.percentiles == pytest.approx(pair, abs=0.005)
    assert abs(sol2.w_min - w) <= 0.001


def test_best_es_beta22_unequal(beta22):
    sol = O.best_es_two(beta22, (0.4, 0.3), orientation="as_given", check_feasibility=False)
    assert sol.percentiles == pytest.approx((0.17, 0.87), abs=0.015)


def test_best_es_uniform_value(unif):
    assert O.best_es_two(unif, (0.2, 0.2)).w_min == pytest.approx(0.02, abs=1e-9)


def test_orientations_are_both_reported():
    d = D.beta(5, 2)
    sol = O.best_es_two(d, (0.3, 0.2), check_feasibility=False)
    ag, sw = sol.searches["as_given"], sol.searches["swapped"]
    assert sol.w_min == min(ag.w_min, sw.w_min)
    assert ag.percentiles == pytest.approx((0.37, 0.87), abs=0.015)
    assert sol.swapped == (sw.w_min < ag.w_min)


@pytest.mark.parametrize("name", ["uniform", "beta22"])
def test_delta_error_bound(named_dists, name):
    d = named_dists[name]
    coarse = O.best_es_two(d, (0.2, 0.2), delta=0.01, check_feasibility=False).w_min
    fine = O.best_es_two(d, (0.2, 0.2), delta=0.001, check_feasibility=False).w_min
    assert abs(coarse - fine) <= 0.01


@given(
    st.floats(0.6, 6.0),
    st.floats(0.6, 6.0),
    st.floats(0.05, 0.35),
    st.floats(0.05, 0.35),
)
def test_es_constraint_and_window(a, b, q1, q2):
    d = D.beta(a, b)
    sol = O.best_es_two(d, (q1, q2), delta=0.01, orientation="as_given", check_feasibility=False)
    y1, y2 = sol.positions
    Q = q1 + q2
    assert d.cdf(y2) - d.cdf(y1) >= Q - 1e-9
    assert 0 <= y1 <= d.quantile(1 - Q) + 1e-12
    M = d.quantile(min(d.cdf(y1) + Q, 1.0))
    assert M - 1e-9 <= y2 <= max(M, d.quantile(1 - q2 / 2)) + 1e-9


def test_best_es_validation(unif):
    for delta in (0.0, 0.2):
        with pytest.raises(ValueError):
            O.best_es_two(unif, (0.2, 0.2), delta=delta)
    with pytest.raises(ValueError):
        O.best_es_two(unif, (0.5, 0.5))
