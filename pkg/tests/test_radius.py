import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import optimize

from flpsr import distributions as D
from flpsr import radius as R
from flpsr.radius import DegenerateDensityError, FixedPointError, Regime
from flpsr.welfare import ne_assignment

DISTS = {
    "uniform": D.uniform(),
    "beta22": D.beta(2, 2),
    "beta62": D.beta(6, 2),
    "beta05": D.beta(0.5, 0.7),
    "mixture": D.build({"kind": "param_mixture", "family": "uniform_prefix", "param_density_poly": [0, 0, 3]}),
}


def test_uniform_interior(unif):
    r = R.radius(unif, 0.4, 0.5)
    assert r.radius == pytest.approx(0.2, abs=1e-10)
    assert r.regime is Regime.INTERIOR


def test_uniform_left_clipped(unif):
    r = R.radius(unif, 0.4, 0.1)
    assert r.radius == pytest.approx(0.3, abs=1e-10)
    assert r.regime is Regime.LEFT_CLIPPED and r.left == 0.0


def test_beta22_cubic_equation(beta22):
    oracle = optimize.brentq(lambda h: 3 * h - 4 * h**3 - 0.5, 0.0, 0.5, xtol=1e-14)
    assert R.radius(beta22, 0.5, 0.5).radius == pytest.approx(oracle, abs=1e-10)
    assert oracle == pytest.approx(0.1736, abs=1e-4)


@pytest.mark.parametrize("name", list(DISTS))
def test_full_capacity_covers_support(name):
    r = R.radius(DISTS[name], 1.0, 0.5)
    assert r.left == 0.0 and r.right == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("q", [0.0, -0.1, 1.2])
def test_invalid_capacity(unif, q):
    with pytest.raises(ValueError):
        R.radius(unif, q, 0.5)


def test_derivative_examples(unif, beta22):
    assert R.radius_derivative(unif, 0.4, 0.5) == pytest.approx(0.0, abs=1e-9)
    assert R.radius_derivative(beta22, 0.5, 0.5) == pytest.approx(0.0, abs=1e-9)
    assert R.radius_derivative(unif, 0.4, 0.05) == -1.0
    assert R.radius_derivative(unif, 0.4, 0.95) == 1.0


def test_degenerate_density(beta22):
    # ball [0, 1] around the centre: the density vanishes at both ends
    with pytest.raises(DegenerateDensityError):
        R.radius_derivative(beta22, 1.0, 0.5)


@given(st.sampled_from(list(DISTS)), st.floats(0.01, 1.0), st.floats(0.0, 1.0))
def test_mass_residual_and_regime(name, q, y):
    d = DISTS[name]
    r = R.radius(d, q, y)
    assert abs(d.cdf(r.right) - d.cdf(r.left) - q) <= 1e-8
    assert (r.regime is Regime.LEFT_CLIPPED) == (y - r.radius < 0)
    assert (r.regime is Regime.RIGHT_CLIPPED) == (y + r.radius > 1 and y - r.radius >= 0)


@pytest.mark.parametrize("name", ["uniform", "beta22", "beta62", "mixture"])
def test_derivative_matches_finite_differences(name):
    d, q, h = DISTS[name], 0.4, 1e-5
    ys = np.linspace(0.01, 0.99, 100)
    checked = 0
    for y in ys:
        r = R.radius(d, q, y)
        # skip the regime switches where the ball touches 0 or 1
        if min(abs(y - r.radius), abs(y + r.radius - 1)) < 1e-3:
            continue
        fd = (R.radius(d, q, y + h).radius - R.radius(d, q, y - h).radius) / (2 * h)
        assert R.radius_derivative(d, q, y) == pytest.approx(fd, abs=1e-4)
        checked += 1
    assert checked >= 90


@given(st.sampled_from(["uniform", "beta22", "beta62", "mixture"]), st.floats(0.05, 0.95), st.floats(0.01, 0.99))
def test_bounded_slope(name, q, y):
    assert abs(R.radius_derivative(DISTS[name], q, y)) <= 1.0


@pytest.mark.parametrize("name", list(DISTS))
@pytest.mark.parametrize("q", [0.1, 0.45, 0.9])
def test_boundary_values(name, q):
    d = DISTS[name]
    assert R.radius(d, q, 0.0).radius == pytest.approx(d.quantile(q), abs=1e-9)
    assert R.radius(d, q, 1.0).radius == pytest.approx(1 - d.quantile(1 - q), abs=1e-9)


# --------------------------------------------------------------------------


def test_example_touching_balls(unif):
    s = R.two_facility_serving(unif, (0.4, 0.4), 0.4, 0.6)
    assert s.s1 == pytest.approx((0.1, 0.5), abs=1e-7)
    assert s.s2 == pytest.approx((0.5, 0.9), abs=1e-7)
    assert s.touching


def test_example_separate_balls(unif):
    s = R.two_facility_serving(unif, (0.2, 0.2), 0.2, 0.8)
    assert s.s1 == pytest.approx((0.1, 0.3), abs=1e-9)
    assert s.s2 == pytest.approx((0.7, 0.9), abs=1e-9)
    assert not s.touching


def test_beta22_quantile_placement(beta22):
    y1, y2 = beta22.quantile([0.2, 0.8])
    s = R.two_facility_serving(beta22, (0.2, 0.2), y1, y2)
    assert beta22.cdf(s.s1[1]) - beta22.cdf(s.s1[0]) == pytest.approx(0.2, abs=1e-6)
    assert beta22.cdf(s.s2[1]) - beta22.cdf(s.s2[0]) == pytest.approx(0.2, abs=1e-6)
    assert s.s1[1] <= s.s2[0]


CASES = [
    ("uniform", (0.4, 0.4), (0.4, 0.6)),
    ("uniform", (0.3, 0.3), (0.35, 0.6)),
    ("beta22", (0.2, 0.2), (0.4, 0.55)),
    ("beta22", (0.3, 0.2), (0.3, 0.45)),
    ("beta62", (0.25, 0.2), (0.6, 0.8)),
]


@pytest.mark.parametrize("name,q,y", CASES)
def test_serving_matches_discrete_equilibrium(name, q, y):
    d = DISTS[name]
    s = R.two_facility_serving(d, q, *y)
    inst = D.sample(d, 10_000, seed=11)
    a = ne_assignment(inst, y, q)
    x = inst.positions
    got = [x[a == 0].min(), x[a == 0].max(), x[a == 1].min(), x[a == 1].max()]
    assert got == pytest.approx([*s.s1, *s.s2], abs=0.01)


@given(
    st.sampled_from(list(DISTS)),
    st.floats(0.05, 0.45),
    st.floats(0.05, 0.45),
    st.floats(0.0, 1.0),
    st.floats(0.0, 1.0),
)
def test_serving_invariants(name, q1, q2, a, b):
    d = DISTS[name]
    y1, y2 = sorted((a, b))
    try:
        s = R.two_facility_serving(d, (q1, q2), y1, y2)
    except FixedPointError:
        return
    assert abs(d.cdf(s.s1[1]) - d.cdf(s.s1[0]) - q1) <= 1e-6
    assert abs(d.cdf(s.s2[1]) - d.cdf(s.s2[0]) - q2) <= 1e-6
    assert s.s1[1] <= s.s2[0] + 1e-12
    if d.cdf(y2) - d.cdf(y1) >= q1 + q2:
        assert s.r1 == pytest.approx(R.radius(d, q1, y1).radius, abs=1e-7)
        assert s.r2 == pytest.approx(R.radius(d, q2, y2).radius, abs=1e-7)


def test_infeasible_territory_raises(beta22):
    with pytest.raises(FixedPointError) as err:
        R.two_facility_serving(beta22, (0.3, 0.3), 0.27, 0.445)
    assert err.value.residuals is not None and max(err.value.residuals) > 1e-8


def test_rejects_total_capacity_one(unif):
    with pytest.raises(ValueError):
        R.two_facility_serving(unif, (0.5, 0.5), 0.2, 0.8)


def test_batched_solver_agrees_with_scalar(beta62):
    rng = np.random.default_rng(3)
    y1 = rng.random(50) * 0.6
    y2 = y1 + rng.random(50) * (1 - y1)
    r1, r2, ok, _ = R.serve_pairs(beta62, 0.2, 0.25, y1, y2)
    for i in np.nonzero(ok)[0][:20]:
        s = R.two_facility_serving(beta62, (0.2, 0.25), y1[i], y2[i])
        assert (s.r1, s.r2) == pytest.approx((r1[i], r2[i]), abs=1e-12)
