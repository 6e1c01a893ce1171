import numpy as np
import pytest

from omega_pricer import Constant, LevyModel, Linear, Rational, Step, shift_tilt
from omega_pricer.levy import phi_right_inverse, psi_roots
from omega_pricer.pricer import (
    Boundaries,
    PricingProblem,
    convexity_margin,
    hjb_residual,
    optimize_boundaries,
    putcall_transform,
    rational_bs_branches,
    smooth_fit_residual,
    solve_h_ode,
    value_bs,
    value_crash_one_sided,
    value_two_sided,
    _TwoSidedValuation,
)
from omega_pricer.scale import classical_w, classical_z


@pytest.fixture(scope="module")
def classical_result(bs_model):
    return optimize_boundaries(PricingProblem(bs_model, Constant(0.05), 20.0))


@pytest.fixture(scope="module")
def rational_result(bs_model):
    return optimize_boundaries(
        PricingProblem(bs_model, Rational(C=0.001, D=0.01), 20.0))


@pytest.fixture(scope="module")
def crash_linear_result(crash_model):
    return optimize_boundaries(PricingProblem(crash_model, Linear(0.1), 20.0))


# ---------------------------------------------------------------------------
# Black-Scholes h-equation route
# ---------------------------------------------------------------------------

def test_h_branches_constant_rate_exponents(bs_model):
    inner, outer = solve_h_ode(bs_model, Constant(0.05))
    gamma = 2.0 * 0.05 / 0.04
    for s in (2.0, 8.0, 15.0):
        assert float(outer.dlog_ds(s)) * s == pytest.approx(-gamma, rel=1e-8)
        assert float(inner.dlog_ds(s)) * s == pytest.approx(1.0, rel=1e-8)


def test_h_branches_match_hypergeometric_forms(bs_model):
    """Numerically integrated branches reproduce the closed 2F1 solutions."""
    omega = Rational(C=0.001, D=0.01)
    inner, outer = solve_h_ode(bs_model, omega)
    _, h, _ = rational_bs_branches(bs_model, omega)
    s = np.linspace(1.0, 15.0, 57)
    anchor = 8.0
    for branch, i in ((inner, 2), (outer, 1)):
        got = branch.log_h_exact(np.append(s, anchor))
        ref = np.array([h(i, sv) for sv in s])
        ratio = np.exp(got[:-1] - got[-1])
        assert np.max(np.abs(ratio / (ref / h(i, anchor)) - 1.0)) < 1e-6


def test_h_branch_ode_residual(bs_model):
    """Collocation residual of the returned tables against the h-equation."""
    omega = Rational(C=0.001, D=0.01)
    inner, outer = solve_h_ode(bs_model, omega)
    sig2 = bs_model.sigma ** 2
    zeta = bs_model.zeta
    delta = 5e-3
    for branch in (inner, outer):
        for x in (0.5, 1.5, 2.2):
            xs = x + delta * np.arange(-2, 3)
            _, _, dl = branch._integrate(xs)
            dprime = (-dl[4] + 8 * dl[3] - 8 * dl[1] + dl[0]) / (12 * delta)
            d = dl[2]
            resid = 0.5 * sig2 * (dprime + d * d) + zeta * d \
                - float(omega(np.exp(x)))
            assert abs(resid) < 1e-8


def test_value_bs_inside_is_payoff(bs_model):
    pb = PricingProblem(bs_model, Constant(0.05), 20.0)
    b = Boundaries(0.0, 14.0)
    assert value_bs(pb, b, 10.0) == pytest.approx(10.0)
    assert value_bs(pb, b, 14.0) == pytest.approx(6.0)


def test_value_bs_classical_closed_form(bs_model):
    pb = PricingProblem(bs_model, Constant(0.05), 20.0)
    gamma = 2.5
    u = 20.0 * gamma / (1.0 + gamma)
    b = Boundaries(0.0, u)
    s = np.array([15.0, 18.0, 25.0, 39.0])
    got = value_bs(pb, b, s)
    ref = (20.0 - u) * (s / u) ** (-gamma)
    assert np.max(np.abs(got / ref - 1.0)) < 1e-8


def test_value_bs_continuity_at_u(bs_model):
    pb = PricingProblem(bs_model, Constant(0.05), 20.0)
    b = Boundaries(0.0, 14.0)
    assert value_bs(pb, b, 14.0 * (1 + 1e-12)) == pytest.approx(6.0, abs=1e-9)


# ---------------------------------------------------------------------------
# Boundary optimisation
# ---------------------------------------------------------------------------

def test_classical_collapse_boundary(classical_result):
    gamma = 2.5
    assert classical_result.l_star == 0.0
    assert classical_result.u_star == pytest.approx(20.0 * gamma / (1 + gamma),
                                                    rel=1e-9)


def test_rational_boundaries(rational_result):
    assert rational_result.l_star == pytest.approx(7.2359, abs=5e-3)
    assert rational_result.u_star == pytest.approx(8.3423, abs=5e-3)


def test_rational_curve_dominates_payoff(rational_result):
    s = rational_result.s_grid
    v = rational_result.values
    payoff = np.maximum(20.0 - s, 0.0)
    assert np.all(v >= payoff - 1e-9)
    outside = (s < rational_result.l_star - 0.05) | (s > rational_result.u_star + 0.05)
    assert np.all(v[outside] > payoff[outside] + 1e-9)


def test_rational_value_blows_up_near_zero(rational_result):
    # negative discounting near zero makes the put value unbounded as s -> 0+
    v = rational_result.value_fn(np.array([0.05, 0.01]))
    assert v[1] > v[0] > 40.0


def test_crash_linear_boundary_continuous_fit(crash_linear_result):
    res = crash_linear_result
    assert res.l_star == 0.0
    u = res.u_star
    v_plus = float(res.value_fn(np.array([u * (1 + 1e-9)]))[0])
    assert abs(v_plus - (20.0 - u)) < 1e-6
    # derivative gap at u is genuinely nonzero for sigma = 0 (reported only)
    assert res.fit["derivative_gap_u"] > 0.01


def test_crash_constant_rate_matches_classical(crash_model):
    """sigma=0, omega == r: closed-form W/Z with c = r/Phi(r) as oracle."""
    pb = PricingProblem(crash_model, Constant(0.05), 20.0)
    u = 10.0
    decq = psi_roots(crash_model, 0.05)
    cq = 0.05 / phi_right_inverse(crash_model, 0.05)
    s = np.array([11.0, 14.0, 19.0])
    x = np.log(s / u)
    ref = ((20.0 - u * 2.0 / 3.0)
           * (classical_z(decq, x) - cq * classical_w(decq, x)))
    got = value_crash_one_sided(pb, u, s)
    assert np.max(np.abs(got / ref - 1.0)) < 1e-5


def test_crash_value_below_u_is_payoff(crash_model):
    pb = PricingProblem(crash_model, Linear(0.1), 20.0)
    assert value_crash_one_sided(pb, 8.0, 5.0) == pytest.approx(15.0)


def test_crash_rejects_negative_discount(crash_model):
    pb = PricingProblem(crash_model, Step(-0.02, 0.12, 1.0, "above"), 20.0)
    with pytest.raises(ValueError):
        value_crash_one_sided(pb, 5.0, 10.0)


def test_sigma_pos_crash_smooth_fit():
    """sigma>0 jump boundary satisfies the smooth-fit condition."""
    model = LevyModel.calibrated(r=0.05, sigma=0.2, lam=6.0, phi=2.0)
    pb = PricingProblem(model, Linear(0.1), 20.0)
    res = optimize_boundaries(pb, n_curve=128)
    assert res.l_star == 0.0
    assert 0.0 < res.u_star < 20.0
    assert res.fit["continuity_u"] < 1e-6
    assert res.fit["derivative_gap_u"] < 5e-3
    s = res.s_grid
    assert np.all(res.values >= np.maximum(20.0 - s, 0.0) - 1e-7)


# ---------------------------------------------------------------------------
# Two-sided values
# ---------------------------------------------------------------------------

def test_two_sided_reduces_to_one_sided(crash_model):
    fn = Step(0.05, 0.10, y=1.0)  # flat 0.05 below one, nonnegative
    pb = PricingProblem(crash_model, fn, 20.0)
    ts = _TwoSidedValuation(pb)
    s = np.array([3.0, 6.0, 10.0])
    v2 = value_two_sided(pb, Boundaries(0.0, 5.0), s, valuation=ts)
    v1 = value_crash_one_sided(pb, 5.0, s)
    assert np.max(np.abs(v2 / v1 - 1.0)) < 1e-5


def test_two_sided_below_l_is_passage_ratio(crash_model):
    # constant discount: H-ratio collapses to e^{-Phi(r)(log l - log s)}
    pb = PricingProblem(crash_model, Constant(0.05), 20.0)
    ts = _TwoSidedValuation(pb)
    l, u = 2.0, 5.0
    s = np.array([0.5, 1.0, 1.5])
    got = value_two_sided(pb, Boundaries(l, u), s, valuation=ts)
    phi_r = phi_right_inverse(crash_model, 0.05)
    ref = (20.0 - l) * np.exp(-phi_r * (np.log(l) - np.log(s)))
    assert np.max(np.abs(got / ref - 1.0)) < 1e-5


def test_two_sided_inside_is_payoff(crash_model):
    pb = PricingProblem(crash_model, Constant(0.05), 20.0)
    ts = _TwoSidedValuation(pb)
    got = value_two_sided(pb, Boundaries(2.0, 5.0), np.array([2.0, 3.3, 5.0]),
                          valuation=ts)
    assert np.max(np.abs(got - (20.0 - np.array([2.0, 3.3, 5.0])))) < 1e-12


def test_two_sided_resolvent_route_agrees(crash_model):
    pb = PricingProblem(crash_model, Constant(0.05), 20.0)
    ts = _TwoSidedValuation(pb)
    b = Boundaries(2.0, 5.0)
    s = np.array([7.0, 9.0])
    vr = value_two_sided(pb, b, s, valuation=ts, route="resolvent")
    vf = value_two_sided(pb, b, s, valuation=ts, route="factorized")
    assert np.max(np.abs(vr / vf - 1.0)) < 1e-2


def test_two_sided_requires_flat_certificate(crash_model):
    pb = PricingProblem(crash_model, Step(-0.02, 0.12, y=0.5, direction="above"),
                        20.0)
    with pytest.raises(ValueError):
        _TwoSidedValuation(pb)


def test_double_continuation_region_found():
    """Negative rate below one with net-up drift gives l* > 0."""
    model = LevyModel.calibrated(r=0.30, sigma=0.0, lam=0.5, phi=3.0)
    fn = Step(-0.02, 0.12, y=1.0, direction="above")
    res = optimize_boundaries(PricingProblem(model, fn, 20.0), n_curve=128)
    assert 0.0 < res.l_star < res.u_star < 20.0
    assert res.fit["continuity_l"] < 1e-6


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

def test_smooth_fit_classical(classical_result, bs_model):
    fit = classical_result.fit
    assert fit["continuity_u"] < 1e-6
    assert fit["derivative_gap_u"] < 1e-4  # sigma > 0: smooth fit holds


def test_interior_derivative_is_minus_one(classical_result):
    s_in = 0.5 * classical_result.u_star
    d = float(np.atleast_1d(classical_result.value_deriv_fn(s_in))[0])
    assert d == pytest.approx(-1.0, abs=1e-12)


def test_hjb_classical(classical_result, bs_model):
    res = hjb_residual(classical_result, PricingProblem(bs_model, Constant(0.05), 20.0))
    assert res["continuation_sup"] < 1e-3
    assert res["stopping_violation"] <= 0.0 + 1e-12


def test_hjb_rational(rational_result, bs_model):
    res = hjb_residual(rational_result,
                       PricingProblem(bs_model, Rational(0.001, 0.01), 20.0))
    assert res["continuation_sup"] < 1e-3


def test_hjb_crash(crash_linear_result, crash_model):
    res = hjb_residual(crash_linear_result,
                       PricingProblem(crash_model, Linear(0.1), 20.0))
    assert res["continuation_sup"] < 1e-3


def test_values_equal_payoff_in_stopping_region(crash_linear_result):
    s = crash_linear_result.s_grid
    inside = s <= crash_linear_result.u_star
    assert np.max(np.abs(crash_linear_result.values[inside]
                         - (20.0 - s[inside]))) == 0.0


def test_convexity_margins(classical_result, crash_linear_result):
    for res in (classical_result, crash_linear_result):
        margin = convexity_margin(res)
        assert margin >= -1e-8 * np.max(np.abs(res.values))


def test_convexity_detector_flags_corruption(classical_result):
    import copy

    bad = copy.copy(classical_result)
    bad.values = classical_result.values.copy()
    bad.values[350] += 0.05  # bump one node
    assert convexity_margin(bad, stride=1) < -1e-3


def test_monotone_in_discount(bs_model):
    r1 = optimize_boundaries(PricingProblem(bs_model, Constant(0.04), 20.0),
                             n_curve=128)
    r2 = optimize_boundaries(PricingProblem(bs_model, Constant(0.08), 20.0),
                             n_curve=128)
    assert np.all(r1.values >= r2.values - 1e-10)


def test_optimizer_optimality_crash(crash_model, crash_linear_result):
    """Perturbing u* by +-2 steps of the refinement never helps."""
    pb = PricingProblem(crash_model, Linear(0.1), 20.0)
    u_star = crash_linear_result.u_star
    s0 = 30.0
    base = value_crash_one_sided(pb, u_star, s0)
    for du in (-0.02, 0.02):
        assert value_crash_one_sided(pb, u_star + du, s0) <= base + 1e-7


def test_call_requires_transform_route(bs_model):
    pb = PricingProblem(bs_model, Constant(0.05), 20.0, "call")
    with pytest.raises(ValueError):
        optimize_boundaries(pb)


def test_putcall_transform_fields(crash_model_sigma):
    pb = PricingProblem(crash_model_sigma, Constant(0.06), 20.0, "call")
    spec = putcall_transform(pb, 18.0, Boundaries(30.0, 50.0))
    assert spec.spot == 20.0
    assert spec.strike == 18.0
    assert spec.jumps_up
    assert spec.jump_decay == pytest.approx(crash_model_sigma.phi + 1.0)
    assert spec.jump_rate == pytest.approx(
        crash_model_sigma.lam * crash_model_sigma.phi / (crash_model_sigma.phi + 1.0))
    assert spec.drift == pytest.approx(-(crash_model_sigma.zeta
                                         + crash_model_sigma.sigma ** 2))
    assert spec.l == pytest.approx(18.0 * 20.0 / 50.0)
    assert spec.u == pytest.approx(18.0 * 20.0 / 30.0)
    # boundary product identity l_c * u_dual = s K by construction of the map
    assert spec.l * 50.0 == pytest.approx(18.0 * 20.0)
    # dual discount: omega(sK/s_hat) - psi(1)
    assert float(spec.discount(36.0)) == pytest.approx(0.06 - 0.05, rel=1e-10)
