import numpy as np
import pytest

from omega_pricer import (
    Constant,
    LevyModel,
    Linear,
    LogArea,
    Rational,
    Step,
    Tabulated,
    check_flat_below_one,
    shift_tilt,
)


def test_eval_constant():
    assert Constant(0.05)(3.0) == 0.05


def test_eval_rational_example():
    assert Rational(C=0.001, D=0.01)(1.0) == pytest.approx(-0.0105, abs=1e-15)


def test_eval_linear_example():
    assert Linear(0.1)(4.56) == pytest.approx(0.456, rel=1e-14)


def test_eval_step_directions():
    below = Step(r=0.05, rho=0.02, y=2.0, direction="below")
    assert below(1.0) == pytest.approx(0.07)
    assert below(3.0) == pytest.approx(0.05)
    above = Step(r=0.05, rho=0.02, y=2.0, direction="above")
    assert above(1.0) == pytest.approx(0.05)
    assert above(3.0) == pytest.approx(0.07)


def test_eval_log_area():
    fn = LogArea(K=2.0)
    assert fn(1.0) == 0.0
    assert fn(2.0 * np.e) == pytest.approx(1.0, rel=1e-14)


def test_tabulated_rejects_outside_hull():
    fn = Tabulated((1.0, 2.0, 4.0), (0.01, 0.02, 0.02))
    assert fn(3.0) == pytest.approx(0.02)
    with pytest.raises(ValueError):
        fn(0.5)
    with pytest.raises(ValueError):
        fn(5.0)


def test_eval_respects_lower_bound():
    fns = [Constant(0.05), Step(0.05, 0.02, 2.0), Linear(0.1),
           Rational(0.001, 0.01), LogArea(2.0)]
    s = np.exp(np.linspace(np.log(1e-4), np.log(1e4), 301))
    for fn in fns:
        assert np.all(np.asarray(fn(s)) >= fn.lower_bound - 1e-15)


def test_shift_tilt_identity_matches_eval():
    fn = Rational(0.001, 0.01)
    xi = shift_tilt(fn, 1.0)
    xs = np.linspace(-3.0, 3.0, 41)
    assert np.max(np.abs(xi(xs) - fn(np.exp(xs)))) < 1e-15


def test_shift_tilt_linear_at_zero():
    fn = Linear(0.1)
    for u in (0.5, 1.0, 4.56):
        xi = shift_tilt(fn, u)
        assert xi(0.0) == pytest.approx(0.1 * u, rel=1e-14)


def test_shift_tilt_constant_cancellation():
    # psi(1) = r for the calibrated model, so tilting by alpha=1 kills omega=r
    model = LevyModel.calibrated(r=0.05, sigma=0.2, lam=6.0, phi=2.0)
    xi = shift_tilt(Constant(0.05), 2.0, model, alpha=1.0)
    xs = np.linspace(0.0, 3.0, 17)
    assert np.max(np.abs(xi(xs))) < 1e-14


def test_shift_tilt_validation(bs_model):
    with pytest.raises(ValueError):
        shift_tilt(Constant(0.05), -1.0)
    with pytest.raises(ValueError):
        shift_tilt(Constant(0.05), 1.0, bs_model, alpha=-0.5)
    with pytest.raises(ValueError):
        shift_tilt(Constant(0.05), 1.0, None, alpha=1.0)


def test_flat_below_one_constant():
    assert check_flat_below_one(Constant(0.05)) == 0.05


def test_flat_below_one_step():
    assert check_flat_below_one(Step(0.05, 0.02, y=0.5)) is None
    assert check_flat_below_one(Step(0.05, 0.02, y=1.5)) == pytest.approx(0.07)
    assert check_flat_below_one(Step(0.05, 0.02, y=1.5, direction="above")) \
        == pytest.approx(0.05)


def test_flat_below_one_other_kinds():
    assert check_flat_below_one(Linear(0.1)) is None
    assert check_flat_below_one(Rational(0.001, 0.01)) is None
    assert check_flat_below_one(LogArea(K=2.0)) == 0.0
    assert check_flat_below_one(LogArea(K=0.5)) is None


def test_nonnegativity_gate():
    assert Constant(0.05).is_nonnegative
    assert Linear(0.1).is_nonnegative
    assert LogArea(1.0).is_nonnegative
    assert not Rational(0.001, 0.01).is_nonnegative
    assert not Step(-0.02, 0.12, 1.0).is_nonnegative


def test_derivatives():
    assert Linear(0.1).deriv(3.0) == pytest.approx(0.1)
    assert Rational(0.2, 0.01).deriv(1.0) == pytest.approx(0.05)
    with pytest.raises(NotImplementedError):
        Step(0.05, 0.02, 1.0).deriv(2.0)
    xi = shift_tilt(Linear(0.1), 2.0)
    # d/dx omega(u e^x) = C u e^x
    assert xi.deriv(1.0) == pytest.approx(0.2 * np.e, rel=1e-14)
