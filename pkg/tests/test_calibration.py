import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from mixdro.calibration import (
    RHO_X_BOUNDS,
    RHO_Z_CEILING,
    AmbiguityParams,
    CalibrationError,
    CertaintySpec,
    PerturbationModel,
    calibrate,
    calibrate_delta,
    calibrate_epsilon,
    calibrate_gamma,
    laplace_scale,
    round_weights,
    sample_certainty,
    stddev_half_widths,
)

# reference values below come from 30-digit mpmath evaluations of the closed forms


def test_gamma_values():
    assert calibrate_gamma(1 - math.exp(-1), 1.0) == pytest.approx(1.0, abs=1e-12)
    assert calibrate_gamma(0.5, 2.0) == pytest.approx(0.346573590279972654, rel=1e-14)
    assert calibrate_gamma(0.99, 0.5) == pytest.approx(9.21034037197618273, rel=1e-14)


@pytest.mark.parametrize("rho,u", [(0.0, 1.0), (1.0, 1.0), (1.2, 1.0), (-0.1, 1.0), (0.5, 0.0), (0.5, -1.0)])
def test_gamma_and_scale_domain(rho, u):
    with pytest.raises(CalibrationError):
        calibrate_gamma(rho, u)
    with pytest.raises(CalibrationError):
        laplace_scale(rho, u)


def test_delta_values():
    assert calibrate_delta(0.25, 4) == 0.0
    assert calibrate_delta(0.5, 3) == pytest.approx(0.693147180559945309, rel=1e-14)
    assert calibrate_delta(0.9, 2) == pytest.approx(2.19722457733621938, rel=1e-14)


@pytest.mark.parametrize("K", [2, 3, 4, 5, 6, 7, 11])
def test_delta_zero_at_uniform_certainty(K):
    assert calibrate_delta(1.0 / K, K) == 0.0


@pytest.mark.parametrize("rho,K", [(0.2, 4), (1.0, 3), (0.5, 1)])
def test_delta_domain(rho, K):
    with pytest.raises(CalibrationError):
        calibrate_delta(rho, K)


def test_epsilon_values():
    assert calibrate_epsilon(1.0) == 0.0
    assert calibrate_epsilon(0.5) == pytest.approx(0.693147180559945309, rel=1e-14)
    assert calibrate_epsilon(0.99) == pytest.approx(0.0100503358535014412, rel=1e-13)
    for bad in (0.0, -0.5, 1.01):
        with pytest.raises(CalibrationError):
            calibrate_epsilon(bad)


def test_laplace_scale_values():
    assert laplace_scale(1 - math.exp(-1), 1.0) == pytest.approx(1.0, abs=1e-12)
    assert laplace_scale(0.5, 2.0) == pytest.approx(2.88539008177792681, rel=1e-14)


def test_round_weights_examples():
    np.testing.assert_array_equal(round_weights([0.693, 2.197], "integer"), [1.0, 2.0])
    np.testing.assert_array_equal(round_weights([0.693, 2.197], "one-decimal"), [0.7, 2.2])
    np.testing.assert_array_equal(round_weights([0.04], "integer"), [1.0])
    np.testing.assert_array_equal(round_weights([0.04], "one-decimal"), [0.1])


def test_round_half_away_from_zero():
    np.testing.assert_array_equal(round_weights([0.5, 1.5, 2.5], "integer"), [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(round_weights([0.25, 0.35, 1.05], "one-decimal"), [0.3, 0.4, 1.1])


def test_round_none_is_identity_and_unknown_refused():
    d = np.array([0.123, 4.56])
    np.testing.assert_array_equal(round_weights(d, "none"), d)
    with pytest.raises(CalibrationError):
        round_weights(d, "two-decimal")


rho_st = st.floats(0.001, 0.999)
u_st = st.floats(1e-3, 1e3)


@given(rho=rho_st, u=u_st)
def test_scale_times_gamma_is_one(rho, u):
    assert laplace_scale(rho, u) * calibrate_gamma(rho, u) == pytest.approx(1.0, abs=1e-12)


@given(r1=rho_st, r2=rho_st, u=u_st)
def test_gamma_increasing_in_rho(r1, r2, u):
    assume(r1 < r2)
    assert calibrate_gamma(r1, u) <= calibrate_gamma(r2, u)


@given(rho=rho_st, u1=u_st, u2=u_st)
def test_gamma_decreasing_in_u(rho, u1, u2):
    assume(u1 < u2)
    assert calibrate_gamma(rho, u1) >= calibrate_gamma(rho, u2)


@given(K=st.integers(2, 20), a=st.floats(0, 1), b=st.floats(0, 1))
def test_delta_increasing_in_rho(K, a, b):
    lo, hi = sorted((a, b))
    r1 = 1.0 / K + lo * (0.999 - 1.0 / K)
    r2 = 1.0 / K + hi * (0.999 - 1.0 / K)
    assert calibrate_delta(r1, K) <= calibrate_delta(r2, K) + 1e-15


@given(K=st.integers(2, 20), rho=st.floats(0.5, 0.999))
def test_delta_increasing_in_cardinality(K, rho):
    assert calibrate_delta(rho, K) <= calibrate_delta(rho, K + 1)


@given(t1=st.floats(1e-6, 1.0), t2=st.floats(1e-6, 1.0))
def test_epsilon_decreasing_in_theta(t1, t2):
    assume(t1 < t2)
    assert calibrate_epsilon(t1) >= calibrate_epsilon(t2)


def test_spec_validation():
    with pytest.raises(CalibrationError):
        CertaintySpec([1.0], [1.0], [], (), 0.8)
    with pytest.raises(CalibrationError):
        CertaintySpec([0.5], [1.0], [0.2], (4,), 0.8)
    with pytest.raises(CalibrationError):
        CertaintySpec([0.5], [1.0, 2.0], [], (), 0.8)
    with pytest.raises(CalibrationError):
        CertaintySpec([0.5], [1.0], [], (), 0.0)
    with pytest.raises(CalibrationError):
        AmbiguityParams([0.0], [], 0.1)
    with pytest.raises(CalibrationError):
        AmbiguityParams([1.0], [1.0], -0.1)


def test_calibrate_pipeline():
    spec = CertaintySpec([0.5, 0.99], [2.0, 0.5], [0.5, 0.9], (3, 2), 0.5)
    cal = calibrate(spec, "integer")
    np.testing.assert_allclose(cal.params.gamma, [0.346573590279972654, 9.21034037197618273], rtol=1e-14)
    np.testing.assert_allclose(cal.delta_raw, [0.693147180559945309, 2.19722457733621938], rtol=1e-14)
    np.testing.assert_array_equal(cal.params.delta, [1.0, 2.0])
    assert cal.params.epsilon == pytest.approx(math.log(2), rel=1e-14)
    np.testing.assert_allclose(cal.perturbation.b * cal.params.gamma, 1.0, atol=1e-12)
    assert cal.warnings == []


def test_calibrate_zero_delta_warns_and_clamps():
    spec = CertaintySpec([0.5], [1.0], [1 / 3], (3,), 1.0)
    with pytest.warns(UserWarning, match="zero"):
        cal = calibrate(spec, "integer", feature_names=["colour"])
    assert cal.delta_raw[0] == 0.0 and cal.params.delta[0] == 1.0
    assert "colour" in cal.warnings[0]
    assert cal.params.epsilon == 0.0


def test_params_round_trip():
    p = AmbiguityParams([0.5, 2.0], [1.0], 0.3, "integer")
    q = AmbiguityParams.from_dict(p.to_dict())
    np.testing.assert_array_equal(q.gamma, p.gamma)
    assert q.epsilon == p.epsilon and q.precision == p.precision
    assert p.with_epsilon(2.0).epsilon == 2.0


def test_sample_certainty_stays_in_domain():
    rng = np.random.default_rng(0)
    cards = (2, 3, 4, 7)
    for _ in range(50):
        rho_x, rho_z = sample_certainty(rng, 5, cards, 0.6, 0.4)
        assert np.all((rho_x >= RHO_X_BOUNDS[0]) & (rho_x <= RHO_X_BOUNDS[1]))
        assert np.all(rho_z >= 1.0 / np.array(cards)) and np.all(rho_z <= RHO_Z_CEILING)
        CertaintySpec(rho_x, np.ones(5), rho_z, cards, 0.9)


def test_half_widths():
    X = np.array([[0.0, 1.0], [2.0, 1.0], [4.0, 4.0]])
    np.testing.assert_allclose(stddev_half_widths(X), 0.4 * X.std(axis=0))
    with pytest.raises(CalibrationError):
        stddev_half_widths(np.ones((3, 1)))


def test_perturbation_model_positive_scales():
    with pytest.raises(CalibrationError):
        PerturbationModel([0.0], [], ())
