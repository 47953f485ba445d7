import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simexcal import (
    DomainError,
    ErrorParameters,
    SingularityError,
    cv_rmse,
    fit_metrics,
    invert_prediction,
    nmbe,
    parameter_error,
    uut_response,
)


def test_invert_identity_params():
    y = np.array([1.0, 5.0, 9.0])
    np.testing.assert_array_equal(invert_prediction(y, np.zeros(3), ErrorParameters(0, 0, 0)), y)


@settings(max_examples=100, deadline=None)
@given(
    x=st.lists(st.floats(0.0, 500.0), min_size=1, max_size=50),
    pf=st.floats(0.5, 1.0),
    alpha=st.floats(-0.5, 0.5),
    phi_c=st.floats(-0.3, 0.3),
    eps=st.floats(-20.0, 20.0),
)
def test_inversion_round_trip(x, pf, alpha, phi_c, eps):
    params = ErrorParameters(alpha, phi_c, eps)
    x = np.array(x)
    phi = np.full(x.size, np.arccos(pf))
    back = invert_prediction(uut_response(x, phi, params), phi, params)
    assert np.max(np.abs(back - x)) <= 1e-9


def test_inversion_singularity():
    params = ErrorParameters(0.0, 0.5, 0.0)
    with pytest.raises(SingularityError) as info:
        invert_prediction([1.0, 1.0], [0.0, np.pi / 2 - 0.5], params)
    assert info.value.index == 1


def test_overstated_gain_underpredicts():
    rng = np.random.default_rng(0)
    x = rng.uniform(20, 180, 500)
    phi = np.arccos(rng.uniform(0.7, 1.0, 500))
    truth = ErrorParameters(0.2, 0.2, 5.0)
    y = uut_response(x, phi, truth)
    pred = invert_prediction(y, phi, ErrorParameters(0.3, 0.2, 5.0))
    assert nmbe(x, pred) > 1.0


def test_cv_rmse_examples():
    a = np.full(4, 100.0)
    assert cv_rmse(a, a) == 0.0
    assert cv_rmse(a, [110.0, 90.0, 110.0, 90.0], par=3) == pytest.approx(20.0)


def test_nmbe_examples():
    a = np.full(103, 100.0)
    assert nmbe(a, a) == 0.0
    assert nmbe(a, a + 5.0, par=3) == pytest.approx(-5.15)


def test_metric_domain_errors():
    with pytest.raises(DomainError):
        cv_rmse([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])  # n == par
    with pytest.raises(DomainError):
        nmbe([1.0, -1.0, 1.0, -1.0], [0.0, 0.0, 0.0, 0.0])
    with pytest.raises(DomainError):
        cv_rmse([1.0, 2.0, 3.0, 4.0], [1.0, 2.0])


def test_fit_metrics_bundle():
    a = np.full(4, 100.0)
    m = fit_metrics(a, [110.0, 90.0, 110.0, 90.0])
    assert (m.cv_rmse, m.nmbe, m.n, m.par) == (pytest.approx(20.0), pytest.approx(0.0), 4, 3)


def test_parameter_error_examples():
    t = ErrorParameters(0.2, 0.2, 5.0)
    np.testing.assert_array_equal(parameter_error(t, t), 0.0)
    assert parameter_error(t, ErrorParameters(0.4, 0.2, 5.0))[0] == pytest.approx(-100.0)
    # a 100% bias error on a mean bias of 5 kW corresponds to an estimate of 10 kW in magnitude
    assert abs(parameter_error(t, ErrorParameters(0.2, 0.2, 10.0))[2]) == pytest.approx(100.0)


def test_parameter_error_zero_truth():
    with pytest.raises(DomainError):
        parameter_error(ErrorParameters(0.0, 0.2, 5.0), ErrorParameters(0.1, 0.2, 5.0))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1.0, 1000.0), min_size=5, max_size=40), st.floats(1e-3, 50), st.booleans())
def test_cv_rmse_non_negative_and_shift(actual, shift, over):
    a = np.array(actual)
    shift = shift if over else -shift
    assert cv_rmse(a, a + shift) > 0
    # over-prediction gives a negative NMBE and vice versa
    assert np.sign(nmbe(a, a + shift)) == -np.sign(shift)
