import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epsensing import (
    DomainError,
    IllConditionedCovarianceError,
    SensorParams,
    SingularResponseError,
    build_model,
    cramer_rao,
    fisher_I1,
    fisher_upper_bound,
    heterodyne_uncertainty,
    model_from_matrix,
    sensitivity,
    synth_jordan_model,
)
from epsensing.estimation import CovarianceConditionWarning, fisher_from_moments, local_exponent, trace_norm
from epsensing.gaussian import coherent
from epsensing.model import amplitude_derivative, output_state
from epsensing.spectral import random_transform
from epsensing.sweep import jordan_probe

pytestmark = pytest.mark.filterwarnings("ignore::epsensing.estimation.CovarianceConditionWarning")


def slope(x, y):
    return np.polyfit(np.log(x), np.log(y), 1)[0]


@pytest.fixture
def probe(canonical):
    return jordan_probe(canonical)


def test_zero_probe_has_no_information(canonical):
    assert fisher_I1(canonical, 0.1, np.zeros(4)) == 0.0
    assert heterodyne_uncertainty(canonical, 0.1, np.zeros(4)) == math.inf


def test_canonical_fisher_slope(canonical, probe):
    thetas = np.logspace(-3, -1, 21)
    I = [fisher_I1(canonical, t, probe) for t in thetas]
    assert slope(thetas, I) == pytest.approx(-4, abs=0.1)


def test_third_order_fisher_slope():
    M = synth_jordan_model(3, P=random_transform(6, seed=0, max_cond=2.0))
    model = model_from_matrix(M)
    mu = jordan_probe(model)
    thetas = np.logspace(-2, -1, 11)
    I = [fisher_I1(model, t, mu) for t in thetas]
    assert slope(thetas, I) == pytest.approx(-6, abs=0.2)


def test_fisher_matches_extended_precision(canonical, probe):
    mp = pytest.importorskip("mpmath")
    mp.mp.dps = 60
    theta = 1e-3
    A = mp.matrix((theta * np.eye(4) - canonical.M).tolist())
    Om = mp.matrix(canonical.omega.tolist())
    G = -Om * A**-1
    I4 = mp.eye(4)
    R = mp.matrix(canonical.R.tolist())
    V = (I4 - G) * (I4 - G).T + G * R * R.T * G.T
    d = G * Om * G * mp.matrix(probe.tolist())  # d mu_out / d theta = G Pi Omega G mu
    exact = float((d.T * V**-1 * d)[0])
    assert fisher_I1(canonical, theta, probe) == pytest.approx(exact, rel=1e-8)


def test_fisher_matches_explicit_inverse_when_well_conditioned(canonical, probe):
    theta = 0.3
    out = output_state(canonical, theta, coherent(probe, canonical.layout))
    d = amplitude_derivative(canonical, theta, probe)
    assert fisher_I1(canonical, theta, probe) == pytest.approx(d @ np.linalg.solve(out.V, d), rel=1e-10)
    assert fisher_from_moments(d, out.V) == pytest.approx(d @ np.linalg.solve(out.V, d), rel=1e-10)


def test_covariance_condition_guard(canonical, probe):
    with pytest.raises(IllConditionedCovarianceError):
        fisher_I1(canonical, 1e-5, probe)


def test_covariance_condition_warning(canonical, probe):
    with pytest.warns(CovarianceConditionWarning):
        fisher_I1(canonical, 1e-3, probe)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.05, 5.0))
def test_congruence_invariance(seed, theta):
    model = build_model(SensorParams())
    rng = np.random.default_rng(seed)
    mu = rng.normal(size=4)
    T = random_transform(4, seed=seed, max_cond=10.0)
    d = amplitude_derivative(model, theta, mu)
    V = output_state(model, theta, coherent(mu, model.layout)).V
    a = fisher_from_moments(d, V)
    b = fisher_from_moments(T @ d, T @ V @ T.T)
    assert b == pytest.approx(a, rel=1e-7)


def test_cramer_rao_values():
    assert cramer_rao(4.0) == 0.5
    c, theta = 7.0, 0.01
    assert cramer_rao(c * theta**-4) == pytest.approx(c**-0.5 * theta**2, rel=1e-14)


@pytest.mark.parametrize("bad", [0.0, -1.0, math.nan, math.inf])
def test_cramer_rao_domain(bad):
    with pytest.raises(DomainError):
        cramer_rao(bad)


def test_heterodyne_slope_and_ratio(canonical, probe):
    thetas = np.logspace(-3, -1, 21)
    het = np.array([heterodyne_uncertainty(canonical, t, probe) for t in thetas])
    cr = np.array([cramer_rao(fisher_I1(canonical, t, probe)) for t in thetas])
    assert slope(thetas, het) == pytest.approx(2, abs=0.1)
    assert np.all(het >= cr)
    low = thetas <= 1e-2
    ratio = het[low] / cr[low]
    assert ratio.max() / ratio.min() - 1 <= 0.05


def test_upper_bound_finite_below_threshold():
    ub = fisher_upper_bound(build_model(SensorParams(Delta=0.05)))
    assert math.isfinite(ub) and ub > 0


def test_upper_bound_scaling_in_delta():
    deltas = np.logspace(-3, -1, 11)
    ub = [fisher_upper_bound(build_model(SensorParams(Delta=d))) for d in deltas]
    assert slope(deltas, ub) == pytest.approx(-4, abs=0.3)


def test_upper_bound_undefined_at_threshold(canonical):
    with pytest.raises(SingularResponseError):
        fisher_upper_bound(canonical)


@pytest.mark.parametrize("delta", [0.01, 0.5])
def test_upper_bound_zero_hamiltonian(delta):
    # G = -Omega / Delta has four singular values 1 / Delta
    assert fisher_upper_bound(model_from_matrix(np.zeros((4, 4))), theta=delta) == pytest.approx((4 / delta) ** 2)


def test_trace_norm():
    assert trace_norm(np.diag([3.0, -4.0])) == 7.0


def test_detuned_saturates_below_bound(canonical, probe):
    det = build_model(SensorParams(Delta=0.05))
    I0 = fisher_I1(det, 0.0, probe)
    assert math.isfinite(I0)
    assert I0 <= fisher_upper_bound(det) * 1.1


@pytest.mark.parametrize("theta", [1.0, 2.0, 5.0])
def test_detuned_agrees_with_threshold_far_from_cutoff(canonical, probe, theta):
    det = build_model(SensorParams(Delta=0.05))
    assert fisher_I1(det, theta, probe) == pytest.approx(fisher_I1(canonical, theta, probe), rel=0.1)


def test_detuned_curve_flattens(probe):
    det = build_model(SensorParams(Delta=0.05))
    thetas = np.logspace(-4, np.log10(0.005), 11)
    dcr = [cramer_rao(fisher_I1(det, t, probe)) for t in thetas]
    assert np.max(np.abs(local_exponent(thetas, dcr))) <= 0.1


def test_sensitivity_report(probe):
    det = build_model(SensorParams(Delta=0.05))
    rep = sensitivity(det, 0.2, probe)
    assert rep.delta_theta_cr == pytest.approx(rep.I1**-0.5)
    assert rep.delta_theta_het >= rep.delta_theta_cr
    assert rep.upper_bound_I == pytest.approx(fisher_upper_bound(det))
    assert sensitivity(build_model(SensorParams()), 0.2, probe).upper_bound_I is None


def test_local_exponent_exact_power():
    t = np.logspace(-3, 0, 7)
    np.testing.assert_allclose(local_exponent(t, 3 * t**2.5), 2.5, rtol=1e-12)


def test_warning_category_is_user_warning():
    assert issubclass(CovarianceConditionWarning, UserWarning)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        fisher_I1(build_model(SensorParams()), 0.5, np.ones(4))
