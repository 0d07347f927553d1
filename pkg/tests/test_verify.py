import math

import numpy as np
import pytest

from torusflow import verify as V
from torusflow.flow import DiffeoState, label_grid, translation
from torusflow.metrics import coefficients, extrinsic_distance, l2_distance
from torusflow.spectrum import CustomDrift, SingleModeDrift, Spectrum, WaveVector, ZeroDrift, eval_A


def test_estimate_constant_increments():
    est = V.estimate_drift_diffusion(np.full(500, 0.02), 0.01)
    assert est.drift_hat == pytest.approx(2.0)
    assert est.diffusion_sq_hat == 0.0 and est.se_drift == 0.0


def test_estimate_brownian(rng):
    dt = 0.01
    inc = 0.3 * dt + math.sqrt(2.0 * dt) * rng.standard_normal(200000)
    est = V.estimate_drift_diffusion(inc, dt)
    assert abs(est.drift_hat - 0.3) <= 4 * est.se_drift
    assert abs(est.diffusion_sq_hat - 2.0) <= 4 * est.se_diff


def test_estimate_needs_samples():
    with pytest.raises(V.InsufficientSamples):
        V.estimate_drift_diffusion(np.zeros(99), 0.1)


def test_translation_restarts(eight_direction):
    # a translated pair: the distance drifts at rate rho b and its diffusion vanishes with dt
    g = DiffeoState.identity(16)
    gt = DiffeoState.from_map(translation(0.3, 0.1), 16)
    co = coefficients(g, gt, eight_direction)
    diffs = []
    for dt in (1e-3, 1e-4):
        est = V.estimate_drift_diffusion(V.restart_increments(g, gt, eight_direction, l2_distance, dt, 4000, 1), dt)
        assert est.drift_hat == pytest.approx(co.rho[0] * co.b[0], rel=0.05)
        diffs.append(est.diffusion_sq_hat)
    assert diffs[1] < diffs[0] / 5 and diffs[0] < 1e-2 * co.b[0]


def test_restart_reproducible(two_mode):
    g = DiffeoState.identity(4)
    gt = DiffeoState.from_map(translation(0.3, 0.0), 4)
    a = V.restart_increments(g, gt, two_mode, l2_distance, 1e-3, 100, 7)
    b = V.restart_increments(g, gt, two_mode, l2_distance, 1e-3, 100, 7, batch=13)
    np.testing.assert_array_equal(a, b)


def test_annulus_properties():
    psi = V.build_annulus(0.2, 0.02)
    th = label_grid(128)
    out = psi(th)
    inside, outside = psi.in_E1(th), psi.outside_E2(th)
    np.testing.assert_allclose(out[inside][:, 0], th[inside][:, 0] + math.pi)
    np.testing.assert_array_equal(out[outside], th[outside])
    np.testing.assert_array_equal(out[..., 1], th[..., 1])
    assert inside.mean() == pytest.approx(0.2, abs=2 / 128)
    assert 1 - outside.mean() == pytest.approx(0.22, abs=2 / 128)


@pytest.mark.parametrize("alpha", [0.05, 0.2])
def test_annulus_distance_tends_to_sqrt_4alpha(alpha):
    labels = V.band_labels(4, 8192)
    prev = None
    for eps in (alpha / 10, alpha / 40):
        psi = V.build_annulus(alpha, eps)
        r = extrinsic_distance(labels, psi(labels))
        err = abs(r - math.sqrt(4 * alpha))
        assert prev is None or err < prev
        prev = err
    assert prev < 0.02


def test_annulus_validation():
    for args in ((0.2, 0.05), (0.0, 0.01), (0.95, 0.09)):
        with pytest.raises(ValueError):
            V.build_annulus(*args)


def test_smootherstep():
    assert V.smootherstep(-1) == 0 and V.smootherstep(2) == 1 and V.smootherstep(0.5) == 0.5


def test_example_prediction_values(two_mode):
    assert V.example_prediction(two_mode, 0.2)["closed_form_without_nu"] == 0.0
    diag = Spectrum(((WaveVector(1, 1), 1.0), (WaveVector(1, -1), 1.0)), nu=2.0)
    p = V.example_prediction(diag, 0.25)
    assert p["rho0"] == 1.0
    assert p["closed_form_without_nu"] == -1.0 and p["closed_form_with_nu"] == -2.0
    assert p["full_ito"] == 0.0 and p["odd_modes"] == 2


def test_example_requires_odd_modes():
    s = Spectrum(((WaveVector(2, 1), 1.0), (WaveVector(1, -2), 1.0)))
    with pytest.raises(ValueError):
        V.run_example_negative_drift(s, 0.2, 0.02, 1e-3, 10, labels=(2, 64))


def test_example_small_run_structure():
    s = Spectrum(((WaveVector(1, 1), 1.0), (WaveVector(1, -1), 1.0)))
    out = V.run_example_negative_drift(s, 0.2, 0.02, 1e-3, 200, labels=(4, 512), seed=1)
    assert set(out["abs_deviation"]) == {"closed_form_without_nu", "closed_form_with_nu", "full_ito"}
    assert out["relative_deviation"]["full_ito"] is None
    assert out["rho0_measured"] == pytest.approx(math.sqrt(0.8), rel=0.05)
    assert abs(out["state_formula_drift"]) < 0.05


def test_ns_residual():
    u = SingleModeDrift(WaveVector(2, 1), 0.7, 0.3, nu=0.5)
    assert V.ns_residual(u, 0.4) <= 1e-10
    assert V.ns_residual(ZeroDrift(), 1.0) == 0.0
    a = SingleModeDrift(WaveVector(1, 0), 1.0, 0.0)
    b = SingleModeDrift(WaveVector(0, 1), 1.0, 0.0)
    two = CustomDrift(lambda t, th: a(t, th) + b(t, th), "two modes")
    assert V.ns_residual(two, 0.0, nu=1.0) > 0.1
    with pytest.raises(ValueError):
        V.ns_residual(two, 0.0)


def test_ns_residual_finite_difference_time(rng):
    # a custom wrapper of an exact solution: only the time derivative is approximated
    u = SingleModeDrift(WaveVector(1, 2), 0.5, -0.2, nu=1.0)
    wrapped = CustomDrift(lambda t, th: u(t, th), "wrapped")
    for t in (0.0, 0.5):
        assert V.ns_residual(wrapped, t, nu=1.0) < 1e-6


def test_ito_stratonovich_correction(eight_direction):
    s = Spectrum.from_power_law(3, exponent=-1.0)
    assert V.ito_stratonovich_correction(eight_direction) < 1e-10
    assert V.ito_stratonovich_correction(s) < 1e-10


def test_advection_between_nonzero():
    th = label_grid(32)
    X = eval_A(WaveVector(1, 0), th)
    Y = eval_A(WaveVector(0, 1), th)
    assert np.abs(V.advection_between(X, Y, 32)).max() > 0.5
    assert np.abs(V.advection_between(X, X, 32)).max() < 1e-12


def test_variance_rates_analytic(two_mode):
    np.testing.assert_allclose(V.variance_rates_analytic(two_mode), [1.0, 1.0])


def test_variance_calibration_and_nu_scaling(two_mode):
    a = V.variance_calibration(two_mode, 2000, 0.2, dt=1e-2, seed=2)
    b = V.variance_calibration(two_mode.scaled(1.0, nu=2.0), 2000, 0.2, dt=1e-2, seed=2)
    assert max(map(abs, a["z_scores"])) < 3.5 and max(map(abs, b["z_scores"])) < 3.5
    assert np.allclose(np.array(b["rate"]) / np.array(a["rate"]), 2.0, rtol=0.15)
    assert not a["invariant_violated"]


def test_variance_calibration_open_spectrum():
    s = Spectrum(((WaveVector(1, 0), 1.0),), require_closure=False)
    out = V.variance_calibration(s, 1000, 0.1, dt=1e-2, seed=3)
    assert not out["closed_spectrum"] and out["invariant_violated"] and not out["isotropic"]
