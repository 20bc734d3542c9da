from __future__ import annotations

import math

import numpy as np
import pytest

from abreu_forge.bundle import TRIVIAL
from abreu_forge.functionals import AffineDensity, calibrate_affine_A, make_quadratures
from abreu_forge.stability import (
    CalibrationError,
    NormalizationError,
    check_calibrated,
    draw_probes,
    falsify_stability,
    make_pl_test,
    stability_ratio,
)

A2 = AffineDensity.constant(1, 2.0)


def test_half_crease_ratio(unit_interval):
    u = make_pl_test([1.0], [0.5], [0.5])
    assert math.isclose(stability_ratio(u, A2, unit_interval, TRIVIAL, 64), 0.5, abs_tol=1e-12)


@pytest.mark.parametrize("t", [0.1, 0.37, 0.8])
def test_interval_crease_closed_form(unit_interval, t):
    # L = (1-t) - (1-t)^2 and the boundary term is 1-t, so the ratio is t
    u = make_pl_test([1.0], [t], [t])
    assert math.isclose(stability_ratio(u, A2, unit_interval, TRIVIAL, 16), t, abs_tol=1e-12)


def test_ratio_is_scale_invariant(square):
    A = AffineDensity.constant(2, 4.0)
    u = make_pl_test([0.3, -0.7], [0.5, 0.5], [0.5, 0.5])
    v = make_pl_test([3.0, -7.0], [0.5, 0.5], [0.5, 0.5])
    assert math.isclose(stability_ratio(u, A, square, TRIVIAL, 32), stability_ratio(v, A, square, TRIVIAL, 32), rel_tol=1e-12)


def test_adding_affine_leaves_L_unchanged(square):
    from abreu_forge.functionals import L_A

    A = AffineDensity.constant(2, 4.0)
    u = make_pl_test([0.6, 0.2], [0.4, 0.5], [0.4, 0.5])
    Q = make_quadratures(square, 64)
    base = L_A(u, A, square, TRIVIAL, Q).L_A
    shifted = L_A(lambda p: u(p) + 1.0 - p[:, 0] + 2 * p[:, 1], A, square, TRIVIAL, Q).L_A
    assert math.isclose(base, shifted, abs_tol=1e-12)


def test_normalization_is_enforced():
    with pytest.raises(NormalizationError):
        make_pl_test([1.0], [0.2], [0.5])


def test_falsifier_on_interval(unit_interval):
    rep = falsify_stability(A2, unit_interval, TRIVIAL, samples=1000, seed=0, resolution=64)
    assert abs(rep.lambda_hat - 0.5) < 1e-3
    assert not rep.negative
    assert rep.accepted > 0


def test_falsifier_is_deterministic(square):
    A = calibrate_affine_A(square, TRIVIAL, make_quadratures(square, 32))
    a = falsify_stability(A, square, TRIVIAL, samples=40, seed=7, resolution=32)
    b = falsify_stability(A, square, TRIVIAL, samples=40, seed=7, resolution=32)
    assert a == b


def test_more_samples_never_raise_the_estimate(square):
    A = AffineDensity.constant(2, 4.0)
    short = falsify_stability(A, square, TRIVIAL, samples=20, seed=3, resolution=32)
    long = falsify_stability(A, square, TRIVIAL, samples=60, seed=3, resolution=32)
    assert long.lambda_hat <= short.lambda_hat
    assert long.ratios[: len(short.ratios)] == short.ratios


def test_probe_stream_is_prefix_stable(triangle):
    p = triangle.barycenter
    assert draw_probes(triangle, p, 10, 5) == draw_probes(triangle, p, 25, 5)[:10]


def test_miscalibrated_density_is_rejected(unit_interval):
    with pytest.raises(CalibrationError):
        falsify_stability(AffineDensity.constant(1, 4.0), unit_interval, TRIVIAL, samples=10)


def test_miscalibrated_density_finds_negative_witness(unit_interval):
    # A = 4 makes L_A(1) negative, so some normalized probe has L_A <= 0
    rep = falsify_stability(
        AffineDensity.constant(1, 4.0), unit_interval, TRIVIAL, samples=200, seed=0, check_calibration=False
    )
    assert rep.negative
    assert rep.lambda_hat <= 0.0
    assert rep.negative_witness is not None


def test_calibration_check_returns_defect(unit_interval):
    d = check_calibrated(A2, unit_interval, TRIVIAL, 64)
    assert np.abs(d).max() < 1e-12


def test_p_o_must_be_interior(unit_interval):
    with pytest.raises(ValueError):
        falsify_stability(A2, unit_interval, TRIVIAL, p_o=[1.0], samples=2)
