from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abreu_forge import fd
from abreu_forge.bundle import TRIVIAL
from abreu_forge.operators import x_derivatives
from abreu_forge.polytope import PolytopeError, all_vertex_charts, box, interior_grid, interval, simplex, vertex_chart
from abreu_forge.potential import (
    ConvexityError,
    LegendreDual,
    Polynomial,
    Potential,
    determinant_fields,
    guillemin_potential,
    jets,
    legendre_check,
    log_F_jets,
    normalize_at,
    parse_potential,
    perturbed_potential,
)


def test_interval_guillemin_value_and_second_derivative(unit_interval):
    v = guillemin_potential(unit_interval)
    half = np.array([[0.5]])
    assert math.isclose(v.value(half)[0], -math.log(2))
    assert math.isclose(v.hessian(half)[0, 0, 0], 4.0)


def test_value_extends_continuously_to_boundary(unit_interval):
    v = guillemin_potential(unit_interval)
    assert np.allclose(v.value(np.array([[0.0], [1.0]])), 0.0)


def test_simplex_inverse_hessian_closed_form(triangle):
    v = guillemin_potential(triangle)
    a, b = 0.2, 0.35
    U = np.linalg.inv(v.hessian(np.array([[a, b]]))[0])
    assert np.allclose(U, [[a * (1 - a), -a * b], [-a * b, b * (1 - b)]], atol=1e-14)


def test_perturbation_accepted_and_rejected(unit_interval):
    perturbed_potential(unit_interval, Polynomial.from_terms(1, [((2,), 1.0)]))
    with pytest.raises(ConvexityError) as err:
        perturbed_potential(unit_interval, Polynomial.from_terms(1, [((2,), -10.0)]))
    assert abs(err.value.witness[0] - 0.5) <= 1 / 32
    assert err.value.min_eigenvalue < 0


def test_zero_perturbation_is_guillemin(square):
    u = perturbed_potential(square, Polynomial(2))
    pts = interior_grid(square, 8).points
    assert np.array_equal(u.value(pts), guillemin_potential(square).value(pts))


def test_normalize_interval_guillemin(unit_interval):
    v = guillemin_potential(unit_interval)
    w = normalize_at(v, [0.5])
    half = np.array([[0.5]])
    assert abs(w.value(half)[0]) < 1e-15
    assert abs(w.gradient(half)[0, 0]) < 1e-15
    # the added constant is log 2 at the symmetric point
    pts = np.array([[0.1], [0.7]])
    assert np.allclose(w.value(pts) - v.value(pts), math.log(2))


def test_normalize_is_idempotent_and_keeps_hessian(triangle):
    u = perturbed_potential(triangle, Polynomial.from_terms(2, [((1, 2), 0.3), ((3, 0), -0.1)]))
    p = [0.2, 0.3]
    once = normalize_at(u, p)
    twice = normalize_at(once, p)
    pts = interior_grid(triangle, 10).points
    assert np.allclose(once.value(pts), twice.value(pts), atol=1e-14)
    assert np.array_equal(u.hessian(pts), once.hessian(pts))
    assert np.all(once.value(pts) >= -1e-14)


def test_normalize_rejects_boundary_point(unit_interval):
    with pytest.raises(PolytopeError):
        normalize_at(guillemin_potential(unit_interval), [1.0])


def test_interval_legendre_closed_forms(unit_interval):
    v = guillemin_potential(unit_interval)
    G = interior_grid(unit_interval, 16)
    j = jets(v, G)
    xi = G.points[:, 0]
    assert np.allclose(j.x[:, 0], np.log(xi / (1 - xi)), atol=1e-14)
    assert np.allclose(j.f_value, np.log1p(np.exp(j.x[:, 0])), atol=1e-14)
    assert math.isclose(LegendreDual(v).value(np.zeros((1, 1)))[0], math.log(2), abs_tol=1e-12)


def test_quadratic_is_self_dual(square):
    u = Potential(square, False, Polynomial.quadratic(2))
    j = jets(u, interior_grid(square, 6))
    assert np.allclose(j.x, j.points)
    assert np.allclose(j.f_value, 0.5 * (j.x**2).sum(axis=1))


def test_hessian_duality_pointwise(triangle):
    u = perturbed_potential(triangle, Polynomial.from_terms(2, [((2, 2), 0.4)]))
    j = jets(u, interior_grid(triangle, 16))
    fij = LegendreDual(u).hessian(j.x, start=j.points)
    assert np.abs(np.einsum("nij,njk->nik", fij, j.hess) - np.eye(2)).max() <= 1e-10
    assert np.abs(np.einsum("nij,njk->nik", j.inv, j.hess) - np.eye(2)).max() <= 1e-10


def test_legendre_involution(square):
    u = perturbed_potential(square, Polynomial.from_terms(2, [((2, 2), 0.05)]))
    rep = legendre_check(u, interior_grid(square, 16))
    assert rep.involution_rms < 1e-8
    assert rep.duality_max <= 1e-10


def test_interval_determinant_fields(unit_interval):
    G = interior_grid(unit_interval, 32)
    j = jets(guillemin_potential(unit_interval), G)
    ch = vertex_chart(unit_interval, (0,))
    df = determinant_fields(j, TRIVIAL, [ch], face=())
    xi = G.points[:, 0]
    assert np.allclose(df.F_delta, xi * (1 - xi), rtol=1e-13)
    assert np.allclose(df.F_p(ch.vertex_index), (1 - xi) ** 2, rtol=1e-12)
    assert np.array_equal(df.F_E, df.F_delta)


def test_F_p_stays_bounded_near_the_vertex(square):
    ch = vertex_chart(square, (0, 0))
    v = guillemin_potential(square)
    tops = []
    for r in (16, 64, 256):
        G = interior_grid(square, r)
        near = G.points[np.all(G.points < 0.25, axis=1)]
        F = np.exp(log_F_jets(jets(v, near), TRIVIAL, ch.exponent_weights)[0])
        assert np.all(F > 0)
        tops.append(F.max())
    assert max(tops) <= 1.0 + 1e-12


def test_log_F_p_minus_log_F_delta_is_affine_in_x(triangle):
    u = perturbed_potential(triangle, Polynomial.from_terms(2, [((1, 1), 0.2)]))
    j = jets(u, interior_grid(triangle, 12))
    for ch in all_vertex_charts(triangle):
        _, g0, H0 = log_F_jets(j, TRIVIAL)
        _, g1, H1 = log_F_jets(j, TRIVIAL, ch.exponent_weights)
        _, Dxx = x_derivatives(g1 - g0, H1 - H0, j)
        assert np.abs(Dxx).max() < 1e-9


def test_exact_jets_agree_with_finite_differences(square):
    u = perturbed_potential(square, Polynomial.from_terms(2, [((2, 2), 0.05)]))
    pts = np.array([[0.3, 0.6], [0.5, 0.2], [0.7, 0.7]])
    errs = []
    for h in (2e-2, 1e-2):
        g, H = fd.gradient_hessian(u.value, pts, np.full_like(pts, h))
        errs.append(max(np.abs(g - u.gradient(pts)).max(), np.abs(H - u.hessian(pts)).max()))
    assert math.log2(errs[0] / errs[1]) > 1.8


@settings(max_examples=30, deadline=None)
@given(st.floats(0.02, 0.98))
def test_interval_x_map_is_monotone(t):
    v = guillemin_potential(interval(0, 1))
    a, b = v.gradient(np.array([[t * 0.99]]))[0, 0], v.gradient(np.array([[t]]))[0, 0]
    assert a < b


def test_parse_potential(square):
    u = parse_potential(
        {"guillemin": True, "polynomial": [{"exponents": [2, 2], "coeff": 0.05}], "normalize_at": [0.5, 0.5]}, square
    )
    assert u.base_point == (0.5, 0.5)
    assert abs(u.value(np.array([[0.5, 0.5]]))[0]) < 1e-15


def test_singular_hessian_is_reported(square):
    u = Potential(square, False, Polynomial.from_terms(2, [((2, 0), 1.0)]))
    with pytest.raises((ConvexityError, np.linalg.LinAlgError)):
        jets(u, interior_grid(square, 4))
