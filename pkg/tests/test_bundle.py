from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abreu_forge import fd
from abreu_forge.bundle import (
    TRIVIAL,
    BundleError,
    D_alpha,
    check_position_condition,
    h_G_field,
    log_D,
    parse_bundle,
    roots_from_pairs,
    weight_D,
)
from abreu_forge.polytope import box, interval


def test_D_alpha_values():
    assert D_alpha(roots_from_pairs([((1,), 1)]), 0, [3.0]) == 6
    assert D_alpha(roots_from_pairs([((1, 1), 1)]), 0, [1.0, 2.0]) == 6


def test_D_alpha_needs_roots():
    with pytest.raises(BundleError):
        D_alpha(TRIVIAL, 0, [1.0])


def test_D_alpha_rejects_nonpositive():
    with pytest.raises(BundleError, match="nonpositive"):
        D_alpha(roots_from_pairs([((1,), 1)]), 0, [-1.0])


def test_weight_D():
    assert np.all(weight_D(TRIVIAL, np.random.default_rng(0).random((5, 2))) == 1)
    assert weight_D(roots_from_pairs([((1,), 1)]), [3.0]) == 6
    flag = roots_from_pairs([((1, 0), 2), ((0, 1), 2), ((1, 1), 2)])
    assert weight_D(flag, [1.0, 1.0]) == 256


def test_multiplicity_squares_factor():
    pts = np.array([[0.4, 1.3], [2.0, 0.1]])
    one = weight_D(roots_from_pairs([((1, 2), 1), ((0, 1), 1)]), pts)
    two = weight_D(roots_from_pairs([((1, 2), 2), ((0, 1), 1)]), pts)
    fac = 2 * (pts @ np.array([1, 2]))
    assert np.allclose(two, one * fac)


def test_h_G_examples():
    assert np.all(h_G_field(TRIVIAL, np.ones((3, 1))) == 0)
    s = 0.7
    B = roots_from_pairs([((1,), 1)], sigma=[s])
    assert math.isclose(h_G_field(B, np.array([[3.0]]))[0], s / 3)
    assert h_G_field(roots_from_pairs([((1,), 1)], sigma=[0.0]), np.array([[3.0]]))[0] == 0


def test_h_G_matches_finite_differences():
    B = roots_from_pairs([((1, 0), 1), ((1, 1), 2)], sigma=[0.3, -1.2])
    pts = np.array([[1.3, 0.8], [2.0, 1.5]])
    sig = np.array(B.sigma)
    errs = []
    for h in (1e-2, 5e-3):
        steps = np.full_like(pts, h)
        g = fd.gradient_hessian(lambda p: log_D(B, p), pts, steps)[0]
        errs.append(np.abs(g @ sig - h_G_field(B, pts)).max())
    assert errs[1] < errs[0] / 3.5


def test_position_condition_examples():
    B = roots_from_pairs([((1,), 1)])
    good = check_position_condition(interval(3, 4), B)
    assert math.isclose(good.total, 1 / 6) and good.passed
    bad = check_position_condition(interval(1, 2), B)
    assert math.isclose(bad.total, 1 / 2) and not bad.passed
    assert check_position_condition(box(2), TRIVIAL).passed


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 3), st.floats(0.1, 3), st.floats(0.1, 3), st.floats(0.1, 3))
def test_log_D_is_concave_along_segments(a, b, c, d):
    B = roots_from_pairs([((1, 0), 1), ((1, 1), 2), ((0, 3), 1)])
    p, q = np.array([[a, b]]), np.array([[c, d]])
    mid = log_D(B, (p + q) / 2)[0]
    assert mid >= 0.5 * (log_D(B, p)[0] + log_D(B, q)[0]) - 1e-12


def test_parse_bundle():
    B = parse_bundle({"roots": [{"M": [1, 0], "multiplicity": 2}], "sigma": [1, 2]})
    assert B.roots[0].multiplicity == 2 and B.sigma == (1.0, 2.0)
    assert parse_bundle(None).trivial
    with pytest.raises(BundleError):
        parse_bundle({"roots": [{"M": [0, 0]}]})
    with pytest.raises(BundleError):
        parse_bundle({"roots": [{"M": [1, -1]}]})
