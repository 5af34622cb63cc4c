import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fusedfda.basis import (
    BSplineBasis,
    design_matrix,
    evaluate_basis,
    gram_matrix,
    greville_abscissae,
    interpolate,
    make_basis,
    roughness_matrix,
    step_approximation_error,
    step_knots,
)

from oracles import bspline_oracle, clamped_knots


def test_make_basis_dimensions():
    b = make_basis(4, 26, (0.0, 1.0))
    assert b.dimension == 30
    b = make_basis(1, 1, (0.0, 1.0))
    assert b.dimension == 2
    np.testing.assert_array_equal(b.breakpoints, [0.0, 0.5, 1.0])
    b = make_basis(2, 3, (0.0, 2.0))
    assert b.dimension == 5
    np.testing.assert_allclose(b.interior_knots, [0.5, 1.0, 1.5])


@pytest.mark.parametrize("domain", [(1.0, 1.0), (2.0, 1.0), (0.0, np.inf)])
def test_make_basis_rejects_bad_domain(domain):
    with pytest.raises(ValueError):
        make_basis(4, 3, domain)


def test_make_basis_rejects_bad_order():
    with pytest.raises(ValueError):
        make_basis(0, 3)
    with pytest.raises(ValueError):
        make_basis(2, -1)


def test_interior_knots_must_be_inside():
    with pytest.raises(ValueError):
        BSplineBasis(3, (0.0, 1.0), np.array([0.0, 0.5]))
    with pytest.raises(ValueError):
        BSplineBasis(3, (0.0, 1.0), np.array([0.6, 0.5]))


def test_order_one_is_indicator():
    b = make_basis(1, 1)
    np.testing.assert_array_equal(evaluate_basis(b, 0.25), [1.0, 0.0])
    np.testing.assert_array_equal(evaluate_basis(b, 0.75), [0.0, 1.0])
    # right end belongs to the last span
    np.testing.assert_array_equal(evaluate_basis(b, 1.0), [0.0, 1.0])


def test_matches_truncated_power_oracle_at_037():
    b = make_basis(4, 26)
    expected = bspline_oracle(b.knots, 4, 0.37)
    np.testing.assert_allclose(evaluate_basis(b, 0.37), expected, atol=1e-13)


@pytest.mark.parametrize("order", [1, 2, 3, 4, 5])
def test_matches_oracle_on_uneven_knots(order):
    rng = np.random.default_rng(order)
    inner = np.sort(rng.uniform(0.0, 2.0, 6))
    inner[3] = inner[2]  # a double interior knot
    b = BSplineBasis(order, (0.0, 2.0), inner)
    pts = rng.uniform(0.0, 2.0, 7)
    D = design_matrix(b, pts)
    for row, t in zip(D, pts):
        np.testing.assert_allclose(row, bspline_oracle(clamped_knots(order, inner, 0.0, 2.0), order, t), atol=1e-12)


def test_design_matrix_rows_match_pointwise_oracle_k2():
    rng = np.random.default_rng(3)
    b = make_basis(2, 4, (0.0, 1.0))
    pts = np.sort(rng.uniform(0, 1, 5))
    D = design_matrix(b, pts)
    assert D.shape == (5, b.dimension)
    for row, t in zip(D, pts):
        np.testing.assert_allclose(row, bspline_oracle(b.knots, 2, t), atol=1e-14)


def test_design_matrix_single_point_equals_evaluate():
    b = make_basis(4, 10)
    np.testing.assert_array_equal(design_matrix(b, [0.3])[0], evaluate_basis(b, 0.3))


def test_design_matrix_grid_rows_sum_to_one():
    b = make_basis(4, 26)
    D = design_matrix(b, np.linspace(0, 1, 50))
    assert D.shape == (50, 30)
    np.testing.assert_allclose(D.sum(axis=1), 1.0, atol=1e-14)


def test_partition_of_unity_random_points():
    b = make_basis(4, 26)
    t = np.random.default_rng(0).uniform(0, 1, 1000)
    D = design_matrix(b, t)
    assert np.all(D >= 0)
    assert np.max(np.abs(D.sum(axis=1) - 1.0)) < 1e-12


@settings(max_examples=60, deadline=None)
@given(
    order=st.integers(1, 6),
    n_interior=st.integers(0, 12),
    t=st.floats(0.0, 1.0),
)
def test_partition_of_unity_property(order, n_interior, t):
    b = make_basis(order, n_interior, (-1.0, 3.0))
    v = evaluate_basis(b, -1.0 + 4.0 * t)
    assert np.all(v >= 0)
    assert abs(v.sum() - 1.0) < 1e-12


def test_local_support():
    b = make_basis(4, 8)
    kn = b.knots
    t = np.linspace(0, 1, 401)
    D = design_matrix(b, t)
    for j in range(b.dimension):
        outside = (t < kn[j]) | (t > kn[j + b.order])
        assert np.all(D[outside, j] == 0.0)


def test_endpoints_are_clamped():
    b = make_basis(4, 5)
    np.testing.assert_allclose(evaluate_basis(b, 0.0), np.eye(b.dimension)[0])
    np.testing.assert_allclose(evaluate_basis(b, 1.0), np.eye(b.dimension)[-1])


def test_points_outside_domain_rejected():
    b = make_basis(3, 4)
    with pytest.raises(ValueError):
        evaluate_basis(b, 1.01)
    with pytest.raises(ValueError):
        design_matrix(b, [0.5, -0.2])
    with pytest.raises(ValueError):
        design_matrix(b, [np.nan])


def test_derivative_matches_finite_difference():
    b = make_basis(4, 7)
    t = np.array([0.13, 0.41, 0.77])
    h = 1e-6
    fd = (design_matrix(b, t + h) - design_matrix(b, t - h)) / (2 * h)
    np.testing.assert_allclose(design_matrix(b, t, deriv=1), fd, atol=1e-6)


def test_roughness_matrix_polynomials():
    b = make_basis(4, 26)
    W = roughness_matrix(b, 2)
    const = interpolate(b, lambda t: np.ones_like(t))
    lin = interpolate(b, lambda t: t)
    quad = interpolate(b, lambda t: t**2)
    assert abs(const @ W @ const) < 1e-9
    assert abs(lin @ W @ lin) < 1e-9
    assert abs(quad @ W @ quad - 4.0) < 1e-6


def test_roughness_matrix_symmetric_psd():
    W = roughness_matrix(make_basis(4, 26), 2)
    assert np.max(np.abs(W - W.T)) < 1e-12
    assert np.linalg.eigvalsh(W).min() >= -1e-10


@pytest.mark.parametrize("k,s", [(4, 1), (3, 2), (5, 3), (6, 2)])
def test_roughness_matrix_psd_other_orders(k, s):
    W = roughness_matrix(make_basis(k, 9, (0.0, 2.5)), s)
    scale = np.abs(W).max()
    assert np.max(np.abs(W - W.T)) <= 1e-14 * scale
    assert np.linalg.eigvalsh(W).min() >= -1e-13 * scale


def test_roughness_matrix_annihilates_low_degree_polynomials():
    b = make_basis(5, 11)
    for s in (1, 2, 3):
        W = roughness_matrix(b, s)
        for deg in range(s):
            c = interpolate(b, lambda t, d=deg: t**d)
            assert abs(c @ W @ c) < 1e-12 * np.abs(W).max()


def test_roughness_matrix_exact_against_dense_quadrature():
    b = make_basis(4, 6)
    W = roughness_matrix(b, 2)
    t = np.linspace(0, 1, 200001)
    D2 = design_matrix(b, t, deriv=2)
    ref = np.trapezoid(D2[:, :, None] * D2[:, None, :], t, axis=0)
    np.testing.assert_allclose(W, ref, rtol=1e-5, atol=1e-3)


def test_roughness_rejects_high_derivative():
    with pytest.raises(ValueError):
        roughness_matrix(make_basis(3, 4), 3)


def test_gram_matrix_integrates_product():
    b = make_basis(4, 5)
    c = interpolate(b, lambda t: t)
    # int_0^1 t^2 dt
    assert abs(c @ gram_matrix(b) @ c - 1.0 / 3.0) < 1e-12


def test_step_knots_order_one():
    tau = step_knots(make_basis(1, 1)).tau
    np.testing.assert_allclose(tau, [0.0, 0.5, 1.0])


def test_step_knots_order_two():
    # each interval is the support length of its hat function over the order
    tau = step_knots(make_basis(2, 1)).tau
    np.testing.assert_allclose(tau, [0.0, 0.25, 0.75, 1.0])


def test_step_knots_invariants():
    b = make_basis(4, 26)
    sk = step_knots(b)
    assert sk.tau.size == 31
    assert sk.tau[0] == 0.0 and sk.tau[-1] == 1.0
    assert np.all(np.diff(sk.tau) >= 0)
    assert abs(sk.gaps.sum() - 1.0) < 1e-12


@settings(max_examples=40, deadline=None)
@given(order=st.integers(1, 6), n_interior=st.integers(0, 30), lo=st.floats(-5, 5), width=st.floats(0.1, 10))
def test_step_knots_property(order, n_interior, lo, width):
    b = make_basis(order, n_interior, (lo, lo + width))
    sk = step_knots(b)
    assert sk.tau[0] == lo and sk.tau[-1] == lo + width
    assert np.all(sk.gaps >= 0)
    assert abs(sk.gaps.sum() - width) < 1e-12 * max(1.0, abs(lo) + width)


def test_step_error_zero_for_constants_and_order_one():
    b = make_basis(4, 12)
    grid = np.linspace(0, 1, 501)
    assert step_approximation_error(b, np.full(b.dimension, 2.5), grid) == pytest.approx(0.0, abs=1e-14)
    b1 = make_basis(1, 9)
    c = np.random.default_rng(1).normal(size=b1.dimension)
    assert step_approximation_error(b1, c, grid) == 0.0


def test_step_error_rate():
    grid = np.linspace(0, 1, 4001)
    f = lambda t: np.sin(2 * np.pi * t)
    errs = []
    for M in (10, 20, 40, 80):
        b = make_basis(4, M)
        errs.append(step_approximation_error(b, interpolate(b, f), grid))
    assert errs[2] <= 0.7 * errs[1]
    for a, b_ in zip(errs, errs[1:]):
        assert b_ <= a * 1.05


def test_greville_interpolation_reproduces_spline():
    b = make_basis(4, 8)
    c = np.random.default_rng(5).normal(size=b.dimension)
    g = greville_abscissae(b)
    c2 = interpolate(b, lambda t: design_matrix(b, t) @ c)
    np.testing.assert_allclose(c2, c, atol=1e-10)
    assert np.all(np.diff(g) > 0)


def test_basis_serialization_round_trip():
    b = make_basis(3, 4, (-1.0, 2.0))
    assert BSplineBasis.from_dict(b.to_dict()) == b
    assert hash(BSplineBasis.from_dict(b.to_dict())) == hash(b)
