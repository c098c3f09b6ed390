from __future__ import annotations

import numpy as np
import pytest

from emelasto.spline import (
    KnotVector,
    SplineError,
    basis_eval,
    box_geometry,
    build_mixed_spaces,
    gauss_legendre,
    geometry_map,
    read_patch,
    uniform_knot_vector,
    write_patch,
)


def cox_de_boor(knots, i, p, u):
    if p == 0:
        if knots[i] <= u < knots[i + 1]:
            return 1.0
        return 0.0
    out = 0.0
    if knots[i + p] > knots[i]:
        out += (u - knots[i]) / (knots[i + p] - knots[i]) * cox_de_boor(knots, i, p - 1, u)
    if knots[i + p + 1] > knots[i + 1]:
        out += (knots[i + p + 1] - u) / (knots[i + p + 1] - knots[i + 1]) * cox_de_boor(knots, i + 1, p - 1, u)
    return out


def test_linear_hats():
    kv = KnotVector(1, (0, 0, 0.5, 1, 1))
    first, val, _ = basis_eval(kv, 0.25)
    assert first == 0
    assert np.allclose(val, [0.5, 0.5], atol=1e-15)


def test_quadratic_against_recursion():
    kv = uniform_knot_vector(2, 4)
    first, val, _ = basis_eval(kv, 0.3)
    ref = [cox_de_boor(kv.knots, first + k, 2, 0.3) for k in range(3)]
    assert np.allclose(val, ref, atol=1e-13)


def test_partition_of_unity_and_derivative_sum(rng):
    for kv in (uniform_knot_vector(2, 4), uniform_knot_vector(3, 5, 1), uniform_knot_vector(1, 3)):
        for u in rng.uniform(0, 1, 1000):
            _, val, der = basis_eval(kv, u)
            assert abs(val.sum() - 1.0) <= 1e-12
            assert abs(der.sum()) <= 1e-12
            assert np.all(val >= -1e-15)


def test_derivatives_fd():
    kv = uniform_knot_vector(3, 4)
    u, h = 0.37, 1e-6
    f0, _, der = basis_eval(kv, u)
    _, vp, _ = basis_eval(kv, u + h, kv.find_span(u))
    _, vm, _ = basis_eval(kv, u - h, kv.find_span(u))
    assert np.allclose((vp - vm) / (2 * h), der, atol=1e-7)


def test_invalid_knots():
    with pytest.raises(SplineError):
        KnotVector(2, (0, 0, 1, 1))
    with pytest.raises(SplineError):
        KnotVector(1, (0, 0, 0.7, 0.5, 1, 1))
    with pytest.raises(SplineError):
        basis_eval(uniform_knot_vector(1, 2), 1.5)


def test_mixed_space_dimensions():
    ms = build_mixed_spaces(1, 1, 0, (2, 2, 2))
    assert ms.pressure.dim == 27
    # velocity degree 2 with regularity r + b = 0 on two elements
    assert ms.velocity.shape == (5, 5, 5)
    ms = build_mixed_spaces(2, 1, 0, (4, 4, 4))
    assert ms.pressure.shape == (6, 6, 6)
    ms = build_mixed_spaces(2, 2, 1, (1, 1, 1))
    assert ms.pressure.dim == 27
    assert ms.velocity.dim == 125
    with pytest.raises(SplineError):
        build_mixed_spaces(1, 1, 1)


def test_shared_breaks():
    ms = build_mixed_spaces(2, 1, 0, (3, 2, 4))
    for vk, pk in zip(ms.velocity.kvs, ms.pressure.kvs):
        assert np.allclose(vk.breaks, pk.breaks)


def test_box_maps():
    ms = build_mixed_spaces(1, 1, 0, (1, 1, 3))
    g = box_geometry(ms.velocity, (0, 0, 0), (1, 1, 1))
    x, jac = geometry_map(g, (0.2, 0.5, 0.7))
    assert np.allclose(x, [0.2, 0.5, 0.7], atol=1e-14)
    assert np.allclose(jac, np.eye(3), atol=1e-14)
    g = box_geometry(ms.velocity, (-0.5, -0.5, 0), (0.5, 0.5, 6))
    _, jac = geometry_map(g, (0.1, 0.9, 0.4))
    assert np.allclose(jac, np.diag([1.0, 1.0, 6.0]), atol=1e-13)
    g = box_geometry(ms.velocity, (-0.05, -0.05, 0), (0.05, 0.05, 0.3))
    _, jac = geometry_map(g, (0.5, 0.5, 0.5))
    assert np.linalg.det(jac) > 0


def test_linear_reproduction():
    # Greville control points reproduce linear fields exactly
    ms = build_mixed_spaces(2, 1, 0, (2, 3, 2))
    g = box_geometry(ms.velocity, (0, 0, 0), (1, 2, 3))
    for xi in [(0.1, 0.2, 0.3), (0.77, 0.5, 0.01)]:
        x, _ = geometry_map(g, xi)
        assert np.allclose(x, np.array(xi) * [1, 2, 3], atol=1e-12)


def test_patch_round_trip():
    ms = build_mixed_spaces(1, 1, 0, (2, 1, 3))
    g = box_geometry(ms.velocity, (0, 0, 0), (1, 1, 2))
    g2 = read_patch(write_patch(g))
    assert np.array_equal(g2.control_points, g.control_points)
    assert [kv.knots for kv in g2.space.kvs] == [kv.knots for kv in g.space.kvs]


def test_gauss_legendre_exactness():
    x, w = gauss_legendre(3)
    assert w.sum() == pytest.approx(1.0)
    assert np.dot(w, x**5) == pytest.approx(1 / 6, rel=1e-14)
