#!/usr/bin/env python3
"""
Тесты функций Бузмана, произведения Громова, двойного отношения и теней
"""

import logging
import math
import sys

import numpy as np
import pytest

from lab_errors import GeometryError
from lab_testing import run_suite, setup_test_logging
from poincare_disk import (
    TangentVector, angle_difference, cross_ratio0, flow0, geodesic_foot, point_to_geodesic0,
)
from conformal_metric import Bump, ConformalMetric
from boundary_geometry import BoundaryGeometry, Quadrilateral, arc_contains, random_quadrilateral

logger = logging.getLogger(__name__)


def flat_geometry() -> BoundaryGeometry:
    return BoundaryGeometry(ConformalMetric())


def test_busemann_along_ray():
    geometry = flat_geometry()
    for theta in (0.3, 2.0, 5.5):
        for t in (0.5, 2.0, 6.0):
            z, _ = flow0(0j, theta, t)
            assert geometry.busemann(0j, z, theta).value == pytest.approx(-t, abs=1e-9)
    p, q, r = 0.1 + 0.2j, -0.4j, 0.5 + 0.1j
    b = lambda x, y: geometry.busemann(x, y, 1.3).value
    assert b(p, q) + b(q, r) == pytest.approx(b(p, r), abs=1e-12)


def test_gromov_product():
    geometry = flat_geometry()
    assert geometry.gromov_product(0j, 0.0, np.pi) == pytest.approx(0.0, abs=1e-12)
    assert geometry.gromov_product(0j, 0.0, 0.01) > geometry.gromov_product(0j, 0.0, 1.0)
    with pytest.raises(GeometryError):
        geometry.gromov_product(0j, 1.0, 1.0)


def test_gromov_product_off_geodesic():
    geometry = flat_geometry()
    r = 0.3
    expected = 2.0 * math.log((1.0 + r * r) / (1.0 - r * r))
    assert geometry.gromov_product(1j * r, 0.0, np.pi) == pytest.approx(expected, rel=1e-12)
    assert geometry.gromov_product(-0.5 + 0j, 0.0, np.pi) == pytest.approx(0.0, abs=1e-12)
    xi, eta = 0.4, 2.9
    foot, _ = geodesic_foot(xi, eta)
    for p in (0.2 - 0.5j, -0.3 + 0.1j):
        value = geometry.gromov_product(p, xi, eta)
        assert value > 0.0
        via_busemann = -(geometry.busemann(p, foot, xi).value + geometry.busemann(p, foot, eta).value)
        assert value == pytest.approx(via_busemann, abs=1e-9)
        d = point_to_geodesic0(p, xi, eta)
        assert value == pytest.approx(2.0 * math.log(math.cosh(d)), abs=1e-9)


def test_cross_ratio_from_gromov_products():
    geometry = flat_geometry()
    rng = np.random.default_rng(5)
    quad = random_quadrilateral(rng)
    for p in (0j, 0.3 - 0.4j, -0.6 + 0.1j):
        g = lambda a, b: geometry.gromov_product(p, a, b)
        value = (g(quad.xi, quad.eta2) + g(quad.xi2, quad.eta)) - (g(quad.xi, quad.eta) + g(quad.xi2, quad.eta2))
        assert value == pytest.approx(cross_ratio0(quad.xi, quad.xi2, quad.eta, quad.eta2), abs=1e-9)
        assert geometry.cross_ratio(quad, p) == pytest.approx(value, abs=1e-9)


def test_otal_walk_defect():
    geometry = flat_geometry()
    rng = np.random.default_rng(17)
    for _ in range(5):
        walk = geometry.otal_walk(random_quadrilateral(rng))
        assert walk.defect < 1e-9
        assert len(walk.points) == 5


def test_degenerate_quadrilateral():
    geometry = flat_geometry()
    quad = Quadrilateral(0.5, 0.5, 2.0, 4.0)
    assert geometry.cross_ratio(quad, 0j) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(GeometryError):
        Quadrilateral(0.5, 1.0, 0.5, 4.0)


def test_shadow_of_interior_point():
    geometry = flat_geometry()
    assert geometry.shadow(0.1j, 0j, 1.0) == [(0.0, 2.0 * np.pi)]
    with pytest.raises(GeometryError):
        geometry.shadow(0j, 0.5j, 0.0)
    R, rho = 0.5, 3.0
    p = math.tanh(0.5 * rho) * np.exp(0.7j)
    arcs = geometry.shadow(p, 0j, R)
    half = math.asin(math.sinh(R) / math.sinh(rho))
    assert arc_contains(arcs, 0.7)
    assert arc_contains(arcs, 0.7 + 0.9 * half)
    assert not arc_contains(arcs, 0.7 + 1.1 * half)
    assert not arc_contains(arcs, 0.7 + np.pi)


def test_shadow_from_boundary_point():
    geometry = flat_geometry()
    R, xi = 0.4, 1.0
    arcs = geometry.shadow(0j, xi, R)
    for eta in np.linspace(0.0, 2.0 * np.pi, 73, endpoint=False):
        if abs(angle_difference(eta, xi)) < 1e-6:
            continue
        d = point_to_geodesic0(0j, xi, eta)
        if abs(d - R) > 1e-6:
            assert bool(arc_contains(arcs, eta)) == (d < R)


def test_arc_contains_wraps():
    arcs = [(6.0, 0.5)]
    assert arc_contains(arcs, 0.2)
    assert arc_contains(arcs, 6.1)
    assert not arc_contains(arcs, 3.0)
    flags = arc_contains([(1.0, 2.0), (4.0, 4.5)], np.array([1.5, 3.0, 4.2]))
    assert list(flags) == [True, False, True]


def test_perturbed_direction_hits_boundary_point():
    geometry = BoundaryGeometry(ConformalMetric([Bump(0j, 1.0, 1.2)], 0.1))
    p, xi = 0.2 - 0.1j, 2.4
    v = geometry.direction_to(p, xi)
    assert isinstance(v, TangentVector)
    assert abs(angle_difference(geometry.ray_to_boundary(v), xi)) < 1e-6


def test_direction_to_real_interior_point():
    geometry = flat_geometry()
    v = geometry.direction_to(0j, 0.3, boundary=False)
    assert v.angle == pytest.approx(0.0, abs=1e-12)
    w = geometry.direction_to(0.5j, np.float64(0.3), boundary=False)
    assert abs(angle_difference(w.angle, 0.0)) > 0.1
    assert geometry.direction_to(0.5j, np.complex128(0.3)).angle == pytest.approx(w.angle, abs=1e-12)
    assert geometry.direction_to(0.5j, 0.3).angle != pytest.approx(w.angle, abs=1e-3)
    with pytest.raises(GeometryError):
        geometry.direction_to(0j, 1.5, boundary=False)
    with pytest.raises(GeometryError):
        geometry.direction_to(0j, 0.3 + 0j, boundary=True)


def main():
    setup_test_logging('test_boundary_geometry.log')
    tests = [
        ("Функция Бузмана вдоль луча", test_busemann_along_ray),
        ("Произведение Громова", test_gromov_product),
        ("Громов вне геодезической", test_gromov_product_off_geodesic),
        ("Двойное отношение", test_cross_ratio_from_gromov_products),
        ("Обход по орициклам", test_otal_walk_defect),
        ("Вырожденный четырёхугольник", test_degenerate_quadrilateral),
        ("Тень из внутренней точки", test_shadow_of_interior_point),
        ("Тень из точки абсолюта", test_shadow_from_boundary_point),
        ("Дуги через 0", test_arc_contains_wraps),
        ("Направление на абсолют при ε ≠ 0", test_perturbed_direction_hits_boundary_point),
        ("Направление на вещественную точку диска", test_direction_to_real_interior_point),
    ]
    return run_suite("абсолют и функции Бузмана", tests)


if __name__ == '__main__':
    sys.exit(main())
