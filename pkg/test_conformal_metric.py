#!/usr/bin/env python3
"""
Тесты конформной метрики: φ, кривизна, интегратор, краевая задача
"""

import cmath
import logging
import math
import sys

import numpy as np
import pytest

from lab_errors import ConfigError
from lab_testing import run_suite, setup_test_logging
from poincare_disk import TangentVector, dist0, flow0
from bolza_group import word_element, sample_domain
from conformal_metric import Bump, ConformalMetric, metric_from_config

logger = logging.getLogger(__name__)

EPS = 0.1
WIDTH = 1.2


def bump_metric(**kwargs) -> ConformalMetric:
    return ConformalMetric([Bump(0j, 1.0, WIDTH)], EPS, **kwargs)


def test_phi_values_and_invariance():
    metric = bump_metric()
    assert metric.phi(0j) == pytest.approx(EPS, abs=1e-14)
    corner = math.tanh(1.15) * cmath.exp(1j * math.pi / 8.0)
    assert metric.phi(corner) == 0.0
    g = word_element((1, 4, 6))
    z = 0.2 + 0.1j
    assert metric.phi(complex(g(z))) == pytest.approx(metric.phi(z), abs=1e-12)
    _, grad = metric.phi_grad(np.array([0j]))
    assert abs(grad[0]) < 1e-12


def test_curvature_at_bump_center():
    metric = bump_metric()
    expected = math.exp(-2.0 * EPS) * (-1.0 + 12.0 * EPS / WIDTH ** 2)
    assert metric.curvature(0j) == pytest.approx(expected, abs=1e-9)
    assert ConformalMetric().curvature(0.3j) == pytest.approx(-1.0, abs=1e-14)


def test_certify_accepts_and_rejects():
    cert = bump_metric().certify()
    assert cert.certified
    assert cert.k_max < 0
    assert cert.grid_step == pytest.approx(WIDTH / 8.0)
    with pytest.raises(ConfigError):
        ConformalMetric([Bump(0j, 1.0, 0.5)], 1.0).certify()


def test_bump_support_inside_domain():
    with pytest.raises(ConfigError):
        ConformalMetric([Bump(0j, 1.0, 2.0)], EPS)
    with pytest.raises(ConfigError):
        ConformalMetric([Bump(0.95 + 0j, 1.0, 0.1)], EPS)


def test_equivalence_constant():
    assert ConformalMetric().equivalence_constant() == 1.0
    assert bump_metric().equivalence_constant() == pytest.approx(math.exp(EPS))


def test_flat_metric_matches_closed_form():
    metric = ConformalMetric()
    rng = np.random.default_rng(11)
    p, q = sample_domain(rng, 30), sample_domain(rng, 30)
    assert np.max(np.abs(metric.dist_many(complex(p[0]), q) - dist0(complex(p[0]), q))) < 1e-12
    seg = metric.connect(complex(p[1]), complex(q[1]))
    assert seg.duration == pytest.approx(dist0(complex(p[1]), complex(q[1])), abs=1e-12)
    assert abs(seg.end - q[1]) < 1e-10


def test_ode_integrator_against_closed_form():
    ode = ConformalMetric(force_ode=True)
    assert not ode.is_flat
    for v in (TangentVector(0.1 + 0.2j, 0.7), TangentVector(-0.3j, 2.5)):
        seg = ode.integrate(v, 3.0)
        z, angle = flow0(v.base, v.angle, 3.0)
        assert abs(seg.end - z) < 1e-8
        assert seg.speed_drift < 1e-7


def test_perturbed_connect_consistent():
    metric = bump_metric()
    p, q = -0.3 + 0.1j, 0.35 - 0.05j
    seg = metric.connect(p, q)
    A = metric.equivalence_constant()
    d0 = dist0(p, q)
    assert d0 / A - 1e-9 <= seg.duration <= A * d0 + 1e-9
    back = metric.dist(q, p)
    assert back == pytest.approx(seg.duration, abs=1e-6)
    shot = metric.integrate(seg.initial, seg.duration)
    assert abs(shot.end - q) < 1e-5


def test_metric_from_config_block():
    metric = metric_from_config({'bumps': [{'center': [0.0, 0.0], 'amplitude': 1.0, 'width': WIDTH}],
                                 'epsilon': EPS})
    assert not metric.is_flat
    assert metric.metric_hash() == bump_metric().metric_hash()
    assert metric.metric_hash() != ConformalMetric().metric_hash()


def main():
    setup_test_logging('test_conformal_metric.log')
    tests = [
        ("φ и Γ-инвариантность", test_phi_values_and_invariance),
        ("Кривизна в центре шапочки", test_curvature_at_bump_center),
        ("Сертификат кривизны", test_certify_accepts_and_rejects),
        ("Носитель шапочки", test_bump_support_inside_domain),
        ("Константа эквивалентности", test_equivalence_constant),
        ("Фоновая метрика", test_flat_metric_matches_closed_form),
        ("ОДУ против замкнутой формы", test_ode_integrator_against_closed_form),
        ("Краевая задача при ε ≠ 0", test_perturbed_connect_consistent),
        ("Метрика из конфигурации", test_metric_from_config_block),
    ]
    return run_suite("конформная метрика", tests)


if __name__ == '__main__':
    sys.exit(main())
