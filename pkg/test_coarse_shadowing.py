#!/usr/bin/env python3
"""
Тесты грубого отслеживания: R0, граница R2 и соответствие E
"""

import logging
import math
import sys

import numpy as np
import pytest

from lab_errors import ConfigError
from lab_testing import run_suite, setup_test_logging
from poincare_disk import TangentVector, dist0, flow0
from conformal_metric import Bump, ConformalMetric
from coarse_shadowing import (
    MorseReport, correspondence_E, endpoint_bound, estimate_R0, hausdorff, inverse_correspondence,
    verify_endpoint_bound,
)

logger = logging.getLogger(__name__)


def test_flat_morse_constant_vanishes():
    report = estimate_R0(ConformalMetric(), 5, [5.0, 10.0], seed=2)
    assert report.R0_hat < 1e-6
    assert report.plateau_flag
    assert report.samples == 10
    assert report.to_dict()['R0_used'] == pytest.approx(1.5 * report.R0_hat)


def test_perturbed_morse_constant_positive():
    metric = ConformalMetric([Bump(0j, 1.0, 1.2)], 0.1)
    report = estimate_R0(metric, 3, [4.0], seed=1)
    assert report.A == pytest.approx(math.exp(0.1))
    assert 0.0 < report.R0_hat < 1.0


def test_endpoint_bound_constants():
    report = MorseReport(0.2, 1.0, 0, [], True)
    R2, delta = endpoint_bound(1.0, report)
    assert R2 == pytest.approx(8.2)
    assert delta == pytest.approx(10.2)
    with pytest.raises(ConfigError):
        endpoint_bound(0.5, report)


def test_hausdorff():
    pts, _ = flow0(0.1j, 0.4, np.linspace(0.0, 3.0, 61))
    assert hausdorff(pts, pts) == pytest.approx(0.0, abs=1e-9)
    assert hausdorff([0j], [math.tanh(0.5) * 1j]) == pytest.approx(1.0, abs=1e-12)
    assert hausdorff(pts, pts[:31]) == pytest.approx(1.5, abs=1e-9)


def test_flat_endpoint_bound_holds():
    report = MorseReport(0.0, 1.0, 0, [], True)
    result = verify_endpoint_bound(ConformalMetric(), 1.0, report, n_pairs=40, seed=3)
    assert result['success']
    assert result['pairs'] > 0
    assert result['max_distance'] <= 1.0 + 1e-9


def test_correspondence_flat():
    metric = ConformalMetric()
    v = TangentVector(0.2 - 0.1j, 1.1)
    w, t0 = correspondence_E(metric, v, 4.0)
    assert w == v
    assert t0 == 4.0
    seg = inverse_correspondence(metric, w, t0)
    end, _ = flow0(v.base, v.angle, 4.0)
    assert seg.duration == pytest.approx(4.0, abs=1e-12)
    assert abs(seg.end - end) < 1e-10
    with pytest.raises(ConfigError):
        correspondence_E(metric, v, 0.0)


def test_correspondence_perturbed_endpoints():
    metric = ConformalMetric([Bump(0j, 1.0, 1.2)], 0.1)
    v = TangentVector(-0.3 + 0.05j, 0.2)
    w, t0 = correspondence_E(metric, v, 3.0)
    seg = metric.integrate(v, 3.0)
    end0, _ = flow0(w.base, w.angle, t0)
    assert abs(end0 - seg.end) < 1e-9
    assert t0 == pytest.approx(dist0(seg.start, seg.end))
    back = inverse_correspondence(metric, w, t0)
    assert back.duration == pytest.approx(3.0, abs=1e-5)


def main():
    setup_test_logging('test_coarse_shadowing.log')
    tests = [
        ("R0 фоновой метрики", test_flat_morse_constant_vanishes),
        ("R0 при ε ≠ 0", test_perturbed_morse_constant_positive),
        ("Константы R2 и δ", test_endpoint_bound_constants),
        ("Хаусдорфово расстояние", test_hausdorff),
        ("Граница R2 без возмущения", test_flat_endpoint_bound_holds),
        ("Соответствие E при ε = 0", test_correspondence_flat),
        ("Соответствие E при ε ≠ 0", test_correspondence_perturbed_endpoints),
    ]
    return run_suite("грубое отслеживание", tests)


if __name__ == '__main__':
    sys.exit(main())
