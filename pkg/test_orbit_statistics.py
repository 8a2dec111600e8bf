#!/usr/bin/env python3
"""
Тесты статистики орбит: P(T), замкнутые геодезические, μ_T, сжатие и перемешивание
"""

import logging
import math
import sys
from functools import lru_cache

import numpy as np
import pytest

from lab_errors import ConfigError
from lab_testing import run_suite, setup_test_logging
from conformal_metric import Bump, ConformalMetric
from poincare_disk import TangentVector
from bolza_group import SYSTOLE, ConjClassRep, sample_domain
from entropy_measures import HopfSample, sample_arrays
from orbit_statistics import (
    EmpiricalMeasure, TangentBins, closed_geodesic, contraction_stats, count_PT, counting_curve,
    displacement_minimum, flow_invariance, mixing_correlation, mu_T, observable, orbit_radius_for, periodic_orbits,
    separation_check, stable_pair_curve, support_coverage, total_variation,
)

logger = logging.getLogger(__name__)


@lru_cache(maxsize=None)
def systole_orbits():
    return periodic_orbits(4.0)


def flat_samples(n: int, seed: int) -> list:
    rng = np.random.default_rng(seed)
    pts = sample_domain(rng, n)
    angles = rng.uniform(0.0, 2.0 * np.pi, n)
    return [HopfSample(0.0, 1.0, 0.0, TangentVector(complex(z), float(a))) for z, a in zip(pts, angles)]


def test_orbit_radius_formula():
    T = 4.0
    expected = 2.0 * math.asinh((1.0 + math.sqrt(2.0)) ** 2 * math.sinh(0.5 * T))
    assert orbit_radius_for(T) == pytest.approx(expected, rel=1e-12)


def test_count_systoles():
    orbits, diag = systole_orbits()
    assert diag['closure_ok']
    assert diag['trace_mismatch'] == 0
    count, _ = count_PT(4.0, orbits=orbits)
    assert count == 24
    assert min(o.length for o in orbits) == pytest.approx(SYSTOLE, abs=1e-9)
    assert count_PT(SYSTOLE - 0.1)[0] == 0
    words = {o.word for o in orbits}
    for o in orbits:
        assert ConjClassRep(o.word).inverse().word in words


def test_counting_curve():
    curve = counting_curve([3.5, 4.0])
    assert [r['P'] for r in curve['rows']] == [24, 24]
    assert curve['slope'] == pytest.approx(0.0, abs=1e-12)


def test_closed_geodesic_of_generator():
    rep = ConjClassRep((0,))
    closed = closed_geodesic(rep)
    assert closed.length_g == pytest.approx(SYSTOLE, abs=1e-9)
    assert closed.variation < 1e-9
    assert displacement_minimum(rep) == pytest.approx(SYSTOLE, abs=1e-6)
    with pytest.raises(ConfigError):
        closed_geodesic(ConjClassRep(()))


def test_tangent_bins_and_variation():
    bins = TangentBins()
    assert bins.size == 8 * 8 * 32
    rng = np.random.default_rng(8)
    z = sample_domain(rng, 500)
    a = rng.uniform(0.0, 2.0 * np.pi, 500)
    idx = bins.index(z, a)
    assert idx.min() >= 0 and idx.max() < bins.size
    m = EmpiricalMeasure.from_vectors(bins, z, a)
    assert m.masses.sum() == pytest.approx(1.0)
    assert total_variation(m, m) == 0.0
    other = EmpiricalMeasure.from_vectors(TangentBins(n_angles=16), z, a)
    with pytest.raises(ConfigError):
        total_variation(m, other)


def test_mu_T_of_systoles():
    orbits, _ = systole_orbits()
    bins = TangentBins()
    measure = mu_T(4.0, bins, orbits)
    assert measure.meta['classes'] == 24
    assert measure.masses.sum() == pytest.approx(1.0)
    assert measure.support() > 24
    with pytest.raises(ConfigError):
        mu_T(2.0, bins, orbits)


def test_separation_of_reversed_orbit():
    orbits, _ = systole_orbits()
    first = orbits[0]
    reverse = next(o for o in orbits if o.word == ConjClassRep(first.word).inverse().word)
    report = separation_check([first, reverse], samples=64)
    assert len(report['pairs']) == 1
    assert report['passed']


def test_observables():
    z = np.array([0.1j, -0.2 + 0.1j])
    a = np.array([0.0, np.pi])
    assert list(observable('const:2')(z, a)) == [2.0, 2.0]
    assert np.allclose(observable('angle_cos')(z, a), [1.0, -1.0])
    assert set(observable('cell:3')(z, a)) <= {0.0, 1.0}
    for bad in ('bogus', 'cell:999', 'const:x'):
        with pytest.raises(ConfigError):
            observable(bad)


def test_flat_contraction_slope():
    samples = flat_samples(40, 1)
    report = contraction_stats(samples, [2.0, 4.0, 6.0, 8.0], 1.0, n_pairs=20, seed=3)
    assert report['pairs'] == 20
    assert report['slope'] == pytest.approx(-1.0, abs=0.02)
    assert all(b < a for a, b in zip(report['median'], report['median'][1:]))


def test_stable_pair_curve_closed_form():
    v = TangentVector(0.3 - 0.2j, 1.7)
    r = 0.8
    t = np.array([0.0, 2.0, 4.0, 6.0, 8.0])
    expected = 2.0 * np.arcsinh(0.5 * r * np.exp(-t))
    assert stable_pair_curve(v, r, t) == pytest.approx(expected, rel=1e-6)


def test_contraction_uses_sampled_vectors():
    samples = flat_samples(1, 6)
    t = [1.0, 3.0, 5.0]
    report = contraction_stats(samples, t, 0.6, n_pairs=1, seed=11)
    rng = np.random.default_rng(11)
    rng.choice(1, size=1, replace=False)
    r = rng.uniform(0.5, 1.0) * 0.6
    expected = stable_pair_curve(samples[0].v, r, np.array(t))
    assert report['median'] == pytest.approx(list(expected), rel=1e-12)
    other = contraction_stats(flat_samples(40, 9), t, 0.6, n_pairs=20, seed=11)
    assert other['pairs'] == 20
    assert other['slope'] == pytest.approx(-1.0, abs=0.05)


def test_mixing_with_constant_observable():
    samples = flat_samples(300, 2)
    report = mixing_correlation(samples, 'const:1', 'angle_cos', [0.0, 1.0, 2.0], n_boot=20, seed=4)
    assert report['samples'] == 300
    assert all(abs(r['C']) < 1e-12 for r in report['rows'])
    again = mixing_correlation(samples, 'angle_cos', 'angle_cos', [0.0, 1.0], n_boot=20, seed=4)
    assert again['rows'][0]['C'] > 0.3


def test_liouville_sample_flow_invariance():
    bins = TangentBins(8, 2, 8)
    z, a = sample_arrays(flat_samples(5000, 12))
    report = flow_invariance(z, a, bins, t=1.0)
    assert report['bins'] > 100
    assert report['within_2sigma'] >= 0.9
    frozen = flow_invariance(z, np.zeros_like(a), bins, t=1.0)
    assert frozen['within_2sigma'] < 0.9
    assert frozen['max_z'] > report['max_z']


def test_support_coverage():
    bins = TangentBins(8, 2, 8)
    z, a = sample_arrays(flat_samples(20000, 13))
    report = support_coverage(z, a, bins)
    assert report['bins'] == 128
    assert report['full'] and report['populated'] == 128
    sparse = support_coverage(z[:50], a[:50], bins)
    assert not sparse['full']


def bumped_metric() -> ConformalMetric:
    return ConformalMetric([Bump(0j, 1.0, 1.2)], 0.1)


def test_perturbed_closed_geodesic():
    metric = bumped_metric()
    A = metric.equivalence_constant()
    rep = ConjClassRep((0,))
    closed = closed_geodesic(rep, metric)
    assert SYSTOLE / A - 1e-6 <= closed.length_g <= A * SYSTOLE + 1e-6
    assert closed.length_g != pytest.approx(SYSTOLE, abs=1e-4)
    assert closed.variation < 1e-4
    assert closed.length_g == pytest.approx(displacement_minimum(rep, metric), abs=1e-4)


def test_perturbed_count_PT():
    metric = bumped_metric()
    A = metric.equivalence_constant()
    assert count_PT(SYSTOLE / A - 0.05, metric)[0] == 0
    orbits, diag = periodic_orbits(3.5, metric)
    assert diag['closure_ok']
    assert count_PT(3.5, metric, orbits=orbits)[0] == 24
    assert all(o.axis is not None for o in orbits)
    assert all(SYSTOLE / A - 1e-6 <= o.length <= A * SYSTOLE + 1e-6 for o in orbits)


def main():
    setup_test_logging('test_orbit_statistics.log')
    tests = [
        ("Радиус шара орбиты", test_orbit_radius_formula),
        ("Систолы: P(4) = 24", test_count_systoles),
        ("Кривая P(T)", test_counting_curve),
        ("Замкнутая геодезическая образующей", test_closed_geodesic_of_generator),
        ("Бины T¹M", test_tangent_bins_and_variation),
        ("Мера μ_T", test_mu_T_of_systoles),
        ("Разделение обратных орбит", test_separation_of_reversed_orbit),
        ("Наблюдаемые", test_observables),
        ("Сжатие при ε = 0", test_flat_contraction_slope),
        ("Пара на устойчивом орицикле", test_stable_pair_curve_closed_form),
        ("Сжатие по выбранным векторам", test_contraction_uses_sampled_vectors),
        ("Корреляции перемешивания", test_mixing_with_constant_observable),
        ("Инвариантность выборки при f_1", test_liouville_sample_flow_invariance),
        ("Полнота носителя", test_support_coverage),
        ("Замкнутая геодезическая при ε ≠ 0", test_perturbed_closed_geodesic),
        ("P(T) при ε ≠ 0", test_perturbed_count_PT),
    ]
    return run_suite("статистика орбит", tests)


if __name__ == '__main__':
    sys.exit(main())
