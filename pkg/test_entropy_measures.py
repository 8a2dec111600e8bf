#!/usr/bin/env python3
"""
Тесты критического показателя, мер Паттерсона-Салливана и Боуэна-Маргулиса
"""

import logging
import sys
import tempfile
from dataclasses import replace
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

from lab_errors import ConfigError, ResourceError
from lab_testing import run_suite, setup_test_logging
from poincare_disk import angle_difference, flow0, ray_end0
from bolza_group import cached_ball, in_domain, word_element
from conformal_metric import Bump, ConformalMetric
from boundary_geometry import BoundaryGeometry
from entropy_measures import (
    bm_base_point_deviation, bm_invariance_deviation, bm_mass, bowen_margulis, dynamical_ball_decay,
    equivariance_deviation, hopf_sample, load_measure, orbit_growth, poincare_partial, ps_measure,
    quasi_invariance_deviation, s_ladder, save_measure, shadow_lemma_stats, shadow_samples, tail_weights,
)

logger = logging.getLogger(__name__)

X = 0.1 + 0.05j
N_BINS = 32


@lru_cache(maxsize=None)
def orbit_ball(R: float):
    return cached_ball(None, 'orbit', R)


def test_poincare_partial_decreasing():
    ball = orbit_ball(8.0)
    values = [poincare_partial(s, X, X, ball) for s in (1.2, 1.5, 2.0)]
    assert values[0] > values[1] > values[2] > 1.0
    with pytest.raises(ConfigError):
        poincare_partial(0.0, X, X, ball)


def test_critical_exponent_flat():
    fit = orbit_growth(0j, orbit_ball(10.0))
    assert fit.h_hat == pytest.approx(1.0, abs=0.15)
    assert not fit.sampled
    with pytest.raises(ResourceError):
        orbit_growth(0j, orbit_ball(3.5))


def test_ps_measure_mass_and_guard():
    ball = orbit_ball(8.0)
    nu = ps_measure(X, X, 1.5, ball, 1.0)
    assert nu.total_mass == pytest.approx(1.0, abs=1e-12)
    assert nu.binned(N_BINS).sum() == pytest.approx(1.0, abs=1e-12)
    assert len(nu.to_rows(N_BINS)) == N_BINS
    with pytest.raises(ConfigError):
        ps_measure(X, X, 1.0, ball, 1.0)


def test_ps_measure_equivariance():
    ball = orbit_ball(8.0)
    g = word_element((2, 7))
    nu = ps_measure(X, X, 1.5, ball, 1.0)
    nu_g = ps_measure(complex(g(X)), X, 1.5, ball.translated(g), 1.0, normalizer=nu.normalizer)
    assert equivariance_deviation(nu, nu_g, g, N_BINS) < 1e-8


def test_measure_cache_roundtrip():
    nu = ps_measure(X, X, 1.5, orbit_ball(8.0), 1.0)
    with tempfile.TemporaryDirectory() as tmp:
        path = save_measure(nu, Path(tmp) / 'nu.npz')
        back = load_measure(path)
    assert back.p == nu.p and back.s == nu.s
    assert np.allclose(back.binned(N_BINS), nu.binned(N_BINS))
    assert back.meta['base_atoms'] == nu.meta['base_atoms'] and len(nu.meta['base_atoms']) == 1
    assert back.meta['complete_radius'] == pytest.approx(nu.meta['complete_radius'])
    assert np.array_equal(back.reach, nu.reach)
    assert np.array_equal(tail_weights(back, 3.0), tail_weights(nu, 3.0))


def test_bowen_margulis_grid():
    nu = ps_measure(0j, X, 1.5, orbit_ball(8.0), 1.0)
    geometry = BoundaryGeometry(ConformalMetric())
    grid = bowen_margulis(nu, N_BINS, 1.0, geometry)
    assert grid.symmetry_defect() < 1e-12
    assert np.isnan(grid.density[3, 3]) and np.isnan(grid.density[3, 4])
    assert grid.weights().sum() == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        bowen_margulis(nu, N_BINS, 1.0, geometry, band=1)
    a, b = (0.1, 3.0), (3.3, 6.0)
    assert bm_mass(nu, a, b, 1.0) == pytest.approx(bm_mass(nu, b, a, 1.0), rel=1e-12)


def test_hopf_sample_deterministic():
    nu = ps_measure(0j, X, 1.5, orbit_ball(8.0), 1.0)
    grid = bowen_margulis(nu, N_BINS, 1.0, BoundaryGeometry(ConformalMetric()))
    first = hopf_sample(grid, 60, seed=5)
    second = hopf_sample(grid, 60, seed=5)
    assert len(first) == 60
    assert [s.v for s in first] == [s.v for s in second]
    assert all(in_domain(s.v.base) for s in first)
    for s in first[:10]:
        assert s.xi != s.eta and s.t >= 0.0


def test_dynamical_balls_shrink():
    nu = ps_measure(0j, X, 1.5, orbit_ball(8.0), 1.0)
    grid = bowen_margulis(nu, N_BINS, 1.0, BoundaryGeometry(ConformalMetric()))
    samples = hopf_sample(grid, 400, seed=2)
    report = dynamical_ball_decay(samples, 0.8, [0, 1, 2, 3], 1.0, n_centers=20, seed=1)
    masses = report['mass']
    assert masses[0] > 0
    assert all(b <= a for a, b in zip(masses, masses[1:]))


@lru_cache(maxsize=None)
def tail_measure(p: complex):
    return ps_measure(p, X, 1.02, orbit_ball(12.0), 1.0)


def test_tail_weights_guards():
    nu = ps_measure(0j, X, 1.5, orbit_ball(8.0), 1.0)
    assert tail_weights(nu).sum() == pytest.approx(nu.total_mass, rel=1e-12)
    with pytest.raises(ConfigError):
        tail_weights(replace(nu, reach=None), core_radius=2.0)
    with pytest.raises(ResourceError):
        tail_weights(nu, core_radius=8.0)
    shell = tail_weights(nu, core_radius=3.0)
    assert np.all(shell[nu.reach < 3.0] == 0.0)
    assert np.all(shell[nu.reach > nu.meta['complete_radius']] == 0.0)
    reweighted = tail_weights(nu, exponent=1.0)
    live = reweighted > 0
    assert reweighted[live] * nu.normalizer == pytest.approx(np.exp(-nu.reach[live]), rel=1e-9)


def test_quasi_invariance_same_point():
    geometry = BoundaryGeometry(ConformalMetric())
    nu = ps_measure(0j, X, 1.02, orbit_ball(10.0), 1.0)
    report = quasi_invariance_deviation(nu, nu, 16, 1.0, geometry)
    assert report['max_dev'] == pytest.approx(0.0, abs=1e-12)
    assert report['ratio_bound'] == 1.0


def test_quasi_invariance_ratio_bound():
    geometry = BoundaryGeometry(ConformalMetric())
    q = 0.3 + 0.1j
    nu_p = ps_measure(0j, X, 1.02, orbit_ball(10.0), 1.0)
    nu_q = ps_measure(q, X, 1.02, orbit_ball(10.0), 1.0)
    report = quasi_invariance_deviation(nu_p, nu_q, 1, 1.0, geometry)
    bound = np.exp(1.02 * geometry.metric.dist(0j, q))
    assert report['ratio_bound'] == pytest.approx(bound, rel=1e-9)
    assert report['max_ratio'] <= bound * (1.0 + 1e-12)
    assert 1.0 / report['max_ratio'] <= bound * (1.0 + 1e-12)


def test_shadow_of_base_point_holds_full_mass():
    geometry = BoundaryGeometry(ConformalMetric())
    nu = ps_measure(X, X, 1.5, orbit_ball(8.0), 1.0)
    report = shadow_lemma_stats(nu, [X, X], 1.0, 1.0, geometry)
    assert report['empty'] == 0
    assert report['b_hat'] == pytest.approx(1.0, rel=1e-9)
    assert report['slope'] is None


def test_shadow_lemma_slope():
    geometry = BoundaryGeometry(ConformalMetric())
    nu = tail_measure(0j)
    samples = shadow_samples(0j, np.random.default_rng(3), 40, d_range=(2.0, 5.0))
    report = shadow_lemma_stats(nu, samples, 1.0, 1.0, geometry)
    assert report['empty'] == 0
    assert report['slope'] == pytest.approx(-1.0, abs=0.35)
    assert report['b_hat'] < 20.0


def test_s_ladder_approaches_conformal_density():
    ladder = s_ladder(0j, X, 1.0, orbit_ball(12.0), N_BINS, q=0.5 + 0j, core_radius=8.0)
    rows = ladder['rows']
    assert [r['s'] for r in rows] == pytest.approx([1.1, 1.05, 1.02])
    assert rows[0]['l1_to_previous'] is None
    assert all(r['l1_to_previous'] >= 0.0 for r in rows[1:])
    assert rows[-1]['max_dev'] < rows[0]['max_dev']


def test_bm_gamma_invariance():
    nu = tail_measure(0j)
    same = bm_invariance_deviation(nu, word_element(()), 6, 1.0, core_radius=8.0)
    assert same['rel_l1'] == pytest.approx(0.0, abs=1e-12)
    g = word_element((0,))
    report = bm_invariance_deviation(nu, g, 6, 1.0, core_radius=8.0)
    assert report['pairs'] + report['skipped'] == 18
    assert report['pairs'] > 0
    assert report['rel_l1'] < 0.2
    product = bm_invariance_deviation(nu, g, 6, 0.0, core_radius=8.0, exponent=1.0)
    assert product['rel_l1'] > 2.0 * report['rel_l1']


def test_bm_base_point_independence():
    report = bm_base_point_deviation(tail_measure(0j), tail_measure(0.15 + 0j), 6, 1.0, core_radius=8.0)
    assert report['pairs'] == 18
    assert report['max_rel'] < 0.10
    with pytest.raises(ConfigError):
        bm_base_point_deviation(tail_measure(0j), ps_measure(0j, X, 1.5, orbit_ball(8.0), 1.0), 6, 1.0)


def test_perturbed_atoms_follow_boundary_rays():
    metric = ConformalMetric([Bump(0j, 1.0, 1.2)], 0.1)
    geometry = BoundaryGeometry(metric)
    ball = cached_ball(None, 'word', 1)
    p = 0.1j
    nu = ps_measure(p, 0j, 1.5, ball, 1.0, metric, geometry)
    points = ball.orbit(0j)
    continued = []
    for i in range(1, points.size):
        seg = metric.connect(p, complex(points[i]))
        assert abs(angle_difference(nu.angles[i], geometry.ray_to_boundary(seg.initial))) < 1e-9
        continued.append(abs(angle_difference(nu.angles[i], ray_end0(seg.end, seg.end_angle))))
    assert max(continued) > 1e-6


def main():
    setup_test_logging('test_entropy_measures.log')
    tests = [
        ("Частичный ряд Пуанкаре", test_poincare_partial_decreasing),
        ("Критический показатель", test_critical_exponent_flat),
        ("Масса меры ПС", test_ps_measure_mass_and_guard),
        ("Эквивариантность", test_ps_measure_equivariance),
        ("Кэш меры", test_measure_cache_roundtrip),
        ("Сетка Боуэна-Маргулиса", test_bowen_margulis_grid),
        ("Выборка Хопфа", test_hopf_sample_deterministic),
        ("Шары Боуэна", test_dynamical_balls_shrink),
        ("Веса слоя вне ядра", test_tail_weights_guards),
        ("Квазиинвариантность при q = p", test_quasi_invariance_same_point),
        ("Граница отношения масс", test_quasi_invariance_ratio_bound),
        ("Тень из самой p", test_shadow_of_base_point_holds_full_mass),
        ("Наклон леммы о тени", test_shadow_lemma_slope),
        ("Лестница по s", test_s_ladder_approaches_conformal_density),
        ("Γ-инвариантность μ̄", test_bm_gamma_invariance),
        ("μ̄ не зависит от базы", test_bm_base_point_independence),
        ("Атомы при ε ≠ 0 по лучам до абсолюта", test_perturbed_atoms_follow_boundary_rays),
    ]
    return run_suite("меры ПС и БМ", tests)


if __name__ == '__main__':
    sys.exit(main())
