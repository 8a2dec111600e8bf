#!/usr/bin/env python3
"""
Тесты структуры произведения, цепочки карт и склейки орбит
"""

import logging
import sys
from dataclasses import replace

import numpy as np
import pytest

from lab_errors import ConfigError, GeometryError, SolverError
from lab_testing import run_suite, setup_test_logging
from poincare_disk import TangentVector, angle_difference, su_mul
from bolza_group import word_element
from conformal_metric import Bump, ConformalMetric
from coarse_shadowing import MorseReport, endpoint_bound, random_vectors
from specification_engine import (
    LAMBDA, FrameChain, OrbitSegment, ProductParams, bracket, d_cs, d_s, d_u, estimate_kappa,
    flow_vector, frame_from_vector, glue, product_coordinates, stable_shift, unstable_gap, unstable_shift,
    vector_from_frame, verify_shadowing, _geodesic_step, _lemma_checks, _stable_step, _unstable_step,
)

logger = logging.getLogger(__name__)

V = TangentVector(0.15 - 0.2j, 0.9)


def close_vectors(v: TangentVector, w: TangentVector, tol: float = 1e-10) -> bool:
    return abs(v.base - w.base) < tol and abs(angle_difference(v.angle, w.angle)) < tol


def test_frame_roundtrip():
    assert close_vectors(vector_from_frame(*frame_from_vector(V)), V)


def test_horocyclic_distances():
    for s in (-0.4, 0.05, 0.3):
        assert d_u(V, unstable_shift(V, s)) == pytest.approx(abs(s), abs=1e-9)
        assert d_s(V, stable_shift(V, s)) == pytest.approx(abs(s), abs=1e-9)
    with pytest.raises(GeometryError):
        d_u(V, flow_vector(V, 0.5))
    w = stable_shift(flow_vector(V, 0.3), 0.2)
    assert d_cs(V, w) == pytest.approx(0.5, abs=1e-9)


def test_product_coordinates_recovered():
    F = frame_from_vector(V)
    for s, t, r in ((0.1, -0.2, 0.05), (-0.3, 0.4, -0.1)):
        G = su_mul(*F, *_unstable_step(s))
        G = su_mul(*G, *_geodesic_step(t))
        G = su_mul(*G, *_stable_step(r))
        got = product_coordinates(F, frame_from_vector(vector_from_frame(*G)))
        assert got == pytest.approx((s, t, r), abs=1e-9)


def test_product_params():
    params = ProductParams.from_constants(2.0, 1.0, 0.1)
    assert params.rho_prime == pytest.approx(0.9 * (2.0 / 3.0 - 0.1))
    assert params.rho == pytest.approx(params.rho_prime * (1.0 - LAMBDA) / 2.0)
    assert params.with_transition(7.0).T_transition == 7.0
    with pytest.raises(ConfigError):
        ProductParams.from_constants(0.3, 1.0, 0.1)
    with pytest.raises(ConfigError):
        ProductParams(3.0, 0.5, 1.0, 0.3)
    with pytest.raises(ConfigError):
        ProductParams(3.0, 1.5, 1.0, -0.25)


def test_bracket():
    params = ProductParams.from_constants(2.0, 1.0, 0.1)
    w2 = stable_shift(flow_vector(unstable_shift(V, 0.04), -0.03), 0.02)
    record = []
    out = bracket(V, w2, params, record=record)
    assert d_u(V, out) == pytest.approx(0.04, abs=1e-9)
    assert d_cs(w2, out) < 0.1
    assert record[0]['within_kappa'] and record[0]['d_u'] == pytest.approx(0.04, abs=1e-9)
    bracket(V, w2, ProductParams.from_constants(2.0, 1.0, 0.1, kappa=0.1), record=record)
    assert not record[1]['within_kappa']
    with pytest.raises(GeometryError):
        bracket(V, flow_vector(V, 2.0), params)
    assert estimate_kappa(50, seed=1) >= 1.1


def test_frame_chain_relative():
    chain = FrameChain()
    chain.append(word_element((0,)), 1.0)
    chain.append(word_element((1, 3)), 2.0)
    assert len(chain) == 3
    assert chain.last == 2
    a, b = su_mul(*chain.relative(0, 2), *chain.relative(2, 0))
    assert abs(abs(a) - 1.0) < 1e-12 and abs(b) < 1e-12
    moved = chain.move_vector(V, 2, 0)
    back = chain.move_vector(moved, 0, 2)
    assert close_vectors(back, V, 1e-9)
    assert chain.nearest(1.9) == 2


def test_segment_duration_positive():
    with pytest.raises(ConfigError):
        OrbitSegment(V, 0.0)


def test_flat_glue_shadows_segments():
    metric = ConformalMetric()
    morse = MorseReport(0.0, 1.0, 0, [], True)
    R1 = 3.0
    params = ProductParams.from_constants(R1, 1.0, morse.R0).with_transition(10.0)
    rng = np.random.default_rng(4)
    segments = [OrbitSegment(v, 5.0) for v in random_vectors(rng, 3)]
    w, schedule = glue(metric, segments, params, morse)
    assert schedule.passed, schedule.checks
    assert schedule.s == [5.0, 20.0, 35.0]
    assert all(abs(d) < 1e-9 for d in schedule.Delta)
    _, delta = endpoint_bound(R1, morse)
    report = verify_shadowing(metric, w, segments, schedule, delta)
    assert report['mode'] == 'glued'
    assert report['passed']
    assert max(r['max_distance'] for r in report['segments']) < R1
    with pytest.raises(ConfigError):
        glue(metric, segments, ProductParams.from_constants(R1, 1.0, 0.0), morse)


def test_unstable_gap_contracts_backwards():
    before = frame_from_vector(V)
    after = su_mul(*before, *_unstable_step(0.3))
    assert unstable_gap(before, after, 0.0) == pytest.approx(0.3, rel=1e-12)
    for duration in (1.0, 6.0, 15.0):
        assert unstable_gap(before, after, duration) == pytest.approx(0.3 * np.exp(-duration), rel=1e-6)
    with pytest.raises(SolverError):
        unstable_gap(before, su_mul(*before, *_stable_step(0.3)), 2.0)


def test_glue_records_unstable_and_kappa():
    metric = ConformalMetric()
    morse = MorseReport(0.0, 1.0, 0, [], True)
    params = ProductParams.from_constants(3.0, 1.0, morse.R0).with_transition(10.0)
    segments = [OrbitSegment(v, 5.0) for v in random_vectors(np.random.default_rng(4), 3)]
    _, schedule = glue(metric, segments, params, morse)
    assert len(schedule.kappa) == 2 and schedule.checks['kappa']
    for j in range(1, 3):
        for i in range(j):
            expected = abs(schedule.sigma[j]) * np.exp(-(schedule.s_prime[j - 1] - schedule.s_prime[i]))
            assert schedule.d_u[i][j] == pytest.approx(expected, rel=1e-6, abs=1e-12)
    inflated = replace(schedule, d_u=[[None, 10.0, 10.0], [None, None, 10.0], [None, None, None]])
    assert not _lemma_checks(inflated)['unstable_decay']
    tight = ProductParams.from_constants(3.0, 1.0, morse.R0, kappa=1e-3).with_transition(10.0)
    _, strict = glue(metric, segments, tight, morse)
    assert not strict.checks['kappa']
    assert not strict.passed
    assert strict.to_dict()['passed'] is False


def test_perturbed_glue_shadows_segments():
    metric = ConformalMetric([Bump(0j, 1.0, 1.2)], 0.1)
    A = metric.equivalence_constant()
    morse = MorseReport(0.3, A, 0, [], True)
    R1 = 3.0 * A * (morse.R0 + 0.5)
    params = ProductParams.from_constants(R1, A, morse.R0).with_transition(10.0)
    segments = [OrbitSegment(v, 4.0) for v in random_vectors(np.random.default_rng(8), 2)]
    w, schedule = glue(metric, segments, params, morse)
    assert schedule.s == pytest.approx([4.0, 8.0 + A * 10.0], rel=1e-12)
    assert schedule.checks['kappa'] and schedule.checks['unstable_decay']
    assert schedule.d_u[0][1] == pytest.approx(abs(schedule.sigma[1]), rel=1e-9)
    _, delta = endpoint_bound(R1, morse)
    report = verify_shadowing(metric, w, segments, schedule, delta)
    assert report['mode'] == 'glued'
    assert report['passed']
    assert max(r['max_distance'] for r in report['segments']) < R1


def main():
    setup_test_logging('test_specification_engine.log')
    tests = [
        ("Репер и вектор", test_frame_roundtrip),
        ("Орициклические расстояния", test_horocyclic_distances),
        ("Координаты произведения", test_product_coordinates_recovered),
        ("Параметры ρ, ρ', λ", test_product_params),
        ("Скобка", test_bracket),
        ("Цепочка карт", test_frame_chain_relative),
        ("Длительность отрезка", test_segment_duration_positive),
        ("Склейка при ε = 0", test_flat_glue_shadows_segments),
        ("Сдвиг по W^u назад по потоку", test_unstable_gap_contracts_backwards),
        ("Склейка измеряет d^u и κ", test_glue_records_unstable_and_kappa),
        ("Склейка при ε ≠ 0", test_perturbed_glue_shadows_segments),
    ]
    return run_suite("спецификация", tests)


if __name__ == '__main__':
    sys.exit(main())
