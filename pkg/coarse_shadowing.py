"""
Грубое отслеживание: эмпирическая константа Морса R0, граница для геодезических
с близкими концами и соответствие E между отрезками g- и g0-орбит.
"""

import logging
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from lab_errors import ConfigError
from poincare_disk import TangentVector, dist0, flow0, direction0, point_to_segment0
from conformal_metric import ConformalMetric, GeodesicSegment
from bolza_group import sample_domain

logger = logging.getLogger(__name__)

SAFETY_FACTOR = 1.5
PLATEAU_REL = 0.05
CHAIN_TOL = 1e-4


@dataclass
class MorseReport:
    R0_hat: float
    A: float
    samples: int
    T_range: list
    plateau_flag: bool
    per_T: list = field(default_factory=list)
    safety_factor: float = SAFETY_FACTOR

    @property
    def R0(self) -> float:
        """R0 с коэффициентом запаса: именно он уходит в δ, τ и проверки лемм"""
        return self.R0_hat * self.safety_factor

    def to_dict(self) -> dict:
        out = asdict(self)
        out['R0_used'] = self.R0
        return out


def random_vectors(rng, n: int) -> list:
    points = sample_domain(rng, n)
    angles = rng.uniform(0.0, 2.0 * np.pi, n)
    return [TangentVector(complex(z), float(a)) for z, a in zip(points, angles)]


def _as_points(c) -> np.ndarray:
    if isinstance(c, GeodesicSegment):
        return np.asarray(c.points, complex)
    return np.asarray(c, complex)


def _directed(a: np.ndarray, b: np.ndarray) -> float:
    """max_i min_j расстояние от a_i до отрезка [b_j, b_{j+1}]"""
    if b.size == 1:
        return float(np.max(dist0(a, b[0])))
    worst = 0.0
    for start in range(0, a.size, 256):
        block = a[start:start + 256, None]
        d = point_to_segment0(block, b[None, :-1], b[None, 1:])
        worst = max(worst, float(np.max(np.min(d, axis=1))))
    return worst


def hausdorff(c1, c2) -> float:
    """Дискретное хаусдорфово расстояние (в d0) между отсчётами кривых"""
    a, b = _as_points(c1), _as_points(c2)
    return max(_directed(a, b), _directed(b, a))


def _symmetric_segment(metric: ConformalMetric, v: TangentVector, T: float) -> np.ndarray:
    """Отсчёты g-геодезической длины T с серединой в v"""
    back = metric.integrate(v.reversed(), 0.5 * T)
    fwd = metric.integrate(v, 0.5 * T)
    return np.concatenate([back.points[::-1], fwd.points[1:]])


def _g0_chord(x: complex, y: complex, step: float) -> np.ndarray:
    length = dist0(x, y)
    n = max(2, int(math.ceil(length / step)) + 1)
    pts, _ = flow0(x, direction0(x, y), np.linspace(0.0, length, n))
    return np.atleast_1d(pts)


def estimate_R0(metric: ConformalMetric, n_samples: int, T_list, seed: int = 0,
                safety_factor: float = SAFETY_FACTOR) -> MorseReport:
    """
    Максимум d_H между случайными g-отрезками и g0-отрезками с теми же концами.
    d_H считается в d0 и переводится в g-единицы множителем A.
    """
    A = metric.equivalence_constant()
    rng = np.random.default_rng(seed)
    T_list = sorted(float(T) for T in T_list)
    logger.info(f"🚀 Оценка R0: {n_samples} отрезков на каждую длину из {T_list}")
    per_T = []
    for T in T_list:
        worst = 0.0
        for v in random_vectors(rng, n_samples):
            pts = _symmetric_segment(metric, v, T)
            chord = _g0_chord(pts[0], pts[-1], metric.step)
            worst = max(worst, hausdorff(pts, chord))
        per_T.append(A * worst)
        logger.info(f"   T={T:g}: max d_H = {A * worst:.3e}")
    running = list(np.maximum.accumulate(per_T)) if per_T else []
    R0_hat = float(running[-1]) if running else 0.0
    top = running[len(running) // 2:]
    if not top or max(top) < 1e-12:
        plateau = True
    else:
        plateau = (max(top) - min(top)) / max(top) < PLATEAU_REL
    report = MorseReport(R0_hat, A, n_samples * len(T_list), T_list, bool(plateau),
                         [float(x) for x in per_T], safety_factor)
    status = "✅" if plateau else "⚠️"
    logger.info(f"{status} R0_hat = {R0_hat:.4e}, плато: {plateau}")
    return report


def endpoint_bound(R1: float, report: MorseReport) -> tuple:
    """R2 = 4R0 + (6A²+1)R1, δ = R2 + 2"""
    R0, A = report.R0, report.A
    if not R1 > 3.0 * A * R0:
        raise ConfigError("R1 должен превышать 3·A·R0", R1=R1, A=A, R0=R0)
    R2 = 4.0 * R0 + (6.0 * A * A + 1.0) * R1
    return R2, R2 + 2.0


def verify_endpoint_bound(metric: ConformalMetric, R1: float, report: MorseReport,
                          n_pairs: int = 500, seed: int = 0, T_range=(4.0, 12.0)) -> dict:
    """
    Эмпирическая проверка: геодезические c1, c2 на [0, T] с концами в пределах R1
    остаются в пределах R2. Заодно проверяется промежуточная оценка d0(α1, α2) <= 3AR1.
    """
    R2, delta = endpoint_bound(R1, report)
    A = report.A
    rng = np.random.default_rng(seed)
    violations, chain_violations, used = 0, 0, 0
    worst, worst_chain = 0.0, 0.0
    for v in random_vectors(rng, n_pairs):
        T = float(rng.uniform(*T_range))
        c1 = metric.integrate(v, T)
        step = R1 / (3.0 * A)
        x2, _ = flow0(c1.start, rng.uniform(0, 2 * np.pi), step * math.sqrt(rng.random()))
        y2, _ = flow0(c1.end, rng.uniform(0, 2 * np.pi), step * math.sqrt(rng.random()))
        c2 = metric.integrate(metric.direction(x2, y2), T)
        if metric.dist(c1.end, c2.end) > R1:
            continue
        used += 1
        times = np.linspace(0.0, T, max(2, int(T / metric.step) + 1))
        p1, _ = c1.at(times)
        p2, _ = c2.at(times)
        d0 = dist0(p1, p2)
        i = int(np.argmax(d0))
        bound = A * float(d0[i])
        if bound > R2 and not metric.is_flat:
            bound = metric.dist(complex(p1[i]), complex(p2[i]))
        worst = max(worst, bound)
        if bound > R2:
            violations += 1
        T1, T2 = dist0(c1.start, c1.end), dist0(c2.start, c2.end)
        tt = np.linspace(0.0, min(T1, T2), 64)
        a1, _ = flow0(c1.start, direction0(c1.start, c1.end), tt)
        a2, _ = flow0(c2.start, direction0(c2.start, c2.end), tt)
        chain = float(np.max(dist0(a1, a2)))
        worst_chain = max(worst_chain, chain)
        if chain > 3.0 * A * R1 + CHAIN_TOL:
            chain_violations += 1
    result = {
        'R1': R1, 'R2': R2, 'delta': delta, 'pairs': used, 'violations': violations,
        'max_distance': worst, 'chain_violations': chain_violations, 'max_chain_distance': worst_chain,
        'success': violations == 0 and chain_violations == 0,
    }
    status = "✅" if result['success'] else "❌"
    logger.info(f"{status} Проверка R2={R2:.3f}: {used} пар, нарушений {violations}, max {worst:.3f}")
    return result


def correspondence_E(metric: ConformalMetric, v: TangentVector, t: float) -> tuple:
    """E(v, t) = (начальный вектор g0-отрезка с теми же концами, его длина)"""
    if t <= 0:
        raise ConfigError("correspondence_E: длительность должна быть положительной", t=t)
    seg = metric.integrate(v, t)
    x, y = seg.start, seg.end
    if metric.is_flat:
        return TangentVector(x, v.angle), float(t)
    return TangentVector(x, direction0(x, y)), float(dist0(x, y))


def inverse_correspondence(metric: ConformalMetric, v0: TangentVector, t0: float) -> GeodesicSegment:
    """E⁻¹: g-геодезическая между концами g0-отрезка (v0, t0)"""
    y, _ = flow0(v0.base, v0.angle, t0)
    return metric.connect(v0.base, y)
