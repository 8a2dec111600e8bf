"""
Спецификация геодезического потока.

Фоновый поток в постоянной кривизне ведётся в терминах реперов SU(1,1):
вектор v ↔ пара (a, b) с F(0) = base(v) и направлением v. Поток, устойчивые и
неустойчивые орициклы действуют умножением справа:
    f_t(F) = F·a_t,  h^u_s(F) = F·n⁻_s,  h^s_r(F) = F·n⁺_r.
Длинные склеенные орбиты хранятся в цепочке локальных карт (FrameChain), шаги
между соседними картами лежат в Γ и умеренны по величине.
"""

import logging
import math
from dataclasses import dataclass, field, asdict, replace
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize_scalar

from lab_errors import ConfigError, GeometryError, SolverError, ResourceError
from poincare_disk import (
    TangentVector, dist0, flow0, frame_of, su_mul, su_inv, su_apply, su_derivative,
    canonical_angle, angle_difference, ray_end0, geodesic_foot, busemann0,
)
from bolza_group import reduce_to_domain, reduce_many, enumerate_ball, IDENTITY, IsometryElement
from conformal_metric import ConformalMetric, GeodesicSegment
from coarse_shadowing import MorseReport, correspondence_E, random_vectors

logger = logging.getLogger(__name__)

LAMBDA = math.exp(-1.0)
HOP = 2.0
DELTA_PRODUCT = 0.5
CHECK_TOL = 1e-6
SEARCH_CHUNK = 8192
SEARCH_MAX_SAMPLES = 4_000_000
MAX_CHART_RADIUS = 26.0
MAX_SEARCH_T = 22.0
LIFT_BALL_RADIUS = 4


# --- реперы и координаты структуры произведения ---

def frame_from_vector(v: TangentVector) -> tuple:
    return frame_of(complex(v.base), float(v.angle))


def vector_from_frame(a, b) -> TangentVector:
    return TangentVector(complex(b / np.conj(a)), float(canonical_angle(2.0 * np.angle(a))))


def _geodesic_step(t):
    return np.cosh(0.5 * t) + 0j, np.sinh(0.5 * t) + 0j


def _unstable_step(s):
    return 1.0 - 0.5j * s, -0.5j * s


def _stable_step(r):
    return 1.0 + 0.5j * r, -0.5j * r


def flow_frame(frame, t):
    return su_mul(frame[0], frame[1], *_geodesic_step(t))


def flow_vector(v: TangentVector, t: float) -> TangentVector:
    z, a = flow0(v.base, v.angle, t)
    return TangentVector(complex(z), float(a))


def unstable_shift(v: TangentVector, s: float) -> TangentVector:
    """Сдвиг по неустойчивому орициклу (центр в c_v(-∞)) на дугу s"""
    return vector_from_frame(*su_mul(*frame_from_vector(v), *_unstable_step(s)))


def stable_shift(v: TangentVector, r: float) -> TangentVector:
    """Сдвиг по устойчивому орициклу (центр в c_v(+∞)) на дугу r"""
    return vector_from_frame(*su_mul(*frame_from_vector(v), *_stable_step(r)))


def product_coordinates(F1, F2):
    """
    (s, t, r) с F1⁻¹F2 = n⁻_s · a_t · n⁺_r. Скобка [w1, w2] = F1·n⁻_s,
    d^u(w1, [w1,w2]) = |s|, d^cs(w2, [w1,w2]) = |t| + |r|.
    """
    a1, b1 = F1
    a2, b2 = F2
    xa, xb = su_mul(np.conj(a1), -np.asarray(b1), a2, b2)
    alpha = np.real(xa) + np.real(xb)
    beta = np.imag(xa) - np.imag(xb)
    gamma = -np.imag(xa) - np.imag(xb)
    sign = np.where(alpha < 0, -1.0, 1.0)
    alpha, beta, gamma = alpha * sign, beta * sign, gamma * sign
    with np.errstate(divide='ignore', invalid='ignore'):
        s = gamma / alpha
        t = 2.0 * np.log(alpha)
        r = beta / alpha
    if np.ndim(s) == 0:
        return float(s), float(t), float(r)
    return s, t, r


def d1(v: TangentVector, w: TangentVector) -> float:
    """max_{t∈[0,1]} d0(c_v(t), c_w(t))"""
    tt = np.linspace(0.0, 1.0, 11)
    pv, _ = flow0(v.base, v.angle, tt)
    pw, _ = flow0(w.base, w.angle, tt)
    return float(np.max(dist0(pv, pw)))


def d_u(v: TangentVector, w: TangentVector, tol: float = 1e-9) -> float:
    s, t, r = product_coordinates(frame_from_vector(v), frame_from_vector(w))
    if abs(t) > tol or abs(r) > tol:
        raise GeometryError("d_u: векторы не на одном неустойчивом орицикле", t=t, r=r)
    return abs(s)


def d_s(v: TangentVector, w: TangentVector, tol: float = 1e-9) -> float:
    s, t, r = product_coordinates(frame_from_vector(v), frame_from_vector(w))
    if abs(t) > tol or abs(s) > tol:
        raise GeometryError("d_s: векторы не на одном устойчивом орицикле", s=s, t=t)
    return abs(r)


def d_cs(v: TangentVector, w: TangentVector, tol: float = 1e-9) -> float:
    s, t, r = product_coordinates(frame_from_vector(v), frame_from_vector(w))
    if abs(s) > tol:
        raise GeometryError("d_cs: векторы не на одном слое W^cs", s=s)
    return abs(t) + abs(r)


# --- параметры структуры произведения ---

@dataclass(frozen=True)
class ProductParams:
    kappa: float
    lam: float
    rho_prime: float
    rho: float
    T_transition: float = None
    delta_product: float = DELTA_PRODUCT

    def __post_init__(self):
        if not 0.0 < self.lam < 1.0:
            raise ConfigError("λ должен лежать в (0, 1)", lam=self.lam)
        if self.rho_prime <= 0:
            raise ConfigError("ρ' должен быть положительным", rho_prime=self.rho_prime)
        expected = self.rho_prime * (1.0 - self.lam) / 2.0
        if abs(self.rho - expected) > 1e-12 * self.rho_prime:
            raise ConfigError("нарушено ρ = ρ'(1-λ)/2", rho=self.rho, expected=expected)

    @classmethod
    def from_constants(cls, R1: float, A: float, R0: float, kappa: float = 3.0,
                       lam: float = LAMBDA, rho_prime: float = None) -> 'ProductParams':
        """ρ' выбирается так, что R1 > 3A(R0 + ρ')"""
        bound = R1 / (3.0 * A) - R0
        if bound <= 0:
            raise ConfigError("нет допустимого ρ': R1 <= 3A·R0", R1=R1, A=A, R0=R0)
        if rho_prime is None:
            rho_prime = 0.9 * bound
        elif rho_prime >= bound:
            raise ConfigError("ρ' слишком велик для R1", rho_prime=rho_prime, bound=bound)
        return cls(kappa, lam, rho_prime, rho_prime * (1.0 - lam) / 2.0)

    def with_transition(self, T: float) -> 'ProductParams':
        return replace(self, T_transition=float(T))

    def to_dict(self) -> dict:
        return asdict(self)


def estimate_kappa(n: int = 400, scale: float = 0.05, seed: int = 0) -> float:
    """Эмпирическая константа локальной структуры произведения"""
    rng = np.random.default_rng(seed)
    worst = 1.0
    for v in random_vectors(rng, n):
        s0, t0, r0 = rng.uniform(-scale, scale, 3)
        F = frame_from_vector(v)
        F = su_mul(*F, *_unstable_step(s0))
        F = su_mul(*F, *_geodesic_step(t0))
        F = su_mul(*F, *_stable_step(r0))
        w = vector_from_frame(*F)
        dist = d1(v, w)
        if dist > 0:
            worst = max(worst, abs(s0) / dist, (abs(t0) + abs(r0)) / dist)
    return 1.1 * worst


def kappa_bounds(w1: TangentVector, w2: TangentVector, kappa: float) -> dict:
    """d^u(w1, [w1,w2]) и d^cs(w2, [w1,w2]) против κ·d1(w1, w2)"""
    dist = d1(w1, w2)
    s, t, r = product_coordinates(frame_from_vector(w1), frame_from_vector(w2))
    du, dcs = abs(s), abs(t) + abs(r)
    ok = du <= kappa * dist + CHECK_TOL and dcs <= kappa * dist + CHECK_TOL
    if not ok:
        logger.warning(f"⚠️ Оценки κ нарушены: d^u={du:.3e}, d^cs={dcs:.3e}, κ·d1={kappa * dist:.3e}")
    return {'d1': float(dist), 'd_u': float(du), 'd_cs': float(dcs), 's': float(s), 'within_kappa': bool(ok)}


def bracket(w1: TangentVector, w2: TangentVector, params: ProductParams, record: list = None) -> TangentVector:
    """[w1, w2] = W^u(w1) ∩ W^cs(w2) в фоновой метрике; record получает итог проверки κ"""
    dist = d1(w1, w2)
    if dist > params.delta_product:
        raise GeometryError("bracket: векторы слишком далеки", d1=dist, limit=params.delta_product)
    bounds = kappa_bounds(w1, w2, params.kappa)
    if record is not None:
        record.append(bounds)
    return unstable_shift(w1, bounds['s'])


# --- поиск пересечения f_T W^u_ρ(u) ∩ W^cs_ρ(v) ---

def _search_hit(U, V, rho: float, T: float, max_samples: int = SEARCH_MAX_SAMPLES):
    """
    U, V - реперы в координатах P. Дуга f_T(W^u_ρ(U)) параметризуется s ∈ [-ρe^T, ρe^T]
    с шагом ρ; точки сворачиваются в P и сравниваются с V, затем скобка уточняется точно.
    """
    ua, ub = su_mul(U[0], U[1], *_geodesic_step(T))
    span = rho * math.exp(T)
    k_max = int(span / rho)
    va, vb = V
    vz = vb / np.conj(va)
    vang = canonical_angle(2.0 * np.angle(va))
    k0, scanned = 0, 0
    while k0 <= k_max and scanned < max_samples:
        k1 = min(k_max + 1, k0 + SEARCH_CHUNK)
        ks = np.arange(k0, k1)
        ks = np.concatenate([ks, -ks[ks > 0]])
        s = ks * rho
        xa, xb = su_mul(ua, ub, *_unstable_step(s))
        zr, ga, gb = reduce_many(xb / np.conj(xa))
        fa, fb = su_mul(ga, gb, xa, xb)
        ang = canonical_angle(2.0 * np.angle(fa))
        near = (dist0(zr, vz) < 4.0 * rho) & (np.abs(angle_difference(ang, vang)) < 6.0 * rho)
        scanned += ks.size
        if np.any(near):
            idx = np.flatnonzero(near)
            sb, tb, rb = product_coordinates((fa[idx], fb[idx]), (np.full(idx.size, va), np.full(idx.size, vb)))
            total = s[idx] + sb
            ok = (np.abs(total) <= span) & (np.abs(tb) + np.abs(rb) <= rho)
            if np.any(ok):
                cand = np.flatnonzero(ok)
                best = cand[np.argmin(np.abs(s[idx][cand]))]
                return {
                    's': float(s[idx][best]), 's_bracket': float(sb[best]), 'total': float(total[best]),
                    't': float(tb[best]), 'r': float(rb[best]), 'dcs': float(abs(tb[best]) + abs(rb[best])),
                    'frame': (complex(fa[idx][best]), complex(fb[idx][best])),
                }
        k0 = k1
    return None


def transition_time(params: ProductParams, n_pairs: int = 12, seed: int = 0,
                    T_grid=None, safety: float = 1.5) -> float:
    """
    Эмпирическое T: для всех пар сетки дуга f_T(W^u_ρ(v)) пересекает W^cs_ρ(w),
    устойчиво на трёх соседних узлах сетки; возвращается с запасом safety.
    """
    rho = params.rho
    if rho <= 0:
        raise ConfigError("transition_time: ρ должен быть положительным", rho=rho)
    grid = np.arange(1.0, MAX_SEARCH_T + 0.01, 0.5) if T_grid is None else np.asarray(T_grid, float)
    rng = np.random.default_rng(seed)
    us = [frame_from_vector(v) for v in random_vectors(rng, n_pairs)]
    vs = [frame_from_vector(v) for v in random_vectors(rng, n_pairs)]
    logger.info(f"🚀 Поиск времени перехода: ρ={rho:.4f}, {n_pairs} пар")
    streak, first = 0, None
    for T in grid:
        if all(_search_hit(U, V, rho, float(T)) is not None for U, V in zip(us, vs)):
            if streak == 0:
                first = float(T)
            streak += 1
            if streak >= 3:
                result = safety * first
                logger.info(f"✅ Время перехода: эмпирическое {first:g}, с запасом {result:.3f}")
                return result
        else:
            streak = 0
    raise SolverError("время перехода не найдено в пределах сетки", rho=rho, T_max=float(grid[-1]))


# --- цепочка локальных карт ---

def _foot_time(frame) -> float:
    """Время до ближайшей к 0 точки геодезической репера"""
    v = vector_from_frame(*frame)
    xp = ray_end0(v.base, v.angle)
    xm = ray_end0(v.base, v.angle + np.pi)
    foot, _ = geodesic_foot(xm, xp)
    return float(busemann0(v.base, xp) - busemann0(foot, xp))


def _recentered(frame, g: IsometryElement) -> tuple:
    return tuple(complex(x) for x in su_mul(g.a, g.b, *frame))


class FrameChain:
    """
    Узел m хранит шаг D_m ∈ Γ: координаты узла m → координаты узла m-1.
    Относительный элемент двух узлов - произведение шагов между ними.
    """

    def __init__(self):
        self.steps = [IDENTITY]
        self.times = [0.0]

    def __len__(self):
        return len(self.steps)

    @property
    def last(self) -> int:
        return len(self.steps) - 1

    def append(self, step: IsometryElement, time: float) -> int:
        self.steps.append(step)
        self.times.append(float(time))
        return self.last

    def recenter(self, frame, time: float) -> tuple:
        base = complex(frame[1] / np.conj(frame[0]))
        _, g = reduce_to_domain(base)
        node = self.append(g.inverse(), time)
        return node, _recentered(frame, g)

    def walk(self, frame, duration: float, time: float) -> tuple:
        """Поток репера из последнего узла шагами HOP с перецентровкой"""
        node = self.last
        remaining = float(duration)
        while remaining > 1e-15:
            h = min(HOP, remaining)
            frame = flow_frame(frame, h)
            time += h
            remaining -= h
            node, frame = self.recenter(frame, time)
        return node, frame, time

    def relative(self, i: int, j: int) -> tuple:
        """Элемент, переводящий координаты узла j в координаты узла i"""
        if i == j:
            return 1.0 + 0j, 0j
        if i > j:
            return su_inv(*self.relative(j, i))
        a, b = 1.0 + 0j, 0j
        for m in range(i + 1, j + 1):
            a, b = su_mul(a, b, self.steps[m].a, self.steps[m].b)
        return a, b

    def move_points(self, z, i: int, j: int):
        a, b = self.relative(j, i)
        return su_apply(a, b, z)

    def move_vector(self, v: TangentVector, i: int, j: int) -> TangentVector:
        a, b = self.relative(j, i)
        w = su_apply(a, b, v.base)
        return TangentVector(complex(w), float(canonical_angle(v.angle + np.angle(su_derivative(a, b, v.base)))))

    def transport(self, frame, time: float, i: int, j: int) -> tuple:
        """Перенос g0-геодезической из узла i в узел j по соседним узлам"""
        m = i
        while m != j:
            nxt = m + 1 if j > m else m - 1
            frame = su_mul(*self.relative(nxt, m), *frame)
            dt = _foot_time(frame)
            frame = flow_frame(frame, dt)
            time += dt
            m = nxt
        return frame, time

    def nearest(self, time: float, upto: int = None) -> int:
        times = np.asarray(self.times[:None if upto is None else upto + 1])
        return int(np.argmin(np.abs(times - time)))


def unstable_gap(before, after, duration: float) -> float:
    """
    d^u двух реперов одного неустойчивого орицикла после общего потока назад на duration.
    Оба репера перецентрируются одним элементом Γ, элементы SU(1,1) остаются умеренными.
    """
    remaining = float(duration)
    while remaining > 1e-15:
        h = min(HOP, remaining)
        before, after = flow_frame(before, -h), flow_frame(after, -h)
        _, g = reduce_to_domain(complex(before[1] / np.conj(before[0])))
        before, after = _recentered(before, g), _recentered(after, g)
        remaining -= h
    s, t, r = product_coordinates(before, after)
    if abs(t) + abs(r) > CHECK_TOL:
        raise SolverError("реперы сошли с общего неустойчивого орицикла", t=t, r=r)
    return abs(s)


@lru_cache(maxsize=1)
def _lift_ball():
    return enumerate_ball(LIFT_BALL_RADIUS)


def _closest_lift(z: complex, target: complex) -> IsometryElement:
    ball = _lift_ball()
    i = int(np.argmin(dist0(z, ball.orbit(target))))
    return ball.element(i)


# --- склейка ---

@dataclass(frozen=True)
class OrbitSegment:
    v: TangentVector
    t: float

    def __post_init__(self):
        if not self.t > 0:
            raise ConfigError("длительность отрезка орбиты должна быть положительной", t=self.t)


@dataclass
class GluedPiece:
    """g-геодезическая c_j в карте node; mid_frame - α_j в момент mid_time"""
    node: int
    segment: GeodesicSegment
    mid_frame: tuple
    mid_time: float

    def alpha_point(self, t):
        return flow_frame_point(self.mid_frame, np.asarray(t, float) - self.mid_time)


def flow_frame_point(frame, t):
    v = vector_from_frame(*frame)
    z, _ = flow0(v.base, v.angle, t)
    return z


@dataclass
class GluedOrbit:
    chain: FrameChain
    seg_nodes: list
    folded: list
    final: GluedPiece
    initial: TangentVector


@dataclass
class GluingSchedule:
    T: list
    t: list
    s: list
    tau: list
    T_hat: list
    t_hat: list = field(default_factory=list)
    t_prime: list = field(default_factory=list)
    T_prime: list = field(default_factory=list)
    s_prime: list = field(default_factory=list)
    s_hat: list = field(default_factory=list)
    Delta: list = field(default_factory=list)
    sigma: list = field(default_factory=list)
    d_cs: list = field(default_factory=list)
    # d_u[i][j]: сдвиг шага j, измеренный в момент s'_i (i < j)
    d_u: list = field(default_factory=list)
    kappa: list = field(default_factory=list)
    T_tilde: list = field(default_factory=list)
    s_tilde: list = field(default_factory=list)
    constants: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    orbit: GluedOrbit = field(default=None, repr=False, compare=False)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        out = asdict(replace(self, orbit=None))
        out.pop('orbit')
        out['passed'] = self.passed
        return out


def _fold_vector(v: TangentVector) -> TangentVector:
    _, g = reduce_to_domain(v.base)
    z, a = g.act_vector(v.base, v.angle)
    return TangentVector(complex(z), float(a))


def _project(segment: GeodesicSegment, z: complex) -> tuple:
    """Время ближайшей к z точки сегмента (по d0) и расстояние"""
    d = dist0(z, segment.points)
    i = int(np.argmin(d))
    lo = segment.times[max(i - 1, 0)]
    hi = segment.times[min(i + 1, len(segment.times) - 1)]
    if hi <= lo:
        return float(segment.times[i]), float(d[i])

    def f(t):
        p, _ = segment.at(t)
        return float(dist0(z, complex(np.ravel(p)[0])))

    res = minimize_scalar(f, bounds=(lo, hi), method='bounded', options={'xatol': 1e-10})
    return float(res.x), float(res.fun)


def _glued_geodesic(metric: ConformalMetric, chain: FrameChain, node: int, frame, time: float,
                    length0: float) -> GluedPiece:
    """E⁻¹(w'_j, s'_j): g-геодезическая между α_j(0) и α_j(s'_j) в карте у середины"""
    m = chain.nearest(0.5 * length0)
    mid_frame, mid_time = chain.transport(frame, time, node, m)
    reach = max(mid_time, length0 - mid_time)
    if reach > MAX_CHART_RADIUS:
        raise ResourceError("склеенная орбита слишком длинна для одной карты", reach=reach)
    v = vector_from_frame(*mid_frame)
    if metric.is_flat:
        def evaluator(tt, v=v, t0=mid_time):
            z, a = flow0(v.base, v.angle, np.asarray(tt, float) - t0)
            return z, a

        times = np.linspace(0.0, length0, max(2, int(math.ceil(length0 / metric.step)) + 1))
        pts, angs = evaluator(times)
        seg = GeodesicSegment(TangentVector(complex(pts[0]), float(angs[0])), float(length0),
                              times, pts, angs, 'closed', 0.0, evaluator)
    else:
        p, _ = flow0(v.base, v.angle, -mid_time)
        q, _ = flow0(v.base, v.angle, length0 - mid_time)
        seg = metric.connect(p, q)
    return GluedPiece(m, seg, mid_frame, mid_time)


def glue(metric: ConformalMetric, segments, params: ProductParams, morse: MorseReport) -> tuple:
    """
    Рекурсивная склейка: E-соответствие каждого отрезка, выбор w'_j через пересечение
    f_T(W^u_ρ) ∩ W^cs_ρ, E⁻¹ и учёт сдвигов Δ_j. Возвращает (w, расписание).
    """
    segments = [s if isinstance(s, OrbitSegment) else OrbitSegment(*s) for s in segments]
    k = len(segments)
    if k < 1:
        raise ConfigError("glue: нужен хотя бы один отрезок")
    if not morse.plateau_flag:
        raise ConfigError("glue: R0 не вышел на плато, константы не надёжны", R0_hat=morse.R0_hat)
    if params.T_transition is None:
        raise ConfigError("glue: время перехода не задано")
    A, R0 = morse.A, morse.R0
    T = params.T_transition
    if T > MAX_SEARCH_T:
        raise ResourceError("время перехода выходит за пределы точности карт", T=T, limit=MAX_SEARCH_T)
    tau = A * T
    rho, rho_p, lam = params.rho, params.rho_prime, params.lam
    tau0 = 2.0 * tau + 7.0 * A * R0 + 4.0 * A * rho_p

    folded = [_fold_vector(seg.v) for seg in segments]
    t = [seg.t for seg in segments]
    T_list, s_list = [], []
    for j in range(k):
        T_list.append(0.0 if j == 0 else s_list[-1] + tau)
        s_list.append(T_list[j] + t[j])
    logger.info(f"🚀 Склейка {k} отрезков: T={T:.3f}, τ={tau:.3f}, ρ={rho:.4f}, ρ'={rho_p:.4f}")

    chain = FrameChain()
    t_hat, t_prime, T_prime, s_prime, s_hat, Delta, sigma, dcs = [], [], [], [], [], [], [], []
    seg_nodes, pieces, shifts, kappa = [], [], [], []
    u_frame, time = None, 0.0

    for j in range(k):
        stage = f"segment {j + 1}"
        t_hat.append(t[j] if j == 0 else t[j] + Delta[j - 1])
        if t_hat[j] <= 0:
            raise SolverError("t̂_j неположительно: накопленный сдвиг Δ слишком велик", stage=stage, t_hat=t_hat[j])
        vp, tp = correspondence_E(metric, folded[j], t_hat[j])
        t_prime.append(tp)
        V = frame_from_vector(vp)
        if j == 0:
            T_prime.append(0.0)
            s_prime.append(tp)
            B = V
            sigma.append(0.0)
            dcs.append(0.0)
        else:
            T_prime.append(s_prime[j - 1] + T)
            s_prime.append(T_prime[j] + tp)
            hit = _search_hit(u_frame, V, rho, T)
            if hit is None:
                raise SolverError("пересечение f_T W^u_ρ ∩ W^cs_ρ не найдено", stage=stage, T=T, rho=rho)
            kappa.append(dict(kappa_bounds(vector_from_frame(*hit['frame']), vp, params.kappa), segment=j + 1))
            sig = hit['total'] * math.exp(-T)
            start = su_mul(*u_frame, *_unstable_step(sig))
            shifts.append((u_frame, tuple(complex(x) for x in start)))
            _, end_frame, time = chain.walk(start, T, time)
            end_base = complex(end_frame[1] / np.conj(end_frame[0]))
            g = _closest_lift(end_base, complex(vp.base))
            chain.append(g, time)
            B = tuple(complex(x) for x in su_mul(*su_inv(g.a, g.b), *end_frame))
            s_b, t_b, r_b = product_coordinates(B, V)
            sigma.append(sig)
            dcs.append(abs(t_b) + abs(r_b))
            logger.info(f"   отрезок {j + 1}: σ={sig:.3e}, d^cs={dcs[-1]:.3e}")
        seg_nodes.append(chain.last)
        node_j = chain.last
        chain.times[node_j] = T_prime[j]
        _, u_frame, time = chain.walk(B, tp, T_prime[j])
        if j == 0:
            seg = metric.integrate(folded[0], t[0])
            piece = GluedPiece(0, seg, V, 0.0)
        else:
            piece = _glued_geodesic(metric, chain, node_j, B, T_prime[j], s_prime[j])
        pieces.append(piece)
        s_hat.append(s_list[0] if j == 0 else piece.segment.duration)
        Delta.append(s_list[j] - s_hat[j])

    du = [[None] * k for _ in range(k)]
    for j, (before, after) in enumerate(shifts, start=1):
        for i in range(j):
            du[i][j] = unstable_gap(before, after, s_prime[j - 1] - s_prime[i])

    T_tilde, s_tilde = _tilde_times(pieces, T_prime, s_prime, s_hat)
    final = pieces[-1]
    T_hat = [T_tilde[k - 1][i] for i in range(k)]
    tau_prime = 2.0 * tau0
    constants = {
        'A': A, 'R0': R0, 'T': T, 'tau': tau, 'tau0': tau0, 'tau_prime': tau_prime,
        'rho': rho, 'rho_prime': rho_p, 'lambda': lam, 'kappa': params.kappa,
    }
    schedule = GluingSchedule(
        T=T_list, t=t, s=s_list, tau=[tau] * (k - 1) + [0.0], T_hat=T_hat, t_hat=t_hat,
        t_prime=t_prime, T_prime=T_prime, s_prime=s_prime, s_hat=s_hat, Delta=Delta,
        sigma=sigma, d_cs=dcs, d_u=du, kappa=kappa, T_tilde=T_tilde, s_tilde=s_tilde, constants=constants,
    )
    schedule.checks = _lemma_checks(schedule)
    w0 = final.segment.initial
    w = chain.move_vector(w0, final.node, 0)
    schedule.orbit = GluedOrbit(chain, seg_nodes, folded, final, w)
    status = "✅" if schedule.passed else "❌"
    logger.info(f"{status} Склейка завершена: ŝ_k={s_hat[-1]:.4f}, проверки лемм: {schedule.passed}")
    return w, schedule


def _tilde_times(pieces, T_prime, s_prime, s_hat) -> tuple:
    """T̃_i^j, s̃_i^j: проекции α_j(T'_i), α_j(s'_i) на c_j"""
    k = len(pieces)
    T_tilde = [[None] * k for _ in range(k)]
    s_tilde = [[None] * k for _ in range(k)]
    for j, piece in enumerate(pieces):
        for i in range(j + 1):
            if i == 0:
                T_tilde[j][i] = 0.0
            else:
                T_tilde[j][i], _ = _project(piece.segment, complex(piece.alpha_point(T_prime[i])))
            if i == j:
                s_tilde[j][i] = s_hat[j]
            else:
                s_tilde[j][i], _ = _project(piece.segment, complex(piece.alpha_point(s_prime[i])))
    return T_tilde, s_tilde


def _lemma_checks(sch: GluingSchedule) -> dict:
    c = sch.constants
    A, R0, T, tau, rho, rho_p, lam = c['A'], c['R0'], c['T'], c['tau'], c['rho'], c['rho_prime'], c['lambda']
    k = len(sch.t)
    tol = CHECK_TOL
    tilde_hat, s_to_T, T_to_s = True, True, True
    for j in range(k):
        for i in range(j + 1):
            if abs(sch.s_tilde[j][i] - sch.s_hat[i]) > A * (R0 + 2.0 * rho_p) + tol:
                tilde_hat = False
            if i >= 1:
                gap = sch.T_tilde[j][i] - sch.s_tilde[j][i - 1]
                if gap < T / A - 2.0 * A * R0 - tol or gap > tau + 2.0 * A * R0 + tol:
                    s_to_T = False
            if abs(sch.s_tilde[j][i] - (sch.T_tilde[j][i] + sch.t_hat[i])) > 2.0 * A * (R0 + rho_p) + tol:
                T_to_s = False
    hat_s_end = all(abs(sch.s_tilde[k - 1][i] - sch.s[i]) <= tau + 5 * A * R0 + 4 * A * rho_p + tol for i in range(k))
    hat_s_start = all(abs(sch.T_tilde[k - 1][i] - sch.T[i]) <= c['tau0'] + tol for i in range(k))
    decay, cumulative = True, True
    for i in range(k - 1):
        total = 0.0
        for j in range(i + 1, k):
            du = sch.d_u[i][j]
            if du > lam ** (j - 1 - i) * rho + tol:
                decay = False
            total += du
        if total >= rho / (1.0 - lam) + tol:
            cumulative = False
    return {
        'tilde_hat': tilde_hat,
        's_to_T': s_to_T,
        'T_to_s': T_to_s,
        'hat_s_end': hat_s_end,
        'hat_s_start': hat_s_start,
        'unstable_decay': decay,
        'unstable_sum': cumulative,
        'cs_within_rho': all(d <= rho + tol for d in sch.d_cs),
        'kappa': all(r['within_kappa'] for r in sch.kappa),
        'T_hat_within_tau_prime': all(abs(th - tt) <= c['tau_prime'] + tol for th, tt in zip(sch.T_hat, sch.T)),
        's_exact': all(s == T_ + t_ for s, T_, t_ in zip(sch.s, sch.T, sch.t)),
    }


# --- проверка отслеживания ---

def _distances(metric: ConformalMetric, p, q, exact: bool) -> np.ndarray:
    with np.errstate(all='ignore'):
        d0 = np.nan_to_num(dist0(p, q), nan=np.inf)
    if metric.is_flat or not exact:
        return d0 if metric.is_flat else metric.equivalence_constant() * d0
    out = np.array(d0, float)
    for i, (a, b) in enumerate(zip(np.ravel(p), np.ravel(q))):
        if np.isfinite(d0[i]) and d0[i] < 20.0:
            out[i] = metric.dist(complex(a), complex(b))
    return out


def verify_shadowing(metric: ConformalMetric, w: TangentVector, segments, schedule: GluingSchedule,
                     delta: float, n_grid: int = 41) -> dict:
    """d(c_w(T̂_j + t), c_{v_j}(t)) < δ на сетке t ∈ [0, t_j] в подъёмах отрезков из склейки"""
    segments = [s if isinstance(s, OrbitSegment) else OrbitSegment(*s) for s in segments]
    orbit = schedule.orbit
    if orbit is None:
        raise ConfigError("verify_shadowing: расписание без цепочки карт (не из glue)")
    glued = w == orbit.initial
    chain = orbit.chain
    if glued:
        source_node, curve = orbit.final.node, orbit.final.segment
    else:
        horizon = schedule.T_hat[-1] + segments[-1].t
        source_node, curve = 0, metric.integrate(w, horizon)
    rows = []
    for j, seg in enumerate(segments):
        times = np.linspace(0.0, seg.t, n_grid)
        ref, _ = metric.integrate(orbit.folded[j], seg.t).at(times)
        pts, _ = curve.at(schedule.T_hat[j] + times)
        with np.errstate(all='ignore'):
            pts = chain.move_points(pts, source_node, orbit.seg_nodes[j])
        d = _distances(metric, np.atleast_1d(pts), np.atleast_1d(ref), exact=glued)
        worst = float(np.max(d))
        rows.append({'segment': j + 1, 'max_distance': worst, 'margin': float(delta - worst),
                     'passed': bool(worst < delta)})
    passed = bool(np.isinf(delta) or all(r['passed'] for r in rows))
    report = {'delta': float(delta), 'mode': 'glued' if glued else 'ivp', 'segments': rows, 'passed': passed}
    status = "✅" if passed else "❌"
    logger.info(f"{status} Проверка отслеживания (δ={delta:.3f}): "
                + ", ".join(f"{r['max_distance']:.3e}" for r in rows))
    return report
