"""
Абсолют и функции Бузмана: лучи на бесконечность, направления, геодезические между
точками абсолюта, произведение Громова, двойное отношение, тени и обход по орициклам.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from lab_errors import ConvergenceError, IndependenceError, GeometryError
from poincare_disk import (
    TangentVector, canonical_angle, angle_difference, dist0, flow0, ray_end0,
    direction0_boundary, busemann0, gromov0, cross_ratio0, geodesic_foot,
    su_apply, su_apply_boundary, translation_to, translation_from, point_to_segment0,
)
from conformal_metric import ConformalMetric, GeodesicSegment

logger = logging.getLogger(__name__)

ANGLE_TOL = 1e-7
QUAD_TOL = 1e-9


@dataclass
class BusemannValue:
    value: float
    p_ref: complex
    q: complex
    xi: float
    est_error: float


@dataclass(frozen=True)
class Quadrilateral:
    xi: float
    xi2: float
    eta: float
    eta2: float

    def __post_init__(self):
        for a in (self.xi, self.xi2):
            for b in (self.eta, self.eta2):
                if abs(angle_difference(a, b)) < QUAD_TOL:
                    raise GeometryError("вырожденный четырёхугольник: {ξ,ξ'} ∩ {η,η'} ≠ ∅", xi=a, eta=b)


@dataclass
class OtalWalk:
    """Обход v → v1 → v2 → v3 → v4 и смещение вдоль (ξ, η)"""
    points: list
    displacement: float
    cross_ratio: float
    defect: float = field(init=False)

    def __post_init__(self):
        # смещение к η равно минус двойному отношению при b_v(c_v(t)) = -t
        self.defect = abs(self.displacement + self.cross_ratio)


def random_quadrilateral(rng, min_sep: float = 0.25) -> Quadrilateral:
    while True:
        angles = rng.uniform(0.0, 2.0 * np.pi, 4)
        diffs = np.abs(angle_difference(angles[:, None], angles[None, :]))
        np.fill_diagonal(diffs, np.inf)
        if np.min(diffs) >= min_sep:
            return Quadrilateral(*map(float, angles))


class BoundaryGeometry:
    """Численные пределы на абсолюте для метрики g (замкнутые формулы при ε = 0)"""

    def __init__(self, metric: ConformalMetric, busemann_tol: float = 1e-5, gp_tol: float = 1e-5,
                 cr_tol: float = 1e-4, horizon: float = 20.0, horizon_cap: float = 80.0,
                 shadow_res: float = 1e-3):
        self.metric = metric
        self.busemann_tol = busemann_tol
        self.gp_tol = gp_tol
        self.cr_tol = cr_tol
        self.horizon = horizon
        self.horizon_cap = horizon_cap
        self.shadow_res = shadow_res
        self._boundary_cache = {}

    @property
    def flat(self) -> bool:
        return self.metric.is_flat

    # --- лучи и направления ---

    def _ray_end(self, v: TangentVector, horizon: float) -> float:
        seg = self.metric.integrate(v, horizon)
        if seg.kind == 'closed':
            return float(ray_end0(v.base, v.angle))
        c0, c1, dense, fa, fb = seg.chunks[-1]
        y = dense(c1 - c0)
        local = ray_end0(complex(y[0], y[1]), y[2])
        return float(su_apply_boundary(fa, fb, local))

    def ray_to_boundary(self, v: TangentVector, horizon: float = None, check: bool = True) -> float:
        """c_v(∞) с проверкой удвоением горизонта"""
        if self.flat:
            return float(ray_end0(v.base, v.angle))
        h = horizon or self.horizon
        first = self._ray_end(v, h)
        if not check:
            return first
        while 2.0 * h <= self.horizon_cap:
            second = self._ray_end(v, 2.0 * h)
            if abs(angle_difference(first, second)) < ANGLE_TOL:
                return second
            first, h = second, 2.0 * h
        raise ConvergenceError("луч не стабилизировался к горизонту", base=v.base, angle=v.angle, horizon=h)

    def direction_to(self, p, target, boundary: bool = None) -> TangentVector:
        """
        Вектор в p, геодезическая которого приходит в target.
        boundary=True - target угол точки абсолюта, False - точка диска;
        по умолчанию комплексное target считается точкой диска.
        """
        p = complex(p)
        if boundary is None:
            boundary = not np.iscomplexobj(target)
        if not boundary:
            target = complex(target)
            if abs(target) >= 1.0:
                raise GeometryError("direction_to: точка вне диска", target=target)
            if abs(target - p) == 0:
                raise GeometryError("direction_to: цель совпадает с началом", p=p)
            return self.metric.connect(p, target).initial
        if np.iscomplexobj(target):
            raise GeometryError("direction_to: точка абсолюта задаётся вещественным углом", target=target)
        xi = canonical_angle(float(target))
        seed = float(direction0_boundary(p, xi))
        if self.flat:
            return TangentVector(p, seed)

        def miss(theta):
            return angle_difference(self._ray_end(TangentVector(p, theta), self.horizon), xi)

        f0 = miss(seed)
        if abs(f0) < ANGLE_TOL:
            return TangentVector(p, canonical_angle(seed))
        width = 0.05
        while width <= 0.5 * np.pi:
            lo, hi = seed - width, seed + width
            flo, fhi = miss(lo), miss(hi)
            if flo * fhi < 0:
                theta = brentq(miss, lo, hi, xtol=1e-12, rtol=1e-12)
                return TangentVector(p, canonical_angle(theta))
            width *= 2.0
        raise ConvergenceError("direction_to: не удалось отделить корень граничного отображения", p=p, xi=xi)

    # --- функции Бузмана ---

    def busemann(self, p_ref, q, xi) -> BusemannValue:
        """b_p(q, ξ) = lim d(q, z) - d(p, z) при z → ξ"""
        p_ref, q, xi = complex(p_ref), complex(q), float(xi)
        if self.flat:
            return BusemannValue(float(busemann0(q, xi) - busemann0(p_ref, xi)), p_ref, q, xi, 0.0)
        if p_ref == q:
            return BusemannValue(0.0, p_ref, q, xi, 0.0)
        angle = float(direction0_boundary(p_ref, xi))
        previous = None
        t = 8.0
        while t <= 26.0:
            z, _ = flow0(p_ref, angle, t)
            value = self.metric.dist(q, z) - self.metric.dist(p_ref, z)
            if previous is not None and abs(value - previous) < self.busemann_tol:
                return BusemannValue(value, p_ref, q, xi, abs(value - previous))
            previous = value
            t += 3.0
        raise ConvergenceError("функция Бузмана не сошлась", p_ref=p_ref, q=q, xi=xi, last=previous)

    # --- геодезические между точками абсолюта ---

    def connect_boundary(self, xi, eta, window: float = 5.0) -> GeodesicSegment:
        """g-геодезическая длины 2·window с концами ξ, η; центр у ближайшей к 0 точки дуги g0"""
        xi, eta = canonical_angle(float(xi)), canonical_angle(float(eta))
        if abs(angle_difference(xi, eta)) < QUAD_TOL:
            raise GeometryError("connect_boundary: совпадающие точки абсолюта", xi=xi)
        key = (round(xi, 14), round(eta, 14), round(window, 9))
        if key in self._boundary_cache:
            return self._boundary_cache[key]
        foot, direction = geodesic_foot(xi, eta)
        if self.flat:
            start, ang = flow0(foot, direction, -window)
            seg = self.metric.integrate(TangentVector(start, ang), 2.0 * window)
        else:
            seg = self._stabilized_boundary_geodesic(foot, direction, window)
        self._boundary_cache[key] = seg
        return seg

    def _centered(self, foot, direction, r, window):
        x, _ = flow0(foot, direction, -r)
        y, _ = flow0(foot, direction, r)
        seg = self.metric.connect(x, y)
        times = np.linspace(0.0, seg.duration, int(seg.duration / 0.01) + 1)
        pts, _ = seg.at(times)
        center = float(times[np.argmin(dist0(foot, pts))])
        lo = max(center - window, 0.0)
        grid = np.linspace(lo, lo + 2.0 * window, 201)
        return seg, lo, grid

    def _stabilized_boundary_geodesic(self, foot, direction, window):
        r = window + 6.0
        seg, lo, grid = self._centered(foot, direction, r, window)
        prev_pts, _ = seg.at(grid)
        while r <= window + 18.0:
            r += 3.0
            seg, lo, grid = self._centered(foot, direction, r, window)
            pts, _ = seg.at(grid)
            change = float(np.max(dist0(pts, prev_pts)))
            if change < 1e-6:
                base = seg.evaluator

                def evaluator(tt, base=base, lo=lo):
                    return base(lo + np.asarray(tt, float))

                times = np.linspace(0.0, 2.0 * window, max(2, int(2.0 * window / self.metric.step) + 1))
                points, angles = evaluator(times)
                return GeodesicSegment(TangentVector(complex(points[0]), float(angles[0])), 2.0 * window,
                                       times, points, angles, 'bvp', seg.speed_drift, evaluator)
            prev_pts = pts
        raise ConvergenceError("геодезическая между точками абсолюта нестабильна по прокси-радиусу",
                               foot=foot, window=window, last_change=change)

    # --- произведение Громова и двойное отношение ---

    def gromov_product(self, p, xi, eta) -> float:
        """(ξ|η)_p = -(b_p(q, ξ) + b_p(q, η)) для q на геодезической (ξ, η)"""
        p = complex(p)
        if abs(angle_difference(xi, eta)) < QUAD_TOL:
            raise GeometryError("gromov_product: ξ = η", xi=xi)
        if self.flat:
            return float(gromov0(p, xi, eta))
        seg = self.connect_boundary(xi, eta)
        q1, _ = seg.at(0.5 * seg.duration)
        q2, _ = seg.at(0.5 * seg.duration + 1.0)
        values = []
        for q in (complex(np.ravel(q1)[0]), complex(np.ravel(q2)[0])):
            values.append(-(self.busemann(p, q, xi).value + self.busemann(p, q, eta).value))
        gap = abs(values[0] - values[1])
        if gap > 10.0 * self.gp_tol:
            raise IndependenceError("произведение Громова зависит от точки на геодезической", gap=gap)
        return values[0]

    def cross_ratio(self, quad: Quadrilateral, p, check: bool = True) -> float:
        """[ξ,ξ',η,η'] = (ξ|η')+(ξ'|η) - (ξ|η) - (ξ'|η'); проверка второй базой"""
        def at(base):
            if self.flat:
                return float(cross_ratio0(quad.xi, quad.xi2, quad.eta, quad.eta2))
            g = lambda a, b: self.gromov_product(base, a, b)
            return (g(quad.xi, quad.eta2) + g(quad.xi2, quad.eta)) - (g(quad.xi, quad.eta) + g(quad.xi2, quad.eta2))

        value = at(complex(p))
        if check and not self.flat:
            other, _ = flow0(complex(p), 0.0, 0.5)
            gap = abs(at(other) - value)
            if gap > 4.0 * self.gp_tol:
                raise IndependenceError("двойное отношение зависит от базовой точки", gap=gap)
        return value

    # --- обход по четырём орициклам ---

    def _point_on(self, a, b, t, window):
        """Точка геодезической (a → b) с параметром t от её центра"""
        if self.flat:
            foot, direction = geodesic_foot(a, b)
            z, _ = flow0(foot, direction, t)
            return complex(z)
        w = max(window, abs(t) + 2.0)
        seg = self.connect_boundary(a, b, w)
        z, _ = seg.at(w + t)
        return complex(np.ravel(z)[0])

    def _horocycle_step(self, q, a, b, zeta, window):
        """Пересечение геодезической (a → b) с орициклом через q с центром ζ ∈ {a, b}"""
        center = self._point_on(a, b, 0.0, window)
        beta = self.busemann(q, center, zeta).value
        t = beta if zeta == b else -beta
        return t, self._point_on(a, b, t, window)

    def otal_walk(self, quad: Quadrilateral, t0: float = 0.0, window: float = 6.0) -> OtalWalk:
        """
        v ∈ (ξ, η); v1 ∈ (ξ',η) ∩ H^s(v); v2 ∈ (ξ',η') ∩ H^u(v1);
        v3 ∈ (ξ,η') ∩ H^s(v2); v4 ∈ (ξ,η) ∩ H^u(v3).
        """
        xi, xi2, eta, eta2 = quad.xi, quad.xi2, quad.eta, quad.eta2
        q0 = self._point_on(xi, eta, t0, window)
        _, q1 = self._horocycle_step(q0, xi2, eta, eta, window)
        _, q2 = self._horocycle_step(q1, xi2, eta2, xi2, window)
        _, q3 = self._horocycle_step(q2, xi, eta2, eta2, window)
        t4, q4 = self._horocycle_step(q3, xi, eta, xi, window)
        cr = self.cross_ratio(quad, q0, check=False)
        walk = OtalWalk([q0, q1, q2, q3, q4], t4 - t0, cr)
        logger.info(f"🔁 Обход орициклов: смещение {walk.displacement:.6f}, двойное отношение {cr:.6f}, "
                    f"дефект {walk.defect:.2e}")
        return walk

    # --- тени ---

    def shadow(self, p, x, R: float, boundary: bool = None) -> list:
        """
        Дуги абсолюта: η, для которых геодезическая из x (точки диска или абсолюта)
        в η проходит на расстоянии < R от p. Дуги задаются парами (начало, конец) против часовой.
        boundary как в direction_to.
        """
        if R <= 0:
            raise GeometryError("shadow: радиус должен быть положительным", R=R)
        p = complex(p)
        interior = np.iscomplexobj(x) if boundary is None else not boundary
        x = complex(x) if interior else float(x)
        if interior and dist0(p, x) < R:
            return [(0.0, 2.0 * np.pi)]
        if self.flat:
            arcs = self._shadow_closed(p, x, R, interior)
        else:
            arcs = self._shadow_sampled(p, x, R, interior)
        if not arcs:
            logger.warning(f"⚠️ Пустая тень: p={p}, R={R}")
        return arcs

    def _shadow_closed(self, p, x, R, interior):
        if interior:
            a, b = translation_from(x)
            pp = complex(su_apply(a, b, p))
            rho = dist0(0j, pp)
            half = math.asin(min(1.0, math.sinh(R) / math.sinh(rho)))
            ia, ib = translation_to(x)
            centre = math.atan2(pp.imag, pp.real)
            lo = su_apply_boundary(ia, ib, centre - half)
            hi = su_apply_boundary(ia, ib, centre + half)
            return [(float(lo), float(hi))]
        a, b = translation_from(p)
        xx = float(su_apply_boundary(a, b, x))
        # d0(0, (ξ, ξ+π+φ)) = asinh(tan(φ/2))
        half = 2.0 * math.atan(math.sinh(R))
        ia, ib = translation_to(p)
        lo = su_apply_boundary(ia, ib, xx + np.pi - half)
        hi = su_apply_boundary(ia, ib, xx + np.pi + half)
        return [(float(lo), float(hi))]

    def _passes_near(self, seg: GeodesicSegment, p, R) -> bool:
        d0 = point_to_segment0(p, seg.points[:-1], seg.points[1:])
        i = int(np.argmin(d0))
        z = complex(seg.points[i])
        return self.metric.dist(p, z) < R

    def _shadow_sampled(self, p, x, R, interior):
        n = int(min(720, max(64, 2.0 * np.pi / max(self.shadow_res, 1e-6) / 8.0)))
        grid = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
        reach = (dist0(p, x) if interior else 0.0) * self.metric.equivalence_constant() + R + 2.0

        def inside(theta):
            if interior:
                seg = self.metric.integrate(TangentVector(x, theta), reach)
            elif abs(angle_difference(theta, x)) < QUAD_TOL:
                return False
            else:
                seg = self.connect_boundary(x, theta, max(reach, 6.0))
            return self._passes_near(seg, p, R)

        flags = np.array([inside(t) for t in grid])
        arcs = []
        for i in np.flatnonzero(flags & ~np.roll(flags, 1)):
            j = i
            while flags[(j + 1) % n] and (j + 1) % n != i:
                j += 1
            lo = self._bisect(inside, grid[i - 1], grid[i], True)
            hi = self._bisect(inside, grid[j % n], grid[j % n] + 2.0 * np.pi / n, False)
            arcs.append((lo, hi))
        if interior:
            arcs = [(self.ray_to_boundary(TangentVector(x, lo)), self.ray_to_boundary(TangentVector(x, hi)))
                    for lo, hi in arcs]
        return [(float(canonical_angle(lo)), float(canonical_angle(hi))) for lo, hi in arcs]

    def _bisect(self, inside, a, b, rising):
        while b - a > self.shadow_res:
            m = 0.5 * (a + b)
            if inside(m) == rising:
                b = m
            else:
                a = m
        return 0.5 * (a + b)


def arc_contains(arcs, theta):
    """Принадлежность углов объединению дуг (начало, конец) против часовой"""
    theta = canonical_angle(np.asarray(theta, float))
    out = np.zeros(np.shape(theta), bool)
    for lo, hi in arcs:
        if hi - lo >= 2.0 * np.pi - 1e-15:
            return np.ones(np.shape(theta), bool)
        span = canonical_angle(hi - lo)
        out |= canonical_angle(theta - lo) <= span
    return out
