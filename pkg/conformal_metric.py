"""
Конформное возмущение g = e^{2φ} g0 на поверхности Больцы: функция φ из гладких
"шапочек" внутри фундаментальной области, кривизна, интегрирование геодезических,
краевая задача и расстояние.
"""

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp, solve_bvp, trapezoid

from lab_errors import ConfigError, IntegrationError, BVPError
from poincare_disk import (
    TangentVector, dist0, flow0, direction0, canonical_angle, one_minus_sq,
    su_apply, su_inv, su_mul, su_derivative, frame_of, validate_point, point_to_geodesic0,
)
from bolza_group import (
    reduce_to_domain, reduce_many, reduce_point_fast, in_domain,
    INRADIUS, CIRCUMRADIUS, N_LETTERS,
)

logger = logging.getLogger(__name__)

IVP_CHUNK = 1.0
SIDE_HALF_WIDTH = math.asin(1.0 / math.cosh(INRADIUS))


@dataclass(frozen=True)
class Bump:
    center: complex
    amplitude: float
    width: float


@dataclass
class GeodesicSegment:
    """Единично-скоростная g-геодезическая с отсчётами в накрытии"""
    initial: TangentVector
    duration: float
    times: np.ndarray
    points: np.ndarray
    angles: np.ndarray
    kind: str = 'closed'
    speed_drift: float = 0.0
    evaluator: object = field(default=None, repr=False)

    @property
    def start(self) -> complex:
        return complex(self.points[0])

    @property
    def end(self) -> complex:
        return complex(self.points[-1])

    @property
    def end_angle(self) -> float:
        return float(self.angles[-1])

    @property
    def length(self) -> float:
        return self.duration

    def at(self, t):
        """Точки и углы в моменты t (плотный вывод решателя)"""
        t = np.clip(np.asarray(t, float), 0.0, self.duration)
        if self.evaluator is not None:
            return self.evaluator(t)
        pts = np.interp(t, self.times, self.points.real) + 1j * np.interp(t, self.times, self.points.imag)
        angs = np.interp(t, self.times, np.unwrap(self.angles))
        return pts, canonical_angle(angs)

    def reversed(self) -> 'GeodesicSegment':
        times = self.duration - self.times[::-1]
        points = self.points[::-1].copy()
        angles = canonical_angle(self.angles[::-1] + np.pi)
        evaluator = None
        if self.evaluator is not None:
            base = self.evaluator
            duration = self.duration

            def evaluator(t):
                p, a = base(duration - np.asarray(t))
                return p, canonical_angle(a + np.pi)
        start = TangentVector(complex(points[0]), float(angles[0]))
        return GeodesicSegment(start, self.duration, times, points, angles, self.kind, self.speed_drift, evaluator)


@dataclass
class CurvatureCertificate:
    k_min: float
    k_max: float
    grid_step: float
    n_points: int
    worst_point: complex
    certified: bool

    def to_dict(self) -> dict:
        return {
            'k_min': self.k_min, 'k_max': self.k_max, 'grid_step': self.grid_step,
            'n_points': self.n_points, 'worst_point': [self.worst_point.real, self.worst_point.imag],
            'certified': self.certified,
        }


def _psi(u):
    return (1.0 - u * u) ** 3


def _side_geodesics():
    angles = np.pi * np.arange(N_LETTERS) / 4.0
    return [(a - SIDE_HALF_WIDTH, a + SIDE_HALF_WIDTH) for a in angles]


class ConformalMetric:
    """
    Метрика g = e^{2φ}g0, φ = ε·Σ A_i ψ(d0(z, c_i)/w_i), ψ(u) = (1-u²)³ при u < 1.
    φ вычисляется после редукции в область Дирихле, поэтому Γ-инвариантна.
    """

    def __init__(self, bumps=(), epsilon: float = 0.0, ode_tol: float = 1e-10, bvp_tol: float = 1e-8,
                 step: float = 0.05, force_ode: bool = False, max_bvp_nodes: int = 50000):
        self.bumps = tuple(bumps)
        self.epsilon = float(epsilon)
        self.ode_tol = float(ode_tol)
        self.bvp_tol = float(bvp_tol)
        self.step = float(step)
        self.force_ode = bool(force_ode)
        self.max_bvp_nodes = int(max_bvp_nodes)
        self.certificate = None
        self._check_supports()
        self._centers = np.array([b.center for b in self.bumps], complex)
        self._amps = np.array([b.amplitude for b in self.bumps], float)
        self._widths = np.array([b.width for b in self.bumps], float)
        self._bump_list = [(b.center, self.epsilon * b.amplitude, b.width,
                            2.0 / one_minus_sq(b.center)) for b in self.bumps]

    # --- служебное ---

    @property
    def is_flat(self) -> bool:
        return (self.epsilon == 0.0 or not self.bumps) and not self.force_ode

    @property
    def is_background(self) -> bool:
        return self.epsilon == 0.0 or not self.bumps

    def _check_supports(self):
        sides = _side_geodesics()
        for i, b in enumerate(self.bumps):
            if b.width <= 0:
                raise ConfigError("ширина шапочки должна быть положительной", bump=i)
            validate_point(b.center)
            if not in_domain(b.center):
                raise ConfigError("центр шапочки вне фундаментальной области", bump=i, center=b.center)
            gap = min(point_to_geodesic0(b.center, lo, hi) for lo, hi in sides)
            if gap <= b.width:
                raise ConfigError("носитель шапочки пересекает сторону октагона", bump=i, gap=gap, width=b.width)

    def to_dict(self) -> dict:
        return {
            'bumps': [{'center': [b.center.real, b.center.imag], 'amplitude': b.amplitude, 'width': b.width}
                      for b in self.bumps],
            'epsilon': self.epsilon, 'ode_tol': self.ode_tol, 'bvp_tol': self.bvp_tol, 'step': self.step,
        }

    def metric_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode('utf-8')).hexdigest()[:16]

    # --- φ, градиент, кривизна ---

    def _radial_terms(self, z):
        """ρ_i и u_i для точек z (уже в области) относительно всех центров"""
        rho = dist0(z[..., None], self._centers)
        return rho, rho / self._widths

    def phi(self, z):
        """φ(z) после редукции в фундаментальную область"""
        if self.is_background:
            return 0.0 if np.ndim(z) == 0 else np.zeros(np.shape(z))
        zr, _, _ = reduce_many(np.atleast_1d(np.asarray(z, complex)))
        _, u = self._radial_terms(zr)
        vals = self.epsilon * np.sum(self._amps * np.where(u < 1.0, _psi(np.minimum(u, 1.0)), 0.0), axis=-1)
        return float(vals[0]) if np.ndim(z) == 0 else vals.reshape(np.shape(z))

    def phi_grad(self, z):
        """(φ, ∇φ) в евклидовых координатах; ∇φ как комплексное число φ_x + iφ_y"""
        z = np.atleast_1d(np.asarray(z, complex))
        if self.is_background:
            return np.zeros(z.shape), np.zeros(z.shape, complex)
        zr, a, b = reduce_many(z)
        phi_val, grad_r = self._phi_grad_reduced(zr)
        grad = np.conj(su_derivative(a, b, z)) * grad_r
        return phi_val, grad

    def _phi_grad_reduced(self, z):
        phi_val = np.zeros(z.shape)
        grad = np.zeros(z.shape, complex)
        d = one_minus_sq(z)
        for c, amp, w, cfac in self._bump_list:
            diff = z - c
            n2 = np.abs(diff) ** 2
            rho = 2.0 * np.arcsinh(np.sqrt(n2 / (d * one_minus_sq(c))))
            u = rho / w
            inside = u < 1.0
            if not np.any(inside):
                continue
            um = np.where(inside, u, 1.0)
            one = 1.0 - um * um
            phi_val += np.where(inside, amp * one ** 3, 0.0)
            ratio = np.where(rho > 1e-8, rho / np.sinh(np.maximum(rho, 1e-300)), 1.0)
            fprime_over_sinh = amp * (-6.0 * one ** 2 / (w * w)) * ratio
            grad_q = cfac * (2.0 * diff / d + 2.0 * z * n2 / (d * d))
            grad += np.where(inside, fprime_over_sinh * grad_q, 0.0)
        return phi_val, grad

    def laplacian0(self, z):
        """Фоновый лапласиан φ: для радиального f(ρ) это f'' + coth ρ · f'"""
        z = np.atleast_1d(np.asarray(z, complex))
        if self.is_background:
            return np.zeros(z.shape)
        zr, _, _ = reduce_many(z)
        rho, u = self._radial_terms(zr)
        inside = u < 1.0
        um = np.where(inside, u, 1.0)
        one = 1.0 - um * um
        psi2 = -6.0 * one ** 2 + 24.0 * um * um * one
        ratio = np.where(rho > 1e-8, rho / np.tanh(np.maximum(rho, 1e-300)), 1.0)
        coth_term = -6.0 * one ** 2 * ratio
        terms = self.epsilon * self._amps * (psi2 + coth_term) / self._widths ** 2
        return np.sum(np.where(inside, terms, 0.0), axis=-1)

    def curvature(self, z):
        """K_g = e^{-2φ}(-1 - Δ0 φ)"""
        scalar = np.ndim(z) == 0
        z = np.atleast_1d(np.asarray(z, complex))
        k = np.exp(-2.0 * self.phi(z)) * (-1.0 - self.laplacian0(z))
        return float(k[0]) if scalar else k

    def certify(self, step: float = None) -> CurvatureCertificate:
        """Сканирование кривизны по сетке в P; K_g >= 0 где-либо отклоняет метрику"""
        h = step or (min(self._widths) / 8.0 if self.bumps else 0.1)
        r_max = math.tanh(CIRCUMRADIUS / 2.0)
        h_e = h * (1.0 - r_max ** 2) / 2.0
        xs = np.arange(-r_max, r_max + h_e, h_e)
        grid = (xs[:, None] + 1j * xs[None, :]).ravel()
        grid = grid[(np.abs(grid) <= r_max) & in_domain(grid)]
        k = self.curvature(grid)
        worst = int(np.argmax(k))
        cert = CurvatureCertificate(float(np.min(k)), float(np.max(k)), h, int(grid.size),
                                    complex(grid[worst]), bool(np.max(k) < 0.0))
        logger.info(f"📊 Кривизна на сетке ({grid.size} точек, шаг {h:.4f}): "
                    f"min {cert.k_min:.6f}, max {cert.k_max:.6f}")
        if not cert.certified:
            raise ConfigError("метрика отклонена: K_g >= 0 в точке сетки", point=cert.worst_point, k=cert.k_max)
        self.certificate = cert
        logger.info("✅ Метрика сертифицирована: K_g < 0 на всей сетке")
        return cert

    def equivalence_constant(self) -> float:
        """A = exp(sup|φ|) по данным шапочек"""
        if self.is_background:
            return 1.0
        disjoint = all(dist0(b1.center, b2.center) >= b1.width + b2.width
                       for i, b1 in enumerate(self.bumps) for b2 in self.bumps[i + 1:])
        amps = np.abs(self._amps)
        sup = float(np.max(amps)) if disjoint else float(np.sum(amps))
        return math.exp(abs(self.epsilon) * sup)

    # --- правая часть уравнения геодезических ---

    def _sigma_grad_scalar(self, z: complex) -> complex:
        """∇σ, σ = φ + log 2 - log(1-|z|²), скалярная версия для ОДУ"""
        grad = 2.0 * z / (1.0 - abs(z) ** 2)
        if self.is_background:
            return grad, 0.0
        zr, a, b = reduce_point_fast(z)
        phi_val = 0.0
        g = 0j
        x2 = abs(zr) ** 2
        d = 1.0 - x2
        for c, amp, w, cfac in self._bump_list:
            diff = zr - c
            n2 = abs(diff) ** 2
            rho = 2.0 * math.asinh(math.sqrt(0.5 * cfac * n2 / d))
            if rho >= w:
                continue
            u = rho / w
            one = 1.0 - u * u
            phi_val += amp * one ** 3
            ratio = rho / math.sinh(rho) if rho > 1e-8 else 1.0
            g += amp * (-6.0 * one * one / (w * w)) * ratio * cfac * (2.0 * diff / d + 2.0 * zr * n2 / (d * d))
        deriv = 1.0 / (b.conjugate() * z + a.conjugate()) ** 2
        return grad + deriv.conjugate() * g, phi_val

    def _rhs(self, t, y):
        z = complex(y[0], y[1])
        gs, phi_val = self._sigma_grad_scalar(z)
        speed = math.exp(-phi_val) * (1.0 - abs(z) ** 2) / 2.0
        c, s = math.cos(y[2]), math.sin(y[2])
        return [speed * c, speed * s, speed * (gs.imag * c - gs.real * s)]

    # --- интегрирование ---

    def integrate(self, v: TangentVector, t: float) -> GeodesicSegment:
        """g-геодезическая длины t; отсчёты в накрытии, локально с перескладыванием в P"""
        if t < 0:
            return self.integrate(v.reversed(), -t)
        base = validate_point(v.base)
        if t == 0:
            return GeodesicSegment(v, 0.0, np.zeros(1), np.array([base]), np.array([canonical_angle(v.angle)]), 'closed')
        if self.is_flat:
            return self._integrate_closed(TangentVector(base, canonical_angle(v.angle)), t)
        return self._integrate_ode(TangentVector(base, canonical_angle(v.angle)), t)

    def _integrate_closed(self, v, t):
        n = max(2, int(math.ceil(t / self.step)) + 1)
        times = np.linspace(0.0, t, n)
        z0, a0 = v.base, v.angle

        def evaluator(tt):
            return flow0(z0, a0, np.asarray(tt, float))

        points, angles = evaluator(times)
        return GeodesicSegment(v, float(t), times, np.atleast_1d(points), np.atleast_1d(angles), 'closed', 0.0, evaluator)

    def _integrate_ode(self, v, t):
        z_loc, g = reduce_to_domain(v.base)
        ang_loc = canonical_angle(v.angle + np.angle(su_derivative(g.a, g.b, v.base)))
        fa, fb = su_inv(g.a, g.b)
        chunks = []
        t0 = 0.0
        state = [z_loc.real, z_loc.imag, ang_loc]
        while True:
            dt = min(IVP_CHUNK, t - t0)
            sol = solve_ivp(self._rhs, (0.0, dt), state, method='RK45',
                            rtol=self.ode_tol, atol=self.ode_tol * 1e-2, dense_output=True)
            if not sol.success:
                here = complex(su_apply(fa, fb, complex(state[0], state[1])))
                raise IntegrationError(f"интегрирование геодезической не удалось: {sol.message}", time=t0, point=here)
            chunks.append((t0, t0 + dt, sol.sol, complex(fa), complex(fb)))
            t0 += dt
            if t0 >= t:
                break
            end = sol.y[:, -1]
            ze = complex(end[0], end[1])
            zr, ra, rb = reduce_point_fast(ze)
            new_ang = end[2] + np.angle(su_derivative(ra, rb, ze))
            fa, fb = su_mul(fa, fb, *su_inv(ra, rb))
            state = [zr.real, zr.imag, float(new_ang)]

        starts = np.array([c[0] for c in chunks])

        def evaluator(tt):
            tt = np.atleast_1d(np.asarray(tt, float))
            idx = np.clip(np.searchsorted(starts, tt, side='right') - 1, 0, len(chunks) - 1)
            pts = np.empty(tt.shape, complex)
            angs = np.empty(tt.shape)
            for i in np.unique(idx):
                mask = idx == i
                c0, _, dense, ca, cb = chunks[i]
                y = dense(tt[mask] - c0)
                zl = y[0] + 1j * y[1]
                pts[mask] = su_apply(ca, cb, zl)
                angs[mask] = canonical_angle(y[2] + np.angle(su_derivative(ca, cb, zl)))
            return pts, angs

        n = max(2, int(math.ceil(t / self.step)) + 1)
        times = np.linspace(0.0, t, n)
        points, angles = evaluator(times)
        seg = GeodesicSegment(v, float(t), times, points, angles, 'ivp', 0.0, evaluator)
        seg.speed_drift = self._speed_drift(chunks)
        seg.chunks = chunks
        return seg

    def _speed_drift(self, chunks) -> float:
        """Максимум |g-скорость - 1| по узлам плотного вывода"""
        drift = 0.0
        for c0, c1, dense, _, _ in chunks:
            for tt in np.linspace(0.0, c1 - c0, 5):
                y = dense(tt)
                z = complex(y[0], y[1])
                vel = self._rhs(tt, y)
                _, phi_val = self._sigma_grad_scalar(z)
                speed = math.hypot(vel[0], vel[1]) * math.exp(phi_val) * 2.0 / (1.0 - abs(z) ** 2)
                drift = max(drift, abs(speed - 1.0))
        return drift

    # --- краевая задача ---

    def connect(self, p, q) -> GeodesicSegment:
        """Единственная g-геодезическая из p в q"""
        p = validate_point(p)
        q = validate_point(q)
        length0 = dist0(p, q)
        if length0 == 0.0:
            v = TangentVector(p, 0.0)
            return GeodesicSegment(v, 0.0, np.zeros(1), np.array([p]), np.zeros(1), 'closed')
        if self.is_flat:
            return self._integrate_closed(TangentVector(p, direction0(p, q)), length0)
        return self._connect_bvp(p, q, length0)

    def _connect_bvp(self, p, q, length0):
        # середину хорды переносим в P, метрика Γ-инвариантна
        mid, _ = flow0(p, direction0(p, q), 0.5 * length0)
        _, g = reduce_to_domain(mid)
        pl, ql = complex(g(p)), complex(g(q))
        ml = complex(g(mid))
        ca, cb = frame_of(ml, direction0(ml, ql))
        half = 0.5 * length0

        def point_map(s, n):
            a = np.tanh(0.5 * s)
            t = np.tanh(0.5 * n)
            u = 1j * t
            w = (u + a) / (1.0 + a * u)
            z = su_apply(ca, cb, w)
            dz = su_derivative(ca, cb, w)
            ds = dz * 0.5 * (1.0 - w * w)
            tp = (1.0 - a * a) / (1.0 + a * u) ** 2
            dn = dz * tp * 1j * 0.5 * (1.0 - t * t)
            return z, ds, dn

        def fun(x, y):
            s, n, sp, npr = y
            z, ds, dn = point_map(s, n)
            _, grad = self.phi_grad(z)
            phs = np.real(np.conj(grad) * ds)
            phn = np.real(np.conj(grad) * dn)
            th = np.tanh(n)
            ch2 = np.cosh(n) ** 2
            s2 = -(phs * sp * sp + 2.0 * (phn + th) * sp * npr - (phs / ch2) * npr * npr)
            n2 = -(-ch2 * (phn + th) * sp * sp + 2.0 * phs * sp * npr + phn * npr * npr)
            return np.vstack([sp, npr, s2, n2])

        def bc(ya, yb):
            return np.array([ya[0] + half, ya[1], yb[0] - half, yb[1]])

        nodes = max(21, int(math.ceil(length0 / 0.25)) + 1)
        x = np.linspace(0.0, 1.0, nodes)
        y0 = np.vstack([-half + length0 * x, np.zeros(nodes), np.full(nodes, length0), np.zeros(nodes)])
        sol = solve_bvp(fun, bc, x, y0, tol=self.bvp_tol, max_nodes=self.max_bvp_nodes)
        if not sol.success:
            raise BVPError(f"краевая задача не решена: {sol.message}", p=p, q=q, length0=length0)

        def length_of(sol):
            tau = np.linspace(0.0, 1.0, 2001)
            s, n, sp, npr = sol.sol(tau)
            z, _, _ = point_map(s, n)
            phi_val = self.phi(z)
            speed = np.exp(phi_val) * np.sqrt(np.cosh(n) ** 2 * sp * sp + npr * npr)
            return float(trapezoid(speed, tau)), float(np.max(np.abs(speed - speed.mean())))

        length, spread = length_of(sol)
        ga, gb = su_inv(g.a, g.b)

        def evaluator(tt):
            tau = np.clip(np.atleast_1d(np.asarray(tt, float)) / length, 0.0, 1.0)
            s, n, sp, npr = sol.sol(tau)
            zl, ds, dn = point_map(s, n)
            vel = ds * sp + dn * npr
            z = su_apply(ga, gb, zl)
            ang = canonical_angle(np.angle(vel) + np.angle(su_derivative(ga, gb, zl)))
            return z, ang

        n = max(2, int(math.ceil(length / self.step)) + 1)
        times = np.linspace(0.0, length, n)
        points, angles = evaluator(times)
        points[0], points[-1] = p, q
        seg = GeodesicSegment(TangentVector(p, float(angles[0])), length, times, points, angles,
                              'bvp', spread / max(length, 1e-300), evaluator)
        return seg

    def dist(self, p, q) -> float:
        return self.connect(p, q).duration

    def dist_many(self, p, points) -> np.ndarray:
        points = np.asarray(points, complex)
        if self.is_flat:
            return dist0(complex(p), points)
        return np.array([self.dist(p, q) for q in points.ravel()]).reshape(points.shape)

    def direction(self, p, q) -> TangentVector:
        return self.connect(p, q).initial


def metric_from_config(block: dict) -> ConformalMetric:
    bumps = [Bump(complex(*b['center']), float(b['amplitude']), float(b['width'])) for b in block.get('bumps', [])]
    return ConformalMetric(bumps, block.get('epsilon', 0.0), block.get('ode_tol', 1e-10),
                           block.get('bvp_tol', 1e-8), block.get('step', 0.05), block.get('force_ode', False))
