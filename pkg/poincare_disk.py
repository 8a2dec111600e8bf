"""
Точная геометрия диска Пуанкаре: расстояние, изометрии SU(1,1), геодезические,
функции Бузмана, координаты Хопфа и модель Клейна.

Точки диска представлены комплексными числами, точки абсолюта - углами в радианах.
Все функции работают и со скалярами, и с массивами numpy.
"""

import logging
from dataclasses import dataclass

import numpy as np

from lab_errors import GeometryError

logger = logging.getLogger(__name__)

DiskPoint = complex
BoundaryPoint = float

BOUNDARY_MARGIN = 1e-12
TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class TangentVector:
    """Единичный касательный вектор: базовая точка и евклидов угол направления"""
    base: complex
    angle: float

    def reversed(self) -> 'TangentVector':
        return TangentVector(self.base, canonical_angle(self.angle + np.pi))

    def as_tuple(self) -> tuple:
        return (float(np.real(self.base)), float(np.imag(self.base)), float(self.angle))


def canonical_angle(theta):
    """Представитель угла в [0, 2π)"""
    out = np.mod(theta, TWO_PI)
    if np.ndim(out) == 0:
        out = float(out)
        return 0.0 if out >= TWO_PI else out
    return np.where(out >= TWO_PI, 0.0, out)


def angle_difference(a, b):
    """Знаковая разность a - b, приведённая к (-π, π]"""
    d = np.mod(np.asarray(a) - np.asarray(b) + np.pi, TWO_PI) - np.pi
    return float(d) if np.ndim(d) == 0 else d


def validate_point(z) -> complex:
    z = complex(z)
    if not np.isfinite(z.real) or not np.isfinite(z.imag):
        raise GeometryError("boundary proximity: точка не конечна", point=z)
    if abs(z) >= 1.0 - BOUNDARY_MARGIN:
        raise GeometryError("boundary proximity: точка слишком близко к абсолюту", point=z, modulus=abs(z))
    return z


def validate_points(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    bad = ~(np.abs(z) < 1.0 - BOUNDARY_MARGIN)
    if np.any(bad):
        idx = int(np.flatnonzero(bad)[0])
        raise GeometryError("boundary proximity: точка слишком близко к абсолюту", index=idx, point=complex(z.flat[idx]))
    return z


def one_minus_sq(z):
    """1 - |z|^2 без потери точности у границы"""
    r = np.abs(z)
    return (1.0 - r) * (1.0 + r)


def dist0(p, q):
    """Фоновое расстояние d0 = 2·arsinh(|p-q| / sqrt((1-|p|²)(1-|q|²)))"""
    num = np.abs(np.asarray(p) - np.asarray(q))
    den = np.sqrt(one_minus_sq(p) * one_minus_sq(q))
    out = 2.0 * np.arcsinh(num / den)
    return float(out) if np.ndim(out) == 0 else out


# --- SU(1,1): элемент задаётся парой (a, b), матрица [[a, b], [conj b, conj a]] ---

def su_apply(a, b, z):
    return (a * z + b) / (np.conj(b) * z + np.conj(a))


def su_derivative(a, b, z):
    return 1.0 / (np.conj(b) * z + np.conj(a)) ** 2


def su_mul(a1, b1, a2, b2):
    return a1 * a2 + b1 * np.conj(b2), a1 * b2 + b1 * np.conj(a2)


def su_inv(a, b):
    return np.conj(a), -b


def su_apply_boundary(a, b, theta):
    """Действие на абсолюте в терминах углов"""
    w = su_apply(a, b, np.exp(1j * np.asarray(theta)))
    return canonical_angle(np.angle(w))


def su_apply_vector(a, b, z, angle):
    """Образ касательного вектора: точка и новый угол направления"""
    w = su_apply(a, b, z)
    return w, canonical_angle(angle + np.angle(su_derivative(a, b, z)))


def translation_to(z):
    """Элемент SU(1,1), переводящий 0 в z (чистый сдвиг без поворота)"""
    s = 1.0 / np.sqrt(one_minus_sq(z))
    return s + 0j, s * z


def translation_from(z):
    """Элемент, переводящий z в 0"""
    a, b = translation_to(z)
    return su_inv(a, b)


def rotation(theta):
    return np.exp(0.5j * theta), 0j


def frame_of(z, angle):
    """Элемент, переводящий (0, направление 0) в (z, angle)"""
    a1, b1 = translation_to(z)
    a2, b2 = rotation(angle)
    return su_mul(a1, b1, a2, b2)


# --- геодезические фоновой метрики ---

def flow0(z, angle, t):
    """Геодезический поток g0 в замкнутой форме: (точка, угол) через время t"""
    z = np.asarray(z, dtype=complex)
    w = np.tanh(0.5 * np.asarray(t)) * np.exp(1j * np.asarray(angle))
    den = 1.0 + np.conj(z) * w
    point = (w + z) / den
    new_angle = canonical_angle(np.asarray(angle) - 2.0 * np.angle(den))
    if np.ndim(point) == 0:
        return complex(point), float(new_angle)
    return point, new_angle


def ray_end0(z, angle):
    """Угол на абсолюте, к которому уходит геодезический луч g0"""
    u = np.exp(1j * np.asarray(angle))
    return canonical_angle(np.angle((u + z) / (1.0 + np.conj(z) * u)))


def geodesic_endpoints(z, angle):
    """(ξ₋, ξ₊) для вектора в фоновой метрике"""
    return ray_end0(z, np.asarray(angle) + np.pi), ray_end0(z, angle)


def direction0(p, q):
    """Угол в p вектора, направленного по геодезической g0 на q"""
    return canonical_angle(np.angle((np.asarray(q) - p) / (1.0 - np.conj(p) * np.asarray(q))))


def direction0_boundary(p, theta):
    u = np.exp(1j * np.asarray(theta))
    return canonical_angle(np.angle((u - p) / (1.0 - np.conj(p) * u)))


def geodesic_foot(xi, eta):
    """Ближайшая к 0 точка геодезической (ξ, η) и угол направления на η"""
    delta = angle_difference(eta, xi)
    half = 0.5 * np.abs(delta)
    s = np.sin(half)
    r = np.sqrt(np.clip((1.0 - s) / (1.0 + s), 0.0, None))
    m = np.asarray(xi) + 0.5 * delta
    point = r * np.exp(1j * m)
    direction = canonical_angle(m + np.sign(delta) * 0.5 * np.pi)
    if np.ndim(point) == 0:
        return complex(point), float(direction)
    return point, direction


def busemann0(z, theta):
    """b_0(z, ξ) = log(|ξ - z|² / (1 - |z|²)), нормировка в 0"""
    u = np.exp(1j * np.asarray(theta))
    out = np.log(np.abs(u - z) ** 2 / one_minus_sq(z))
    return float(out) if np.ndim(out) == 0 else out


def gromov0(p, xi, eta):
    """Произведение Громова (ξ|η)_p фоновой метрики"""
    chord = np.abs(np.exp(1j * np.asarray(xi)) - np.exp(1j * np.asarray(eta))) ** 2
    out = -np.log(chord / 4.0) + busemann0(p, xi) + busemann0(p, eta)
    return float(out) if np.ndim(out) == 0 else out


def cross_ratio0(xi, xi2, eta, eta2):
    e = lambda t: np.exp(1j * np.asarray(t))
    num = np.abs(e(xi) - e(eta)) ** 2 * np.abs(e(xi2) - e(eta2)) ** 2
    den = np.abs(e(xi) - e(eta2)) ** 2 * np.abs(e(xi2) - e(eta)) ** 2
    out = np.log(num / den)
    return float(out) if np.ndim(out) == 0 else out


def point_to_geodesic0(z, xi, eta):
    """Расстояние от z до полной геодезической (ξ, η)"""
    a, b = translation_from(z)
    x = su_apply_boundary(a, b, xi)
    y = su_apply_boundary(a, b, eta)
    half = 0.5 * np.abs(angle_difference(x, y))
    out = np.arcsinh(np.abs(np.cos(half) / np.maximum(np.sin(half), 1e-300)))
    return float(out) if np.ndim(out) == 0 else out


def point_to_segment0(z, p, q):
    """Расстояние от z до геодезического отрезка [p, q] фоновой метрики"""
    z, p, q = np.broadcast_arrays(np.asarray(z, complex), np.asarray(p, complex), np.asarray(q, complex))
    a, b = translation_from(p)
    zq = su_apply(a, b, q)
    zz = su_apply(a, b, z)
    length = dist0(0j, zq)
    rho = dist0(0j, zz)
    delta = np.where(np.abs(zz) > 0, np.angle(zz) - np.angle(zq), 0.0)
    foot = np.arctanh(np.clip(np.tanh(rho) * np.cos(delta), -1.0, 1.0 - 1e-16))
    perpendicular = np.arcsinh(np.sinh(rho) * np.abs(np.sin(delta)))
    to_q = dist0(z, q)
    out = np.where(np.cos(delta) <= 0.0, rho, np.where(foot >= length, to_q, perpendicular))
    return float(out) if np.ndim(out) == 0 else out


# --- координаты Хопфа фоновой метрики ---

def hopf_coordinates(z, angle):
    """(ξ₋, ξ₊, s), s = b_0(z, ξ₋): уровень орицикла с центром в ξ₋"""
    xm, xp = geodesic_endpoints(z, angle)
    return xm, xp, busemann0(z, xm)


def vector_from_hopf(xi_minus, xi_plus, s):
    """Вектор на геодезической (ξ₋, ξ₊) с уровнем s = b_0(·, ξ₋)"""
    foot, direction = geodesic_foot(xi_minus, xi_plus)
    t = s - busemann0(foot, xi_minus)
    return flow0(foot, direction, t)


# --- модель Клейна ---

def to_klein(z):
    return 2.0 * z / (1.0 + np.abs(z) ** 2)


def from_klein(k):
    return k / (1.0 + np.sqrt(np.clip(1.0 - np.abs(k) ** 2, 0.0, None)))


def klein_dist(k1, k2):
    num = 1.0 - np.real(k1 * np.conj(k2))
    den = np.sqrt(np.clip((1.0 - np.abs(k1) ** 2) * (1.0 - np.abs(k2) ** 2), 1e-300, None))
    return np.arccosh(np.maximum(num / den, 1.0))


def clip_chords(xi, eta, normals, offsets):
    """
    Отсечение хорд Клейна между e^{iξ} и e^{iη} выпуклым многоугольником
    {k : Re(k·conj(n_j)) <= c_j}. Возвращает (t_in, t_out, hit) для
    параметризации k(t) = e^{iξ} + t·(e^{iη} - e^{iξ}).
    """
    start = np.exp(1j * np.atleast_1d(np.asarray(xi, float)))
    end = np.exp(1j * np.atleast_1d(np.asarray(eta, float)))
    d = end - start
    t_in = np.zeros(start.shape)
    t_out = np.ones(start.shape)
    for n, c in zip(normals, offsets):
        num = c - np.real(start * np.conj(n))
        den = np.real(d * np.conj(n))
        with np.errstate(divide='ignore', invalid='ignore'):
            t = num / den
        entering = den < 0
        leaving = den > 0
        t_in = np.where(entering, np.maximum(t_in, t), t_in)
        t_out = np.where(leaving, np.minimum(t_out, t), t_out)
        outside = (den == 0) & (num < 0)
        t_out = np.where(outside, -1.0, t_out)
    hit = t_out > t_in
    return t_in, t_out, hit
