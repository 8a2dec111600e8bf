"""
Статистика орбит: замкнутые геодезические, подсчёт P(T) с сертификатом полноты,
эмпирические меры μ_T на T¹M, сжатие вдоль устойчивых орициклов и корреляции перемешивания.
"""

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.spatial import cKDTree
from scipy.stats import linregress

from lab_errors import ConfigError, ResourceError, SolverError, ConvergenceError, ExhaustivenessError
from poincare_disk import (
    TangentVector, dist0, flow0, su_apply, su_mul, su_inv, su_derivative, canonical_angle, angle_difference,
    clip_chords, from_klein, klein_dist, direction0_boundary, geodesic_foot, point_to_geodesic0,
)
from bolza_group import (
    CIRCUMRADIUS, SYSTOLE, SIDE_NORMALS, SIDE_OFFSET, N_LETTERS, ConjClassRep, IsometryElement,
    bolza_generators, canonical_word, expand_words, fixed_points, reduce_many, word_element, enumerate_ball,
)
from conformal_metric import ConformalMetric, GeodesicSegment
from boundary_geometry import BoundaryGeometry
from specification_engine import stable_shift

logger = logging.getLogger(__name__)

KEY_STEP = 1e-9
KEY_OFFSET = 1 << 30
MAX_ORBIT_RADIUS = 18.5
CHUNK = 200_000
AXIS_TOL = 1e-6
MATCH_TOL = 1e-7
HALF_OPEN = 1e-12
FOLD_STEP = 2.0


# --- замкнутые геодезические ---

@dataclass
class ClosedGeodesic:
    rep: ConjClassRep
    gamma: IsometryElement
    fixed_pts: tuple
    length_g: float
    axis_segment: GeodesicSegment
    variation: float

    def to_dict(self) -> dict:
        return {'word': list(self.rep.word), 'length': self.length_g, 'fixed_points': list(self.fixed_pts),
                'variation': self.variation}


def closed_geodesic(rep: ConjClassRep, metric: ConformalMetric = None,
                    geometry: BoundaryGeometry = None, n_slide: int = 5) -> ClosedGeodesic:
    """
    Ось класса: неподвижные точки матрицы, g-геодезическая между ними и смещение
    d(q, γq) вдоль неё; разброс по сдвигам q подтверждает ось.
    """
    if not rep.word:
        raise ConfigError("closed_geodesic: тривиальный класс")
    gamma = rep.element()
    if not gamma.is_hyperbolic():
        raise SolverError("элемент класса не гиперболический", word=rep.word)
    xm, xp = gamma.fixed_points()
    length0 = gamma.translation_length()
    foot, direction = geodesic_foot(xm, xp)
    if metric is None or metric.is_flat:
        stations = [flow0(foot, direction, s)[0] for s in np.linspace(0.0, length0, n_slide)]
        lengths = [dist0(q, complex(gamma(q))) for q in stations]
        off_axis = max(point_to_geodesic0(complex(gamma(q)), xm, xp) for q in stations)
        if off_axis > AXIS_TOL:
            raise ConvergenceError("образ точки оси ушёл с оси", word=rep.word, off=off_axis)
        v = TangentVector(foot, direction)
        seg = (metric or ConformalMetric()).integrate(v, length0)
        return ClosedGeodesic(rep, gamma, (xm, xp), float(length0), seg, float(np.ptp(lengths)))
    geometry = geometry or BoundaryGeometry(metric)
    A = metric.equivalence_constant()
    axis = geometry.connect_boundary(xm, xp, window=0.5 * A * length0 + 2.0)
    mid = 0.5 * axis.duration
    stations = axis.at(np.linspace(mid - 0.5 * length0, mid, n_slide))[0]
    lengths = []
    for q in np.atleast_1d(stations):
        lengths.append(metric.dist(complex(q), complex(gamma(complex(q)))))
    variation = float(np.ptp(lengths))
    if variation > AXIS_TOL:
        raise ConvergenceError("ось класса неустойчива: длина зависит от точки", word=rep.word, variation=variation)
    q = complex(np.atleast_1d(stations)[0])
    seg = metric.connect(q, complex(gamma(q)))
    return ClosedGeodesic(rep, gamma, (xm, xp), float(min(lengths)), seg, variation)


def displacement_minimum(rep: ConjClassRep, metric: ConformalMetric = None) -> float:
    """min_q d(q, γq) по перпендикуляру к оси g0 через её основание: g-ось его пересекает"""
    gamma = rep.element()
    foot, direction = geodesic_foot(*gamma.fixed_points())
    dist = dist0 if metric is None or metric.is_flat else metric.dist
    reach = 2.0 * (1.0 if metric is None else metric.equivalence_constant())

    def displacement(u):
        q, _ = flow0(foot, direction + 0.5 * np.pi, u)
        return float(dist(complex(q), complex(gamma(complex(q)))))

    res = minimize_scalar(displacement, bounds=(-reach, reach), method='bounded', options={'xatol': 1e-10})
    if not res.success:
        raise ConvergenceError("минимизация смещения не сошлась", word=rep.word, message=res.message)
    return float(res.fun)


# --- перечисление осей, пересекающих P ---

def orbit_radius_for(T: float) -> float:
    """Смещение 0 элементом с длиной <= T, ось которого пересекает P"""
    return 2.0 * math.asinh(math.cosh(CIRCUMRADIUS) * math.sinh(0.5 * T))


def _keys(a, b) -> tuple:
    z = b / np.conj(a)
    kx = np.floor(z.real / KEY_STEP).astype(np.int64)
    ky = np.floor(z.imag / KEY_STEP).astype(np.int64)
    return kx, ky


def _pack(kx, ky):
    return ((kx + KEY_OFFSET) << 31) | (ky + KEY_OFFSET)


def _hits(sorted_keys: np.ndarray, keys: np.ndarray) -> np.ndarray:
    if sorted_keys.size == 0:
        return np.zeros(keys.shape, bool)
    pos = np.clip(np.searchsorted(sorted_keys, keys), 0, sorted_keys.size - 1)
    return sorted_keys[pos] == keys


def _seen(sorted_keys, kx, ky) -> np.ndarray:
    out = np.zeros(kx.shape, bool)
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            out |= _hits(sorted_keys, _pack(kx + dx, ky + dy))
    return out


def _unique_points(kx, ky) -> np.ndarray:
    """Индексы различных точек орбиты среди кандидатов (соседние ячейки - одна точка)"""
    keys = _pack(kx, ky)
    uniq, first = np.unique(keys, return_index=True)
    ux, uy = kx[first], ky[first]
    drop = np.zeros(uniq.size, bool)
    for dx, dy in ((0, 1), (1, -1), (1, 0), (1, 1)):
        target = _pack(ux + dx, uy + dy)
        pos = np.clip(np.searchsorted(uniq, target), 0, uniq.size - 1)
        hit = (uniq[pos] == target) & ~drop
        drop[pos[hit]] = True
    return first[~drop]


def _chords(xm, xp) -> tuple:
    """Хорды осей в P; стороны 0..3 замкнуты, 4..7 открыты"""
    offsets = np.where(np.arange(N_LETTERS) < N_LETTERS // 2, SIDE_OFFSET + HALF_OPEN, SIDE_OFFSET - HALF_OPEN)
    t_in, t_out, hit = clip_chords(xm, xp, SIDE_NORMALS, offsets)
    a, b = np.exp(1j * np.atleast_1d(xm)), np.exp(1j * np.atleast_1d(xp))
    k_in = a + t_in * (b - a)
    k_out = a + t_out * (b - a)
    exits = np.argmax(np.real(np.multiply.outer(k_out, np.conj(SIDE_NORMALS))), axis=-1)
    length = np.where(hit, klein_dist(k_in, k_out), 0.0)
    return hit & (length > 0), from_klein(k_in), length, exits


@dataclass
class AxisCandidates:
    a: np.ndarray
    b: np.ndarray
    xm: np.ndarray
    xp: np.ndarray
    z_in: np.ndarray
    chord: np.ndarray
    exits: np.ndarray
    levels: int
    elements: int
    radius: float


def axis_candidates(T_len: float, L_cap: int = 64, max_elements: int = 8_000_000) -> AxisCandidates:
    """
    Все γ ≠ 1 с длиной сдвига <= T_len и осью через P. BFS по графу Кэли с отсечением
    d0(0, γ0) <= R(T_len); уникальность по квантованной точке орбиты γ0.
    """
    R = orbit_radius_for(T_len)
    if R > MAX_ORBIT_RADIUS:
        raise ResourceError("радиус шара орбиты выходит за предел точности ключей", R=R, limit=MAX_ORBIT_RADIUS)
    trace_cap = math.cosh(0.5 * T_len) * (1.0 + 1e-12)
    logger.info(f"🚀 Поиск осей: T={T_len:.3f}, радиус орбиты {R:.3f}")
    known = _pack(*_keys(np.array([1.0 + 0j]), np.array([0j])))
    frontier = (np.array([1.0 + 0j]), np.array([0j]), np.array([-1]))
    found = {k: [] for k in ('a', 'b', 'xm', 'xp', 'z_in', 'chord', 'exits')}
    total, level = 1, 0
    while frontier[0].size:
        if level >= L_cap:
            raise ExhaustivenessError("BFS не завершился за L_cap уровней: нужен больший cap", L_cap=L_cap, R=R)
        level += 1
        next_a, next_b, next_last = [], [], []
        fa, fb, fl = frontier
        for start in range(0, fa.size, CHUNK):
            na, nb, letters, _ = expand_words(fa[start:start + CHUNK], fb[start:start + CHUNK], fl[start:start + CHUNK])
            inside = dist0(0j, su_apply(na, nb, 0j)) <= R + 1e-9
            na, nb, letters = na[inside], nb[inside], letters[inside]
            kx, ky = _keys(na, nb)
            fresh = ~_seen(known, kx, ky)
            na, nb, letters, kx, ky = na[fresh], nb[fresh], letters[fresh], kx[fresh], ky[fresh]
            keep = _unique_points(kx, ky)
            na, nb, letters = na[keep], nb[keep], letters[keep]
            known = np.sort(np.concatenate([known, _pack(kx[keep], ky[keep])]))
            next_a.append(na)
            next_b.append(nb)
            next_last.append(letters)
            short = np.abs(np.real(na)) <= trace_cap
            if np.any(short):
                xm, xp = fixed_points(na[short], nb[short])
                xm, xp = np.atleast_1d(xm), np.atleast_1d(xp)
                ok, z_in, chord, exits = _chords(xm, xp)
                for key, val in (('a', na[short]), ('b', nb[short]), ('xm', xm), ('xp', xp),
                                 ('z_in', z_in), ('chord', chord), ('exits', exits)):
                    found[key].append(val[ok])
        frontier = (np.concatenate(next_a), np.concatenate(next_b), np.concatenate(next_last))
        total += frontier[0].size
        if frontier[0].size:
            logger.info(f"   уровень {level}: {frontier[0].size} элементов (всего {total})")
        if total > max_elements:
            raise ResourceError("шар орбиты слишком велик", elements=total, limit=max_elements)
    arrays = {k: (np.concatenate(v) if v else np.array([])) for k, v in found.items()}
    logger.info(f"✅ Осей через P: {arrays['a'].size} за {level} уровней, элементов {total}")
    return AxisCandidates(arrays['a'].astype(complex), arrays['b'].astype(complex), arrays['xm'], arrays['xp'],
                          arrays['z_in'].astype(complex), arrays['chord'], arrays['exits'].astype(int),
                          level, total, R)


@dataclass
class PeriodicOrbit:
    """Ориентированный примитивный класс как цикл хорд в P"""
    word: tuple
    length0: float
    chords: list
    length_g: float = None
    axis: GeodesicSegment = field(default=None, repr=False)

    @property
    def length(self) -> float:
        return self.length0 if self.length_g is None else self.length_g


def _primitive(c: AxisCandidates) -> np.ndarray:
    """Маска примитивных: на одной оси остаётся элемент с наименьшим сдвигом"""
    feats = np.column_stack([np.cos(c.xm), np.sin(c.xm), np.cos(c.xp), np.sin(c.xp)])
    trans = 2.0 * np.arccosh(np.maximum(np.abs(np.real(c.a)), 1.0))
    keep = np.ones(c.a.size, bool)
    if c.a.size < 2:
        return keep
    for i, j in cKDTree(feats).query_pairs(MATCH_TOL, output_type='ndarray'):
        if trans[i] < trans[j]:
            keep[j] = False
        else:
            keep[i] = False
    return keep


def link_cycles(c: AxisCandidates) -> tuple:
    """Циклы хорд: после выхода через сторону j ось переносится T_j^{-1}. Возвращает (орбиты, диагностика)"""
    prim = np.flatnonzero(_primitive(c))
    gens = bolza_generators()
    feats = np.column_stack([np.cos(c.xm[prim]), np.sin(c.xm[prim]), np.cos(c.xp[prim]), np.sin(c.xp[prim])])
    tree = cKDTree(feats) if prim.size else None
    succ = np.full(prim.size, -1)
    for k, i in enumerate(prim):
        g = gens[int(c.exits[i])]
        ga, gb = su_inv(g.a, g.b)
        na, nb = su_mul(*su_mul(ga, gb, c.a[i], c.b[i]), g.a, g.b)
        xm, xp = fixed_points(na, nb)
        d, j = tree.query([math.cos(xm), math.sin(xm), math.cos(xp), math.sin(xp)], distance_upper_bound=MATCH_TOL)
        if np.isfinite(d):
            succ[k] = j
    missing = int(np.sum(succ < 0))
    orbits, seen = [], np.zeros(prim.size, bool)
    worst_unfold, trace_mismatch = 0.0, 0
    for k in range(prim.size):
        if seen[k] or succ[k] < 0:
            continue
        cycle, m = [], k
        while m >= 0 and not seen[m]:
            seen[m] = True
            cycle.append(m)
            m = succ[m]
        if m != k:
            continue
        idx = prim[cycle]
        half_trace = abs(c.a[idx[0]].real)
        length0 = 2.0 * math.acosh(max(half_trace, 1.0))
        worst_unfold = max(worst_unfold, abs(float(np.sum(c.chord[idx])) - length0) / length0)
        chords = [(complex(c.z_in[i]), float(direction0_boundary(complex(c.z_in[i]), c.xp[i])), float(c.chord[i]))
                  for i in idx]
        # слово цикла - последовательность сторон выхода
        word = canonical_word(tuple(int(c.exits[i]) for i in idx))
        if abs(abs(word_element(word).a.real) - half_trace) > 1e-8 * half_trace:
            trace_mismatch += 1
        orbits.append(PeriodicOrbit(word, length0, chords))
    orbits.sort(key=lambda o: (o.length0, o.word))
    diagnostics = {'candidates': int(c.a.size), 'primitive': int(prim.size), 'missing_successors': missing,
                   'unfolding_defect': float(worst_unfold), 'trace_mismatch': trace_mismatch,
                   'closure_ok': missing == 0}
    return orbits, diagnostics


def periodic_orbits(T: float, metric: ConformalMetric = None, geometry: BoundaryGeometry = None,
                    L_cap: int = 64) -> tuple:
    """Примитивные ориентированные классы с длиной <= T и диагностика полноты"""
    A = 1.0 if metric is None else metric.equivalence_constant()
    cand = axis_candidates(A * T, L_cap)
    orbits, diag = link_cycles(cand)
    if not diag['closure_ok']:
        raise ExhaustivenessError("циклы хорд не замкнуты: кандидаты неполны", **diag)
    if metric is not None and not metric.is_flat:
        for orb in orbits:
            closed = closed_geodesic(ConjClassRep(orb.word), metric, geometry)
            orb.length_g, orb.axis = closed.length_g, closed.axis_segment
    orbits = [o for o in orbits if o.length <= T]
    diag.update(R_orbit=cand.radius, levels=cand.levels, elements=cand.elements,
                margin=int(L_cap - cand.levels), classes=len(orbits))
    return orbits, diag


def count_PT(T: float, metric: ConformalMetric = None, geometry: BoundaryGeometry = None, L_cap: int = 64,
             orbits=None) -> tuple:
    """P(T) - число замкнутых геодезических периода <= T"""
    A = 1.0 if metric is None else metric.equivalence_constant()
    if T < SYSTOLE / A - 1e-9:
        # короче систолы / A замкнутых g-геодезических нет
        return 0, {'classes': 0, 'closure_ok': True, 'count': 0}
    if orbits is None:
        orbits, diag = periodic_orbits(T, metric, geometry, L_cap)
    else:
        diag = {}
    count = sum(1 for o in orbits if o.length <= T)
    diag = dict(diag, count=count)
    logger.info(f"📊 P({T:g}) = {count}")
    return count, diag


def counting_curve(T_list, metric: ConformalMetric = None, geometry: BoundaryGeometry = None, L_cap: int = 64) -> dict:
    """P(T) на сетке и наклон log P(T) по T"""
    T_list = sorted(float(T) for T in T_list)
    orbits, diag = periodic_orbits(T_list[-1], metric, geometry, L_cap)
    rows = [{'T': T, 'P': count_PT(T, metric, geometry, L_cap, orbits)[0]} for T in T_list]
    usable = [r for r in rows if r['P'] > 0]
    slope = stderr = None
    if len(usable) >= 2:
        fit = linregress([r['T'] for r in usable], [math.log(r['P']) for r in usable])
        slope, stderr = float(fit.slope), float(fit.stderr)
    return {'rows': rows, 'slope': slope, 'stderr': stderr, 'diagnostics': diag, 'orbits': orbits}


def _orbit_samples(orb: PeriodicOrbit, n: int) -> tuple:
    """n векторов замкнутой геодезической, равномерно по периоду, в P"""
    if orb.axis is not None:
        z, a = orb.axis.at(np.arange(n) * orb.axis.duration / n)
        return fold_vectors(z, a)
    lengths = np.array([c[2] for c in orb.chords])
    starts = np.concatenate([[0.0], np.cumsum(lengths)[:-1]])
    times = np.arange(n) * lengths.sum() / n
    k = np.clip(np.searchsorted(starts, times, side='right') - 1, 0, lengths.size - 1)
    z_in = np.array([c[0] for c in orb.chords], complex)[k]
    dirs = np.array([c[1] for c in orb.chords])[k]
    z, a = flow0(z_in, dirs, times - starts[k])
    return np.atleast_1d(z), np.atleast_1d(a)


def separation_check(orbits, eps_inj: float = 0.5 * SYSTOLE, n_pairs: int = 20, samples: int = 256) -> dict:
    """Пары классов с близкими длинами: при любом сдвиге начала орбиты в T¹M расходятся больше чем на ε_inj"""
    pairs = []
    for i in range(len(orbits)):
        for j in range(i + 1, len(orbits)):
            if len(pairs) < n_pairs and abs(orbits[i].length - orbits[j].length) < eps_inj:
                pairs.append((i, j))
    ball = enumerate_ball(2)
    rows = []
    for i, j in pairs:
        zi, ai = _orbit_samples(orbits[i], samples)
        zj, aj = _orbit_samples(orbits[j], samples)
        lz = su_apply(ball.a[:, None], ball.b[:, None], zj[None, :])
        la = canonical_angle(aj[None, :] + np.angle(su_derivative(ball.a[:, None], ball.b[:, None], zj[None, :])))
        best = math.inf
        for s in range(samples):
            # расстояние в T¹M: точка и направление
            gap = np.maximum(dist0(zi[None, :], np.roll(lz, -s, axis=1)),
                             np.abs(angle_difference(ai[None, :], np.roll(la, -s, axis=1))))
            d = np.min(gap, axis=0)
            best = min(best, float(np.max(d)))
        rows.append({'pair': [list(orbits[i].word), list(orbits[j].word)], 'separation': best,
                     'passed': best > eps_inj})
    passed = all(r['passed'] for r in rows)
    logger.info(f"{'✅' if passed else '❌'} Разделение орбит: пар {len(rows)}, ε_inj = {eps_inj:.3f}")
    return {'eps_inj': float(eps_inj), 'pairs': rows, 'passed': passed}


# --- разбиение T¹M и эмпирические меры ---

@dataclass(frozen=True)
class TangentBins:
    """Секторы по arg z × кольца по cosh d0(0,z) × секторы угла вектора"""
    n_sectors: int = 8
    n_rings: int = 8
    n_angles: int = 32

    @property
    def n_cells(self) -> int:
        return self.n_sectors * self.n_rings

    @property
    def size(self) -> int:
        return self.n_cells * self.n_angles

    def cell(self, z) -> np.ndarray:
        z = np.asarray(z, complex)
        sector = np.floor(canonical_angle(np.angle(z)) / (2.0 * np.pi / self.n_sectors)).astype(int)
        ch = np.cosh(dist0(0j, z))
        ring = np.floor((ch - 1.0) / (math.cosh(CIRCUMRADIUS) - 1.0) * self.n_rings).astype(int)
        return np.clip(sector, 0, self.n_sectors - 1) * self.n_rings + np.clip(ring, 0, self.n_rings - 1)

    def index(self, z, angle) -> np.ndarray:
        ang = np.floor(canonical_angle(np.asarray(angle, float)) / (2.0 * np.pi / self.n_angles)).astype(int)
        return self.cell(z) * self.n_angles + np.clip(ang, 0, self.n_angles - 1)

    def geometry_hash(self) -> str:
        payload = json.dumps({'sectors': self.n_sectors, 'rings': self.n_rings, 'angles': self.n_angles,
                              'radius': CIRCUMRADIUS}, sort_keys=True)
        return hashlib.sha256(payload.encode('utf-8')).hexdigest()[:16]


@dataclass
class EmpiricalMeasure:
    bins: TangentBins
    masses: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        total = float(np.sum(self.masses))
        if total <= 0 or np.any(self.masses < 0):
            raise SolverError("эмпирическая мера пуста или отрицательна")
        self.masses = self.masses / total

    @classmethod
    def from_vectors(cls, bins: TangentBins, z, angles, weights=None, **meta) -> 'EmpiricalMeasure':
        idx = bins.index(z, angles)
        return cls(bins, np.bincount(idx, weights=weights, minlength=bins.size).astype(float), dict(meta))

    def support(self) -> int:
        return int(np.sum(self.masses > 0))


def total_variation(m1: EmpiricalMeasure, m2: EmpiricalMeasure) -> float:
    if m1.bins.geometry_hash() != m2.bins.geometry_hash():
        raise ConfigError("разная геометрия бинов у сравниваемых мер")
    return 0.5 * float(np.sum(np.abs(m1.masses - m2.masses)))


def fold_vectors(z, angles, metric: ConformalMetric = None):
    """Перенос векторов в P с поправкой угла"""
    z = np.asarray(z, complex)
    zr, ga, gb = reduce_many(z)
    return zr, canonical_angle(np.asarray(angles) + np.angle(su_derivative(ga, gb, z)))


def flow_fold(z, angles, t: float, metric: ConformalMetric = None):
    """f_t на T¹M: шаги <= FOLD_STEP с перескладыванием в P"""
    z = np.asarray(z, complex).copy()
    angles = np.asarray(angles, float).copy()
    if t <= 0:
        return z, angles
    if metric is not None and not metric.is_flat:
        out_z, out_a = np.empty(z.shape, complex), np.empty(angles.shape)
        for i, (zz, aa) in enumerate(zip(z.ravel(), angles.ravel())):
            seg = metric.integrate(TangentVector(complex(zz), float(aa)), t)
            out_z.flat[i], out_a.flat[i] = seg.end, seg.end_angle
        return fold_vectors(out_z, out_a)
    remaining = float(t)
    while remaining > 1e-15:
        h = min(FOLD_STEP, remaining)
        z, angles = flow0(z, angles, h)
        z, angles = fold_vectors(z, angles)
        remaining -= h
    return z, angles


def flow_invariance(z, angles, bins: TangentBins, t: float = 1.0, metric: ConformalMetric = None) -> dict:
    """
    Инвариантность выборки относительно f_t: гистограммы по бинам T¹M до и после потока,
    z_k = (c1 - c0)/√(c0 + c1) по заполненным бинам
    """
    c0 = np.bincount(bins.index(z, angles), minlength=bins.size)
    fz, fa = flow_fold(z, angles, t, metric)
    c1 = np.bincount(bins.index(fz, fa), minlength=bins.size)
    filled = (c0 + c1) > 0
    zk = (c1 - c0)[filled] / np.sqrt((c0 + c1)[filled])
    report = {
        't': float(t), 'bins': int(filled.sum()),
        'within_2sigma': float(np.mean(np.abs(zk) <= 2.0)),
        'chi2_per_bin': float(np.mean(zk ** 2)),
        'max_z': float(np.max(np.abs(zk))),
    }
    logger.info(f"📊 Инвариантность выборки при f_{t:g}: в пределах 2σ {report['within_2sigma']:.3f} "
                f"бинов, χ²/бин {report['chi2_per_bin']:.2f}")
    return report


def support_coverage(z, angles, bins: TangentBins) -> dict:
    populated = EmpiricalMeasure.from_vectors(bins, z, angles).support()
    return {'populated': populated, 'bins': bins.size, 'full': populated == bins.size}


def _orbit_points(orb: PeriodicOrbit, per_unit: int = 64) -> tuple:
    zs, angs = [], []
    for z_in, direction, length in orb.chords:
        n = max(2, int(math.ceil(length * per_unit)))
        tt = (np.arange(n) + 0.5) * length / n
        p, a = flow0(z_in, direction, tt)
        zs.append(np.atleast_1d(p))
        angs.append(np.atleast_1d(a))
    return np.concatenate(zs), np.concatenate(angs)


def mu_T(T: float, bins: TangentBins, orbits, metric: ConformalMetric = None, per_unit: int = 64) -> EmpiricalMeasure:
    """Σ по классам с длиной <= T равномерной по длине меры на подъёме, вес 1/(ℓ·P(T))"""
    chosen = [o for o in orbits if o.length <= T]
    if not chosen:
        raise ConfigError("mu_T: нет замкнутых геодезических с длиной <= T", T=T)
    masses = np.zeros(bins.size)
    for orb in chosen:
        if orb.axis is None:
            z, a = _orbit_points(orb, per_unit)
        else:
            seg = orb.axis
            n = max(2, int(math.ceil(seg.duration * per_unit)))
            z, a = seg.at((np.arange(n) + 0.5) * seg.duration / n)
            z, a = fold_vectors(z, a)
        counts = np.bincount(bins.index(z, a), minlength=bins.size)
        masses += counts / counts.sum() / len(chosen)
    return EmpiricalMeasure(bins, masses, {'T': float(T), 'classes': len(chosen)})


# --- сжатие и перемешивание ---

def stable_pair_curve(v: TangentVector, r: float, t_grid) -> np.ndarray:
    """d0(f_t v, f_t w) для w = v·n⁺_r на устойчивом орицикле v (поток g0)"""
    w = stable_shift(v, r)
    pv, _ = flow0(v.base, v.angle, t_grid)
    pw, _ = flow0(w.base, w.angle, t_grid)
    return np.atleast_1d(dist0(pv, pw)).astype(float)


def contraction_stats(samples, t_grid, R: float, metric: ConformalMetric = None,
                      geometry: BoundaryGeometry = None, n_pairs: int = 200, seed: int = 0) -> dict:
    """Медианная кривая d(f_t w, f_t v) для w на устойчивом орицикле v в пределах R"""
    rng = np.random.default_rng(seed)
    t_grid = np.asarray(sorted(float(t) for t in t_grid))
    picks = rng.choice(len(samples), size=min(n_pairs, len(samples)), replace=False)
    curves, failures = [], 0
    flat = metric is None or metric.is_flat
    for i in picks:
        v = samples[i].v
        r = float(rng.uniform(0.5, 1.0) * R)
        if flat:
            curves.append(stable_pair_curve(v, r, t_grid))
            continue
        try:
            curves.append(_perturbed_contraction(v, r, t_grid, metric, geometry))
        except SolverError as e:
            failures += 1
            logger.warning(f"⚠️ Построение орицикла не удалось: {e}")
    if not curves:
        raise SolverError("contraction_stats: нет ни одной пары")
    median = np.median(np.array(curves), axis=0)
    positive = median > 0
    slope = None
    if np.sum(positive) >= 2:
        slope = float(linregress(t_grid[positive], np.log(median[positive])).slope)
    report = {'t': t_grid.tolist(), 'median': median.tolist(), 'slope': slope, 'pairs': len(curves),
              'failures': failures, 'R': float(R)}
    logger.info(f"📊 Сжатие вдоль W^ss: наклон медианы {slope}, пар {len(curves)}, отказов {failures}")
    return report


def _perturbed_contraction(v: TangentVector, r: float, t_grid, metric: ConformalMetric,
                           geometry: BoundaryGeometry) -> np.ndarray:
    geometry = geometry or BoundaryGeometry(metric)
    xi = geometry.ray_to_boundary(v)
    y, _ = flow0(v.base, v.angle + 0.5 * np.pi, r)
    beta = geometry.busemann(v.base, y, xi).value
    u = geometry.direction_to(y, xi, boundary=True)
    if beta >= 0:
        seg = metric.integrate(u, beta)
        w = TangentVector(seg.end, seg.end_angle)
    else:
        seg = metric.integrate(u.reversed(), -beta)
        w = TangentVector(seg.end, canonical_angle(seg.end_angle + np.pi))
    cv = metric.integrate(v, float(t_grid[-1]))
    cw = metric.integrate(w, float(t_grid[-1]))
    pv, _ = cv.at(t_grid)
    pw, _ = cw.at(t_grid)
    return np.array([metric.dist(complex(a), complex(b)) if a != b else 0.0 for a, b in zip(pv, pw)])


def observable(name: str, bins: TangentBins = None):
    """Именованные наблюдаемые на T¹M: angle_cos, angle_sin, cell:<k>, radius, const:<c>"""
    bins = bins or TangentBins()
    if name == 'angle_cos':
        return lambda z, a: np.cos(a)
    if name == 'angle_sin':
        return lambda z, a: np.sin(a)
    if name == 'radius':
        return lambda z, a: dist0(0j, z)
    kind, _, arg = name.partition(':')
    if kind == 'cell' and arg.isdigit() and int(arg) < bins.n_cells:
        k = int(arg)
        return lambda z, a: (bins.cell(z) == k).astype(float)
    if kind == 'const':
        try:
            c = float(arg)
        except ValueError:
            raise ConfigError(f"неизвестная наблюдаемая: {name}")
        return lambda z, a: np.full(np.shape(z), c)
    raise ConfigError(f"неизвестная наблюдаемая: {name}")


def mixing_correlation(samples, phi: str, psi: str, t_grid, metric: ConformalMetric = None,
                       n_boot: int = 200, seed: int = 0) -> dict:
    """C(t) = E[φ∘f_t·ψ] - E[φ]E[ψ] по выборке Хопфа, σ(t) - бутстреп"""
    rng = np.random.default_rng(seed)
    f_phi, f_psi = observable(phi), observable(psi)
    z = np.array([s.v.base for s in samples], complex)
    a = np.array([s.v.angle for s in samples], float)
    psi_v = f_psi(z, a)
    boot_seeds = rng.integers(0, 2 ** 32, size=n_boot)
    rows = []
    current_z, current_a, current_t = z, a, 0.0
    for t in sorted(float(t) for t in t_grid):
        current_z, current_a = flow_fold(current_z, current_a, t - current_t, metric)
        current_t = t
        phi_t = f_phi(current_z, current_a)
        c = float(np.mean(phi_t * psi_v) - np.mean(phi_t) * np.mean(psi_v))
        bc = np.empty(n_boot)
        for k, bs in enumerate(boot_seeds):
            idx = np.random.default_rng(int(bs)).integers(0, z.size, size=z.size)
            pb, qb = phi_t[idx], psi_v[idx]
            bc[k] = np.mean(pb * qb) - np.mean(pb) * np.mean(qb)
        rows.append({'t': t, 'C': c, 'sigma': float(np.std(bc))})
    t_star = None
    for k in range(len(rows)):
        if all(abs(r['C']) < 2.0 * r['sigma'] or r['sigma'] == 0.0 and r['C'] == 0.0 for r in rows[k:]):
            t_star = rows[k]['t']
            break
    logger.info(f"📊 Корреляции {phi} × {psi}: t* = {t_star}")
    return {'phi': phi, 'psi': psi, 'rows': rows, 't_star': t_star, 'samples': int(z.size)}
