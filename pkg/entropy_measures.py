"""
Меры Паттерсона-Салливана и Боуэна-Маргулиса.

Частичные ряды Пуанкаре по шарам группы, критический показатель через рост орбиты,
атомарные граничные меры ν_{p,x,s}, сетка произведения e^{hβ_p}·ν_p⊗ν_p и выборка
меры максимальной энтропии в координатах Хопфа.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import linregress

from lab_errors import ConfigError, ResourceError, SolverError, GeometryError
from poincare_disk import (
    TangentVector, dist0, flow0, direction0, direction0_boundary, ray_end0, canonical_angle,
    from_klein, klein_dist, clip_chords, gromov0, su_apply, su_derivative,
)
from bolza_group import (
    SYSTOLE, CIRCUMRADIUS, SIDE_NORMALS, SIDE_OFFSET, N_LETTERS, GroupBall, IsometryElement,
    reduce_many, in_domain, enumerate_ball,
)
from conformal_metric import ConformalMetric
from boundary_geometry import BoundaryGeometry, arc_contains

logger = logging.getLogger(__name__)

MASS_FLOOR = 20
LADDER_OFFSETS = (0.1, 0.05, 0.02)
MIN_WINDOW = 1.0
MASS_TOL = 1e-12
HOPF_RETRIES = 5
BASE_TOL = 1e-9
PAIR_CHUNK = 2048


def _orbit_distances(metric: ConformalMetric, p: complex, points: np.ndarray) -> np.ndarray:
    if metric is None or metric.is_flat:
        return dist0(complex(p), points)
    return metric.dist_many(complex(p), points)


def poincare_partial(s: float, p, q, ball: GroupBall, metric: ConformalMetric = None) -> float:
    """Σ_{γ∈B} e^{-s·d(p, γq)}"""
    if s <= 0:
        raise ConfigError("poincare_partial: показатель должен быть положительным", s=s)
    d = _orbit_distances(metric, p, ball.orbit(q))
    return float(np.sum(np.exp(-s * d)))


# --- критический показатель ---

@dataclass
class GrowthFit:
    h_hat: float
    stderr: float
    radii: list
    counts: list
    window: tuple
    sampled: bool

    def to_dict(self) -> dict:
        return {'h_hat': self.h_hat, 'stderr': self.stderr, 'radii': self.radii, 'counts': self.counts,
                'window': list(self.window), 'sampled': self.sampled}


def orbit_growth(p, ball: GroupBall, metric: ConformalMetric = None, n_radii: int = 25,
                 mc_samples: int = 2000, seed: int = 0) -> GrowthFit:
    """
    Наклон log #{γ : d(p, γp) <= R} по R в окне [систола, truncation_radius - 2·d0(p,0)].
    Для ε ≠ 0 расстояния g считаются на случайной подвыборке с весом N/n.
    """
    p = complex(p)
    A = 1.0 if metric is None else metric.equivalence_constant()
    lo = SYSTOLE
    hi = (ball.truncation_radius - 2.0 * dist0(p, 0j)) / A
    if hi - lo < MIN_WINDOW:
        raise ResourceError("окно регрессии слишком узкое: нужен шар большего радиуса",
                            window=(lo, hi), truncation_radius=ball.truncation_radius)
    d0 = dist0(p, ball.orbit(p))
    sampled = metric is not None and not metric.is_flat
    if sampled:
        candidates = np.flatnonzero(d0 <= A * hi)
        rng = np.random.default_rng(seed)
        n = min(mc_samples, candidates.size)
        pick = np.sort(rng.choice(candidates, size=n, replace=False))
        d = np.sort(metric.dist_many(p, ball.orbit(p)[pick]))
        weight = candidates.size / n
    else:
        d = np.sort(d0)
        weight = 1.0
    radii = np.linspace(lo, hi, n_radii)
    counts = weight * np.searchsorted(d, radii, side='right')
    if np.any(counts <= 0):
        raise ResourceError("пустые счётчики в окне регрессии", window=(lo, hi))
    fit = linregress(radii, np.log(counts))
    return GrowthFit(float(fit.slope), float(fit.stderr), [float(r) for r in radii],
                     [float(c) for c in counts], (float(lo), float(hi)), sampled)


def critical_exponent(p, ball: GroupBall, metric: ConformalMetric = None, **kwargs) -> tuple:
    """(h_hat, stderr) по росту орбиты"""
    fit = orbit_growth(p, ball, metric, **kwargs)
    logger.info(f"📊 Критический показатель: h = {fit.h_hat:.4f} ± {fit.stderr:.4f} "
                f"(окно R ∈ [{fit.window[0]:.2f}, {fit.window[1]:.2f}])")
    return fit.h_hat, fit.stderr


# --- атомарные граничные меры ---

def angular_bins(n_bins: int) -> np.ndarray:
    return np.linspace(0.0, 2.0 * np.pi, n_bins + 1)


def bin_index(angles, n_bins: int) -> np.ndarray:
    idx = np.floor(canonical_angle(np.asarray(angles, float)) / (2.0 * np.pi / n_bins)).astype(int)
    return np.clip(idx, 0, n_bins - 1)


def bin_centers(n_bins: int) -> np.ndarray:
    return (np.arange(n_bins) + 0.5) * 2.0 * np.pi / n_bins


@dataclass
class AtomicBoundaryMeasure:
    """ν_{p,x,s}: атомы в направлениях орбиты γx, видимых из p; reach - d0(p, γx) по атомам"""
    angles: np.ndarray
    weights: np.ndarray
    p: complex
    x: complex
    s: float
    L: float
    normalizer: float
    dist_px: float
    meta: dict = field(default_factory=dict)
    reach: np.ndarray = None

    def __post_init__(self):
        if self.reach is not None and np.shape(self.reach) != np.shape(self.weights):
            raise SolverError("reach должен задаваться для каждого атома")
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights < 0):
            raise SolverError("веса атомов должны быть конечными и неотрицательными")
        total = self.total_mass
        lo, hi = math.exp(-self.s * self.dist_px), math.exp(self.s * self.dist_px)
        if not lo * (1.0 - MASS_TOL) <= total <= hi * (1.0 + MASS_TOL):
            raise SolverError("нарушены границы массы меры", total=total, bounds=(lo, hi))

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.weights))

    def mass_in(self, arcs, weights=None) -> float:
        w = self.weights if weights is None else weights
        return float(np.sum(w[arc_contains(arcs, self.angles)]))

    def binned(self, n_bins: int) -> np.ndarray:
        return np.bincount(bin_index(self.angles, n_bins), weights=self.weights, minlength=n_bins)

    def binned_counts(self, n_bins: int) -> np.ndarray:
        return np.bincount(bin_index(self.angles, n_bins), minlength=n_bins)

    def to_rows(self, n_bins: int) -> list:
        edges = angular_bins(n_bins)
        masses = self.binned(n_bins)
        counts = self.binned_counts(n_bins)
        return [{'bin': i, 'lo': float(edges[i]), 'hi': float(edges[i + 1]), 'mass': float(masses[i]),
                 'atoms': int(counts[i])} for i in range(n_bins)]


def ps_measure(p, x, s: float, ball: GroupBall, h_hat: float, metric: ConformalMetric = None,
               geometry: BoundaryGeometry = None, normalizer: float = None) -> AtomicBoundaryMeasure:
    """
    ν_{p,x,s} = Σ_γ e^{-s·d(p,γx)} δ_{ξ(γx)} / P(s,x,x), ξ(γx) - конец луча из p через γx.
    normalizer подменяет P(s,x,x) (для мер на сдвинутых шарах).
    """
    p, x = complex(p), complex(x)
    if s <= h_hat:
        raise ConfigError("ps_measure: s должно быть строго больше h_hat", s=s, h_hat=h_hat)
    points = ball.orbit(x)
    if metric is None or metric.is_flat:
        d = dist0(p, points)
        angles = np.where(d > BASE_TOL, ray_end0(p, direction0(p, points)), 0.0)
        dist_px = dist0(p, x)
    else:
        geometry = geometry or BoundaryGeometry(metric)
        d = np.empty(points.size)
        angles = np.empty(points.size)
        for i, q in enumerate(points):
            if abs(q - p) < BASE_TOL:
                d[i], angles[i] = 0.0, 0.0
                continue
            seg = metric.connect(p, complex(q))
            d[i] = seg.duration
            angles[i] = geometry.ray_to_boundary(seg.initial)
        dist_px = metric.dist(p, x) if p != x else 0.0
    if normalizer is None:
        normalizer = poincare_partial(s, x, x, ball, metric)
    weights = np.exp(-s * d) / normalizer
    meta = {
        'atoms': int(points.size),
        'base_atoms': np.flatnonzero(d <= BASE_TOL).tolist(),
        'complete_radius': float(ball.truncation_radius - dist0(complex(su_apply(ball.a[0], ball.b[0], 0j)), p)
                                 - dist0(0j, x)),
    }
    nu = AtomicBoundaryMeasure(canonical_angle(angles), weights, p, x, float(s), float(ball.radius),
                               float(normalizer), float(dist_px), meta, dist0(p, points))
    logger.info(f"✅ Мера ПС: {points.size} атомов, s={s:.3f}, масса {nu.total_mass:.6f}")
    return nu


def equivariance_deviation(nu_p: AtomicBoundaryMeasure, nu_gp: AtomicBoundaryMeasure,
                           g: IsometryElement, n_bins: int) -> float:
    """max |ν_{γp}(γ·bin) - ν_p(bin)|; ν_{γp} строится на шаре γ·B"""
    inv = g.inverse()
    pulled = bin_index(inv.act_boundary(nu_gp.angles), n_bins)
    masses_gp = np.bincount(pulled, weights=_off_base(nu_gp), minlength=n_bins)
    masses_p = np.bincount(bin_index(nu_p.angles, n_bins), weights=_off_base(nu_p), minlength=n_bins)
    return float(np.max(np.abs(masses_gp - masses_p)))


def _off_base(nu: AtomicBoundaryMeasure) -> np.ndarray:
    """Веса без атомов в самой точке p: у них нет направления"""
    w = nu.weights.copy()
    w[nu.meta.get('base_atoms', [])] = 0.0
    return w


def tail_weights(nu: AtomicBoundaryMeasure, core_radius: float = 0.0, exponent: float = None) -> np.ndarray:
    """
    Веса без базовых атомов. core_radius > 0 оставляет только слой core_radius <= d0(p, γx) <= R_full,
    где R_full - радиус, внутри которого орбита в шаре полна. exponent пересчитывает веса
    к e^{-exponent·d}/P, d восстанавливается из самих весов.
    """
    w = _off_base(nu)
    if exponent is not None and exponent != nu.s:
        live = w > 0
        w[live] = (w[live] * nu.normalizer) ** (exponent / nu.s) / nu.normalizer
    if core_radius > 0:
        if nu.reach is None:
            raise ConfigError("отсечение ядра требует reach у атомов (мера из старого кэша?)")
        outer = nu.meta.get('complete_radius', math.inf)
        if outer <= core_radius:
            raise ResourceError("шар слишком мал для слоя вне ядра", core_radius=core_radius, complete_radius=outer)
        w[(nu.reach < core_radius) | (nu.reach > outer)] = 0.0
    return w


def _tail_counts(nu: AtomicBoundaryMeasure, weights: np.ndarray, n_bins: int) -> np.ndarray:
    return np.bincount(bin_index(nu.angles, n_bins), weights=(weights > 0).astype(float), minlength=n_bins)


def quasi_invariance_deviation(nu_p: AtomicBoundaryMeasure, nu_q: AtomicBoundaryMeasure, n_bins: int,
                               h_hat: float, geometry: BoundaryGeometry, core_radius: float = 0.0) -> dict:
    """
    max по бинам |log(ν_q/ν_p) + h·b_p(q, ξ_bin)|; бины с < MASS_FLOOR атомов исключаются.
    Обе меры берутся по общему набору атомов: слой вне ядра задаётся расстояниями от p.
    """
    if (nu_p.x, nu_p.s, nu_p.L) != (nu_q.x, nu_q.s, nu_q.L):
        raise ConfigError("меры должны иметь общие (x, s, L)")
    wp, wq = tail_weights(nu_p, core_radius), _off_base(nu_q)
    if wp.size == wq.size:
        common = (wp > 0) & (wq > 0)
        wp, wq = np.where(common, wp, 0.0), np.where(common, wq, 0.0)
    elif core_radius > 0:
        raise ConfigError("отсечение ядра требует мер на одном шаре", atoms_p=wp.size, atoms_q=wq.size)
    mp = np.bincount(bin_index(nu_p.angles, n_bins), weights=wp, minlength=n_bins)
    mq = np.bincount(bin_index(nu_q.angles, n_bins), weights=wq, minlength=n_bins)
    enough = (_tail_counts(nu_p, wp, n_bins) >= MASS_FLOOR) & (_tail_counts(nu_q, wq, n_bins) >= MASS_FLOOR)
    enough &= (mp > 0) & (mq > 0)
    centers = bin_centers(n_bins)
    devs, ratios = [], []
    for i in np.flatnonzero(enough):
        b = geometry.busemann(nu_p.p, nu_q.p, centers[i]).value
        devs.append(abs(math.log(mq[i] / mp[i]) + h_hat * b))
        ratios.append(mp[i] / mq[i])
    excluded = [int(i) for i in np.flatnonzero(~enough)]
    if excluded:
        logger.info(f"📋 Квазиинвариантность: исключено бинов {len(excluded)} из {n_bins}")
    if not devs:
        raise SolverError("квазиинвариантность: нет бинов с достаточной массой", n_bins=n_bins)
    # почленно e^{-s·d(p,γx)} <= e^{s·d(p,q)}·e^{-s·d(q,γx)}
    bound = math.exp(nu_p.s * geometry.metric.dist(nu_p.p, nu_q.p)) if nu_p.p != nu_q.p else 1.0
    return {
        'max_dev': float(max(devs)),
        'max_ratio': float(max(ratios)),
        'ratio_bound': float(bound),
        'bins_used': int(len(devs)),
        'bins_excluded': excluded,
    }


def shadow_samples(p, rng, n: int, d_range=(2.0, 8.0)) -> list:
    d = rng.uniform(*d_range, n)
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    pts, _ = flow0(complex(p), theta, d)
    return [complex(z) for z in np.atleast_1d(pts)]


def shadow_lemma_stats(nu_p: AtomicBoundaryMeasure, samples, rho: float, h_hat: float,
                       geometry: BoundaryGeometry) -> dict:
    """Регрессия log ν_p(тень B(x, ρ) из p) по d(p, x): наклон ≈ -h, разброс b_hat"""
    p = nu_p.p
    off_base = _off_base(nu_p)
    dists, masses = [], []
    for x in samples:
        arcs = geometry.shadow(complex(x), p, rho, boundary=False)
        d = geometry.metric.dist(p, complex(x)) if complex(x) != p else 0.0
        dists.append(d)
        # из p внутри шара видна вся граница, иначе атом в самой p направления не имеет
        masses.append(nu_p.mass_in(arcs, None if dist0(p, complex(x)) < rho else off_base))
    dists, masses = np.array(dists), np.array(masses)
    full = masses > 0
    if not np.any(full):
        raise SolverError("все тени пусты", rho=rho)
    ratio = masses[full] * np.exp(h_hat * dists[full])
    report = {
        'samples': int(len(masses)), 'empty': int(np.sum(~full)), 'rho': float(rho),
        'b_hat': float(max(np.max(ratio), 1.0 / np.min(ratio))),
        'slope': None, 'intercept': None, 'slope_stderr': None,
    }
    if np.sum(full) >= 3 and np.ptp(dists[full]) > 0:
        fit = linregress(dists[full], np.log(masses[full]))
        report.update(slope=float(fit.slope), intercept=float(fit.intercept), slope_stderr=float(fit.stderr))
        logger.info(f"📊 Лемма о тени: наклон {fit.slope:.3f} (ожидается {-h_hat:.3f}), b_hat={report['b_hat']:.2f}")
    return report


def s_ladder(p, x, h_hat: float, ball: GroupBall, n_bins: int, metric: ConformalMetric = None,
             geometry: BoundaryGeometry = None, q=None, offsets=LADDER_OFFSETS, core_radius: float = 0.0) -> dict:
    """Меры при s = h + δ (δ ↓) и L¹-расстояния соседних бинированных мер"""
    geometry = geometry or BoundaryGeometry(metric or ConformalMetric())
    rows, previous = [], None
    for off in offsets:
        s = h_hat + off
        nu = ps_measure(p, x, s, ball, h_hat, metric, geometry)
        masses = np.bincount(bin_index(nu.angles, n_bins), weights=tail_weights(nu, core_radius), minlength=n_bins)
        row = {'s': float(s), 'mass': nu.total_mass, 'l1_to_previous': None, 'max_dev': None}
        if previous is not None:
            row['l1_to_previous'] = float(np.sum(np.abs(masses / masses.sum() - previous)))
        if q is not None:
            nu_q = ps_measure(q, x, s, ball, h_hat, metric, geometry)
            row['max_dev'] = quasi_invariance_deviation(nu, nu_q, n_bins, h_hat, geometry, core_radius)['max_dev']
        previous = masses / masses.sum()
        rows.append(row)
    steps = [r['l1_to_previous'] for r in rows[1:]]
    devs = [r['max_dev'] for r in rows if r['max_dev'] is not None]
    return {
        'rows': rows,
        'cauchy': all(b <= a for a, b in zip(steps, steps[1:])),
        'dev_decreasing': all(b < a for a, b in zip(devs, devs[1:])) if len(devs) > 1 else None,
    }


def save_measure(nu: AtomicBoundaryMeasure, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    extra = {} if nu.reach is None else {'reach': nu.reach}
    np.savez_compressed(path, angles=nu.angles, weights=nu.weights,
                        base_atoms=np.asarray(nu.meta.get('base_atoms', []), int),
                        scalars=np.array([nu.p.real, nu.p.imag, nu.x.real, nu.x.imag, nu.s, nu.L,
                                          nu.normalizer, nu.dist_px, nu.meta.get('complete_radius', math.inf)]),
                        **extra)
    return path


def load_measure(path) -> AtomicBoundaryMeasure:
    with np.load(path) as data:
        pr, pi, xr, xi, s, L, norm, dpx, full = data['scalars']
        meta = {'cached': True, 'base_atoms': data['base_atoms'].tolist(), 'complete_radius': float(full)}
        reach = data['reach'] if 'reach' in data.files else None
        return AtomicBoundaryMeasure(data['angles'], data['weights'], complex(pr, pi), complex(xr, xi),
                                     float(s), float(L), float(norm), float(dpx), meta, reach)


# --- мера Боуэна-Маргулиса ---

@dataclass
class ProductMeasureGrid:
    """Плотность e^{h·β_p(ξ,η)}·ν_p(bin_ξ)·ν_p(bin_η) вне диагональной полосы (NaN внутри)"""
    n_bins: int
    band: int
    p: complex
    h: float
    density: np.ndarray
    dropped: list = field(default_factory=list)

    @property
    def edges(self) -> np.ndarray:
        return angular_bins(self.n_bins)

    def weights(self) -> np.ndarray:
        w = np.nan_to_num(self.density, nan=0.0)
        return w / w.sum()

    def symmetry_defect(self) -> float:
        d = np.nan_to_num(self.density, nan=0.0)
        scale = max(float(np.max(np.abs(d))), 1e-300)
        return float(np.max(np.abs(d - d.T)) / scale)

    def to_rows(self) -> list:
        edges = self.edges
        rows = []
        for i in range(self.n_bins):
            for j in range(self.n_bins):
                if np.isfinite(self.density[i, j]):
                    rows.append({'xi_lo': float(edges[i]), 'eta_lo': float(edges[j]),
                                 'density': float(self.density[i, j])})
        return rows


def _band_mask(n_bins: int, band: int) -> np.ndarray:
    i = np.arange(n_bins)
    gap = np.abs(i[:, None] - i[None, :])
    gap = np.minimum(gap, n_bins - gap)
    return gap >= band


def bowen_margulis(nu_p: AtomicBoundaryMeasure, n_bins: int, h_hat: float,
                   geometry: BoundaryGeometry, band: int = 2, core_radius: float = 0.0) -> ProductMeasureGrid:
    if band < 2:
        raise ConfigError("диагональная полоса должна быть не уже 2 бинов", band=band)
    weights = tail_weights(nu_p, core_radius, h_hat if core_radius > 0 else None)
    masses = np.bincount(bin_index(nu_p.angles, n_bins), weights=weights, minlength=n_bins)
    centers = bin_centers(n_bins)
    keep = _band_mask(n_bins, band)
    beta = np.full((n_bins, n_bins), np.nan)
    dropped = []
    if geometry.flat:
        full = gromov0(nu_p.p, centers[:, None], centers[None, :])
        beta[keep] = full[keep]
    else:
        for i in range(n_bins):
            for j in range(i + 1, n_bins):
                if not keep[i, j]:
                    continue
                try:
                    beta[i, j] = beta[j, i] = geometry.gromov_product(nu_p.p, centers[i], centers[j])
                except (SolverError, GeometryError) as e:
                    logger.warning(f"⚠️ Бин ({i}, {j}) исключён: {e}")
                    dropped.append((i, j))
    density = np.exp(h_hat * beta) * masses[:, None] * masses[None, :]
    grid = ProductMeasureGrid(n_bins, band, nu_p.p, float(h_hat), density, dropped)
    logger.info(f"✅ Сетка Боуэна-Маргулиса {n_bins}×{n_bins}, исключено пар: {len(dropped)}")
    return grid


def _arc_cells(nu: AtomicBoundaryMeasure, weights: np.ndarray, arc, resolution: int) -> tuple:
    """
    Атомы дуги в ячейках глобальной сетки из resolution ячеек: средневзвешенный угол ячейки,
    её масса и число атомов дуги. Ячейки не пересекают 0, углы усредняются без перехода.
    """
    mask = arc_contains([arc], nu.angles) & (weights > 0)
    angles, w = nu.angles[mask], weights[mask]
    idx = np.minimum((angles / (2.0 * np.pi / resolution)).astype(int), resolution - 1)
    m = np.bincount(idx, weights=w, minlength=resolution)
    s = np.bincount(idx, weights=w * angles, minlength=resolution)
    live = m > 0
    return s[live] / m[live], m[live], int(mask.sum())


def _coarsen(centers: np.ndarray, masses: np.ndarray, arc, sub_bins: int) -> tuple:
    lo, hi = arc
    span = canonical_angle(hi - lo)
    idx = np.clip((canonical_angle(centers - lo) / span * sub_bins).astype(int), 0, sub_bins - 1)
    m = np.bincount(idx, weights=masses, minlength=sub_bins)
    rel = np.bincount(idx, weights=masses * canonical_angle(centers - lo), minlength=sub_bins)
    live = m > 0
    return canonical_angle(lo + rel[live] / m[live]), m[live]


def _pair_mass(nu: AtomicBoundaryMeasure, weights: np.ndarray, arc_a, arc_b, h: float,
               geometry: BoundaryGeometry = None, resolution: int = 2048, sub_bins: int = 16) -> tuple:
    """
    (μ̄(A × B), атомов в A, атомов в B). При ε = 0 β считается в ячейках сетки resolution,
    иначе ячейки каждой дуги сливаются в sub_bins групп.
    """
    ca, ma, na = _arc_cells(nu, weights, arc_a, resolution)
    cb, mb, nb = _arc_cells(nu, weights, arc_b, resolution)
    if geometry is None or geometry.flat:
        total = 0.0
        for k in range(0, ca.size, PAIR_CHUNK):
            beta = gromov0(nu.p, ca[k:k + PAIR_CHUNK, None], cb[None, :])
            total += float(np.sum(np.exp(h * beta) * ma[k:k + PAIR_CHUNK, None] * mb[None, :]))
        return total, na, nb
    ca, ma = _coarsen(ca, ma, arc_a, sub_bins)
    cb, mb = _coarsen(cb, mb, arc_b, sub_bins)
    total = 0.0
    for x, wa in zip(ca, ma):
        for y, wb in zip(cb, mb):
            total += math.exp(h * geometry.gromov_product(nu.p, x, y)) * wa * wb
    return total, na, nb


def bm_mass(nu: AtomicBoundaryMeasure, arc_a, arc_b, h: float, geometry: BoundaryGeometry = None,
            resolution: int = 2048, sub_bins: int = 16) -> float:
    """μ̄(A × B) по атомам ν (при ε ≠ 0 β берётся в центрах подбинов дуг)"""
    weights = _off_base(nu)
    if geometry is None or geometry.flat:
        in_a = arc_contains([arc_a], nu.angles) & (weights > 0)
        in_b = arc_contains([arc_b], nu.angles) & (weights > 0)
        ang_a, w_a = nu.angles[in_a], weights[in_a]
        ang_b, w_b = nu.angles[in_b], weights[in_b]
        total = 0.0
        for k in range(0, ang_a.size, PAIR_CHUNK):
            beta = gromov0(nu.p, ang_a[k:k + PAIR_CHUNK, None], ang_b[None, :])
            total += float(np.sum(np.exp(h * beta) * w_a[k:k + PAIR_CHUNK, None] * w_b[None, :]))
        return total
    return _pair_mass(nu, weights, arc_a, arc_b, h, geometry, resolution=resolution, sub_bins=sub_bins)[0]


def bm_invariance_deviation(nu: AtomicBoundaryMeasure, g: IsometryElement, n_bins: int, h: float,
                            geometry: BoundaryGeometry = None, band: int = 2, core_radius: float = 0.0,
                            resolution: int = 2048, sub_bins: int = 16, exponent: float = None) -> dict:
    """
    Γ-инвариантность μ̄: μ̄(gA × gB) против μ̄(A × B) для пар бинов вне полосы.
    Веса атомов пересчитываются к показателю exponent (по умолчанию h), ядро d0 < core_radius
    отбрасывается. Пары, где в одной из четырёх дуг меньше MASS_FLOOR атомов, пропускаются.
    """
    weights = tail_weights(nu, core_radius, h if exponent is None else exponent)
    edges = canonical_angle(angular_bins(n_bins))
    images = g.act_boundary(angular_bins(n_bins))
    keep = _band_mask(n_bins, band)
    m0_all, m1_all, skipped = [], [], 0
    for i in range(n_bins):
        for j in range(n_bins):
            if not keep[i, j]:
                continue
            m0, na, nb = _pair_mass(nu, weights, (edges[i], edges[i + 1]), (edges[j], edges[j + 1]),
                                    h, geometry, resolution, sub_bins)
            m1, nga, ngb = _pair_mass(nu, weights, (images[i], images[i + 1]), (images[j], images[j + 1]),
                                      h, geometry, resolution, sub_bins)
            if min(na, nb, nga, ngb) < MASS_FLOOR or m0 <= 0:
                skipped += 1
                continue
            m0_all.append(m0)
            m1_all.append(m1)
    if not m0_all:
        raise SolverError("Γ-инвариантность μ̄: нет пар бинов с достаточным числом атомов", n_bins=n_bins)
    m0_all, m1_all = np.array(m0_all), np.array(m1_all)
    report = {
        'word': list(g.word),
        'rel_l1': float(np.sum(np.abs(m1_all - m0_all)) / np.sum(m0_all)),
        'max_rel': float(np.max(np.abs(m1_all - m0_all) / m0_all)),
        'pairs': int(m0_all.size),
        'skipped': int(skipped),
    }
    logger.info(f"📊 Γ-инвариантность μ̄ (слово {report['word']}): L¹ {report['rel_l1']:.3f}, "
                f"max {report['max_rel']:.3f}, пар {report['pairs']}, пропущено {skipped}")
    return report


def bm_base_point_deviation(nu_p: AtomicBoundaryMeasure, nu_q: AtomicBoundaryMeasure, n_bins: int, h: float,
                            geometry: BoundaryGeometry = None, band: int = 2, core_radius: float = 0.0,
                            resolution: int = 2048, sub_bins: int = 16) -> dict:
    """Нормированные сетки μ̄ из ν_p и ν_q (общие x, s) должны совпадать: максимум отклонения по парам бинов"""
    if (nu_p.x, nu_p.s) != (nu_q.x, nu_q.s):
        raise ConfigError("меры должны иметь общие (x, s)")
    wp, wq = tail_weights(nu_p, core_radius, h), tail_weights(nu_q, core_radius, h)
    usable = (_tail_counts(nu_p, wp, n_bins) >= MASS_FLOOR) & (_tail_counts(nu_q, wq, n_bins) >= MASS_FLOOR)
    edges = canonical_angle(angular_bins(n_bins))
    keep = _band_mask(n_bins, band) & usable[:, None] & usable[None, :]
    mp, mq = np.zeros((n_bins, n_bins)), np.zeros((n_bins, n_bins))
    for i, j in zip(*np.nonzero(keep)):
        arcs = (edges[i], edges[i + 1]), (edges[j], edges[j + 1])
        mp[i, j] = _pair_mass(nu_p, wp, *arcs, h, geometry, resolution, sub_bins)[0]
        mq[i, j] = _pair_mass(nu_q, wq, *arcs, h, geometry, resolution, sub_bins)[0]
    if not np.any(keep) or mp.sum() <= 0 or mq.sum() <= 0:
        raise SolverError("независимость μ̄ от базы: нет пар бинов с достаточным числом атомов", n_bins=n_bins)
    mp, mq = mp[keep] / mp.sum(), mq[keep] / mq.sum()
    report = {
        'q': nu_q.p,
        'max_rel': float(np.max(np.abs(mq - mp) / mp)),
        'rel_l1': float(np.sum(np.abs(mq - mp))),
        'pairs': int(keep.sum()),
    }
    logger.info(f"📊 μ̄ из p и q: max {report['max_rel']:.3f}, L¹ {report['rel_l1']:.3f}, пар {report['pairs']}")
    return report


# --- выборка в координатах Хопфа ---

@dataclass
class HopfSample:
    xi: float
    eta: float
    t: float
    v: TangentVector


def sample_arrays(samples) -> tuple:
    z = np.array([s.v.base for s in samples], complex)
    a = np.array([s.v.angle for s in samples], float)
    return z, a


def _pick_pairs(grid: ProductMeasureGrid, rng, size: int) -> tuple:
    w = grid.weights().ravel()
    idx = rng.choice(w.size, size=size, p=w)
    i, j = np.divmod(idx, grid.n_bins)
    width = 2.0 * np.pi / grid.n_bins
    xi = (i + rng.random(size)) * width
    eta = (j + rng.random(size)) * width
    return xi, eta


def _klein_chord(xi, eta) -> tuple:
    offsets = np.full(N_LETTERS, SIDE_OFFSET)
    t_in, t_out, hit = clip_chords(xi, eta, SIDE_NORMALS, offsets)
    a, b = np.exp(1j * xi), np.exp(1j * eta)
    k_in = a + t_in * (b - a)
    k_out = a + t_out * (b - a)
    length = np.where(hit, klein_dist(k_in, k_out), 0.0)
    return from_klein(k_in), length


def hopf_sample(grid: ProductMeasureGrid, n: int, seed: int, geometry: BoundaryGeometry = None,
                batch: int = 4096) -> list:
    """
    (ξ, η) по весам сетки, равномерно внутри бинов; принятие с вероятностью
    len(геодезическая ∩ P)/diam(P); t равномерно по хорде. Проекция μ̄ × dt на T¹M.
    """
    rng = np.random.default_rng(seed)
    diameter = 2.0 * CIRCUMRADIUS
    out = []
    if geometry is None or geometry.flat:
        while len(out) < n:
            xi, eta = _pick_pairs(grid, rng, batch)
            z_in, length = _klein_chord(xi, eta)
            u = rng.random(batch)
            accept = rng.random(batch) < length / diameter
            for k in np.flatnonzero(accept):
                t = float(u[k] * length[k])
                z, ang = flow0(complex(z_in[k]), direction0_boundary(complex(z_in[k]), eta[k]), t)
                out.append(HopfSample(float(xi[k]), float(eta[k]), t, TangentVector(z, ang)))
                if len(out) >= n:
                    break
        return _reduce_samples(out)
    A = geometry.metric.equivalence_constant()
    retries = 0
    while len(out) < n:
        xi, eta = _pick_pairs(grid, rng, 1)
        u, gate = rng.random(), rng.random()
        for attempt in range(HOPF_RETRIES):
            try:
                seg = geometry.connect_boundary(float(xi[0]), float(eta[0]), window=CIRCUMRADIUS * A + 2.0)
                break
            except SolverError as e:
                retries += 1
                logger.warning(f"⚠️ connect_boundary неустойчив (попытка {attempt + 1}): {e}")
        else:
            continue
        inside = np.flatnonzero(in_domain(seg.points))
        if inside.size == 0:
            continue
        t0, t1 = seg.times[inside[0]], seg.times[inside[-1]]
        if gate >= (t1 - t0) / (diameter * A):
            continue
        t = float(t0 + u * (t1 - t0))
        z, ang = seg.at(t)
        out.append(HopfSample(float(xi[0]), float(eta[0]), t, TangentVector(complex(np.ravel(z)[0]), float(np.ravel(ang)[0]))))
    if retries:
        logger.warning(f"⚠️ Повторов выборки Хопфа: {retries}")
    return _reduce_samples(out)


def _reduce_samples(samples) -> list:
    z, a = sample_arrays(samples)
    zr, ga, gb = reduce_many(z)
    ar = canonical_angle(a + np.angle(su_derivative(ga, gb, z)))
    return [HopfSample(s.xi, s.eta, s.t, TangentVector(complex(zz), float(aa))) for s, zz, aa in zip(samples, zr, ar)]


# --- шары Боуэна ---


def dynamical_ball_decay(samples, eps_B: float, n_list, h_hat: float, metric: ConformalMetric = None,
                         n_centers: int = 50, seed: int = 0) -> dict:
    """
    Доля выборки в шарах Боуэна B(v, n, ε) для случайных центров; log-наклон по n
    сравнивается с -h_hat + 0.15.
    """
    rng = np.random.default_rng(seed)
    z, a = sample_arrays(samples)
    ball = enumerate_ball(2)
    lz = su_apply(ball.a[:, None], ball.b[:, None], z[None, :])
    la = canonical_angle(a[None, :] + np.angle(su_derivative(ball.a[:, None], ball.b[:, None], z[None, :])))
    lz, la = lz.ravel(), la.ravel()
    centers = rng.choice(len(samples), size=min(n_centers, len(samples)), replace=False)
    n_list = sorted(int(n) for n in n_list)
    fractions = np.zeros(len(n_list))
    for c in centers:
        v = samples[c].v
        near = np.flatnonzero(dist0(v.base, lz) < eps_B)
        alive = near
        for k, n in enumerate(n_list):
            if alive.size == 0:
                break
            if n > 0:
                if metric is None or metric.is_flat:
                    tt = np.arange(1, n + 1, dtype=float)
                    pv, _ = flow0(v.base, v.angle, tt)
                    pw, _ = flow0(lz[alive][:, None], la[alive][:, None], tt[None, :])
                    ok = np.all(dist0(pw, pv[None, :]) < eps_B, axis=1)
                else:
                    ref = metric.integrate(v, n)
                    ok = np.array([
                        np.all(dist0(metric.integrate(TangentVector(complex(lz[i]), float(la[i])), n)
                                     .at(np.arange(1, n + 1))[0], ref.at(np.arange(1, n + 1))[0]) < eps_B)
                        for i in alive
                    ])
                alive = alive[ok]
            fractions[k] += alive.size / len(samples)
    fractions /= len(centers)
    usable = fractions > 0
    report = {'n': n_list, 'mass': [float(f) for f in fractions], 'eps_B': float(eps_B), 'slope': None,
              'bound': float(-h_hat + 0.15), 'passed': None}
    if np.sum(usable) >= 2:
        fit = linregress(np.array(n_list)[usable], np.log(fractions[usable]))
        report['slope'] = float(fit.slope)
        report['passed'] = bool(fit.slope <= -h_hat + 0.15)
        logger.info(f"📊 Шары Боуэна: наклон {fit.slope:.3f}, граница {-h_hat + 0.15:.3f}")
    return report
