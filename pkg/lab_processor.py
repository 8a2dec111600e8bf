"""
Оркестратор лаборатории: стадии certify → ball → morse → entropy → measures → statistics,
кэш шаров и мер, отчёты и проверки по командам CLI.
"""

import asyncio
import functools
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from lab_config import COMMANDS, RunConfig
from lab_errors import EXIT_OK, EXIT_ASSERTION, ConfigError, GeometryError, LabError, SolverError
from poincare_disk import dist0, flow0
from bolza_group import (
    SYSTOLE, ConjClassRep, cached_ball, conjugacy_classes, inverse_word, relator_defect, sample_domain,
    word_element,
)
from conformal_metric import ConformalMetric, metric_from_config
from boundary_geometry import BoundaryGeometry, Quadrilateral, random_quadrilateral
from coarse_shadowing import estimate_R0, endpoint_bound, verify_endpoint_bound, random_vectors
from specification_engine import (
    OrbitSegment, ProductParams, estimate_kappa, glue, transition_time, verify_shadowing,
)
from entropy_measures import (
    bm_base_point_deviation, bm_invariance_deviation, bm_mass, bowen_margulis, dynamical_ball_decay,
    equivariance_deviation, hopf_sample, load_measure, orbit_growth, ps_measure, quasi_invariance_deviation,
    s_ladder, sample_arrays, save_measure, shadow_lemma_stats, shadow_samples,
)
from orbit_statistics import (
    EmpiricalMeasure, TangentBins, closed_geodesic, contraction_stats, counting_curve, displacement_minimum,
    flow_invariance, mixing_correlation, mu_T, periodic_orbits, separation_check, support_coverage,
    total_variation,
)
from report_writer import ReportWriter

logger = logging.getLogger(__name__)

EPS_NE_FACTOR = 40.0


class LabProcessor:
    def __init__(self, config: RunConfig):
        self.config = config
        self.out_dir = Path(config.output_dir)
        self.cache_dir = Path(config.cache_dir) if config.cache_dir else None
        self.writer = ReportWriter(self.out_dir)
        self.executor = ThreadPoolExecutor(max_workers=config.threads)
        self.semaphore = None

        self.metric = metric_from_config(config.metric_block())
        b = config.boundary
        self.geometry = BoundaryGeometry(self.metric, busemann_tol=b.busemann_tol, gp_tol=b.gp_tol,
                                         cr_tol=b.cr_tol, horizon=b.horizon, shadow_res=b.shadow_res)
        self.constants = {}
        self.results = {}
        self.checks = {}
        self.timings = {}
        self._stages = {}

    # --- инфраструктура ---

    async def _call(self, fn, *args, **kwargs):
        loop = asyncio.get_event_loop()
        async with self.semaphore:
            return await loop.run_in_executor(self.executor, functools.partial(fn, *args, **kwargs))

    async def _parallel(self, stage: str, jobs: dict) -> dict:
        """Независимые задачи в пуле потоков; порядок результатов фиксирован ключами"""
        names = list(jobs)
        results = await asyncio.gather(*[self._call(*jobs[n]) for n in names], return_exceptions=True)
        out = {}
        for name, result in zip(names, results):
            if isinstance(result, LabError):
                raise result.with_stage(f"{stage}/{name}")
            if isinstance(result, Exception):
                raise SolverError(f"{type(result).__name__}: {result}", stage=f"{stage}/{name}")
            out[name] = result
        return out

    async def _stage(self, name: str, factory):
        """Стадия выполняется один раз за запуск; ошибки помечаются именем стадии"""
        if name in self._stages:
            return self._stages[name]
        logger.info(f"🚀 Стадия {name}")
        started = time.perf_counter()
        try:
            result = await factory()
        except LabError as e:
            raise e.with_stage(name)
        except Exception as e:
            raise SolverError(f"{type(e).__name__}: {e}", stage=name)
        self.timings[name] = time.perf_counter() - started
        logger.info(f"✅ Стадия {name} завершена за {self.timings[name]:.1f} сек")
        self._stages[name] = result
        return result

    def _check(self, name: str, passed) -> bool:
        self.checks[name] = bool(passed)
        logger.info(f"{'✅' if passed else '❌'} Проверка {name}: {'ПРОЙДЕНА' if passed else 'НЕ ПРОЙДЕНА'}")
        return bool(passed)

    @property
    def seed(self) -> int:
        return self.config.seed

    @property
    def flat(self) -> bool:
        return self.metric.is_flat

    # --- общие стадии ---

    async def certify(self):
        async def run():
            cert = await self._call(self.metric.certify)
            A = self.metric.equivalence_constant()
            self.constants['A'] = A
            self.results['metric'] = {'certificate': cert.to_dict(), 'A': A, 'hash': self.metric.metric_hash(),
                                      'flat': self.flat}
            return cert
        return await self._stage('certify', run)

    async def ball(self, L: int):
        async def run():
            g = self.config.group
            ball = await self._call(cached_ball, self.cache_dir, 'word', L, g.dedup_tol)
            self.results.setdefault('balls', {})[str(L)] = {'elements': len(ball),
                                                           'truncation_radius': ball.truncation_radius}
            return ball
        return await self._stage(f'ball_L{L}', run)

    async def orbit_ball(self, R: float):
        async def run():
            ball = await self._call(cached_ball, self.cache_dir, 'orbit', R, self.config.group.dedup_tol)
            self.results.setdefault('balls', {})[f"orbit_{R:g}"] = {'elements': len(ball),
                                                                   'truncation_radius': ball.truncation_radius}
            return ball
        return await self._stage(f'ball_R{R:g}', run)

    async def morse(self):
        async def run():
            await self.certify()
            cfg = self.config.experiments.morse
            report = await self._call(estimate_R0, self.metric, cfg.n_samples, cfg.T_list, self.seed,
                                      cfg.safety_factor)
            A = report.A
            R1 = cfg.R1 if cfg.R1 is not None else 3.0 * A * report.R0 + 1.0
            R2, delta = endpoint_bound(R1, report)
            check = await self._call(verify_endpoint_bound, self.metric, R1, report, cfg.n_pairs, self.seed)
            self.constants.update(R0_hat=report.R0_hat, R0=report.R0, R1=R1, R2=R2, delta=delta,
                                  eps_NE=EPS_NE_FACTOR * delta)
            self.results['morse'] = {'report': report.to_dict(), 'endpoint_check': check}
            self._check('morse_plateau', report.plateau_flag)
            self._check('endpoint_bound', check['success'])
            self.writer.write_csv('morse.csv', [{'T': T, 'max_hausdorff': h}
                                                for T, h in zip(report.T_range, report.per_T)])
            return report
        return await self._stage('morse', run)

    async def entropy(self):
        async def run():
            await self.certify()
            cfg = self.config.experiments.entropy
            ball = await self.ball(cfg.word_cap)
            fit = await self._call(orbit_growth, complex(*cfg.p), ball, self.metric, cfg.n_radii,
                                   cfg.mc_samples, self.seed)
            self.constants['h_hat'] = fit.h_hat
            self.results['entropy'] = fit.to_dict()
            if self.flat:
                self._check('entropy_h_hat', abs(fit.h_hat - 1.0) <= cfg.h_tolerance)
            self.writer.write_csv('orbit_growth.csv', [{'R': r, 'count': c} for r, c in zip(fit.radii, fit.counts)])
            self.writer.plot_series('orbit_growth.svg', fit.radii, {'N(R)': fit.counts}, 'R', 'N(R)',
                                    'Рост орбиты', logy=True)
            return fit.h_hat
        return await self._stage('entropy', run)

    def _measure_path(self, p, x, s, ball):
        if self.cache_dir is None:
            return None
        key = f"ps2_{self.metric.metric_hash()[:12]}_{ball.kind}{ball.radius:g}_s{s:.6f}_p{p.real:.6f},{p.imag:.6f}_x{x.real:.6f},{x.imag:.6f}"
        return self.cache_dir / f"{key}.npz"

    def _cached_measure(self, p, x, s, ball, h_hat, normalizer=None):
        path = self._measure_path(p, x, s, ball) if normalizer is None else None
        if path is not None and path.exists():
            logger.info(f"📂 Мера ПС из кэша: {path}")
            return load_measure(path)
        nu = ps_measure(p, x, s, ball, h_hat, self.metric, self.geometry, normalizer)
        if path is not None:
            save_measure(nu, path)
        return nu

    async def ps(self):
        async def run():
            cfg = self.config.experiments.ps
            h_hat = await self.entropy()
            ball = await self.ball(cfg.word_cap)
            p, q, x = complex(*cfg.p), complex(*cfg.q), complex(*cfg.x)
            s = h_hat + cfg.s_offset
            g = word_element(tuple(cfg.equivariance_word))
            measures = await self._parallel('ps', {
                'p': (self._cached_measure, p, x, s, ball, h_hat),
                'q': (self._cached_measure, q, x, s, ball, h_hat),
                'x': (self._cached_measure, x, x, s, ball, h_hat),
            })
            nu_x = measures['x']
            nu_gx = await self._call(self._cached_measure, complex(g(x)), x, s, ball.translated(g), h_hat,
                                     nu_x.normalizer)
            equivariance = equivariance_deviation(nu_x, nu_gx, g, cfg.n_bins)
            rng = np.random.default_rng(self.seed)
            jobs = {
                'quasi': (quasi_invariance_deviation, measures['p'], measures['q'], cfg.n_bins, h_hat, self.geometry),
                'shadow': (shadow_lemma_stats, measures['p'], shadow_samples(p, rng, cfg.shadow_samples),
                           cfg.shadow_rho, h_hat, self.geometry),
                'ladder': (s_ladder, p, x, h_hat, ball, cfg.n_bins, self.metric, self.geometry, q),
            }
            stats = await self._parallel('ps', jobs)
            self.constants['b_hat'] = stats['shadow']['b_hat']
            self.results['ps'] = {'s': s, 'L': cfg.word_cap, 'mass_p': measures['p'].total_mass,
                                  'mass_q': measures['q'].total_mass, 'equivariance': equivariance, **stats}
            self._check('ps_equivariance', equivariance < 1e-8)
            self._check('ps_quasi_invariance', stats['quasi']['max_dev'] <= cfg.quasi_tol)
            if stats['ladder']['dev_decreasing'] is not None:
                self._check('ps_ladder_decreasing', stats['ladder']['dev_decreasing'])
            slope = stats['shadow']['slope']
            self._check('ps_shadow_slope', slope is not None and abs(slope + h_hat) <= cfg.slope_tol * h_hat)
            self.writer.write_csv('ps_measure.csv', measures['p'].to_rows(cfg.n_bins))
            self.writer.write_csv('ps_ladder.csv', stats['ladder']['rows'])
            edges = measures['p'].to_rows(cfg.n_bins)
            self.writer.plot_series('ps_measure.svg', [r['lo'] for r in edges],
                                    {'ν_p': [r['mass'] for r in edges]}, 'ξ', 'масса бина', 'Мера ПС')
            return measures['p']
        return await self._stage('ps', run)

    async def bm_measure(self, p: complex):
        """ν_p для μ̄: шар орбиты радиуса ball_radius, x и s из блока ps"""
        async def run():
            cfg, ps_cfg = self.config.experiments.bm, self.config.experiments.ps
            h_hat = await self.entropy()
            ball = await self.orbit_ball(cfg.ball_radius)
            s = h_hat + ps_cfg.s_offset
            return await self._call(self._cached_measure, p, complex(*ps_cfg.x), s, ball, h_hat)
        return await self._stage(f'bm_nu_{p.real:g}_{p.imag:g}', run)

    async def bm_grid(self):
        async def run():
            cfg = self.config.experiments.bm
            nu = await self.bm_measure(complex(*self.config.experiments.ps.p))
            h_hat = self.constants['h_hat']
            grid = await self._call(bowen_margulis, nu, cfg.n_bins, h_hat, self.geometry, cfg.band, cfg.core_radius)
            self.results['bm_grid'] = {'n_bins': cfg.n_bins, 'band': cfg.band, 'dropped': grid.dropped,
                                       'symmetry_defect': grid.symmetry_defect()}
            self._check('bm_symmetry', grid.symmetry_defect() < 1e-9)
            return grid
        return await self._stage('bm_grid', run)

    async def samples(self, n: int, offset: int = 0):
        async def run():
            grid = await self.bm_grid()
            geometry = None if self.flat else self.geometry
            return await self._call(hopf_sample, grid, n, self.seed + offset, geometry)
        return await self._stage(f'hopf_{n}_{offset}', run)

    async def orbits(self, T_max: float):
        async def run():
            await self.certify()
            orbits, diag = await self._call(periodic_orbits, T_max, self.metric, self.geometry,
                                            self.config.group.L_cap)
            return orbits, diag
        return await self._stage(f'orbits_T{T_max:g}', run)

    # --- команды ---

    async def cmd_certify_metric(self):
        cert = await self.certify()
        self._check('curvature_negative', cert.certified)

    async def cmd_estimate_entropy(self):
        await self.entropy()

    async def cmd_morse(self):
        await self.morse()

    async def cmd_spec_glue(self):
        report = await self.morse()
        cfg = self.config.experiments.glue
        c = self.constants
        kappa = await self._call(estimate_kappa, cfg.kappa_samples, 0.05, self.seed)
        params = ProductParams.from_constants(c['R1'], c['A'], report.R0, kappa)
        T = await self._call(transition_time, params, cfg.transition_pairs, self.seed)
        params = params.with_transition(T)
        rng = np.random.default_rng(self.seed)
        segments = [OrbitSegment(v, cfg.segment_length) for v in random_vectors(rng, cfg.n_segments)]
        w, schedule = await self._call(glue, self.metric, segments, params, report)
        shadow = await self._call(verify_shadowing, self.metric, w, segments, schedule, c['delta'])
        self.constants.update(tau=c['A'] * T, T_transition=T, kappa=kappa)
        self.results['glue'] = {'params': params.to_dict(), 'schedule': schedule.to_dict(), 'shadowing': shadow,
                                'w': [w.base, w.angle]}
        self._check('glue_time_lemmas', schedule.passed)
        self._check('glue_shadowing', shadow['passed'])
        self._check('glue_margin', all(r['margin'] >= cfg.margin for r in shadow['segments']))
        self.writer.write_csv('glue_shadowing.csv', shadow['segments'])

    async def cmd_ps_build(self):
        await self.ps()

    async def cmd_bm_sample(self):
        cfg = self.config.experiments.bm
        grid = await self.bm_grid()
        samples = await self.samples(cfg.n_samples)
        h_hat = self.constants['h_hat']
        decay = await self._call(dynamical_ball_decay, samples, cfg.eps_B, cfg.n_list, h_hat, self.metric,
                                 cfg.n_centers, self.seed)
        ps_cfg = self.config.experiments.ps
        nu = await self.bm_measure(complex(*ps_cfg.p))
        nu_alt = await self.bm_measure(complex(*cfg.alt_p))
        half = cfg.n_bins // 2
        edges = grid.edges
        arc_a, arc_b = (float(edges[0]), float(edges[half // 2])), (float(edges[half]), float(edges[half + half // 2]))
        mass = bm_mass(nu, arc_a, arc_b, h_hat, self.geometry)
        geometry = None if self.flat else self.geometry
        z, a = sample_arrays(samples)
        hopf_bins = TangentBins(*cfg.hopf_bins)
        jobs = {
            'gamma_invariance': (bm_invariance_deviation, nu, word_element(tuple(cfg.check_word)), cfg.check_bins,
                                 h_hat, geometry, cfg.band, cfg.core_radius,
                                 cfg.check_resolution, cfg.check_sub_bins),
            'base_point': (bm_base_point_deviation, nu, nu_alt, cfg.check_bins, h_hat, geometry, cfg.band,
                           cfg.core_radius, cfg.check_resolution, cfg.check_sub_bins),
            'flow_invariance': (flow_invariance, z, a, hopf_bins, 1.0, self.metric),
            'support': (support_coverage, z, a, hopf_bins),
        }
        checks = await self._parallel('bm', jobs)
        self.results['bm'] = {'samples': len(samples), 'ball_decay': decay, 'arc_mass': mass,
                              'arcs': [list(arc_a), list(arc_b)], **checks}
        if decay['passed'] is not None:
            self._check('bowen_ball_decay', decay['passed'])
        self._check('bm_gamma_invariance', checks['gamma_invariance']['rel_l1'] <= cfg.invariance_tol)
        self._check('bm_base_point', checks['base_point']['max_rel'] < cfg.base_point_tol)
        self._check('hopf_flow_invariance', checks['flow_invariance']['within_2sigma'] >= cfg.within_2sigma)
        if len(samples) >= cfg.support_min_samples:
            self._check('hopf_full_support', checks['support']['full'])
        else:
            logger.info(f"📋 Полнота носителя не проверяется: {len(samples)} < {cfg.support_min_samples} точек")
        self.writer.write_csv('bm_grid.csv', grid.to_rows())
        self.writer.write_csv('hopf_samples.csv', [{'xi': s.xi, 'eta': s.eta, 't': s.t, 'z': s.v.base,
                                                    'angle': s.v.angle} for s in samples[:1000]])
        self.writer.plot_heatmap('bm_grid.svg', grid.weights(), 'η', 'ξ', 'Плотность Боуэна-Маргулиса')

    async def cmd_count_geodesics(self):
        cfg = self.config.experiments.count
        h_hat = await self.entropy()
        await self.certify()
        curve = await self._call(counting_curve, cfg.T_list, self.metric, self.geometry, self.config.group.L_cap)
        orbits = curve.pop('orbits')
        separation = await self._call(separation_check, orbits, 0.5 * SYSTOLE, cfg.separation_pairs)
        diag = curve['diagnostics']
        self.results['count'] = dict(curve, separation=separation, shortest=min((o.length for o in orbits), default=None))
        self._check('count_exhaustive', diag['closure_ok'])
        self._check('count_unfolding', diag['unfolding_defect'] < 1e-8)
        self._check('count_words', diag['trace_mismatch'] == 0)
        self._check('count_slope', curve['slope'] is not None and abs(curve['slope'] - h_hat) <= cfg.slope_tol)
        self._check('separation', separation['passed'])
        if self.flat and orbits:
            self._check('systole', abs(min(o.length for o in orbits) - SYSTOLE) < 1e-6)
        self.writer.write_csv('counting.csv', curve['rows'])
        self.writer.plot_series('counting.svg', [r['T'] for r in curve['rows']],
                                {'P(T)': [r['P'] for r in curve['rows']]}, 'T', 'P(T)', 'Замкнутые геодезические',
                                logy=True)

    async def cmd_equidistribution(self):
        cfg = self.config.experiments.equidistribution
        bins = TangentBins(cfg.sectors, cfg.rings, cfg.angles)
        samples = await self.samples(cfg.n_samples, 1)
        z = np.array([s.v.base for s in samples], complex)
        a = np.array([s.v.angle for s in samples], float)
        reference = EmpiricalMeasure.from_vectors(bins, z, a, source='hopf')
        orbits, diag = await self.orbits(max(cfg.T_list))
        rows = []
        for T in sorted(cfg.T_list):
            measure = await self._call(mu_T, T, bins, orbits, self.metric)
            rows.append({'T': T, 'classes': measure.meta['classes'], 'tv': total_variation(measure, reference),
                         'support': measure.support()})
            logger.info(f"📊 TV(μ_{T:g}, μ_BM) = {rows[-1]['tv']:.4f}")
        tvs = [r['tv'] for r in rows]
        self.results['equidistribution'] = {'rows': rows, 'bins_hash': bins.geometry_hash(),
                                            'samples': len(samples), 'diagnostics': diag}
        self._check('equidistribution_decreasing', all(b < a for a, b in zip(tvs, tvs[1:])))
        self._check('equidistribution_final', tvs[-1] < cfg.tv_bound)
        self.writer.write_csv('equidistribution.csv', rows)
        self.writer.plot_series('equidistribution.svg', [r['T'] for r in rows], {'TV': tvs}, 'T', 'TV',
                                'Равнораспределение μ_T')

    async def cmd_mixing(self):
        cfg = self.config.experiments.mixing
        samples = await self.samples(cfg.n_samples, 2)
        jobs = {
            'main': (mixing_correlation, samples, cfg.phi, cfg.psi, cfg.t_grid, self.metric, cfg.n_boot, self.seed),
            'control': (mixing_correlation, samples, cfg.phi, cfg.control, cfg.t_grid, self.metric, cfg.n_boot,
                        self.seed),
            'contraction': (contraction_stats, samples, cfg.contraction_t, cfg.contraction_R, self.metric,
                            self.geometry, cfg.contraction_pairs, self.seed),
        }
        out = await self._parallel('mixing', jobs)
        self.results['mixing'] = out
        self._check('mixing_t_star', out['main']['t_star'] is not None)
        self._check('mixing_control', all(abs(r['C']) <= max(r['sigma'], 1e-12) for r in out['control']['rows']))
        slope = out['contraction']['slope']
        if self.flat:
            self._check('contraction_slope', slope is not None and abs(slope + 1.0) <= 0.1)
        rows = out['main']['rows']
        self.writer.write_csv('mixing.csv', rows)
        self.writer.write_csv('contraction.csv', [{'t': t, 'median': m} for t, m in
                                                  zip(out['contraction']['t'], out['contraction']['median'])])
        self.writer.plot_series('mixing.svg', [r['t'] for r in rows], {'C(t)': [r['C'] for r in rows],
                                                                      '2σ': [2 * r['sigma'] for r in rows]},
                                't', 'C(t)', f"{cfg.phi} × {cfg.psi}")
        self.writer.plot_series('contraction.svg', out['contraction']['t'],
                                {'медиана': np.maximum(out['contraction']['median'], 1e-300)}, 't',
                                'd(f_t v, f_t w)', 'Сжатие вдоль W^ss', logy=True)

    async def cmd_verify_invariants(self):
        await self.certify()
        cfg = self.config.experiments.verify
        jobs = {
            'relator': (relator_defect,),
            'systole': (self._systole_check, cfg.word_cap),
            'conjugation': (self._conjugation_check,),
            'displacement': (self._displacement_check,),
            'otal': (self._otal_check, cfg.n_quads),
            'degenerate_quad': (self._degenerate_quad_check,),
        }
        if self.flat:
            jobs.update({
                'dist': (self._dist_check, cfg.n_pairs),
                'integrate': (self._integrate_check, cfg.n_segments),
                'morse': (self._trivial_morse_check,),
            })
        out = await self._parallel('verify', jobs)
        self.results['verify'] = out
        self._check('relator', out['relator'] < 1e-9)
        for name in ('systole', 'conjugation', 'displacement', 'otal', 'degenerate_quad'):
            self._check(name, out[name]['passed'])
        if self.flat:
            self._check('equivalence_constant', self.constants['A'] == 1.0)
            for name in ('dist', 'integrate', 'morse'):
                self._check(name, out[name]['passed'])

    # --- проверки verify-invariants ---

    def _systole_check(self, L: int) -> dict:
        classes = conjugacy_classes(L, self.config.group.oriented_classes)
        lengths = [closed_geodesic(c).length_g for c in classes if not c.proper_power]
        shortest = float(min(lengths))
        return {'classes': len(classes), 'shortest': shortest, 'passed': abs(shortest - SYSTOLE) < 1e-6}

    def _conjugation_check(self) -> dict:
        worst = 0.0
        for w in ((0, 1), (0, 2, 5), (1, 3, 6, 4)):
            for u in ((2,), (3, 0)):
                conj = tuple(u) + w + inverse_word(u)
                a = closed_geodesic(ConjClassRep(w), self.metric, self.geometry).length_g
                b = closed_geodesic(ConjClassRep(conj), self.metric, self.geometry).length_g
                worst = max(worst, abs(a - b))
        return {'max_difference': worst, 'passed': worst < 1e-6}

    def _displacement_check(self) -> dict:
        worst = 0.0
        for w in ((0,), (0, 1), (0, 2), (0, 1, 2)):
            rep = ConjClassRep(w)
            worst = max(worst, abs(displacement_minimum(rep, self.metric)
                                   - closed_geodesic(rep, self.metric, self.geometry).length_g))
        return {'max_difference': worst, 'passed': worst < 1e-6}

    def _otal_check(self, n: int) -> dict:
        rng = np.random.default_rng(self.seed)
        defects = [self.geometry.otal_walk(random_quadrilateral(rng)).defect for _ in range(n)]
        worst = float(max(defects))
        return {'quads': n, 'max_defect': worst, 'passed': worst < self.config.boundary.cr_tol}

    def _degenerate_quad_check(self) -> dict:
        """ξ = ξ': двойное отношение и смещение обхода нулевые; общий конец у пар отклоняется"""
        quad = Quadrilateral(0.3, 0.3, 2.0, 4.0)
        cr = self.geometry.cross_ratio(quad, 0j)
        walk = self.geometry.otal_walk(quad)
        try:
            Quadrilateral(0.1, 1.0, 0.1, 2.0)
            rejected = False
        except GeometryError:
            rejected = True
        tol = self.config.boundary.cr_tol
        return {'cross_ratio': cr, 'displacement': walk.displacement, 'rejected_shared_endpoint': rejected,
                'passed': abs(cr) < tol and abs(walk.displacement) < tol and rejected}

    def _dist_check(self, n: int) -> dict:
        rng = np.random.default_rng(self.seed)
        p, q = sample_domain(rng, n), sample_domain(rng, n)
        worst = float(np.max(np.abs(self.metric.dist_many(complex(p[0]), q) - dist0(complex(p[0]), q))))
        for a, b in zip(p[:50], q[:50]):
            worst = max(worst, abs(self.metric.dist(complex(a), complex(b)) - dist0(complex(a), complex(b))))
        return {'pairs': n, 'max_difference': worst, 'passed': worst < 1e-8}

    def _integrate_check(self, n: int) -> dict:
        """ОДУ-интегратор против замкнутой формы g0"""
        ode = ConformalMetric(ode_tol=self.metric.ode_tol, force_ode=True)
        rng = np.random.default_rng(self.seed)
        worst = 0.0
        for v in random_vectors(rng, n):
            seg = ode.integrate(v, 1.0)
            z, _ = flow0(v.base, v.angle, 1.0)
            # ошибка в координатах решателя
            worst = max(worst, abs(seg.end - complex(z)))
        return {'segments': n, 'max_error': worst, 'passed': worst < 10.0 * ode.ode_tol}

    def _trivial_morse_check(self) -> dict:
        report = estimate_R0(self.metric, 10, [5.0, 10.0], self.seed)
        return {'R0_hat': report.R0_hat, 'passed': report.R0_hat < 1e-6}

    # --- запуск ---

    async def run(self, command: str) -> dict:
        """Выполнение команды; отчёт пишется и при ошибке (частичные результаты)"""
        if command not in COMMANDS:
            raise ConfigError(f"неизвестная команда: {command}", known=list(COMMANDS))
        self.semaphore = asyncio.Semaphore(self.config.threads)
        handler = getattr(self, 'cmd_' + command.replace('-', '_'))
        logger.info(f"🚀 Команда {command}, seed={self.seed}, потоков {self.config.threads}")
        error = None
        try:
            await handler()
        except LabError as e:
            error = e.with_stage(command)
            logger.error(f"❌ {error}")
        finally:
            self.executor.shutdown(wait=True)
            passed = error is None and all(self.checks.values())
            report = {
                'command': command,
                'config_hash': self.config.config_hash(),
                'seed': self.seed,
                'constants': self.constants,
                'results': self.results,
                'checks': self.checks,
                'passed': passed,
                'error': error.to_dict() if error else None,
            }
            self.writer.write_json('report.json', report)
            self.writer.write_timings(self.timings)
        if error is not None:
            return {'success': False, 'error': str(error), 'exit_code': error.exit_code, 'report': report}
        failed = [name for name, ok in self.checks.items() if not ok]
        if failed:
            logger.warning(f"⚠️ Не пройдены проверки: {', '.join(failed)}")
        logger.info(f"📊 Проверок пройдено: {len(self.checks) - len(failed)}/{len(self.checks)}")
        return {'success': not failed, 'error': None, 'exit_code': EXIT_ASSERTION if failed else EXIT_OK,
                'failed_checks': failed, 'report': report}
