"""
Конфигурация запуска: JSON со строгой схемой, умолчания из .env
"""

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field, fields, asdict, is_dataclass
from pathlib import Path

from dotenv import load_dotenv

from lab_errors import ConfigError

logger = logging.getLogger(__name__)

COMMANDS = (
    'certify-metric', 'estimate-entropy', 'morse', 'spec-glue', 'ps-build',
    'bm-sample', 'count-geodesics', 'equidistribution', 'mixing', 'verify-invariants',
)


@dataclass
class BumpConfig:
    center: list
    amplitude: float
    width: float

    def __post_init__(self):
        if len(self.center) != 2:
            raise ConfigError("центр бампа задаётся парой [x, y]", center=self.center)
        if not self.width > 0:
            raise ConfigError("ширина бампа должна быть положительной", width=self.width)


@dataclass
class MetricConfig:
    bumps: list = field(default_factory=list)
    epsilon: float = 0.0
    ode_tol: float = 1e-10
    bvp_tol: float = 1e-8
    step: float = 0.05
    force_ode: bool = False

    def __post_init__(self):
        self.bumps = [b if isinstance(b, BumpConfig) else _build(BumpConfig, b, 'metric.bumps') for b in self.bumps]
        if not 0 < self.ode_tol < 1e-3 or not 0 < self.bvp_tol < 1e-2:
            raise ConfigError("допуски решателей вне диапазона", ode_tol=self.ode_tol, bvp_tol=self.bvp_tol)
        if not 0 < self.step <= 0.5:
            raise ConfigError("шаг отсчётов должен быть в (0, 0.5]", step=self.step)


@dataclass
class GroupConfig:
    word_cap: int = 6
    dedup_tol: float = 1e-8
    oriented_classes: bool = True
    orbit_radius_cap: float = 18.5
    L_cap: int = 64

    def __post_init__(self):
        if not 1 <= self.word_cap <= 9:
            raise ConfigError("word_cap вне ресурсного предела [1, 9]", word_cap=self.word_cap)
        if not 0 < self.orbit_radius_cap <= 18.5:
            raise ConfigError("orbit_radius_cap вне предела точности (<= 18.5)", cap=self.orbit_radius_cap)


@dataclass
class BoundaryConfig:
    busemann_tol: float = 1e-5
    gp_tol: float = 1e-5
    cr_tol: float = 1e-4
    horizon: float = 20.0
    shadow_res: float = 1e-3


@dataclass
class EntropyConfig:
    p: list = field(default_factory=lambda: [0.0, 0.0])
    word_cap: int = 7
    n_radii: int = 25
    mc_samples: int = 2000
    h_tolerance: float = 0.10


@dataclass
class MorseConfig:
    n_samples: int = 40
    T_list: list = field(default_factory=lambda: [10.0, 20.0, 30.0, 40.0])
    R1: float = None
    safety_factor: float = 1.5
    n_pairs: int = 500

    def __post_init__(self):
        if self.safety_factor < 1.0:
            raise ConfigError("safety_factor должен быть >= 1", safety_factor=self.safety_factor)


@dataclass
class GlueConfig:
    n_segments: int = 3
    segment_length: float = 5.0
    transition_pairs: int = 12
    kappa_samples: int = 400
    margin: float = 2.0

    def __post_init__(self):
        if self.n_segments < 1 or not self.segment_length > 0:
            raise ConfigError("нужен хотя бы один отрезок положительной длины")


@dataclass
class PSConfig:
    p: list = field(default_factory=lambda: [0.0, 0.0])
    q: list = field(default_factory=lambda: [0.3, 0.1])
    x: list = field(default_factory=lambda: [0.0, 0.0])
    word_cap: int = 6
    s_offset: float = 0.02
    n_bins: int = 32
    equivariance_word: list = field(default_factory=lambda: [0, 1])
    shadow_rho: float = 1.0
    shadow_samples: int = 200
    quasi_tol: float = 0.15
    slope_tol: float = 0.15

    def __post_init__(self):
        if not self.s_offset > 0:
            raise ConfigError("s_offset должен быть положительным: s > h_hat", s_offset=self.s_offset)


@dataclass
class BMConfig:
    n_samples: int = 100_000
    n_bins: int = 64
    band: int = 2
    eps_B: float = 0.3
    n_list: list = field(default_factory=lambda: [1, 2, 3, 4])
    n_centers: int = 50
    # ν для μ̄: шар орбиты и ядро, атомы которого отбрасываются
    ball_radius: float = 12.0
    core_radius: float = 8.0
    alt_p: list = field(default_factory=lambda: [0.15, 0.0])
    check_bins: int = 6
    check_word: list = field(default_factory=lambda: [0])
    check_resolution: int = 2048
    check_sub_bins: int = 16
    invariance_tol: float = 0.10
    base_point_tol: float = 0.10
    within_2sigma: float = 0.9
    support_min_samples: int = 100_000
    hopf_bins: list = field(default_factory=lambda: [8, 2, 8])

    def __post_init__(self):
        if self.core_radius < 0 or self.core_radius >= self.ball_radius:
            raise ConfigError("core_radius должен лежать в [0, ball_radius)", core_radius=self.core_radius,
                              ball_radius=self.ball_radius)
        if self.check_bins < 2 * self.band:
            raise ConfigError("check_bins слишком мало для диагональной полосы", check_bins=self.check_bins,
                              band=self.band)
        if len(self.hopf_bins) != 3:
            raise ConfigError("hopf_bins задаётся как [секторы, кольца, углы]", hopf_bins=self.hopf_bins)


@dataclass
class CountConfig:
    T_list: list = field(default_factory=lambda: [6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0])
    slope_tol: float = 0.15
    separation_pairs: int = 20


@dataclass
class EquidistributionConfig:
    T_list: list = field(default_factory=lambda: [6.0, 8.0, 10.0, 12.0])
    n_samples: int = 100_000
    sectors: int = 8
    rings: int = 8
    angles: int = 32
    tv_bound: float = 0.25


@dataclass
class MixingConfig:
    phi: str = 'angle_cos'
    psi: str = 'cell:0'
    control: str = 'const:1'
    t_grid: list = field(default_factory=lambda: [0.0, 0.5, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0])
    n_samples: int = 100_000
    n_boot: int = 200
    contraction_t: list = field(default_factory=lambda: [0.0, 2.0, 4.0, 6.0, 8.0, 10.0])
    contraction_R: float = 1.0
    contraction_pairs: int = 200


@dataclass
class VerifyConfig:
    n_pairs: int = 1000
    n_quads: int = 100
    n_segments: int = 20
    word_cap: int = 4


@dataclass
class ExperimentsConfig:
    entropy: EntropyConfig = field(default_factory=EntropyConfig)
    morse: MorseConfig = field(default_factory=MorseConfig)
    glue: GlueConfig = field(default_factory=GlueConfig)
    ps: PSConfig = field(default_factory=PSConfig)
    bm: BMConfig = field(default_factory=BMConfig)
    count: CountConfig = field(default_factory=CountConfig)
    equidistribution: EquidistributionConfig = field(default_factory=EquidistributionConfig)
    mixing: MixingConfig = field(default_factory=MixingConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)


@dataclass
class RunConfig:
    metric: MetricConfig = field(default_factory=MetricConfig)
    group: GroupConfig = field(default_factory=GroupConfig)
    boundary: BoundaryConfig = field(default_factory=BoundaryConfig)
    experiments: ExperimentsConfig = field(default_factory=ExperimentsConfig)
    seed: int = 0
    output_dir: str = 'output'
    threads: int = 4
    cache_dir: str = None

    def __post_init__(self):
        if self.threads < 1:
            raise ConfigError("threads должен быть >= 1", threads=self.threads)

    def to_dict(self) -> dict:
        return asdict(self)

    def metric_block(self) -> dict:
        block = asdict(self.metric)
        block['bumps'] = [{'center': b['center'], 'amplitude': b['amplitude'], 'width': b['width']}
                          for b in block['bumps']]
        return block

    def config_hash(self) -> str:
        """sha256 канонического JSON без путей вывода и кэша"""
        payload = self.to_dict()
        for key in ('output_dir', 'cache_dir', 'threads'):
            payload.pop(key)
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode('utf-8')).hexdigest()


_NUMBER = (int, float)


def _check_type(value, default, path: str):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: ожидается bool", value=value)
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: ожидается целое число", value=value)
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, _NUMBER):
            raise ConfigError(f"{path}: ожидается число", value=value)
        return float(value)
    elif isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{path}: ожидается строка", value=value)
    elif isinstance(default, list) and not isinstance(value, list):
        raise ConfigError(f"{path}: ожидается список", value=value)
    return value


def _build(cls, data, path: str):
    """Сборка dataclass-блока с отказом на неизвестных ключах"""
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: ожидается объект", value=data)
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{path}: неизвестные ключи {unknown}", keys=unknown)
    kwargs = {}
    for name, value in data.items():
        f = known[name]
        sub = f.default_factory() if callable(f.default_factory) else f.default
        if is_dataclass(sub):
            kwargs[name] = _build(type(sub), value, f"{path}.{name}")
        else:
            kwargs[name] = _check_type(value, sub, f"{path}.{name}")
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"{path}: {e}")


def config_from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, 'config')


def env_defaults() -> dict:
    """Умолчания из окружения (.env подхватывается python-dotenv)"""
    load_dotenv()
    return {
        'config': os.getenv('LAB_CONFIG'),
        'out': os.getenv('LAB_OUT'),
        'seed': os.getenv('LAB_SEED'),
        'threads': os.getenv('LAB_THREADS'),
        'cache': os.getenv('LAB_CACHE'),
        'log_level': os.getenv('LAB_LOG_LEVEL', 'INFO'),
    }


def load_config(path=None, seed=None, out=None, threads=None, cache=None) -> RunConfig:
    """JSON-файл конфигурации + переопределения CLI (флаги важнее файла)"""
    data = {}
    if path:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"файл конфигурации не найден: {path}")
        try:
            data = json.loads(path.read_text(encoding='utf-8'))
        except json.JSONDecodeError as e:
            raise ConfigError(f"некорректный JSON в {path}: {e}")
        logger.info(f"📂 Конфигурация загружена: {path}")
    config = config_from_dict(data)
    try:
        if seed is not None:
            config.seed = int(seed)
        if threads is not None:
            config.threads = int(threads)
    except ValueError as e:
        raise ConfigError(f"некорректное значение флага: {e}")
    if out:
        config.output_dir = str(out)
    if cache:
        config.cache_dir = str(cache)
    config.__post_init__()
    return config
