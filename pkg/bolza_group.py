"""
Группа поверхности Больцы: образующие правильного октагона, шары по длине слова и
по смещению, классы сопряжённости, редукция в область Дирихле и кэш шаров.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from lab_errors import GeometryError, ResourceError, ConfigError
from poincare_disk import (
    dist0, su_apply, su_mul, su_inv, su_apply_boundary, su_derivative,
    validate_point, validate_points, canonical_angle, one_minus_sq,
)

logger = logging.getLogger(__name__)

N_LETTERS = 8
INRADIUS = math.acosh(1.0 + math.sqrt(2.0))
SYSTOLE = 2.0 * INRADIUS
CIRCUMRADIUS = math.acosh((1.0 + math.sqrt(2.0)) ** 2)
SIDE_OFFSET = math.tanh(INRADIUS)
SIDE_NORMALS = np.exp(1j * np.pi * np.arange(N_LETTERS) / 4.0)
VERTEX_ANGLES = np.pi * np.arange(N_LETTERS) / 4.0 + np.pi / 8.0
RELATOR = (1, 6, 3, 0, 5, 2, 7, 4)

DEDUP_TOL = 1e-8
DOMAIN_TOL = 1e-12
REDUCE_MAX_STEPS = 400
CACHE_VERSION = 2

_GEN_A = np.full(N_LETTERS, math.cosh(INRADIUS) + 0j)
_GEN_B = math.sinh(INRADIUS) * SIDE_NORMALS


def inverse_letter(k: int) -> int:
    return (k + 4) % N_LETTERS


def free_reduce(word) -> tuple:
    out = []
    for k in word:
        if out and out[-1] == inverse_letter(k):
            out.pop()
        else:
            out.append(int(k))
    return tuple(out)


def inverse_word(word) -> tuple:
    return tuple(inverse_letter(k) for k in reversed(word))


def _canonical_sign(a, b):
    flip = (np.real(a) < 0) | ((np.real(a) == 0) & (np.imag(a) < 0))
    return np.where(flip, -a, a), np.where(flip, -b, b)


@dataclass(frozen=True)
class IsometryElement:
    """Преобразование колоды: пара (a, b) из SU(1,1) и приведённое слово"""
    a: complex
    b: complex
    word: tuple = ()

    def __post_init__(self):
        det = abs(self.a) ** 2 - abs(self.b) ** 2
        if abs(det - 1.0) > 1e-10 * max(1.0, abs(self.a) ** 2):
            raise GeometryError("матрица не лежит в SU(1,1)", det=det)
        a, b = _canonical_sign(np.complex128(self.a), np.complex128(self.b))
        object.__setattr__(self, 'a', complex(a))
        object.__setattr__(self, 'b', complex(b))
        object.__setattr__(self, 'word', free_reduce(self.word))

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.b.conjugate(), self.a.conjugate()]])

    @property
    def trace(self) -> float:
        return 2.0 * self.a.real

    def __matmul__(self, other: 'IsometryElement') -> 'IsometryElement':
        a, b = su_mul(self.a, self.b, other.a, other.b)
        return IsometryElement(complex(a), complex(b), self.word + other.word)

    def inverse(self) -> 'IsometryElement':
        a, b = su_inv(self.a, self.b)
        return IsometryElement(complex(a), complex(b), inverse_word(self.word))

    def __call__(self, z):
        return su_apply(self.a, self.b, z)

    def act_boundary(self, theta):
        return su_apply_boundary(self.a, self.b, theta)

    def act_vector(self, z, angle):
        w = su_apply(self.a, self.b, z)
        return w, canonical_angle(angle + np.angle(su_derivative(self.a, self.b, z)))

    def is_hyperbolic(self) -> bool:
        return abs(self.a.real) > 1.0 + 1e-12

    def translation_length(self) -> float:
        return 2.0 * math.acosh(max(abs(self.a.real), 1.0))

    def fixed_points(self) -> tuple:
        """(отталкивающая, притягивающая) неподвижные точки на абсолюте"""
        return fixed_points(self.a, self.b)

    def close_to(self, other: 'IsometryElement', tol: float = DEDUP_TOL) -> bool:
        scale = max(1.0, abs(self.a))
        return max(abs(self.a - other.a), abs(self.b - other.b)) <= tol * scale


IDENTITY = IsometryElement(1.0 + 0j, 0j, ())


def fixed_points(a, b):
    """Неподвижные точки гиперболического элемента: (ξ₋, ξ₊) как углы"""
    a = np.asarray(a, complex)
    b = np.asarray(b, complex)
    root = np.sqrt(np.clip(np.real(a) ** 2 - 1.0, 0.0, None))
    z1 = (1j * np.imag(a) + root) / np.conj(b)
    z2 = (1j * np.imag(a) - root) / np.conj(b)
    d1 = np.abs(su_derivative(a, b, z1))
    attracting = np.where(d1 < 1.0, z1, z2)
    repelling = np.where(d1 < 1.0, z2, z1)
    xm = canonical_angle(np.angle(repelling))
    xp = canonical_angle(np.angle(attracting))
    if np.ndim(xm) == 0:
        return float(xm), float(xp)
    return xm, xp


def apply(m: IsometryElement, z) -> complex:
    """Образ точки диска под действием элемента группы"""
    z = validate_point(z)
    w = complex(su_apply(m.a, m.b, z))
    if not abs(w) < 1.0 - 1e-15:
        raise GeometryError("boundary proximity: образ вышел на абсолют", point=z, word=m.word)
    return w


def bolza_generators() -> list:
    """Восемь спаривающих стороны изометрий; T_{k+4} = T_k^{-1}"""
    return [IsometryElement(complex(_GEN_A[k]), complex(_GEN_B[k]), (k,)) for k in range(N_LETTERS)]


def word_element(word) -> IsometryElement:
    a, b = 1.0 + 0j, 0j
    for k in word:
        a, b = su_mul(a, b, _GEN_A[k], _GEN_B[k])
    return IsometryElement(complex(a), complex(b), tuple(word))


def relator_defect() -> float:
    """Отклонение произведения по соотношению от ±I"""
    g = word_element(RELATOR)
    return float(max(abs(abs(g.a) - 1.0), abs(g.b), abs(abs(g.a.real) - 1.0)))


# --- область Дирихле и редукция ---

def domain_violation(z):
    """Максимальное нарушение условия Дирихле и номер нарушенной стороны"""
    z = np.asarray(z, complex)
    k = 2.0 * z / (1.0 + np.abs(z) ** 2)
    values = np.real(np.multiply.outer(k, np.conj(SIDE_NORMALS))) - SIDE_OFFSET
    return values.max(axis=-1), values.argmax(axis=-1)


def in_domain(z, tol: float = 1e-9):
    v, _ = domain_violation(z)
    return v <= tol


def sample_domain(rng, n: int) -> np.ndarray:
    """n точек в P, равномерных по гиперболической площади (отбор по плотности 4/(1-|z|²)²)"""
    r_max = math.tanh(0.5 * CIRCUMRADIUS)
    floor = (1.0 - r_max ** 2) ** 2
    out = []
    have = 0
    while have < n:
        batch = max(64, 40 * (n - have))
        r = r_max * np.sqrt(rng.random(batch))
        z = r * np.exp(2j * np.pi * rng.random(batch))
        keep = (rng.random(batch) < floor / (1.0 - r ** 2) ** 2) & in_domain(z)
        out.append(z[keep])
        have += int(keep.sum())
    return np.concatenate(out)[:n]


def reduce_to_domain(z) -> tuple:
    """
    Жадная редукция: пока z нарушает сторону k, применяем T_k^{-1}.
    Каждый шаг строго уменьшает d0(z, 0), так что процесс конечен.
    Возвращает (z', γ) с z' = γ(z).
    """
    z = validate_point(z)
    a, b = 1.0 + 0j, 0j
    letters = []
    for _ in range(REDUCE_MAX_STEPS):
        violation, k = domain_violation(z)
        if violation <= DOMAIN_TOL:
            g = IsometryElement(complex(a), complex(b), tuple(reversed(letters)))
            return z, g
        inv = inverse_letter(int(k))
        z = complex(su_apply(_GEN_A[inv], _GEN_B[inv], z))
        a, b = su_mul(_GEN_A[inv], _GEN_B[inv], a, b)
        letters.append(inv)
    raise GeometryError("редукция не сошлась: численная патология у границы", point=z, steps=REDUCE_MAX_STEPS)


_GEN_LIST = [(complex(_GEN_A[k]), complex(_GEN_B[k])) for k in range(N_LETTERS)]
_NORMAL_LIST = [(math.cos(k * math.pi / 4.0), math.sin(k * math.pi / 4.0)) for k in range(N_LETTERS)]


def reduce_point_fast(z: complex) -> tuple:
    """Скалярная редукция на чистом Python для правых частей ОДУ: (z', a, b)"""
    a, b = 1.0 + 0j, 0j
    for _ in range(REDUCE_MAX_STEPS):
        x, y = z.real, z.imag
        scale = 2.0 / (1.0 + x * x + y * y)
        best, k = -1.0, -1
        for j, (cx, cy) in enumerate(_NORMAL_LIST):
            v = scale * (x * cx + y * cy) - SIDE_OFFSET
            if v > best:
                best, k = v, j
        if best <= DOMAIN_TOL:
            return z, a, b
        ga, gb = _GEN_LIST[(k + 4) % N_LETTERS]
        z = (ga * z + gb) / (gb.conjugate() * z + ga.conjugate())
        a, b = ga * a + gb * b.conjugate(), ga * b + gb * a.conjugate()
    raise GeometryError("редукция не сошлась: численная патология у границы", point=z)


def reduce_many(z: np.ndarray) -> tuple:
    """Векторизованная редукция: (z', a, b) с z' = (a z + b)/(b̄ z + ā)"""
    shape = np.shape(z)
    flat_z = validate_points(np.array(z, dtype=complex).ravel())
    flat_a = np.ones(flat_z.size, complex)
    flat_b = np.zeros(flat_z.size, complex)
    active = np.arange(flat_z.size)
    for _ in range(REDUCE_MAX_STEPS):
        if active.size == 0:
            return flat_z.reshape(shape), flat_a.reshape(shape), flat_b.reshape(shape)
        violation, k = domain_violation(flat_z[active])
        todo = violation > DOMAIN_TOL
        active = active[todo]
        if active.size == 0:
            continue
        inv = (k[todo] + 4) % N_LETTERS
        ga, gb = _GEN_A[inv], _GEN_B[inv]
        flat_z[active] = su_apply(ga, gb, flat_z[active])
        flat_a[active], flat_b[active] = su_mul(ga, gb, flat_a[active], flat_b[active])
    raise GeometryError("векторная редукция не сошлась", remaining=int(active.size))


BOUNDARY_SNAP = 1e-13


def snap_element(a, b) -> IsometryElement:
    """Точный элемент группы, ближайший к приближённой матрице (a, b)"""
    zeta = complex(b / np.conj(a))
    if abs(zeta) >= 1.0 - BOUNDARY_SNAP:
        raise GeometryError("snap: орбитная точка неотличима от абсолюта", point=zeta)
    z0, g = reduce_to_domain(zeta)
    if dist0(z0, 0j) > 0.5 * INRADIUS:
        raise GeometryError("snap: матрица далека от элементов группы", residual=dist0(z0, 0j))
    return g.inverse()


# --- шары в группе ---

@dataclass
class GroupBall:
    """
    Конечное множество элементов группы с деревом слов.
    kind = 'word' (длина слова <= radius) или 'orbit' (d0(0, γ0) <= radius).
    """
    radius: float
    kind: str
    a: np.ndarray
    b: np.ndarray
    parent: np.ndarray
    letter: np.ndarray
    level: np.ndarray
    truncation_radius: float
    tol: float = DEDUP_TOL
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return int(self.a.size)

    def word(self, i: int) -> tuple:
        letters = []
        while self.parent[i] >= 0:
            letters.append(int(self.letter[i]))
            i = int(self.parent[i])
        return tuple(reversed(letters))

    def element(self, i: int) -> IsometryElement:
        return IsometryElement(complex(self.a[i]), complex(self.b[i]), self.word(i))

    @property
    def elements(self) -> list:
        return [self.element(i) for i in range(len(self))]

    def orbit(self, z) -> np.ndarray:
        return su_apply(self.a, self.b, complex(z))

    def displacements(self, z=0j) -> np.ndarray:
        return dist0(complex(z), self.orbit(z))

    def translated(self, g: IsometryElement) -> 'GroupBall':
        """Шар g·B (слева), с тем же деревом слов относительно g"""
        a, b = su_mul(g.a, g.b, self.a, self.b)
        a, b = _canonical_sign(a, b)
        return GroupBall(self.radius, self.kind, a, b, self.parent.copy(), self.letter.copy(),
                         self.level.copy(), self.truncation_radius, self.tol,
                         dict(self.meta, translated_by=list(g.word)))

    def cache_key(self) -> str:
        return f"{self.kind}_{self.radius:g}_{self.tol:g}"


def _features(a, b):
    scale = np.maximum(1.0, np.abs(a))[:, None]
    return np.column_stack([a.real, a.imag, b.real, b.imag]) / scale


def _dedup_candidates(ca, cb, known_tree, tol):
    """Индексы новых кандидатов: не совпадают с известными и друг с другом"""
    feats = _features(ca, cb)
    keep = np.ones(ca.size, bool)
    if known_tree is not None and known_tree.n > 0:
        d, _ = known_tree.query(feats, k=1, distance_upper_bound=tol)
        keep &= ~np.isfinite(d)
    idx = np.flatnonzero(keep)
    if idx.size > 1:
        pairs = cKDTree(feats[idx]).query_pairs(tol, output_type='ndarray')
        if pairs.size:
            dup = np.zeros(idx.size, bool)
            dup[np.max(pairs, axis=1)] = True
            idx = idx[~dup]
    return idx


def expand_words(a, b, last):
    """Все произведения g·T_k без немедленного сокращения последней буквы"""
    n = a.size
    ca = np.repeat(a, N_LETTERS)
    cb = np.repeat(b, N_LETTERS)
    letters = np.tile(np.arange(N_LETTERS), n)
    parents = np.repeat(np.arange(n), N_LETTERS)
    lasts = np.repeat(last, N_LETTERS)
    ok = (lasts < 0) | (letters != (lasts + 4) % N_LETTERS)
    ca, cb, letters, parents = ca[ok], cb[ok], letters[ok], parents[ok]
    na, nb = su_mul(ca, cb, _GEN_A[letters], _GEN_B[letters])
    na, nb = _canonical_sign(na, nb)
    return na, nb, letters, parents


def enumerate_ball(L: int, cap: int = 8, tol: float = DEDUP_TOL, max_elements: int = 5_000_000) -> GroupBall:
    """
    Все элементы с приведённым словом длины <= L. BFS по уровням графа Кэли:
    соотношение чётной длины, поэтому кандидаты уровня n+1 совпадают
    либо с элементами уровня n-1, либо друг с другом.
    """
    if L < 0:
        raise ConfigError("длина слова должна быть неотрицательной", L=L)
    if L > cap:
        raise ResourceError(f"word cap превышен: L={L} > {cap}", L=L, cap=cap)

    logger.info(f"🚀 Перечисление шара по словам, L={L}")
    a_levels = [np.array([1.0 + 0j])]
    b_levels = [np.array([0j])]
    parent_levels = [np.array([-1])]
    letter_levels = [np.array([-1])]
    offsets = [0]
    total = 1
    for n in range(L + 1):
        a, b = a_levels[n], b_levels[n]
        na, nb, letters, parents = expand_words(a, b, letter_levels[n])
        prev_tree = cKDTree(_features(a_levels[n - 1], b_levels[n - 1])) if n >= 1 else None
        keep = _dedup_candidates(na, nb, prev_tree, tol)
        if n == L:
            trunc = float(np.min(dist0(0j, su_apply(na[keep], nb[keep], 0j)))) if keep.size else math.inf
            break
        a_levels.append(na[keep])
        b_levels.append(nb[keep])
        parent_levels.append(parents[keep] + offsets[n])
        letter_levels.append(letters[keep])
        offsets.append(total)
        total += keep.size
        logger.info(f"   уровень {n + 1}: {keep.size} элементов (всего {total})")
        if total > max_elements:
            raise ResourceError("шар слишком велик", elements=total, limit=max_elements)

    ball = GroupBall(
        radius=float(L), kind='word',
        a=np.concatenate(a_levels), b=np.concatenate(b_levels),
        parent=np.concatenate(parent_levels), letter=np.concatenate(letter_levels),
        level=np.concatenate([np.full(x.size, i) for i, x in enumerate(a_levels)]),
        truncation_radius=trunc, tol=tol,
    )
    logger.info(f"✅ Шар L={L}: {len(ball)} элементов, радиус полноты {trunc:.4f}")
    return ball


def enumerate_orbit(R: float, tol: float = DEDUP_TOL, max_elements: int = 5_000_000,
                    max_levels: int = 64) -> GroupBall:
    """
    Все γ с d0(0, γ0) <= R. Отсечение BFS по смещению корректно: если x лежит
    на отрезке [0, γ0] в плитке с центром s, то d(0,s) <= d(0,x) + d(x,γ0) = d(0,γ0).
    """
    logger.info(f"🚀 Перечисление шара орбиты, R={R:.3f}")
    all_a = [np.array([1.0 + 0j])]
    all_b = [np.array([0j])]
    parents_all = [np.array([-1])]
    letters_all = [np.array([-1])]
    levels_all = [np.array([0])]
    frontier = (all_a[0], all_b[0], letters_all[0], 0)
    total = 1
    level = 0
    while frontier[0].size:
        if level >= max_levels:
            raise ResourceError("BFS орбиты не завершился за отведённое число уровней", levels=level)
        fa, fb, flast, foffset = frontier
        na, nb, letters, parents = expand_words(fa, fb, flast)
        inside = dist0(0j, su_apply(na, nb, 0j)) <= R
        na, nb, letters, parents = na[inside], nb[inside], letters[inside], parents[inside]
        known = cKDTree(_features(np.concatenate(all_a), np.concatenate(all_b)))
        keep = _dedup_candidates(na, nb, known, tol)
        level += 1
        new_a, new_b = na[keep], nb[keep]
        all_a.append(new_a)
        all_b.append(new_b)
        parents_all.append(parents[keep] + foffset)
        letters_all.append(letters[keep])
        levels_all.append(np.full(keep.size, level))
        frontier = (new_a, new_b, letters[keep], total)
        total += keep.size
        if keep.size:
            logger.info(f"   уровень {level}: {keep.size} элементов (всего {total})")
        if total > max_elements:
            raise ResourceError("шар орбиты слишком велик", elements=total, limit=max_elements)
    ball = GroupBall(
        radius=float(R), kind='orbit',
        a=np.concatenate(all_a), b=np.concatenate(all_b),
        parent=np.concatenate(parents_all), letter=np.concatenate(letters_all),
        level=np.concatenate(levels_all), truncation_radius=float(R), tol=tol,
        meta={'levels': level},
    )
    logger.info(f"✅ Шар орбиты R={R:.3f}: {len(ball)} элементов за {level} уровней")
    return ball


# --- классы сопряжённости ---

@dataclass(frozen=True, order=True)
class ConjClassRep:
    """Циклически приведённое слово, минимальное среди поворотов (и поворотов обратного)"""
    word: tuple
    oriented: bool = True
    proper_power: bool = False

    def element(self) -> IsometryElement:
        return word_element(self.word)

    def inverse(self) -> 'ConjClassRep':
        return ConjClassRep(canonical_word(inverse_word(self.word), self.oriented),
                            self.oriented, self.proper_power)


def cyclic_reduce(word) -> tuple:
    w = list(free_reduce(word))
    while len(w) >= 2 and w[0] == inverse_letter(w[-1]):
        w = w[1:-1]
    return tuple(w)


def canonical_word(word, oriented: bool = True) -> tuple:
    w = cyclic_reduce(word)
    if not w:
        return ()
    candidates = [w[i:] + w[:i] for i in range(len(w))]
    if not oriented:
        inv = inverse_word(w)
        candidates += [inv[i:] + inv[:i] for i in range(len(inv))]
    return min(candidates)


def is_proper_power(word) -> bool:
    n = len(word)
    for d in range(1, n):
        if n % d == 0 and word[:d] * (n // d) == tuple(word):
            return True
    return False


def conjugacy_classes(L: int, oriented: bool = True) -> list:
    """Канонические представители циклически приведённых слов длины <= L"""
    if L < 1:
        raise ConfigError("для классов нужна длина L >= 1", L=L)
    reps = set()
    for n in range(1, L + 1):
        for word in _reduced_words(n):
            if word[0] == inverse_letter(word[-1]) and n > 1:
                continue
            reps.add(canonical_word(word, oriented))
    out = sorted(ConjClassRep(w, oriented, is_proper_power(w)) for w in reps)
    logger.info(f"📋 Классов сопряжённости до длины {L}: {len(out)} (ориентированные={oriented})")
    return out


def _reduced_words(n: int):
    def extend(prefix):
        if len(prefix) == n:
            yield tuple(prefix)
            return
        for k in range(N_LETTERS):
            if prefix and k == inverse_letter(prefix[-1]):
                continue
            prefix.append(k)
            yield from extend(prefix)
            prefix.pop()
    yield from extend([])


# --- кэш ---

def save_ball(ball: GroupBall, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(
        path, version=CACHE_VERSION, radius=ball.radius, kind=ball.kind, tol=ball.tol,
        a=ball.a, b=ball.b, parent=ball.parent, letter=ball.letter, level=ball.level,
        truncation_radius=ball.truncation_radius,
    )
    logger.info(f"💾 Шар сохранён: {path}")
    return path


def load_ball(path, kind: str, radius: float, tol: float = DEDUP_TOL):
    """Загрузка шара из кэша; None при несовпадении версии или ключа"""
    path = Path(path)
    if not path.exists():
        return None
    with np.load(path, allow_pickle=False) as data:
        if int(data['version']) != CACHE_VERSION:
            logger.warning(f"⚠️ Версия кэша не совпадает: {path}")
            return None
        if str(data['kind']) != kind or float(data['radius']) != float(radius) or float(data['tol']) != tol:
            logger.warning(f"⚠️ Ключ кэша не совпадает: {path}")
            return None
        ball = GroupBall(float(data['radius']), str(data['kind']), data['a'], data['b'], data['parent'],
                         data['letter'], data['level'], float(data['truncation_radius']), float(data['tol']))
    logger.info(f"📂 Шар загружен из кэша: {path} ({len(ball)} элементов)")
    return ball


def cached_ball(cache_dir, kind: str, radius: float, tol: float = DEDUP_TOL, **kwargs) -> GroupBall:
    """Шар из кэша или свежее перечисление с записью в кэш"""
    path = None
    if cache_dir:
        path = Path(cache_dir) / f"ball_{kind}_{radius:g}_{tol:g}.npz"
        ball = load_ball(path, kind, radius, tol)
        if ball is not None:
            return ball
    if kind == 'word':
        ball = enumerate_ball(int(radius), tol=tol, **kwargs)
    else:
        ball = enumerate_orbit(float(radius), tol=tol, **kwargs)
    if path is not None:
        save_ball(ball, path)
    return ball
