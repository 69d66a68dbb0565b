"""Sections ``Omega -> H`` and constructions of almost-invariant sections."""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .barycenter import MeanConfig, bary_uniform, two_point_interpolant
from .dynamics import BaseMismatchError, Cocycle, ZdCocycle
from .geometry import Isometry, Space, point_from_json, point_to_json

__all__ = [
    "Section",
    "FolnerFamily",
    "constant_section",
    "sup_distance",
    "displacement",
    "pointwise_displacement",
    "n_step_defect",
    "power_displacement",
    "section_barycenter",
    "barycenter_bound",
    "section_dyadic",
    "dyadic_sections",
    "interpolate_family",
    "graph_transform",
    "folner_set",
    "zd_orbit_products",
    "zd_section",
    "almost_invariance_defect",
    "cube_defect_bound",
    "ball_growth_ratio",
    "ball_growth_constant",
    "ball_defect_bound",
]

DEFAULT_ENUMERATION_CAP = 100_000


def map_states(fn: Callable[[int], np.ndarray], states: Iterable[int], threads: int = 1) -> list:
    """Evaluate ``fn`` on every state, optionally on a thread pool; order is preserved."""
    states = list(states)
    if threads <= 1 or len(states) < 2:
        return [fn(w) for w in states]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, states))


@dataclass(frozen=True, eq=False)
class Section:
    """One point of ``space`` per base state."""

    space: Space
    values: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        vals = []
        for v in self.values:
            v = np.array(v, dtype=float)
            v.flags.writeable = False
            vals.append(v)
        object.__setattr__(self, "values", tuple(vals))

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, omega: int) -> np.ndarray:
        return self.values[omega]

    def validate(self) -> "Section":
        for v in self.values:
            self.space.check_point(v)
        return self

    def to_json(self) -> dict:
        return {
            "space": self.space.descriptor.to_json(),
            "values": {str(w): point_to_json(self.space, p)["data"] for w, p in enumerate(self.values)},
        }

    @classmethod
    def from_json(cls, space: Space, obj: dict) -> "Section":
        vals = obj["values"]
        n = len(vals)
        pts = [point_from_json(space, {"data": vals[str(w)]}) for w in range(n)]
        return cls(space, tuple(pts))


def constant_section(space: Space, size: int, p: np.ndarray) -> Section:
    return Section(space, tuple(p for _ in range(size)))


def _check_base(c: Cocycle | ZdCocycle, phi: Section) -> None:
    if len(phi) != c.base.size:
        raise BaseMismatchError(f"section has {len(phi)} values, base has {c.base.size} states")
    if phi.space.kind != c.space.kind or phi.space.dim != c.space.dim:
        raise BaseMismatchError("section and cocycle live on different spaces")


def sup_distance(space: Space, phi: Section, psi: Section) -> float:
    if len(phi) != len(psi):
        raise BaseMismatchError("sections over different bases")
    return max(space.distance(a, b) for a, b in zip(phi.values, psi.values))


def pointwise_displacement(c: Cocycle, phi: Section) -> list[float]:
    _check_base(c, phi)
    succ = c.base.successor
    return [c.space.distance(c.generators[w](phi[w]), phi[succ[w]]) for w in c.base.states()]


def displacement(c: Cocycle, phi: Section) -> float:
    """``max_omega d(A(omega) phi(omega), phi(F omega))``."""
    return max(pointwise_displacement(c, phi))


def n_step_defect(c: Cocycle, phi: Section, n: int, omega: int) -> float:
    """``d(A^{(n)}(omega) phi(omega), phi(F^n omega))``, at most ``n * displacement``."""
    _check_base(c, phi)
    return c.space.distance(c.product(n, omega)(phi[omega]), phi[c.base.step(omega, n)])


def power_displacement(c: Cocycle, phi: Section, n: int) -> float:
    """Displacement of ``phi`` for the iterated cocycle ``A^{(n)}`` over ``F^n``."""
    return max(n_step_defect(c, phi, n, w) for w in c.base.states())


# ---------------------------------------------------------------------------
# barycentric sections


def section_barycenter(c: Cocycle, n: int, p0: np.ndarray, cfg: MeanConfig = MeanConfig(),
                       threads: int = 1) -> Section:
    """``phi_N(w) = bary(p0, A(w)^{-1} p0, ..., [A^{(N-1)}(w)]^{-1} p0)``."""
    if n < 1:
        raise ValueError("N must be positive")
    p0 = c.space.check_point(p0)

    def value(w: int) -> np.ndarray:
        pts = [p0] + [c.product(k, w).inverse()(p0) for k in range(1, n)]
        return bary_uniform(c.space, pts, cfg)

    return Section(c.space, tuple(map_states(value, c.base.states(), threads)))


def barycenter_bound(c: Cocycle, n: int, p0: np.ndarray) -> float:
    """``(1/N) max_w d(A^{(N)}(w) p0, p0)``, the displacement guarantee for ``phi_N``."""
    p0 = c.space.check_point(p0)
    return max(c.space.distance(c.product(n, w)(p0), p0) for w in c.base.states()) / n


def interpolate_family(c: Cocycle, t: float, p0: np.ndarray, cfg: MeanConfig = MeanConfig(),
                       threads: int = 1) -> Section:
    """Section ``phi_t`` joining ``phi_N`` and ``phi_{N+1}`` for ``N = floor(t)``."""
    if t < 1:
        raise ValueError("t must be at least 1")
    n = int(np.floor(t))
    s = float(t - n)
    lo = section_barycenter(c, n, p0, cfg, threads)
    if s == 0.0:
        return lo
    hi = section_barycenter(c, n + 1, p0, cfg, threads)
    vals = map_states(lambda w: two_point_interpolant(c.space, lo[w], hi[w], s, cfg), c.base.states(), threads)
    return Section(c.space, tuple(vals))


# ---------------------------------------------------------------------------
# dyadic (midpoint) construction


def dyadic_sections(c: Cocycle, k: int, phi0: Section) -> list[Section]:
    """``[phi_0, phi_1, ..., phi_k]`` of the midpoint recursion with ``n = 2^k``.

    ``phi_j(w) = mid[A^{(h)}(F^{-h} w) phi_{j-1}(F^{-h} w), phi_{j-1}(w)]``
    with ``h = n / 2^j``; ``phi_j`` has displacement for ``(F^h, A^{(h)})`` at
    most half that of ``phi_{j-1}`` for ``(F^{2h}, A^{(2h)})``.
    """
    if k < 0:
        raise ValueError("k must be nonnegative")
    if not c.base.invertible:
        raise ValueError("dyadic construction needs an invertible base map")
    _check_base(c, phi0)
    n = 1 << k
    out = [phi0]
    for j in range(1, k + 1):
        h = n >> j
        prev = out[-1]
        vals = []
        for w in c.base.states():
            back = c.base.step(w, -h)
            vals.append(c.space.geodesic(c.product(h, back)(prev[back]), prev[w], 0.5))
        out.append(Section(c.space, tuple(vals)))
    return out


def section_dyadic(c: Cocycle, k: int, phi0: Section) -> Section:
    return dyadic_sections(c, k, phi0)[-1]


def graph_transform(c: Cocycle, phi: Section) -> Section:
    """``(Gamma phi)(w) = A(F^{-1} w) phi(F^{-1} w)``; ``sup d(Gamma phi, phi) = displacement``."""
    if not c.base.invertible:
        raise ValueError("graph transform needs an invertible base map")
    _check_base(c, phi)
    pred = c.base.predecessor
    return Section(c.space, tuple(c.generators[pred[w]](phi[pred[w]]) for w in c.base.states()))


# ---------------------------------------------------------------------------
# Z^d actions


@dataclass(frozen=True)
class FolnerFamily:
    """Cubes ``[0, N)^d`` or word-metric (l1) balls of radius ``N`` in Z^d."""

    shape: str
    sizes: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.shape not in ("cube", "l1ball"):
            raise ValueError(f"unknown Folner shape {self.shape!r}")
        sizes = tuple(int(s) for s in self.sizes)
        if not sizes or any(s < 1 for s in sizes):
            raise ValueError("sizes must be positive integers")
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValueError("sizes must be strictly increasing")
        object.__setattr__(self, "sizes", sizes)

    def members(self, d: int, n: int) -> list[tuple[int, ...]]:
        if n not in self.sizes:
            raise ValueError(f"size {n} is not part of this family")
        return folner_set(self.shape, d, n)


def folner_set(shape: str, d: int, n: int) -> list[tuple[int, ...]]:
    if shape == "cube":
        return list(itertools.product(range(n), repeat=d))
    if shape == "l1ball":
        return [h for h in itertools.product(range(-n, n + 1), repeat=d) if sum(map(abs, h)) <= n]
    raise ValueError(f"unknown Folner shape {shape!r}")


def zd_orbit_products(c: ZdCocycle, hs: Sequence[tuple[int, ...]], omega: int) -> dict[tuple[int, ...], Isometry]:
    """``{h: A^{(h)}(omega)}`` built incrementally from ``h = 0``.

    Each product is obtained from a neighbour one generator step closer to the
    origin via the cocycle relation, so values agree with
    :meth:`ZdCocycle.product` up to the compatibility tolerance.
    """
    memo: dict[tuple[int, ...], tuple[Isometry, int]] = {(0,) * c.d: (c.space.identity(), omega)}

    def get(h: tuple[int, ...]) -> tuple[Isometry, int]:
        hit = memo.get(h)
        if hit is not None:
            return hit
        # peel the last nonzero coordinate so that ascending order is kept
        i = max(j for j, x in enumerate(h) if x != 0)
        sign = 1 if h[i] > 0 else -1
        parent = h[:i] + (h[i] - sign,) + h[i + 1:]
        acc, w = get(parent)
        table = c.base.generator_maps[i] if sign > 0 else c.base.inverse_maps[i]
        out = (c.step(i, sign, w) @ acc, table[w])
        memo[h] = out
        return out

    return {h: get(tuple(h))[0] for h in hs}


def zd_section(c: ZdCocycle, family: FolnerFamily, n: int, p0: np.ndarray, cfg: MeanConfig = MeanConfig(),
               enumeration_cap: int = DEFAULT_ENUMERATION_CAP, threads: int = 1) -> Section:
    """``phi_N(w) = bary{[A^{(h)}(w)]^{-1} p0 : h in C_N}`` over a Folner set ``C_N``."""
    p0 = c.space.check_point(p0)
    hs = family.members(c.d, n)
    if len(hs) > enumeration_cap:
        raise ValueError(f"Folner set has {len(hs)} elements, above the cap {enumeration_cap}")

    def value(w: int) -> np.ndarray:
        prods = zd_orbit_products(c, hs, w)
        return bary_uniform(c.space, [prods[h].inverse()(p0) for h in hs], cfg)

    return Section(c.space, tuple(map_states(value, c.base.states(), threads)))


def almost_invariance_defect(c: ZdCocycle, g: Sequence[int], phi: Section) -> float:
    """``max_w d(A^{(g)}(w) phi(w), phi(g w))``."""
    _check_base(c, phi)
    g = tuple(int(x) for x in g)
    return max(c.space.distance(c.product(g, w)(phi[w]), phi[c.base.act(g, w)]) for w in c.base.states())


def cube_defect_bound(c: ZdCocycle, i: int, n: int, p0: np.ndarray) -> float:
    """``(2/N) max_w d(A^{(N e_i)}(w) p0, p0)``, the guarantee for cube sections."""
    e = tuple(n if j == i else 0 for j in range(c.d))
    return 2.0 / n * max(c.space.distance(c.product(e, w)(p0), p0) for w in c.base.states())


def ball_growth_ratio(d: int, k: int) -> float:
    """``k |B(k+1) minus B(k)| / |B(k)|`` for l1 balls in Z^d."""
    inner = len(folner_set("l1ball", d, k))
    outer = len(folner_set("l1ball", d, k + 1))
    return k * (outer - inner) / inner


def ball_growth_constant(d: int, radii: Sequence[int]) -> float:
    """Smallest ``D`` with ``|B(k+1) minus B(k)| / |B(k)| <= D / k`` on the given radii."""
    return max(ball_growth_ratio(d, k) for k in radii)


def ball_defect_bound(c: ZdCocycle, k: int, p0: np.ndarray, growth: float) -> float:
    """``(D/k) max_w max_{h in B(2k+1)} d(A^{(h)}(w) p0, p0)``."""
    hs = folner_set("l1ball", c.d, 2 * k + 1)
    worst = 0.0
    for w in c.base.states():
        prods = zd_orbit_products(c, hs, w)
        worst = max(worst, max(c.space.distance(g(p0), p0) for g in prods.values()))
    return growth / k * worst

