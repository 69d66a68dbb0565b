"""Finite base dynamics, cocycles of isometries and drift estimators."""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .geometry import GeometryError, Isometry, Space

__all__ = [
    "BaseMismatchError",
    "CompatibilityError",
    "FiniteBase",
    "ZdBase",
    "Cocycle",
    "ZdCocycle",
    "cocycle_product",
    "zd_product",
    "maximal_drift_estimate",
    "drift_along_orbit",
    "subadditivity_gap",
    "subexponential_diagnostic",
    "periodic_orbit_drifts",
]

COMPATIBILITY_TOL = 1e-9
DEFAULT_MEMO_BUDGET = 1 << 16


class BaseMismatchError(ValueError):
    pass


class CompatibilityError(ValueError):
    """Generators of a Z^d cocycle do not satisfy the cocycle relation."""


def _as_map(values: Sequence[int], size: int, what: str) -> tuple[int, ...]:
    out = tuple(int(v) for v in values)
    if len(out) != size:
        raise ValueError(f"{what} must have {size} entries, got {len(out)}")
    bad = [v for v in out if not 0 <= v < size]
    if bad:
        raise ValueError(f"{what} has entries outside 0..{size - 1}: {bad[:5]}")
    return out


def _invert(perm: tuple[int, ...]) -> tuple[int, ...] | None:
    inv = [-1] * len(perm)
    for i, j in enumerate(perm):
        if inv[j] != -1:
            return None
        inv[j] = i
    return tuple(inv)


@dataclass(frozen=True)
class FiniteBase:
    """Finite state space ``{0, ..., size-1}`` with successor map ``F``."""

    size: int
    successor: tuple[int, ...]
    labels: tuple[str, ...] | None = None
    predecessor: tuple[int, ...] | None = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.size < 1:
            raise ValueError("base needs at least one state")
        object.__setattr__(self, "successor", _as_map(self.successor, self.size, "successor"))
        object.__setattr__(self, "predecessor", _invert(self.successor))
        if self.labels is not None and len(self.labels) != self.size:
            raise ValueError("one label per state required")

    @classmethod
    def cyclic(cls, m: int, shift: int = 1) -> "FiniteBase":
        return cls(m, tuple((i + shift) % m for i in range(m)))

    @property
    def invertible(self) -> bool:
        return self.predecessor is not None

    def states(self) -> range:
        return range(self.size)

    def check_state(self, omega: int) -> int:
        if not 0 <= omega < self.size:
            raise IndexError(f"state {omega} outside 0..{self.size - 1}")
        return int(omega)

    def step(self, omega: int, n: int = 1) -> int:
        """``F^n(omega)``; negative ``n`` requires an invertible base."""
        if n < 0:
            if self.predecessor is None:
                raise ValueError("base map is not invertible")
            for _ in range(-n):
                omega = self.predecessor[omega]
            return omega
        for _ in range(n):
            omega = self.successor[omega]
        return omega

    def orbit(self, omega: int) -> list[int]:
        """Forward orbit up to (excluding) its first repetition."""
        seen: dict[int, int] = {}
        out = []
        while omega not in seen:
            seen[omega] = len(out)
            out.append(omega)
            omega = self.successor[omega]
        return out

    def periodic_orbits(self) -> list[list[int]]:
        """The periodic cycles of ``F`` (each listed once, from its smallest state)."""
        cycles = []
        done: set[int] = set()
        for w in self.states():
            orb = self.orbit(w)
            start = orb.index(self.successor[orb[-1]])
            cyc = orb[start:]
            if min(cyc) not in done:
                done.add(min(cyc))
                k = cyc.index(min(cyc))
                cycles.append(cyc[k:] + cyc[:k])
        return cycles

    def to_json(self) -> dict:
        out: dict[str, Any] = {"size": self.size, "successor": list(self.successor)}
        if self.labels is not None:
            out["labels"] = list(self.labels)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "FiniteBase":
        labels = obj.get("labels")
        return cls(int(obj["size"]), tuple(obj["successor"]), tuple(labels) if labels else None)


@dataclass(frozen=True)
class ZdBase:
    """Action of Z^d on ``{0, ..., size-1}`` by ``d`` commuting bijections."""

    size: int
    generator_maps: tuple[tuple[int, ...], ...]
    inverse_maps: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.generator_maps:
            raise ValueError("Z^d base needs d >= 1 generators")
        maps = tuple(_as_map(g, self.size, f"generator {i}") for i, g in enumerate(self.generator_maps))
        invs = []
        for i, g in enumerate(maps):
            inv = _invert(g)
            if inv is None:
                raise ValueError(f"generator {i} is not a bijection")
            invs.append(inv)
        for i, j in itertools.combinations(range(len(maps)), 2):
            gi, gj = maps[i], maps[j]
            if any(gi[gj[w]] != gj[gi[w]] for w in range(self.size)):
                raise ValueError(f"generators {i} and {j} do not commute")
        object.__setattr__(self, "generator_maps", maps)
        object.__setattr__(self, "inverse_maps", tuple(invs))

    @classmethod
    def torus(cls, shape: Sequence[int]) -> "ZdBase":
        """Product of cyclic rotations on ``Z/m_1 x ... x Z/m_d`` (row-major state index)."""
        shape = tuple(int(m) for m in shape)
        size = int(np.prod(shape))
        maps = []
        for i in range(len(shape)):
            g = []
            for w in range(size):
                c = list(np.unravel_index(w, shape))
                c[i] = (c[i] + 1) % shape[i]
                g.append(int(np.ravel_multi_index(c, shape)))
            maps.append(tuple(g))
        return cls(size, tuple(maps))

    @property
    def d(self) -> int:
        return len(self.generator_maps)

    def states(self) -> range:
        return range(self.size)

    def act(self, g: Sequence[int], omega: int) -> int:
        """``g . omega`` for ``g`` in Z^d."""
        for i, k in enumerate(g):
            table = self.generator_maps[i] if k > 0 else self.inverse_maps[i]
            for _ in range(abs(int(k))):
                omega = table[omega]
        return omega

    def as_finite_base(self, i: int = 0) -> FiniteBase:
        return FiniteBase(self.size, self.generator_maps[i])

    def to_json(self) -> dict:
        return {"size": self.size, "generator_maps": [list(g) for g in self.generator_maps]}

    @classmethod
    def from_json(cls, obj: dict) -> "ZdBase":
        return cls(int(obj["size"]), tuple(tuple(g) for g in obj["generator_maps"]))


class Cocycle:
    """Cocycle ``A: Omega -> Isom(H)`` over a :class:`FiniteBase`.

    ``product(n, omega)`` is ``A(F^{n-1} omega) ... A(F omega) A(omega)``.
    Products are memoised per ``(n, omega)`` up to ``memo_budget`` entries;
    past that they are recomputed by binary splitting.  The memo is an
    idempotent cache, so concurrent readers may duplicate work but always see
    identical values.
    """

    def __init__(self, base: FiniteBase, generators: Sequence[Isometry], space: Space,
                 memo_budget: int = DEFAULT_MEMO_BUDGET):
        if len(generators) != base.size:
            raise ValueError(f"need one generator per state ({base.size}), got {len(generators)}")
        self.base = base
        self.space = space
        self.generators = tuple(space.check_isometry(g) for g in generators)
        self.memo_budget = int(memo_budget)
        self._memo: dict[tuple[int, int], Isometry] = {}
        self._lock = threading.Lock()

    @property
    def size(self) -> int:
        return self.base.size

    def __call__(self, omega: int) -> Isometry:
        return self.generators[omega]

    def _remember(self, key: tuple[int, int], value: Isometry) -> Isometry:
        with self._lock:
            if len(self._memo) < self.memo_budget:
                return self._memo.setdefault(key, value)
        return value

    def product(self, n: int, omega: int) -> Isometry:
        if n < 0:
            raise ValueError("n must be nonnegative")
        omega = self.base.check_state(omega)
        if n == 0:
            return self.space.identity()
        if n == 1:
            return self.generators[omega]
        hit = self._memo.get((n, omega))
        if hit is not None:
            return hit
        if len(self._memo) >= self.memo_budget:
            return self._split_product(n, omega)
        k = n - 1
        while k > 1 and (k, omega) not in self._memo:
            k -= 1
        acc = self.product(k, omega)
        w = self.base.step(omega, k)
        for j in range(k, n):
            acc = self.generators[w] @ acc
            w = self.base.successor[w]
            acc = self._remember((j + 1, omega), acc)
        return acc

    def _split_product(self, n: int, omega: int) -> Isometry:
        if n == 0:
            return self.space.identity()
        if n == 1:
            return self.generators[omega]
        h = n // 2
        return self._split_product(n - h, self.base.step(omega, h)) @ self._split_product(h, omega)

    def power_base(self, n: int) -> FiniteBase:
        """Base map ``F^n``."""
        return FiniteBase(self.base.size, tuple(self.base.step(w, n) for w in self.base.states()))

    def iterate(self, n: int) -> "Cocycle":
        """The cocycle ``A^{(n)}`` over ``F^n``."""
        return Cocycle(self.power_base(n), [self.product(n, w) for w in self.base.states()],
                       self.space, self.memo_budget)

    def to_json(self) -> dict:
        from .geometry import isometry_to_json

        return {
            "space": self.space.descriptor.to_json(),
            "base": self.base.to_json(),
            "generators": [isometry_to_json(g) for g in self.generators],
        }


class ZdCocycle:
    """Cocycle over a Z^d action, given by its values on the canonical generators.

    The compatibility relation
    ``A^{(e_i)}(e_j w) A^{(e_j)}(w) = A^{(e_j)}(e_i w) A^{(e_i)}(w)``
    is verified at construction by comparing the two composites on a probe
    set of points.
    """

    def __init__(self, base: ZdBase, generators: Sequence[Sequence[Isometry]], space: Space,
                 tol: float = COMPATIBILITY_TOL):
        if len(generators) != base.d:
            raise ValueError(f"need {base.d} generator tables, got {len(generators)}")
        for i, table in enumerate(generators):
            if len(table) != base.size:
                raise ValueError(f"generator table {i} must have {base.size} entries")
        self.base = base
        self.space = space
        self.generators = tuple(tuple(space.check_isometry(g) for g in t) for t in generators)
        self.tol = tol
        self._check_compatibility()

    @property
    def d(self) -> int:
        return self.base.d

    def _probes(self) -> list[np.ndarray]:
        o = self.space.origin()
        return [o] + [self.space.exp(o, b) for b in self.space.tangent_basis(o)]

    def compatibility_defect(self) -> float:
        probes = self._probes()
        worst = 0.0
        gm = self.base.generator_maps
        for i, j in itertools.combinations(range(self.d), 2):
            for w in self.base.states():
                lhs = self.generators[i][gm[j][w]] @ self.generators[j][w]
                rhs = self.generators[j][gm[i][w]] @ self.generators[i][w]
                for p in probes:
                    worst = max(worst, self.space.distance(lhs(p), rhs(p)))
        return worst

    def _check_compatibility(self) -> None:
        defect = self.compatibility_defect()
        if defect > self.tol:
            raise CompatibilityError(f"Z^d cocycle compatibility violated by {defect:.3e} > {self.tol:g}")

    def step(self, i: int, sign: int, omega: int) -> Isometry:
        """``A^{(+e_i)}(omega)`` or ``A^{(-e_i)}(omega) = [A^{(e_i)}(e_i^{-1} omega)]^{-1}``."""
        if sign > 0:
            return self.generators[i][omega]
        return self.generators[i][self.base.inverse_maps[i][omega]].inverse()

    def product(self, g: Sequence[int], omega: int, order: Sequence[int] | None = None) -> Isometry:
        """``A^{(g)}(omega)``, factoring ``g`` one coordinate at a time.

        The default order is ascending coordinates: the ``g_1 e_1`` steps are
        applied first, starting at ``omega``.
        """
        if len(g) != self.d:
            raise ValueError(f"group element must have {self.d} coordinates")
        order = range(self.d) if order is None else order
        acc = self.space.identity()
        w = omega
        for i in order:
            k = int(g[i])
            sign = 1 if k > 0 else -1
            table = self.base.generator_maps[i] if k > 0 else self.base.inverse_maps[i]
            for _ in range(abs(k)):
                acc = self.step(i, sign, w) @ acc
                w = table[w]
        return acc

    def restrict(self, i: int) -> Cocycle:
        """The Z-cocycle along the cyclic subgroup generated by ``e_i``."""
        return Cocycle(self.base.as_finite_base(i), self.generators[i], self.space)


def cocycle_product(c: Cocycle, n: int, omega: int) -> Isometry:
    return c.product(n, omega)


def zd_product(c: ZdCocycle, g: Sequence[int], omega: int) -> Isometry:
    return c.product(g, omega)


def maximal_drift_estimate(c: Cocycle, n: int, p0: np.ndarray) -> float:
    """``(1/n) max_omega d(A^{(n)}(omega) p0, p0)``."""
    if n < 1:
        raise ValueError("N must be positive")
    p0 = c.space.check_point(p0)
    return max(c.space.distance(c.product(n, w)(p0), p0) for w in c.base.states()) / n


def drift_along_orbit(c: Cocycle, omega0: int, n: int, p0: np.ndarray) -> float:
    if n < 1:
        raise ValueError("N must be positive")
    p0 = c.space.check_point(p0)
    return c.space.distance(c.product(n, omega0)(p0), p0) / n


def subadditivity_gap(c: Cocycle, n: int, m: int, p0: np.ndarray) -> float:
    """``(n+m) est(n+m) - n est(n) - m est(m)``; nonpositive up to rounding."""
    return ((n + m) * maximal_drift_estimate(c, n + m, p0)
            - n * maximal_drift_estimate(c, n, p0) - m * maximal_drift_estimate(c, m, p0))


def periodic_orbit_drifts(c: Cocycle, p0: np.ndarray) -> list[tuple[list[int], float]]:
    """Exact drift of each periodic-orbit measure.

    On a cycle of length ``k`` the drift is the translation length of the
    holonomy ``A^{(k)}(omega)`` divided by ``k``; it is estimated here by
    ``d(H^j p0, p0) / (j k)`` for a large power ``j``.
    """
    out = []
    for cyc in c.base.periodic_orbits():
        k = len(cyc)
        hol = c.product(k, cyc[0])
        j = 256
        acc = c.space.identity()
        for _ in range(j):
            acc = hol @ acc
        out.append((cyc, c.space.distance(acc(p0), p0) / (j * k)))
    return out


def subexponential_diagnostic(c: Cocycle, ns: Sequence[int]) -> list[tuple[int, float]]:
    """``max_omega (1/N) log max(||g_N||, ||g_N^{-1}||)`` for the matrices ``g_N`` of ``A^{(N)}``."""
    if c.space.kind != "spd":
        raise GeometryError("subexponential diagnostic needs the spd backend")
    if any(g.flip for g in c.generators):
        raise GeometryError("generators must be congruences (no inversion part)")
    rows = []
    for n in ns:
        if n < 1:
            raise ValueError("N must be positive")
        worst = 0.0
        for w in c.base.states():
            g = c.product(n, w).matrix
            s = np.linalg.svd(g, compute_uv=False)
            worst = max(worst, float(max(np.log(s[0]), -np.log(s[-1]))) / n)
        rows.append((int(n), worst))
    return rows
