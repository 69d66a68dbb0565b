"""Reproducible cocycle fixtures.

All randomness is drawn from Philox streams keyed by ``(seed, stream)``, so a
fixture depends only on its seed and never on evaluation order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import scipy.linalg

from .dynamics import Cocycle, FiniteBase, ZdBase, ZdCocycle
from .geometry import (
    Euclidean,
    Hyperbolic,
    Isometry,
    SPD,
    Space,
    SpaceDescriptor,
    isometry_from_json,
    make_space,
)

__all__ = [
    "Fixture",
    "rng_for",
    "identity_fixture",
    "constant_fixture",
    "translation_fixture",
    "rotation_coboundary_fixture",
    "hyperbolic_coboundary_fixture",
    "random_bounded_fixture",
    "load_fixture",
    "fixture_to_json",
    "zd_translation_fixture",
    "zd_torsion_fixture",
    "rotation",
]

STREAM_FIXTURE = 1


def rng_for(seed: int, stream: int) -> np.random.Generator:
    """Counter-based generator for one purpose (``stream``) of a 64-bit ``seed``."""
    seed = int(seed)
    if not 0 <= seed < 1 << 64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return np.random.Generator(np.random.Philox(key=seed + (int(stream) << 64)))


@dataclass(frozen=True, eq=False)
class Fixture:
    name: str
    cocycle: Cocycle
    p0: np.ndarray
    zero_drift: bool
    extras: dict[str, Any] = field(default_factory=dict)

    @property
    def space(self) -> Space:
        return self.cocycle.space


def rotation(theta: float, d: int = 2, plane: tuple[int, int] = (0, 1)) -> np.ndarray:
    r = np.eye(d)
    i, j = plane
    c, s = math.cos(theta), math.sin(theta)
    r[i, i], r[i, j], r[j, i], r[j, j] = c, -s, s, c
    return r


def _random_rotation(rng: np.random.Generator, d: int) -> np.ndarray:
    if d == 2:
        return rotation(rng.uniform(0.0, 2.0 * math.pi))
    x = rng.normal(size=(d, d))
    return scipy.linalg.expm(x - x.T)


def identity_fixture(space: Space, base: FiniteBase) -> Fixture:
    c = Cocycle(base, [space.identity()] * base.size, space)
    return Fixture("identity", c, space.origin(), True)


def constant_fixture(space: Space, base: FiniteBase, g: Isometry) -> Fixture:
    c = Cocycle(base, [g] * base.size, space)
    return Fixture("constant", c, space.origin(), False, {"generator": g})


def translation_fixture(base: FiniteBase, dim: int, seed: int, scale: float = 1.0,
                        mean: Sequence[float] | None = None) -> Fixture:
    """Translations ``v(w) = c + u(F w) - u(w)`` of R^dim; drift is ``|c|``."""
    rng = rng_for(seed, STREAM_FIXTURE)
    u = rng.normal(size=(base.size, dim)) * scale
    c = np.zeros(dim) if mean is None else np.asarray(mean, dtype=float)
    space = Euclidean(dim)
    gens = [Isometry.euclidean(np.eye(dim), c + u[base.successor[w]] - u[w]) for w in base.states()]
    return Fixture("translation", Cocycle(base, gens, space), space.origin(), bool(np.linalg.norm(c) == 0),
                   {"mean": c, "potential": u})


def rotation_coboundary_fixture(base: FiniteBase, d: int, seed: int, scale: float = 0.5) -> Fixture:
    """GL(d) cocycle ``A(w) = u(F w) R(w) u(w)^{-1}`` acting on SPD(d).

    ``u`` has positive determinant and ``R`` takes values in SO(d), so ``A`` is
    conjugate to a rotation cocycle by a known conjugacy and has zero drift.
    ``u(w) u(w)^T`` is an exactly invariant section.
    """
    rng = rng_for(seed, STREAM_FIXTURE)
    us = []
    for _ in base.states():
        x = rng.normal(size=(d, d)) * scale
        us.append(scipy.linalg.expm(x))
    rs = [_random_rotation(rng, d) for _ in base.states()]
    raw = [us[base.successor[w]] @ rs[w] @ np.linalg.inv(us[w]) for w in base.states()]
    space = SPD(d)
    c = Cocycle(base, [Isometry.spd(g) for g in raw], space)
    return Fixture("rotation_coboundary", c, space.origin(), True, {"u": us, "R": rs, "raw": raw})


def hyperbolic_coboundary_fixture(base: FiniteBase, seed: int, kappa: float = -1.0, scale: float = 1.0) -> Fixture:
    """``A(w) = U(F w) Rot(w) U(w)^{-1}`` on the hyperbolic plane, with rotations about the origin."""
    rng = rng_for(seed, STREAM_FIXTURE)
    space = Hyperbolic(kappa)
    us = [space.random_isometry(rng, scale) for _ in base.states()]
    rots = []
    for _ in base.states():
        r = np.eye(3)
        r[:2, :2] = rotation(rng.uniform(0.0, 2.0 * math.pi))
        rots.append(Isometry.hyperbolic(r))
    gens = [us[base.successor[w]] @ rots[w] @ us[w].inverse() for w in base.states()]
    return Fixture("hyperbolic_coboundary", Cocycle(base, gens, space), space.origin(), True, {"U": us})


def random_bounded_fixture(space: Space, base: FiniteBase, seed: int, scale: float = 1.0) -> Fixture:
    """Independent random isometries moving the origin by at most about ``scale``."""
    rng = rng_for(seed, STREAM_FIXTURE)
    gens = [space.random_isometry(rng, scale) for _ in base.states()]
    return Fixture("random_bounded", Cocycle(base, gens, space), space.origin(), False)


def fixture_to_json(fx: Fixture, seed: int | None = None) -> dict:
    out = {"name": fx.name, **fx.cocycle.to_json(), "p0": [float(x) for x in np.ravel(fx.p0)]}
    if seed is not None:
        out["seed"] = int(seed)
    return out


def load_fixture(path: str | Path) -> Fixture:
    """Read a fixture document: ``space``, ``base``, ``generators`` and optional ``p0``.

    Generators are isometry objects (``kind``, row-major ``matrix``, plus
    ``shift`` or ``flip``); for the spd backend a bare row-major matrix list
    is read as a GL(d) congruence.
    """
    obj = json.loads(Path(path).read_text())
    space = make_space(SpaceDescriptor.from_json(obj["space"]))
    base = FiniteBase.from_json(obj["base"])
    gens = []
    for g in obj["generators"]:
        if isinstance(g, dict):
            gens.append(isometry_from_json(g))
        else:
            gens.append(Isometry.spd(np.array(g, dtype=float).reshape(space.dim, space.dim)))
    p0 = space.origin()
    if "p0" in obj:
        p0 = space.check_point(np.array(obj["p0"], dtype=float).reshape(space.shape()))
    return Fixture(obj.get("name", Path(path).stem), Cocycle(base, gens, space), p0, False)


# ---------------------------------------------------------------------------
# Z^d


def zd_translation_fixture(shape: Sequence[int], dim: int, seed: int, scale: float = 1.0,
                           means: Sequence[Sequence[float]] | None = None) -> tuple[ZdCocycle, dict]:
    """Commuting translations ``v_i(w) = c_i + u(e_i w) - u(w)`` over a torus action."""
    base = ZdBase.torus(shape)
    rng = rng_for(seed, STREAM_FIXTURE)
    u = rng.normal(size=(base.size, dim)) * scale
    cs = np.zeros((base.d, dim)) if means is None else np.asarray(means, dtype=float)
    eye = np.eye(dim)
    gens = [
        [Isometry.euclidean(eye, cs[i] + u[base.generator_maps[i][w]] - u[w]) for w in base.states()]
        for i in range(base.d)
    ]
    return ZdCocycle(base, gens, Euclidean(dim)), {"potential": u, "means": cs}


def zd_torsion_fixture(size: int, order: int, seed: int) -> tuple[ZdCocycle, dict]:
    """Z^2 action where ``e_2`` acts trivially on the base with a constant rotation of finite order.

    ``e_1`` is the cyclic shift with rotations about the origin of R^2 (which
    commute with the constant ``e_2`` rotation), so the cocycle is compatible.
    """
    rng = rng_for(seed, STREAM_FIXTURE)
    shift = tuple((w + 1) % size for w in range(size))
    ident = tuple(range(size))
    base = ZdBase(size, (shift, ident))
    zero = np.zeros(2)
    g1 = [Isometry.euclidean(rotation(rng.uniform(0, 2 * math.pi)), zero) for _ in range(size)]
    t = Isometry.euclidean(rotation(2 * math.pi / order), zero)
    return ZdCocycle(base, [g1, [t] * size], Euclidean(2)), {"order": order}
