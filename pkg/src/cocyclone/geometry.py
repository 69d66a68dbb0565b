"""Nonpositively curved model spaces: flat R^n, the hyperbolic plane and SPD(d).

Points are plain numpy arrays:

* ``euclidean``: shape ``(n,)``
* ``hyperbolic``: shape ``(3,)``, on the upper sheet ``<x, x> = -1/|kappa|``
  of Minkowski space with form ``diag(1, 1, -1)``
* ``spd``: shape ``(d, d)``, symmetric positive definite, with the
  affine-invariant metric ``d(P, Q) = ||log(P^{-1/2} Q P^{-1/2})||_F``

Isometries are :class:`Isometry` values.  For SPD the group is GL(d) acting by
congruence, extended by the inversion ``P -> P^{-1}`` so that point
symmetries ``Q -> P Q^{-1} P`` are representable.
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np
import scipy.linalg

__all__ = [
    "GeometryError",
    "SpaceDescriptor",
    "Space",
    "Euclidean",
    "Hyperbolic",
    "SPD",
    "Isometry",
    "make_space",
    "distance",
    "geodesic_point",
    "midpoint",
    "symmetry_at",
    "transvection",
    "displacement_bound_f",
    "spd_transvection_bound",
    "point_to_json",
    "point_from_json",
    "isometry_to_json",
    "isometry_from_json",
]

KINDS = ("euclidean", "hyperbolic", "spd")

ZERO_DISTANCE = 1e-12
POINT_TOL = 1e-9
SYMMETRY_TOL = 1e-10
ISOMETRY_TOL = 1e-9
EIG_FLOOR = 1e-300
EIG_RELATIVE_MIN = 1e-12
DEFAULT_COND_CAP = 1e12

ETA = np.diag([1.0, 1.0, -1.0])


class GeometryError(ValueError):
    """Invalid point, isometry or mismatched dimensions."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def _sym(x: np.ndarray) -> np.ndarray:
    return 0.5 * (x + np.swapaxes(x, -1, -2))


def _mink(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return x[..., 0] * y[..., 0] + x[..., 1] * y[..., 1] - x[..., 2] * y[..., 2]


# ---------------------------------------------------------------------------
# symmetric eigendecomposition helpers


def _eigh(p: np.ndarray, check: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a (stack of) SPD matrices with the singularity policy.

    Eigenvalues are clamped below at ``EIG_FLOOR``; a matrix whose smallest
    eigenvalue is below ``EIG_RELATIVE_MIN`` times its largest is rejected.
    """
    w, v = np.linalg.eigh(_sym(p))
    if check:
        top = w[..., -1]
        if np.any(top <= 0) or np.any(w[..., 0] <= EIG_RELATIVE_MIN * top):
            raise GeometryError("matrix is not numerically positive definite")
    return np.maximum(w, EIG_FLOOR), v


def _apply_fn(w: np.ndarray, v: np.ndarray, fw: np.ndarray) -> np.ndarray:
    return _sym((v * fw[..., None, :]) @ np.swapaxes(v, -1, -2))


def spd_fn(p: np.ndarray, fn, check: bool = True) -> np.ndarray:
    w, v = _eigh(p, check)
    return _apply_fn(w, v, fn(w))


def sym_exp(x: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(_sym(x))
    return _apply_fn(w, v, np.exp(w))


def spd_log(p: np.ndarray) -> np.ndarray:
    return spd_fn(p, np.log)


def spd_sqrt_pair(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(P^{1/2}, P^{-1/2})``."""
    w, v = _eigh(p)
    s = np.sqrt(w)
    return _apply_fn(w, v, s), _apply_fn(w, v, 1.0 / s)


# ---------------------------------------------------------------------------
# isometries


@dataclass(frozen=True, eq=False)
class Isometry:
    """A rigid motion of one of the backends.

    ``euclidean``: ``x -> matrix @ x + shift`` with orthogonal ``matrix``.
    ``hyperbolic``: ``x -> matrix @ x`` with ``matrix`` in O+(2, 1).
    ``spd``: ``P -> g P g^T`` (``flip=False``) or ``P -> g P^{-1} g^T``
    (``flip=True``), where ``g = matrix``.

    Use the ``euclidean``/``hyperbolic``/``spd`` constructors for validated
    input; composition and inversion of valid isometries skip re-validation.
    """

    kind: str
    matrix: np.ndarray
    shift: np.ndarray | None = None
    flip: bool = False

    # -- constructors --------------------------------------------------
    @classmethod
    def euclidean(cls, q: Any, t: Any) -> "Isometry":
        q = np.array(q, dtype=float)
        t = np.array(t, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1] or t.shape != (q.shape[0],):
            raise GeometryError("euclidean isometry needs a square matrix and a matching shift")
        if np.abs(q.T @ q - np.eye(len(q))).max() > ISOMETRY_TOL:
            raise GeometryError("euclidean linear part is not orthogonal")
        return cls("euclidean", _frozen(q), _frozen(t))

    @classmethod
    def hyperbolic(cls, m: Any) -> "Isometry":
        m = np.array(m, dtype=float)
        if m.shape != (3, 3):
            raise GeometryError("hyperbolic isometry must be 3x3")
        scale = max(1.0, float(np.abs(m).max()) ** 2)
        if np.abs(m.T @ ETA @ m - ETA).max() > ISOMETRY_TOL * scale:
            raise GeometryError("matrix does not preserve the Minkowski form")
        if m[2, 2] <= 0:
            raise GeometryError("matrix reverses time orientation")
        return cls("hyperbolic", _frozen(m))

    @classmethod
    def spd(cls, g: Any, flip: bool = False, cond_cap: float = DEFAULT_COND_CAP) -> "Isometry":
        g = np.array(g, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1] or g.shape[0] < 2:
            raise GeometryError("spd isometry needs a square matrix of side >= 2")
        cond = np.linalg.cond(g)
        if not np.isfinite(cond) or cond > cond_cap:
            raise GeometryError(f"matrix condition number {cond:.3g} exceeds cap {cond_cap:.3g}")
        return cls("spd", _frozen(g), None, bool(flip))

    @classmethod
    def identity(cls, kind: str, dim: int) -> "Isometry":
        if kind == "euclidean":
            return cls("euclidean", _frozen(np.eye(dim)), _frozen(np.zeros(dim)))
        if kind == "hyperbolic":
            return cls("hyperbolic", _frozen(np.eye(3)))
        if kind == "spd":
            return cls("spd", _frozen(np.eye(dim)))
        raise GeometryError(f"unknown kind {kind!r}")

    # -- group operations -------------------------------------------------
    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def __call__(self, p: np.ndarray) -> np.ndarray:
        return self.apply(p)

    def apply(self, p: np.ndarray) -> np.ndarray:
        if self.kind == "euclidean":
            return self.matrix @ p + self.shift
        if self.kind == "hyperbolic":
            r2 = -_mink(p, p)
            x = self.matrix @ p
            x[2] = math.sqrt(r2 + x[0] ** 2 + x[1] ** 2)
            return x
        g = self.matrix
        if self.flip:
            return _sym(g @ np.linalg.solve(p, g.T))
        return _sym(g @ p @ g.T)

    def apply_many(self, ps: np.ndarray) -> np.ndarray:
        if self.kind == "euclidean":
            return ps @ self.matrix.T + self.shift
        if self.kind == "hyperbolic":
            r2 = -_mink(ps, ps)
            x = ps @ self.matrix.T
            x[..., 2] = np.sqrt(r2 + x[..., 0] ** 2 + x[..., 1] ** 2)
            return x
        g = self.matrix
        if self.flip:
            return _sym(g @ np.linalg.solve(ps, np.broadcast_to(g.T, ps.shape)))
        return _sym(g @ ps @ g.T)

    def __matmul__(self, other: "Isometry") -> "Isometry":
        """``self @ other`` is the map ``x -> self(other(x))``."""
        if self.kind != other.kind or self.dim != other.dim:
            raise GeometryError("cannot compose isometries of different spaces")
        if self.kind == "euclidean":
            return Isometry(
                "euclidean",
                _frozen(self.matrix @ other.matrix),
                _frozen(self.matrix @ other.shift + self.shift),
            )
        if self.kind == "hyperbolic":
            return Isometry("hyperbolic", _frozen(self.matrix @ other.matrix))
        if self.flip:
            # g1 (g2 X g2^T)^{-1} g1^T = (g1 g2^{-T}) X^{-1} (g1 g2^{-T})^T
            g = np.linalg.solve(other.matrix, self.matrix.T).T
            return Isometry("spd", _frozen(g), None, not other.flip)
        return Isometry("spd", _frozen(self.matrix @ other.matrix), None, other.flip)

    def inverse(self) -> "Isometry":
        if self.kind == "euclidean":
            qt = self.matrix.T
            return Isometry("euclidean", _frozen(qt.copy()), _frozen(-qt @ self.shift))
        if self.kind == "hyperbolic":
            return Isometry("hyperbolic", _frozen(ETA @ self.matrix.T @ ETA))
        if self.flip:
            return Isometry("spd", _frozen(self.matrix.T.copy()), None, True)
        return Isometry("spd", _frozen(np.linalg.inv(self.matrix)))

    def __repr__(self) -> str:
        extra = " flip" if self.flip else ""
        return f"Isometry({self.kind}{extra}, dim={self.dim})"


# ---------------------------------------------------------------------------
# space descriptors and backends


@dataclass(frozen=True)
class SpaceDescriptor:
    kind: str
    dim: int
    kappa: float

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise GeometryError(f"unknown space kind {self.kind!r}")
        if self.dim < 1:
            raise GeometryError("dim must be positive")
        if self.kind == "euclidean" and self.kappa != 0:
            raise GeometryError("euclidean space has kappa = 0")
        if self.kind != "euclidean" and not self.kappa < 0:
            raise GeometryError(f"{self.kind} space needs kappa < 0")
        if self.kind == "hyperbolic" and self.dim != 2:
            raise GeometryError("hyperbolic backend is the plane (dim = 2)")
        if self.kind == "spd" and self.dim < 2:
            raise GeometryError("spd backend needs dim >= 2")

    def build(self) -> "Space":
        return make_space(self)

    def to_json(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "kappa": self.kappa}

    @classmethod
    def from_json(cls, obj: dict) -> "SpaceDescriptor":
        kind = obj["kind"]
        dim = int(obj.get("dim", 2))
        default = {"euclidean": 0.0, "hyperbolic": -1.0, "spd": -0.5}[kind]
        return cls(kind, dim, float(obj.get("kappa", default)))


class Space(abc.ABC):
    """Common interface of the three backends."""

    kind: str
    dim: int

    @property
    @abc.abstractmethod
    def descriptor(self) -> SpaceDescriptor: ...

    @abc.abstractmethod
    def check_point(self, p: Any) -> np.ndarray:
        """Validate ``p`` and return it as a float array (raises GeometryError)."""

    @abc.abstractmethod
    def origin(self) -> np.ndarray: ...

    @abc.abstractmethod
    def distance(self, p: np.ndarray, q: np.ndarray) -> float: ...

    @abc.abstractmethod
    def log(self, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Tangent vector at ``p`` pointing to ``q`` with norm ``d(p, q)``."""

    @abc.abstractmethod
    def log_many(self, p: np.ndarray, qs: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def exp(self, p: np.ndarray, v: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def norm(self, p: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Riemannian norm of tangent vector(s) ``v`` at ``p`` (broadcasts)."""

    @abc.abstractmethod
    def geodesic(self, p: np.ndarray, q: np.ndarray, t: float) -> np.ndarray: ...

    @abc.abstractmethod
    def symmetry(self, p0: np.ndarray) -> Isometry: ...

    @abc.abstractmethod
    def tangent_basis(self, p: np.ndarray) -> list[np.ndarray]:
        """Orthonormal basis of the tangent space at ``p``."""

    @abc.abstractmethod
    def random_isometry(self, rng: np.random.Generator, scale: float = 1.0) -> Isometry: ...

    def identity(self) -> Isometry:
        return Isometry.identity(self.kind, self.dim)

    def check_isometry(self, g: Isometry) -> Isometry:
        if g.kind != self.kind or (self.kind != "hyperbolic" and g.dim != self.dim):
            raise GeometryError(f"isometry {g!r} does not act on {self.descriptor}")
        return g

    def same_point(self, p: np.ndarray, q: np.ndarray) -> bool:
        return self.distance(p, q) <= ZERO_DISTANCE

    def random_point(self, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
        """Point at distance at most ``scale`` from the origin."""
        o = self.origin()
        basis = self.tangent_basis(o)
        c = rng.normal(size=len(basis))
        c *= rng.uniform() ** (1.0 / len(basis)) * scale / max(np.linalg.norm(c), 1e-300)
        return self.exp(o, sum(ci * b for ci, b in zip(c, basis)))

    def shape(self) -> tuple[int, ...]:
        return self.origin().shape


class Euclidean(Space):
    kind = "euclidean"

    def __init__(self, dim: int):
        self.dim = int(dim)

    @property
    def descriptor(self) -> SpaceDescriptor:
        return SpaceDescriptor("euclidean", self.dim, 0.0)

    def check_point(self, p: Any) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if p.shape != (self.dim,):
            raise GeometryError(f"expected a point of shape ({self.dim},), got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise GeometryError("non-finite coordinates")
        return p

    def origin(self) -> np.ndarray:
        return np.zeros(self.dim)

    def distance(self, p, q) -> float:
        return float(np.linalg.norm(np.asarray(q) - np.asarray(p)))

    def log(self, p, q):
        return q - p

    def log_many(self, p, qs):
        return qs - p

    def exp(self, p, v):
        return p + v

    def norm(self, p, v):
        return np.linalg.norm(v, axis=-1)

    def geodesic(self, p, q, t):
        return p + t * (q - p)

    def symmetry(self, p0) -> Isometry:
        return Isometry("euclidean", _frozen(-np.eye(self.dim)), _frozen(2.0 * np.asarray(p0, float)))

    def tangent_basis(self, p):
        return list(np.eye(self.dim))

    def random_isometry(self, rng, scale=1.0) -> Isometry:
        q, r = np.linalg.qr(rng.normal(size=(self.dim, self.dim)))
        q = q * np.sign(np.diag(r))
        t = rng.normal(size=self.dim) * scale
        return Isometry.euclidean(q, t)


class Hyperbolic(Space):
    """Hyperboloid model of the plane of constant curvature ``kappa < 0``."""

    kind = "hyperbolic"

    def __init__(self, kappa: float = -1.0):
        if not kappa < 0:
            raise GeometryError("hyperbolic curvature must be negative")
        self.kappa = float(kappa)
        self.dim = 2
        self.radius = 1.0 / math.sqrt(-self.kappa)
        self.r2 = self.radius**2

    @property
    def descriptor(self) -> SpaceDescriptor:
        return SpaceDescriptor("hyperbolic", 2, self.kappa)

    def check_point(self, p: Any) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if p.shape != (3,):
            raise GeometryError(f"expected a hyperboloid point of shape (3,), got {p.shape}")
        if not np.all(np.isfinite(p)) or p[2] <= 0:
            raise GeometryError("hyperboloid point must be finite with positive last coordinate")
        if abs(_mink(p, p) + self.r2) > POINT_TOL * max(1.0, p[2] ** 2):
            raise GeometryError("point is not on the hyperboloid sheet")
        return p

    def lift(self, x: Sequence[float]) -> np.ndarray:
        """Point of the sheet with the given first two coordinates."""
        x0, x1 = float(x[0]), float(x[1])
        return np.array([x0, x1, math.sqrt(self.r2 + x0 * x0 + x1 * x1)])

    def origin(self) -> np.ndarray:
        return np.array([0.0, 0.0, self.radius])

    def distance(self, p, q) -> float:
        dx = np.asarray(q) - np.asarray(p)
        chord = math.sqrt(max(float(_mink(dx, dx)), 0.0))
        return 2.0 * self.radius * math.asinh(chord / (2.0 * self.radius))

    def _dist_many(self, p, qs):
        dx = qs - p
        chord = np.sqrt(np.maximum(_mink(dx, dx), 0.0))
        return 2.0 * self.radius * np.arcsinh(chord / (2.0 * self.radius))

    def log_many(self, p, qs):
        qs = np.atleast_2d(qs)
        d = self._dist_many(p, qs)
        u = qs + (_mink(p[None, :], qs) / self.r2)[:, None] * p
        # |u| = R sinh(d / R)
        denom = self.radius * np.sinh(d / self.radius)
        factor = np.where(d > 0, d / np.where(denom > 0, denom, 1.0), 0.0)
        return factor[:, None] * u

    def log(self, p, q):
        return self.log_many(p, np.asarray(q)[None, :])[0]

    def norm(self, p, v):
        return np.sqrt(np.maximum(_mink(v, v), 0.0))

    def exp(self, p, v):
        n = float(self.norm(p, v))
        if n == 0.0:
            return np.array(p, dtype=float)
        x = math.cosh(n / self.radius) * p + self.radius * math.sinh(n / self.radius) * (v / n)
        return self.lift(x[:2])

    def geodesic(self, p, q, t):
        return self.exp(p, t * self.log(p, q))

    def symmetry(self, p0) -> Isometry:
        p0 = np.asarray(p0, dtype=float)
        m = -np.eye(3) - (2.0 / self.r2) * np.outer(p0, ETA @ p0)
        return Isometry("hyperbolic", _frozen(m))

    def tangent_basis(self, p):
        basis = []
        for e in np.eye(3)[:2]:
            v = e + (_mink(p, e) / self.r2) * p
            for b in basis:
                v = v - _mink(v, b) * b
            basis.append(v / math.sqrt(_mink(v, v)))
        return basis

    def random_isometry(self, rng, scale=1.0) -> Isometry:
        theta = rng.uniform(0, 2 * math.pi)
        c, s = math.cos(theta), math.sin(theta)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        if rng.uniform() < 0.5:
            rot = rot @ np.diag([1.0, -1.0, 1.0])
        o = self.origin()
        target = self.random_point(rng, scale)
        # transvection sending o to target
        j = self.symmetry(self.geodesic(o, target, 0.5)) @ self.symmetry(o)
        return Isometry.hyperbolic(j.matrix @ rot)


class SPD(Space):
    """Symmetric positive-definite ``d x d`` matrices, affine-invariant metric."""

    kind = "spd"

    def __init__(self, dim: int, kappa: float = -0.5):
        if dim < 2:
            raise GeometryError("spd backend needs dim >= 2")
        self.dim = int(dim)
        self.kappa = float(kappa)

    @property
    def descriptor(self) -> SpaceDescriptor:
        return SpaceDescriptor("spd", self.dim, self.kappa)

    def check_point(self, p: Any) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if p.shape != (self.dim, self.dim):
            raise GeometryError(f"expected a {self.dim}x{self.dim} matrix, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise GeometryError("non-finite matrix entries")
        if np.abs(p - p.T).max() > SYMMETRY_TOL * max(1.0, float(np.abs(p).max())):
            raise GeometryError("matrix is not symmetric")
        _eigh(p)
        return p

    def origin(self) -> np.ndarray:
        return np.eye(self.dim)

    def distance(self, p, q) -> float:
        w = scipy.linalg.eigh(_sym(np.asarray(q)), _sym(np.asarray(p)), eigvals_only=True)
        if np.any(w <= 0):
            raise GeometryError("matrix is not numerically positive definite")
        return float(np.linalg.norm(np.log(w)))

    def _whitened_logs(self, p, qs):
        half, ihalf = spd_sqrt_pair(p)
        w, v = _eigh(ihalf @ qs @ ihalf)
        return half, _apply_fn(w, v, np.log(w))

    def log_many(self, p, qs):
        half, logs = self._whitened_logs(p, np.asarray(qs))
        return _sym(half @ logs @ half)

    def log(self, p, q):
        return self.log_many(p, np.asarray(q)[None])[0]

    def norm(self, p, v):
        _, ihalf = spd_sqrt_pair(p)
        return np.linalg.norm(ihalf @ v @ ihalf, axis=(-2, -1))

    def exp(self, p, v):
        half, ihalf = spd_sqrt_pair(p)
        return _sym(half @ sym_exp(ihalf @ v @ ihalf) @ half)

    def geodesic(self, p, q, t):
        half, ihalf = spd_sqrt_pair(p)
        w, v = _eigh(ihalf @ q @ ihalf)
        return _sym(half @ _apply_fn(w, v, w**t) @ half)

    def symmetry(self, p0) -> Isometry:
        return Isometry("spd", _frozen(np.array(p0, dtype=float)), None, True)

    def tangent_basis(self, p):
        half, _ = spd_sqrt_pair(p)
        d = self.dim
        basis = []
        for i in range(d):
            for j in range(i, d):
                e = np.zeros((d, d))
                if i == j:
                    e[i, i] = 1.0
                else:
                    e[i, j] = e[j, i] = 1.0 / math.sqrt(2.0)
                basis.append(half @ e @ half)
        return basis

    def random_isometry(self, rng, scale=1.0) -> Isometry:
        d = self.dim
        x = rng.normal(size=(d, d)) * scale / math.sqrt(d)
        q, r = np.linalg.qr(rng.normal(size=(d, d)))
        g = scipy.linalg.expm(x) @ (q * np.sign(np.diag(r)))
        return Isometry.spd(g, flip=bool(rng.uniform() < 0.3))


def make_space(desc: SpaceDescriptor | dict) -> Space:
    if isinstance(desc, dict):
        desc = SpaceDescriptor.from_json(desc)
    if desc.kind == "euclidean":
        return Euclidean(desc.dim)
    if desc.kind == "hyperbolic":
        return Hyperbolic(desc.kappa)
    return SPD(desc.dim, desc.kappa)


# ---------------------------------------------------------------------------
# functional API


def _check_pair(space: Space, p, q) -> tuple[np.ndarray, np.ndarray]:
    return space.check_point(p), space.check_point(q)


def distance(space: Space, p, q) -> float:
    p, q = _check_pair(space, p, q)
    return space.distance(p, q)


def geodesic_point(space: Space, p, q, t: float) -> np.ndarray:
    """Point ``gamma(t)`` of the constant-speed geodesic with ``gamma(0)=p``, ``gamma(1)=q``.

    Any real ``t`` is accepted (the backends are geodesically complete).
    """
    p, q = _check_pair(space, p, q)
    return space.geodesic(p, q, float(t))


def midpoint(space: Space, p, q) -> np.ndarray:
    return geodesic_point(space, p, q, 0.5)


def symmetry_at(space: Space, p0) -> Isometry:
    """Geodesic symmetry fixing ``p0``: sends ``q`` to the point ``q'`` with ``p0 = mid(q, q')``."""
    return space.symmetry(space.check_point(p0))


def transvection(space: Space, p1, p2) -> Isometry:
    """``sigma_{p2} o sigma_{p1}``; translates the geodesic through p1, p2 by ``2 d(p1, p2)``."""
    p1, p2 = _check_pair(space, p1, p2)
    return space.symmetry(p2) @ space.symmetry(p1)


def displacement_bound_f(b: float, ell: float, lam: float = 1.0) -> float:
    """Upper bound on ``d(Jq, q)`` for a transvection ``J`` of translation length ``b``.

    ``ell`` is the distance from ``q`` to the axis of ``J`` and ``lam`` is
    ``sqrt(-kappa)`` for a curvature lower bound ``kappa``.  The bound is
    ``arccosh(RHS) / lam`` with

        RHS = cosh^2(lam b/2) cosh^2(2 lam ell) + sinh^2(lam b/2) cosh(2 lam ell)
              - cosh(lam b/2) sinh^2(2 lam ell).

    ``RHS - 1`` is evaluated in the cancellation-free form
    ``2 sinh^2(lam b/4) (c C^2 + (c + 1) C + 1)`` with ``c = cosh(lam b/2)``
    and ``C = cosh(2 lam ell)``.
    """
    if b < 0 or ell < 0:
        raise ValueError("b and ell must be nonnegative")
    if not lam > 0:
        raise ValueError("lam must be positive")
    c = math.cosh(lam * b / 2.0)
    cc = math.cosh(2.0 * lam * ell)
    excess = 2.0 * math.sinh(lam * b / 4.0) ** 2 * (c * cc * cc + (c + 1.0) * cc + 1.0)
    excess = max(excess, 0.0)
    # arccosh(1 + x) = 2 asinh(sqrt(x / 2))
    return 2.0 * math.asinh(math.sqrt(excess / 2.0)) / lam


def spd_transvection_bound(b: float, ell: float) -> float:
    """Bound on ``d(Jq, q)`` in SPD(d) for a transvection of translation length ``b``.

    ``ell`` is the distance from ``q`` to any point of the axis.  Integrating
    the speed of ``t -> m^t q m^t`` and bounding the eigenvalue spread of the
    moving point gives ``b cosh((ell + b) / sqrt(2))``.
    """
    if b < 0 or ell < 0:
        raise ValueError("b and ell must be nonnegative")
    return b * math.cosh((ell + b) / math.sqrt(2.0))


# ---------------------------------------------------------------------------
# JSON


def point_to_json(space: Space, p: np.ndarray) -> dict:
    return {"kind": space.kind, "dim": space.dim, "data": [float(x) for x in np.ravel(p)]}


def point_from_json(space: Space, obj: dict) -> np.ndarray:
    if obj.get("kind", space.kind) != space.kind:
        raise GeometryError(f"point kind {obj.get('kind')!r} does not match space {space.kind!r}")
    return space.check_point(np.array(obj["data"], dtype=float).reshape(space.shape()))


def isometry_to_json(g: Isometry) -> dict:
    out = {"kind": g.kind, "dim": g.dim, "matrix": [float(x) for x in g.matrix.ravel()]}
    if g.kind == "euclidean":
        out["shift"] = [float(x) for x in g.shift]
    if g.kind == "spd":
        out["flip"] = g.flip
    return out


def isometry_from_json(obj: dict) -> Isometry:
    kind = obj["kind"]
    m = np.array(obj["matrix"], dtype=float)
    n = int(round(math.sqrt(m.size)))
    if n * n != m.size:
        raise GeometryError("isometry matrix must be square")
    m = m.reshape(n, n)
    if kind == "euclidean":
        return Isometry.euclidean(m, obj["shift"])
    if kind == "hyperbolic":
        return Isometry.hyperbolic(m)
    if kind == "spd":
        return Isometry.spd(m, flip=bool(obj.get("flip", False)))
    raise GeometryError(f"unknown isometry kind {kind!r}")
