"""Closing perturbations: make a section invariant, then conjugate into a point stabilizer."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.stats import qmc

from .barycenter import MeanConfig
from .dynamics import Cocycle, FiniteBase, subexponential_diagnostic
from .geometry import (
    DEFAULT_COND_CAP,
    ZERO_DISTANCE,
    GeometryError,
    Isometry,
    SPD,
    Space,
    displacement_bound_f,
    spd_transvection_bound,
)
from .sections import Section, _check_base, displacement, section_barycenter

__all__ = [
    "PerturbationReport",
    "BoundCheckReport",
    "PipelineStage",
    "SubexponentialWarning",
    "homogeneity_map",
    "homogeneity_midpoint",
    "section_conjugator",
    "sample_ball",
    "perturb_cocycle",
    "perturbation_bound",
    "conjugate_to_stabilizer",
    "nonperturbative_conjugate",
    "orthogonality_defect",
    "transvection_matrix",
    "pipeline_stage",
    "matrix_pipeline",
    "distance_to_axis",
    "verify_displacement_bound",
]

TEST_BALL_POINTS = 64
ACTION_AGREEMENT_TOL = 1e-9


class SubexponentialWarning(UserWarning):
    """The growth diagnostic does not decrease: the cocycle may have positive drift."""


@dataclass(frozen=True)
class PerturbationReport:
    N: int | None = None
    displacement_before: float | None = None
    perturbation_size: float | None = None
    invariance_residual: float | None = None
    stabilizer_residual: float | None = None
    orthogonality_defect: float | None = None

    def merged(self, other: "PerturbationReport") -> "PerturbationReport":
        """Fields of ``other`` override unset fields of ``self``."""
        return replace(self, **{k: v for k, v in asdict(other).items() if v is not None})

    def to_json(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# homogeneity map


def homogeneity_midpoint(space: Space, p0: np.ndarray, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return space.geodesic(space.symmetry(p0)(p), q, 0.5)


def homogeneity_map(space: Space, p0: np.ndarray, p: np.ndarray, q: np.ndarray) -> Isometry:
    """Transvection ``J(p, q) = sigma_m o sigma_{p0}`` with ``m = mid(sigma_{p0}(p), q)``.

    ``J(p, q)`` sends ``p`` to ``q`` and translates the geodesic through
    ``p0`` and ``m`` by ``2 d(p0, m) <= d(p, q)``.
    """
    p0, p, q = (space.check_point(x) for x in (p0, p, q))
    m = homogeneity_midpoint(space, p0, p, q)
    return space.symmetry(m) @ space.symmetry(p0)


def section_conjugator(space: Space, phi: Section, p0: np.ndarray) -> list[Isometry]:
    """``U(w) = J(p0, phi(w))``, an isometry sending ``p0`` to ``phi(w)``."""
    return [homogeneity_map(space, p0, p0, v) for v in phi.values]


def sample_ball(space: Space, center: np.ndarray, radius: float, count: int = TEST_BALL_POINTS) -> list[np.ndarray]:
    """``center`` plus ``count`` Halton points of the geodesic ball of the given radius."""
    basis = space.tangent_basis(center)
    k = len(basis)
    u = qmc.Halton(d=k, scramble=False).random(count)
    coords = (2.0 * u - 1.0) * radius / math.sqrt(k)
    pts = [np.array(center, dtype=float)]
    for c in coords:
        pts.append(space.exp(center, sum(ci * b for ci, b in zip(c, basis))))
    return pts


# ---------------------------------------------------------------------------
# perturbation and conjugation


def perturb_cocycle(c: Cocycle, phi: Section, p0: np.ndarray, radius: float | None = None,
                    n_test: int = TEST_BALL_POINTS, n: int | None = None) -> tuple[Cocycle, PerturbationReport]:
    """``A~(w) = J(A(w) phi(w), phi(F w)) o A(w)``, for which ``phi`` is invariant.

    ``perturbation_size`` is ``max d(A~(w) x, A(w) x)`` over states and a test
    ball around ``p0`` of radius ``2 max_w d(phi(w), p0) + 1`` (unless
    ``radius`` is given).
    """
    _check_base(c, phi)
    space = c.space
    p0 = space.check_point(p0)
    succ = c.base.successor
    new = []
    for w in c.base.states():
        a = c.generators[w]
        p, q = a(phi[w]), phi[succ[w]]
        if space.distance(p, q) <= ZERO_DISTANCE:
            new.append(a)
        else:
            new.append(homogeneity_map(space, p0, p, q) @ a)
    tilde = Cocycle(c.base, new, space, c.memo_budget)
    ball = sample_ball(space, p0, _test_radius(space, phi, p0, radius), n_test)
    size = max(space.distance(t(x), a(x)) for t, a in zip(tilde.generators, c.generators) for x in ball)
    report = PerturbationReport(
        N=n,
        displacement_before=displacement(c, phi),
        perturbation_size=size,
        invariance_residual=displacement(tilde, phi),
    )
    return tilde, report


def _test_radius(space: Space, phi: Section, p0: np.ndarray, radius: float | None) -> float:
    if radius is not None:
        return float(radius)
    return 2.0 * max(space.distance(v, p0) for v in phi.values) + 1.0


def perturbation_bound(c: Cocycle, phi: Section, p0: np.ndarray, radius: float | None = None,
                       n_test: int = TEST_BALL_POINTS) -> float:
    """A priori bound on the ``perturbation_size`` reported by :func:`perturb_cocycle`.

    Each ``J`` has translation length at most ``b = displacement(phi)`` and its
    axis passes through ``p0``, so ``d(J y, y) <= f(b, d(y, p0))`` for
    ``y = A(w) x``.  ``f`` is the closed form on the hyperbolic plane,
    :func:`spd_transvection_bound` on SPD(d), and ``b`` itself on flat space.
    """
    _check_base(c, phi)
    space = c.space
    p0 = space.check_point(p0)
    b = displacement(c, phi)
    ball = sample_ball(space, p0, _test_radius(space, phi, p0, radius), n_test)
    ell = max(space.distance(a(x), p0) for a in c.generators for x in ball)
    if space.kind == "euclidean":
        return b
    if space.kind == "hyperbolic":
        return displacement_bound_f(b, ell, math.sqrt(-space.kappa))
    return spd_transvection_bound(b, ell)


def orthogonality_defect(gs: Sequence[Isometry]) -> float:
    """``max ||g^T g - I||_F`` over congruence matrices ``g``."""
    worst = 0.0
    for g in gs:
        if g.kind != "spd":
            raise GeometryError("orthogonality defect is defined for the spd backend")
        if g.flip:
            raise GeometryError("isometry contains an inversion; it is not induced by GL(d)")
        m = g.matrix
        worst = max(worst, float(np.linalg.norm(m.T @ m - np.eye(len(m)))))
    return worst


def _conjugate(c: Cocycle, phi: Section, p0: np.ndarray) -> tuple[Cocycle, list[Isometry]]:
    us = section_conjugator(c.space, phi, p0)
    succ = c.base.successor
    bs = [us[succ[w]].inverse() @ c.generators[w] @ us[w] for w in c.base.states()]
    return Cocycle(c.base, bs, c.space, c.memo_budget), us


def _stabilizer_report(c: Cocycle, b: Cocycle, p0: np.ndarray, n: int | None) -> PerturbationReport:
    res = max(c.space.distance(g(p0), p0) for g in b.generators)
    ortho = orthogonality_defect(b.generators) if c.space.kind == "spd" else None
    return PerturbationReport(N=n, stabilizer_residual=res, orthogonality_defect=ortho)


def conjugate_to_stabilizer(c_tilde: Cocycle, phi: Section, p0: np.ndarray,
                            n: int | None = None) -> tuple[Cocycle, PerturbationReport]:
    """``B(w) = U(F w)^{-1} o A~(w) o U(w)`` with ``U(w) = J(p0, phi(w))``.

    ``B`` fixes ``p0`` up to the invariance residual of ``phi``.  The
    orthogonality defect measures ``B`` as computed; no cleanup is applied.
    """
    _check_base(c_tilde, phi)
    p0 = c_tilde.space.check_point(p0)
    b, _ = _conjugate(c_tilde, phi, p0)
    report = _stabilizer_report(c_tilde, b, p0, n)
    return b, replace(report, invariance_residual=displacement(c_tilde, phi))


def nonperturbative_conjugate(c: Cocycle, phi: Section, p0: np.ndarray,
                              n: int | None = None) -> tuple[Cocycle, PerturbationReport]:
    """Conjugate the unperturbed cocycle by ``U(w) = J(p0, phi(w))``.

    ``d(B(w) p0, p0) = d(A(w) phi(w), phi(F w))``, so the stabilizer residual
    equals the displacement of ``phi``.
    """
    _check_base(c, phi)
    p0 = c.space.check_point(p0)
    b, _ = _conjugate(c, phi, p0)
    report = _stabilizer_report(c, b, p0, n)
    return b, replace(report, displacement_before=displacement(c, phi))


# ---------------------------------------------------------------------------
# GL(d) pipeline


def transvection_matrix(p0: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Matrix ``g`` with ``sigma_m(sigma_{p0}(Q)) = g Q g^T`` on SPD(d); ``g = m p0^{-1}``."""
    return np.linalg.solve(p0.T, m.T).T


def _check_action_agreement(space: Space, j: Isometry, g: np.ndarray, probes: Sequence[np.ndarray]) -> None:
    for x in probes:
        a, b = j(x), g @ x @ g.T
        if np.abs(a - b).max() > ACTION_AGREEMENT_TOL * max(1.0, float(np.abs(b).max())):
            raise GeometryError("transvection matrix does not reproduce the composed symmetries")


@dataclass(frozen=True, eq=False)
class PipelineStage:
    n: int
    phi: Section
    tilde: Cocycle
    conjugated: Cocycle
    conjugator: list[Isometry]
    perturbed_matrices: list[np.ndarray]
    report: PerturbationReport
    transvection_lengths: list[float] = field(default_factory=list)


def pipeline_stage(c: Cocycle, n: int, p0: np.ndarray, cfg: MeanConfig = MeanConfig(),
                   threads: int = 1) -> PipelineStage:
    """Build ``phi_N``, perturb, conjugate and collect the report for one ``N``."""
    space = c.space
    phi = section_barycenter(c, n, p0, cfg, threads)
    tilde, rep = perturb_cocycle(c, phi, p0, n=n)
    b, us = _conjugate(tilde, phi, p0)
    rep = rep.merged(_stabilizer_report(tilde, b, p0, n))
    succ = c.base.successor
    lengths = []
    mats = []
    probes = [p0] + [space.exp(p0, v) for v in space.tangent_basis(p0)]
    for w in c.base.states():
        m = homogeneity_midpoint(space, p0, c.generators[w](phi[w]), phi[succ[w]])
        lengths.append(2.0 * space.distance(p0, m))
        if space.kind == "spd":
            g_j = transvection_matrix(p0, m)
            j = tilde.generators[w] @ c.generators[w].inverse()
            _check_action_agreement(space, j, g_j, probes)
            mats.append(g_j @ c.generators[w].matrix)
    return PipelineStage(n, phi, tilde, b, us, mats, rep, lengths)


def matrix_pipeline(raw: Sequence[np.ndarray], base: FiniteBase, ns: Sequence[int],
                    p0: np.ndarray | None = None, cfg: MeanConfig = MeanConfig(),
                    cond_cap: float = DEFAULT_COND_CAP, threads: int = 1) -> list[PerturbationReport]:
    """Run the closing construction on a GL(d) cocycle acting on SPD(d) by congruence."""
    mats = [np.asarray(g, dtype=float) for g in raw]
    d = mats[0].shape[0]
    space = SPD(d)
    c = Cocycle(base, [Isometry.spd(g, cond_cap=cond_cap) for g in mats], space)
    p0 = space.origin() if p0 is None else space.check_point(p0)
    diag = subexponential_diagnostic(c, ns)
    values = [v for _, v in diag]
    if any(b > a + 1e-12 for a, b in zip(values, values[1:])) or (len(values) > 1 and values[-1] >= values[0] > 0):
        warnings.warn(
            f"growth diagnostic is not decreasing ({values[0]:.3g} -> {values[-1]:.3g}); "
            "the cocycle may have positive drift",
            SubexponentialWarning,
            stacklevel=2,
        )
    return [pipeline_stage(c, n, p0, cfg, threads).report for n in ns]


# ---------------------------------------------------------------------------
# displacement estimate checks


def distance_to_axis(space: Space, p1: np.ndarray, p2: np.ndarray, q: np.ndarray, iters: int = 200) -> float:
    """Distance from ``q`` to the complete geodesic through ``p1 != p2``.

    Closed form on the hyperboloid (the geodesic is cut out by a spacelike
    normal ``n``, and ``sinh(d / R) = |<q, n>| / R``); ternary search along the
    geodesic otherwise.
    """
    if space.kind == "hyperbolic":
        return _hyperbolic_axis_distance(space, p1, p2, q)
    return _axis_distance_search(space, p1, p2, q, iters)


def _hyperbolic_axis_distance(space, p1, p2, q) -> float:
    eta = np.diag([1.0, 1.0, -1.0])
    n = np.cross(eta @ p1, eta @ p2)
    n = n / math.sqrt(float(n @ eta @ n))
    r = space.radius
    return r * math.asinh(abs(float(q @ eta @ n)) / r)


def _axis_distance_search(space: Space, p1: np.ndarray, p2: np.ndarray, q: np.ndarray, iters: int = 200) -> float:
    base = space.distance(p1, p2)
    reach = 2.0 * space.distance(q, p1) / base + 1.0
    lo, hi = -reach, reach
    f = lambda t: space.distance(q, space.geodesic(p1, p2, t))  # noqa: E731
    for _ in range(iters):
        a = lo + (hi - lo) / 3.0
        b = hi - (hi - lo) / 3.0
        if f(a) <= f(b):
            hi = b
        else:
            lo = a
        if hi - lo < 1e-13:
            break
    return min(f(lo), f(hi), f(0.5 * (lo + hi)))


@dataclass
class BoundCheckReport:
    kind: str
    trials: int
    min_slack: float
    passed: bool
    details: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)


def verify_displacement_bound(space: Space, trials: int, seed: int, tol: float = 1e-8) -> BoundCheckReport:
    """Monte-Carlo check of ``d(Jq, q) <= f(b, d(q, axis))`` for transvections ``J``.

    hyperbolic: the closed form of :func:`displacement_bound_f` with
    ``lam = sqrt(|kappa|)``, plus the degenerate cases ``b = 0`` and
    ``ell = 0``.  euclidean: ``d(Jq, q) = b``.  spd: an empirical envelope
    over a ``(b, ell)`` grid must be monotone in both variables and stay below
    :func:`spd_transvection_bound`.
    """
    if trials < 100:
        raise ValueError("at least 100 trials are required")
    from .fixtures import rng_for

    rng = rng_for(seed, 0)
    if space.kind == "hyperbolic":
        return _verify_hyperbolic(space, trials, rng, tol)
    if space.kind == "euclidean":
        return _verify_euclidean(space, trials, rng)
    return _verify_spd(space, trials, rng)


def _verify_hyperbolic(space, trials, rng, tol) -> BoundCheckReport:
    lam = math.sqrt(-space.kappa)
    # sample in units of the curvature radius so the hyperboloid stays well conditioned
    r = space.radius
    min_slack = math.inf
    worst = {}
    for _ in range(trials):
        p1 = space.random_point(rng, 2.0 * r)
        c = rng.normal(size=2)
        c *= rng.uniform(0.0, 2.0 * r) / np.linalg.norm(c)
        p2 = space.exp(p1, sum(ci * v for ci, v in zip(c, space.tangent_basis(p1))))
        if space.distance(p1, p2) < 1e-6 * r:
            continue
        q = space.random_point(rng, 3.0 * r)
        j = space.symmetry(p2) @ space.symmetry(p1)
        b = 2.0 * space.distance(p1, p2)
        ell = distance_to_axis(space, p1, p2, q)
        s = space.distance(j(q), q)
        slack = displacement_bound_f(b, ell, lam) - s
        if slack < min_slack:
            min_slack = slack
            worst = {"b": b, "ell": ell, "s": s}
    # degenerate cases
    zero_b = 0.0
    on_axis = 0.0
    for _ in range(min(trials, 200)):
        p = space.random_point(rng, 2.0 * r)
        q = space.random_point(rng, 3.0 * r)
        zero_b = max(zero_b, space.distance((space.symmetry(p) @ space.symmetry(p))(q), q))
        p2 = space.random_point(rng, 2.0 * r)
        b = 2.0 * space.distance(p, p2)
        x = space.geodesic(p, p2, rng.uniform(-1.0, 2.0))
        j = space.symmetry(p2) @ space.symmetry(p)
        on_axis = max(on_axis, abs(space.distance(j(x), x) - b), abs(displacement_bound_f(b, 0.0, lam) - b))
    passed = min_slack >= -tol and zero_b <= 1e-9 and on_axis <= 1e-9
    return BoundCheckReport("hyperbolic", trials, min_slack, passed,
                            {"worst": worst, "b_zero_max_s": zero_b, "ell_zero_max_error": on_axis, "lambda": lam})


def _verify_euclidean(space, trials, rng) -> BoundCheckReport:
    worst = 0.0
    for _ in range(trials):
        p1, p2, q = (space.random_point(rng, 3.0) for _ in range(3))
        j = space.symmetry(p2) @ space.symmetry(p1)
        worst = max(worst, abs(space.distance(j(q), q) - 2.0 * space.distance(p1, p2)))
    return BoundCheckReport("euclidean", trials, -worst, worst <= 1e-9, {"max_error": worst})


def _unit_symmetric(rng, d: int, against: np.ndarray | None = None) -> np.ndarray:
    x = rng.normal(size=(d, d))
    x = 0.5 * (x + x.T)
    if against is not None:
        x = x - np.sum(x * against) * against
    return x / np.linalg.norm(x)


def _verify_spd(space, trials, rng, b_grid=(0.0, 0.25, 0.5, 1.0, 1.5, 2.0),
                ell_grid=(0.0, 0.25, 0.5, 1.0, 1.5, 2.0)) -> BoundCheckReport:
    from .geometry import sym_exp

    d = space.dim
    env = np.zeros((len(b_grid), len(ell_grid)))
    for _ in range(trials):
        x = _unit_symmetric(rng, d)
        y = _unit_symmetric(rng, d, x)
        for i, b in enumerate(b_grid):
            m = sym_exp(0.5 * b * x)  # sigma_m o sigma_I translates the axis exp(tX) by b
            for k, ell in enumerate(ell_grid):
                q = sym_exp(ell * y)
                env[i, k] = max(env[i, k], space.distance(m @ q @ m, q))
    mono_b = float(np.min(np.diff(env, axis=0))) if len(b_grid) > 1 else 0.0
    mono_ell = float(np.min(np.diff(env, axis=1))) if len(ell_grid) > 1 else 0.0
    bound = np.array([[spd_transvection_bound(b, ell) for ell in ell_grid] for b in b_grid])
    slack = float(np.min(bound - env))
    on_axis = float(np.max(np.abs(env[:, 0] - np.asarray(b_grid))))
    passed = mono_b >= -1e-9 and mono_ell >= -1e-9 and slack >= -1e-9 and on_axis <= 1e-9
    return BoundCheckReport("spd", trials, slack, passed, {
        "b_grid": list(b_grid), "ell_grid": list(ell_grid), "envelope": env.tolist(),
        "min_increment_b": mono_b, "min_increment_ell": mono_ell, "ell_zero_max_error": on_axis,
    })
