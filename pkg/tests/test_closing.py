import math
import warnings

import numpy as np
import pytest

from cocyclone.closing import (
    SubexponentialWarning,
    _axis_distance_search,
    conjugate_to_stabilizer,
    distance_to_axis,
    homogeneity_map,
    matrix_pipeline,
    nonperturbative_conjugate,
    orthogonality_defect,
    perturb_cocycle,
    perturbation_bound,
    pipeline_stage,
    sample_ball,
    section_conjugator,
    transvection_matrix,
    verify_displacement_bound,
)
from cocyclone.dynamics import FiniteBase
from cocyclone.fixtures import (
    hyperbolic_coboundary_fixture,
    random_bounded_fixture,
    rotation_coboundary_fixture,
    translation_fixture,
)
from cocyclone.geometry import SPD, Euclidean, GeometryError, Hyperbolic, Isometry
from cocyclone.sections import Section, displacement, pointwise_displacement, section_barycenter

from conftest import close


def test_homogeneity_map_sends_p_to_q(space, rng):
    for _ in range(20):
        p0, p, q = (space.random_point(rng, 2.0) for _ in range(3))
        j = homogeneity_map(space, p0, p, q)
        assert space.distance(j(p), q) <= 1e-8
        assert 2 * space.distance(p0, space.symmetry(p0)(p)) >= 0
        # translation length 2 d(p0, m) never exceeds d(p, q)
        m = space.geodesic(space.symmetry(p0)(p), q, 0.5)
        assert 2 * space.distance(p0, m) <= space.distance(p, q) + 1e-9


def test_euclidean_homogeneity_map_is_translation(rng):
    e = Euclidean(3)
    p0, p, q, x = rng.normal(size=(4, 3))
    j = homogeneity_map(e, p0, p, q)
    assert close(j(x), x + q - p, 1e-12)


def test_conjugator_sends_origin_to_section():
    s = SPD(2)
    phi = Section(s, (np.diag([2.0, 0.5]), np.array([[1.0, 0.4], [0.4, 2.0]])))
    for u, v in zip(section_conjugator(s, phi, s.origin()), phi.values):
        assert close(u(s.origin()), v, 1e-12)


def test_sample_ball_radius(space):
    o = space.origin()
    pts = sample_ball(space, o, 1.5, 32)
    assert len(pts) == 33
    assert max(space.distance(o, p) for p in pts) <= 1.5 + 1e-9


FIXTURES = [
    lambda: rotation_coboundary_fixture(FiniteBase.cyclic(5), 2, seed=3),
    lambda: rotation_coboundary_fixture(FiniteBase.cyclic(4), 3, seed=1, scale=0.3),
    lambda: hyperbolic_coboundary_fixture(FiniteBase.cyclic(5), seed=4),
    lambda: random_bounded_fixture(Hyperbolic(-2.0), FiniteBase.cyclic(4), seed=2),
    lambda: translation_fixture(FiniteBase.cyclic(6), 2, seed=1, mean=[0.2, 0.1]),
]


@pytest.mark.parametrize("make", FIXTURES)
@pytest.mark.parametrize("n", [1, 4, 16])
def test_perturb_then_conjugate(make, n):
    fx = make()
    c, p0 = fx.cocycle, fx.p0
    phi = section_barycenter(c, n, p0)
    tilde, rep = perturb_cocycle(c, phi, p0, n=n)
    assert rep.displacement_before == pytest.approx(displacement(c, phi))
    assert rep.invariance_residual <= 1e-8
    assert rep.perturbation_size <= perturbation_bound(c, phi, p0) + 1e-9
    b, crep = conjugate_to_stabilizer(tilde, phi, p0, n)
    assert crep.stabilizer_residual <= 1e-8
    if fx.space.kind == "spd":
        assert crep.orthogonality_defect <= 1e-6
    else:
        assert crep.orthogonality_defect is None


@pytest.mark.parametrize("make", FIXTURES)
def test_nonperturbative_residual_equals_displacement(make):
    fx = make()
    c, p0 = fx.cocycle, fx.p0
    for n in (1, 3, 8):
        phi = section_barycenter(c, n, p0)
        b, rep = nonperturbative_conjugate(c, phi, p0, n)
        pointwise = pointwise_displacement(c, phi)
        for w in c.base.states():
            assert b.generators[w](p0).shape == p0.shape
            assert c.space.distance(b.generators[w](p0), p0) == pytest.approx(pointwise[w], abs=1e-8)
        assert rep.stabilizer_residual <= rep.displacement_before + 1e-8


def test_invariant_section_leaves_cocycle_unchanged():
    fx = rotation_coboundary_fixture(FiniteBase.cyclic(5), 2, seed=2)
    phi = Section(fx.space, tuple(u @ u.T for u in fx.extras["u"]))
    assert displacement(fx.cocycle, phi) <= 1e-10
    tilde, rep = perturb_cocycle(fx.cocycle, phi, fx.p0)
    assert rep.perturbation_size <= 1e-9
    b, crep = conjugate_to_stabilizer(tilde, phi, fx.p0)
    assert crep.orthogonality_defect <= 1e-9


def test_transvection_matrix_reproduces_symmetries(rng):
    s = SPD(3)
    for _ in range(20):
        p0, p, q = (s.random_point(rng, 1.5) for _ in range(3))
        m = s.geodesic(s.symmetry(p0)(p), q, 0.5)
        g = transvection_matrix(p0, m)
        j = homogeneity_map(s, p0, p, q)
        x = s.random_point(rng, 2.0)
        assert close(j(x), g @ x @ g.T, 1e-8 * max(1.0, np.abs(j(x)).max()))


def test_orthogonality_defect():
    assert orthogonality_defect([Isometry.spd(np.eye(2))]) == 0.0
    assert orthogonality_defect([Isometry.spd(2 * np.eye(2))]) == pytest.approx(3 * math.sqrt(2))
    with pytest.raises(GeometryError):
        orthogonality_defect([Isometry.spd(np.eye(2), flip=True)])
    with pytest.raises(GeometryError):
        orthogonality_defect([Isometry.identity("euclidean", 2)])


def test_pipeline_matrices_approach_the_original():
    fx = rotation_coboundary_fixture(FiniteBase.cyclic(7), 2, seed=3)
    raw = fx.extras["raw"]
    gaps = []
    for n in (1, 16, 64):
        st = pipeline_stage(fx.cocycle, n, fx.p0)
        gaps.append(max(np.linalg.norm(a - b) for a, b in zip(st.perturbed_matrices, raw)))
        # the perturbed matrices act as the perturbed cocycle
        for g, t in zip(st.perturbed_matrices, st.tilde.generators):
            x = fx.space.random_point(np.random.default_rng(0))
            assert close(g @ x @ g.T, t(x), 1e-8 * max(1.0, np.abs(t(x)).max()))
        assert max(st.transvection_lengths) <= st.report.displacement_before + 1e-9
    assert gaps[-1] < gaps[0] / 10


def test_matrix_pipeline_reports():
    fx = rotation_coboundary_fixture(FiniteBase.cyclic(5), 2, seed=8)
    with warnings.catch_warnings():
        warnings.simplefilter("error", SubexponentialWarning)
        reps = matrix_pipeline(fx.extras["raw"], fx.cocycle.base, [1, 8, 32])
    assert [r.N for r in reps] == [1, 8, 32]
    assert all(r.orthogonality_defect <= 1e-6 for r in reps)


def test_matrix_pipeline_warns_on_positive_drift():
    g = np.diag([math.e, 1 / math.e])
    with pytest.warns(SubexponentialWarning):
        reps = matrix_pipeline([g] * 3, FiniteBase.cyclic(3), [1, 2])
    assert reps[-1].displacement_before == pytest.approx(2 * math.sqrt(2), rel=1e-9)


@pytest.mark.parametrize("kappa", [-1.0, -0.25, -4.0])
def test_axis_distance_closed_form_matches_search(kappa, rng):
    h = Hyperbolic(kappa)
    for _ in range(30):
        p1, p2, q = (h.random_point(rng, 2.0) for _ in range(3))
        assert distance_to_axis(h, p1, p2, q) == pytest.approx(_axis_distance_search(h, p1, p2, q), abs=1e-8)


def test_axis_distance_on_axis_is_zero(rng):
    s = SPD(2)
    p1, p2 = s.random_point(rng), s.random_point(rng)
    assert distance_to_axis(s, p1, p2, s.geodesic(p1, p2, 1.7)) <= 1e-6


@pytest.mark.parametrize("make", [lambda: Hyperbolic(-1.0), lambda: Hyperbolic(-3.0), lambda: Euclidean(3),
                                  lambda: SPD(2), lambda: SPD(3)])
def test_verify_displacement_bound(make):
    rep = verify_displacement_bound(make(), 300, seed=11)
    assert rep.passed, rep
    assert rep.min_slack >= -1e-8


def test_verify_needs_enough_trials():
    with pytest.raises(ValueError):
        verify_displacement_bound(Hyperbolic(-1.0), 10, seed=0)
