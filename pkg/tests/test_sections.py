import numpy as np
import pytest

from cocyclone.dynamics import BaseMismatchError, FiniteBase, ZdBase, ZdCocycle, maximal_drift_estimate
from cocyclone.fixtures import (
    hyperbolic_coboundary_fixture,
    identity_fixture,
    random_bounded_fixture,
    rotation_coboundary_fixture,
    translation_fixture,
    zd_torsion_fixture,
    zd_translation_fixture,
)
from cocyclone.geometry import SPD, Euclidean, Hyperbolic
from cocyclone.sections import (
    FolnerFamily,
    Section,
    almost_invariance_defect,
    ball_defect_bound,
    ball_growth_constant,
    ball_growth_ratio,
    barycenter_bound,
    constant_section,
    cube_defect_bound,
    displacement,
    dyadic_sections,
    folner_set,
    graph_transform,
    interpolate_family,
    n_step_defect,
    power_displacement,
    section_barycenter,
    section_dyadic,
    sup_distance,
    zd_section,
)

from conftest import close

NS = [1, 2, 4, 8, 16]


def fixtures(m):
    base = FiniteBase.cyclic(m)
    return [
        identity_fixture(SPD(2), base),
        translation_fixture(base, 2, seed=5, mean=[0.3, -0.1]),
        rotation_coboundary_fixture(base, 2, seed=3),
        hyperbolic_coboundary_fixture(base, seed=2),
        random_bounded_fixture(Hyperbolic(-0.5), base, seed=6),
        random_bounded_fixture(SPD(3), base, seed=7, scale=0.7),
    ]


@pytest.mark.parametrize("fx", fixtures(5), ids=lambda f: f"{f.name}-{f.space.kind}{f.space.dim}")
def test_displacement_below_barycenter_bound(fx):
    for n in NS:
        phi = section_barycenter(fx.cocycle, n, fx.p0)
        assert displacement(fx.cocycle, phi) <= barycenter_bound(fx.cocycle, n, fx.p0) + 1e-6


@pytest.mark.parametrize("fx", fixtures(4), ids=lambda f: f"{f.name}-{f.space.kind}{f.space.dim}")
def test_displacement_is_at_least_drift_up_to_section_size(fx):
    c, p0 = fx.cocycle, fx.p0
    for phi in (section_barycenter(c, 3, p0), constant_section(fx.space, c.size, p0)):
        reach = max(fx.space.distance(v, p0) for v in phi.values)
        for n in (1, 4, 16):
            assert displacement(c, phi) >= maximal_drift_estimate(c, n, p0) - 2 * reach / n - 1e-6


def test_flat_displacement_is_exact_average():
    fx = translation_fixture(FiniteBase.cyclic(9), 3, seed=2, mean=[0.1, 0.2, 0.0])
    c = fx.cocycle
    for n in NS:
        phi = section_barycenter(c, n, fx.p0)
        # telescoping: A(w) phi_N(w) - phi_N(F w) = (1/N) S_N(w) in flat space
        sums = [sum(c.generators[c.base.step(w, k)].shift for k in range(n)) for w in c.base.states()]
        assert displacement(c, phi) == pytest.approx(max(np.linalg.norm(s) for s in sums) / n, abs=1e-9)


def test_identity_section_is_constant():
    fx = identity_fixture(Hyperbolic(-1.0), FiniteBase.cyclic(4))
    phi = section_barycenter(fx.cocycle, 8, fx.p0)
    assert sup_distance(fx.space, phi, constant_section(fx.space, 4, fx.p0)) <= 1e-12


def test_coboundary_bound_decays_like_one_over_n():
    fx = rotation_coboundary_fixture(FiniteBase.cyclic(7), 2, seed=3)
    s = fx.space
    c_max = 2 * max(s.distance(u @ u.T, np.eye(2)) for u in fx.extras["u"])
    for n in (1, 4, 16, 64):
        assert n * barycenter_bound(fx.cocycle, n, fx.p0) <= c_max + 1e-9


def test_threads_do_not_change_values():
    fx = rotation_coboundary_fixture(FiniteBase.cyclic(6), 3, seed=1)
    a = section_barycenter(fx.cocycle, 8, fx.p0, threads=1)
    b = section_barycenter(fx.cocycle, 8, fx.p0, threads=4)
    for x, y in zip(a.values, b.values):
        assert np.array_equal(x, y)


def test_interpolate_family_endpoints():
    fx = hyperbolic_coboundary_fixture(FiniteBase.cyclic(4), seed=1)
    c, s = fx.cocycle, fx.space
    lo, hi = section_barycenter(c, 3, fx.p0), section_barycenter(c, 4, fx.p0)
    assert sup_distance(s, interpolate_family(c, 3.0, fx.p0), lo) <= 1e-12
    mid = interpolate_family(c, 3.5, fx.p0)
    for w in c.base.states():
        assert s.distance(mid[w], s.geodesic(lo[w], hi[w], 0.5)) <= 1e-9
    with pytest.raises(ValueError):
        interpolate_family(c, 0.5, fx.p0)


def test_n_step_defect_is_at_most_n_times_displacement():
    fx = random_bounded_fixture(SPD(2), FiniteBase.cyclic(5), seed=2)
    phi = section_barycenter(fx.cocycle, 4, fx.p0)
    d = displacement(fx.cocycle, phi)
    for n in (1, 2, 5, 9):
        assert power_displacement(fx.cocycle, phi, n) <= n * d + 1e-9
        assert n_step_defect(fx.cocycle, phi, n, 0) <= n * d + 1e-9


def test_graph_transform_moves_by_displacement():
    fx = random_bounded_fixture(Hyperbolic(-1.0), FiniteBase.cyclic(6), seed=3)
    phi = section_barycenter(fx.cocycle, 3, fx.p0)
    assert sup_distance(fx.space, graph_transform(fx.cocycle, phi), phi) == pytest.approx(
        displacement(fx.cocycle, phi), abs=1e-12)


@pytest.mark.parametrize("fx", fixtures(6)[1:], ids=lambda f: f"{f.name}-{f.space.kind}{f.space.dim}")
def test_dyadic_halving(fx):
    c = fx.cocycle
    phi0 = constant_section(fx.space, c.size, fx.p0)
    k = 5
    chain = dyadic_sections(c, k, phi0)
    n = 1 << k
    for j in range(1, k + 1):
        h = n >> j
        assert power_displacement(c, chain[j], h) <= 0.5 * power_displacement(c, chain[j - 1], 2 * h) + 1e-9
    assert displacement(c, chain[-1]) <= power_displacement(c, phi0, n) / n + 1e-9
    assert section_dyadic(c, 0, phi0) is phi0


def test_dyadic_needs_invertible_base():
    fx = identity_fixture(Euclidean(1), FiniteBase(2, (1, 1)))
    with pytest.raises(ValueError):
        dyadic_sections(fx.cocycle, 2, constant_section(fx.space, 2, fx.p0))


def test_section_validation_and_json():
    s = SPD(2)
    phi = Section(s, (np.eye(2), np.diag([2.0, 3.0])))
    assert not phi[0].flags.writeable
    back = Section.from_json(s, phi.to_json())
    assert close(back[1], phi[1], 0)
    with pytest.raises(Exception):
        Section(s, (np.array([[1.0, 2.0], [2.0, 1.0]]),)).validate()


def test_base_mismatch():
    fx = identity_fixture(SPD(2), FiniteBase.cyclic(3))
    with pytest.raises(BaseMismatchError):
        displacement(fx.cocycle, constant_section(fx.space, 4, fx.p0))
    with pytest.raises(BaseMismatchError):
        displacement(fx.cocycle, constant_section(SPD(3), 3, np.eye(3)))


# Z^d


def test_folner_sets():
    assert len(folner_set("cube", 2, 3)) == 9
    assert len(folner_set("l1ball", 2, 2)) == 13
    with pytest.raises(ValueError):
        FolnerFamily("cube", (2, 2))
    with pytest.raises(ValueError):
        FolnerFamily("ball", (1,))


@pytest.mark.parametrize("k", [1, 2, 5, 10])
def test_ball_growth_ratio_in_one_dimension(k):
    # |B(k)| = 2k + 1 and every shell has 2 points
    assert ball_growth_ratio(1, k) == pytest.approx(2 * k / (2 * k + 1))


def test_ball_growth_constant_in_two_dimensions():
    # |B(k)| = 2k^2 + 2k + 1, shells have 4(k+1) points; ratio tends to 2
    d = ball_growth_constant(2, range(1, 30))
    assert 1.5 < d < 2.0


def test_cube_defect_below_bound():
    c, _ = zd_translation_fixture((5, 4), 2, seed=5, means=[[0.1, 0.0], [0.0, 0.3]])
    p0 = c.space.origin()
    fam = FolnerFamily("cube", (1, 2, 4, 8))
    for n in fam.sizes:
        phi = zd_section(c, fam, n, p0)
        for i in range(2):
            e = tuple(int(j == i) for j in range(2))
            assert almost_invariance_defect(c, e, phi) <= cube_defect_bound(c, i, n, p0) + 1e-6


def test_ball_defect_below_bound():
    c, _ = zd_translation_fixture((4, 3), 2, seed=2)
    p0 = c.space.origin()
    fam = FolnerFamily("l1ball", (1, 2, 3))
    growth = ball_growth_constant(2, fam.sizes)
    for k in fam.sizes:
        phi = zd_section(c, fam, k, p0)
        bound = ball_defect_bound(c, k, p0, growth)
        for e in [(1, 0), (0, 1)]:
            assert almost_invariance_defect(c, e, phi) <= bound + 1e-6


def test_torsion_cube_is_exactly_invariant_along_finite_order_generator():
    c, extras = zd_torsion_fixture(5, order=4, seed=1)
    p0 = np.array([1.0, 0.5])
    fam = FolnerFamily("cube", (4, 8))
    for n in fam.sizes:
        phi = zd_section(c, fam, n, p0)
        assert almost_invariance_defect(c, (0, 1), phi) <= 1e-9


def test_enumeration_cap():
    c, _ = zd_translation_fixture((2, 2), 1, seed=0)
    with pytest.raises(ValueError):
        zd_section(c, FolnerFamily("cube", (20,)), 20, c.space.origin(), enumeration_cap=100)


def test_identity_zd_section_is_constant():
    base = ZdBase.torus((3, 3))
    h = Hyperbolic(-1.0)
    c = ZdCocycle(base, [[h.identity()] * 9] * 2, h)
    phi = zd_section(c, FolnerFamily("cube", (3,)), 3, h.origin())
    assert max(h.distance(v, h.origin()) for v in phi.values) <= 1e-12
