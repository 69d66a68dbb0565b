import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from cocyclone.dynamics import (
    Cocycle,
    CompatibilityError,
    FiniteBase,
    ZdBase,
    ZdCocycle,
    cocycle_product,
    drift_along_orbit,
    maximal_drift_estimate,
    periodic_orbit_drifts,
    subadditivity_gap,
    subexponential_diagnostic,
    zd_product,
)
from cocyclone.fixtures import (
    constant_fixture,
    random_bounded_fixture,
    rotation_coboundary_fixture,
    translation_fixture,
    zd_translation_fixture,
)
from cocyclone.geometry import SPD, Euclidean, GeometryError, Hyperbolic, Isometry

from conftest import close


def naive_product(c, n, w):
    acc = c.space.identity()
    for _ in range(n):
        acc = c.generators[w] @ acc
        w = c.base.successor[w]
    return acc


def test_cyclic_base():
    b = FiniteBase.cyclic(5)
    assert b.invertible
    assert b.step(3, 4) == 2
    assert b.step(0, -1) == 4
    assert b.orbit(2) == [2, 3, 4, 0, 1]
    assert b.periodic_orbits() == [[0, 1, 2, 3, 4]]


def test_noninvertible_base():
    # 0 -> 1 -> 2 -> 1, 3 -> 0
    b = FiniteBase(4, (1, 2, 1, 0))
    assert not b.invertible
    assert b.periodic_orbits() == [[1, 2]]
    with pytest.raises(ValueError):
        b.step(0, -1)
    assert FiniteBase.from_json(b.to_json()) == b


@pytest.mark.parametrize("succ", [(0, 5), (0, -1)])
def test_bad_successor(succ):
    with pytest.raises(ValueError):
        FiniteBase(2, succ)


@pytest.mark.parametrize("memo", [0, 4, 65536])
def test_product_matches_naive(rng, memo):
    s = SPD(2)
    fx = random_bounded_fixture(s, FiniteBase.cyclic(5), seed=4)
    c = Cocycle(fx.cocycle.base, fx.cocycle.generators, s, memo_budget=memo)
    p = s.random_point(rng)
    for n in (0, 1, 2, 7, 13):
        for w in c.base.states():
            assert s.distance(c.product(n, w)(p), naive_product(c, n, w)(p)) <= 1e-9


def test_cocycle_identity(rng):
    h = Hyperbolic(-1.0)
    c = random_bounded_fixture(h, FiniteBase(6, (1, 2, 3, 4, 5, 2)), seed=1).cocycle
    p = h.random_point(rng)
    for n, m in [(1, 1), (2, 5), (4, 3)]:
        for w in c.base.states():
            lhs = cocycle_product(c, n + m, w)
            rhs = c.product(m, c.base.step(w, n)) @ c.product(n, w)
            assert h.distance(lhs(p), rhs(p)) <= 1e-9


def test_concurrent_products_agree():
    s = SPD(3)
    c = random_bounded_fixture(s, FiniteBase.cyclic(9), seed=2).cocycle
    ref = [naive_product(c, 20, w).matrix for w in c.base.states()]
    with ThreadPoolExecutor(4) as ex:
        got = list(ex.map(lambda w: c.product(20, w).matrix, list(c.base.states()) * 3))
    for i, g in enumerate(got):
        assert close(g, ref[i % 9], 1e-10)


def test_generator_count_checked():
    with pytest.raises(ValueError):
        Cocycle(FiniteBase.cyclic(3), [Isometry.identity("spd", 2)] * 2, SPD(2))


def test_mixed_backend_rejected():
    with pytest.raises(GeometryError):
        Cocycle(FiniteBase.cyclic(2), [Isometry.identity("euclidean", 2)] * 2, SPD(2))


@pytest.mark.parametrize("v", [[1.0, 0.0], [3.0, 4.0]])
def test_constant_translation_drift(v):
    e = Euclidean(2)
    c = constant_fixture(e, FiniteBase.cyclic(4), Isometry.euclidean(np.eye(2), v)).cocycle
    for n in (1, 2, 4, 8, 16, 32, 64):
        assert maximal_drift_estimate(c, n, e.origin()) == pytest.approx(math.hypot(*v), rel=1e-12)


def test_constant_hyperbolic_matrix_drift():
    s = SPD(2)
    g = Isometry.spd(np.diag([math.e, 1 / math.e]))
    c = constant_fixture(s, FiniteBase.cyclic(3), g).cocycle
    # A^(N) I = diag(e^{2N}, e^{-2N}), at distance 2 sqrt(2) N from I
    for n in (1, 2, 4, 8, 16):
        assert maximal_drift_estimate(c, n, s.origin()) == pytest.approx(2 * math.sqrt(2), rel=1e-10)


def test_coboundary_drift_decays():
    c = rotation_coboundary_fixture(FiniteBase.cyclic(7), 2, seed=3).cocycle
    p0 = c.space.origin()
    ests = [maximal_drift_estimate(c, n, p0) for n in (1, 4, 16, 64)]
    assert ests[-1] < ests[0] / 8


def test_orbit_drift_and_subadditivity():
    fx = translation_fixture(FiniteBase.cyclic(11), 3, seed=9, mean=[0.2, 0.0, 0.1])
    c, p0 = fx.cocycle, fx.p0
    for n in (1, 3, 8):
        est = maximal_drift_estimate(c, n, p0)
        assert all(drift_along_orbit(c, w, n, p0) <= est + 1e-12 for w in c.base.states())
        for m in (1, 2, 5):
            assert subadditivity_gap(c, n, m, p0) <= 1e-9


def test_periodic_orbit_drift_of_translation_is_mean():
    fx = translation_fixture(FiniteBase.cyclic(6), 2, seed=1, mean=[0.3, 0.4])
    [(cyc, drift)] = periodic_orbit_drifts(fx.cocycle, fx.p0)
    assert cyc == list(range(6))
    assert drift == pytest.approx(0.5, rel=1e-12)


def test_subexponential_diagnostic():
    cob = rotation_coboundary_fixture(FiniteBase.cyclic(5), 2, seed=1).cocycle
    vals = [v for _, v in subexponential_diagnostic(cob, [1, 8, 64])]
    assert vals[-1] < vals[0]
    hyp = constant_fixture(SPD(2), FiniteBase.cyclic(2), Isometry.spd(np.diag([2.0, 0.5]))).cocycle
    vals = [v for _, v in subexponential_diagnostic(hyp, [1, 8, 64])]
    assert vals == pytest.approx([math.log(2.0)] * 3)
    with pytest.raises(GeometryError):
        subexponential_diagnostic(translation_fixture(FiniteBase.cyclic(2), 2, seed=0).cocycle, [1])


def test_torus_base_commutes():
    b = ZdBase.torus((3, 4))
    assert b.d == 2 and b.size == 12
    w = 5
    assert b.act((1, 0), b.act((0, 1), w)) == b.act((0, 1), b.act((1, 0), w))
    assert b.act((3, 4), w) == w
    assert b.act((-1, -1), b.act((1, 1), w)) == w
    assert ZdBase.from_json(b.to_json()) == b


def test_noncommuting_maps_rejected():
    with pytest.raises(ValueError):
        ZdBase(3, ((1, 2, 0), (1, 0, 2)))


def test_incompatible_zd_cocycle_rejected():
    base = ZdBase.torus((2, 2))
    e = Euclidean(1)
    shifts = [Isometry.euclidean(np.eye(1), [float(w)]) for w in base.states()]
    ident = [e.identity()] * base.size
    with pytest.raises(CompatibilityError):
        ZdCocycle(base, [shifts, ident], e)


def test_zd_product_is_order_independent(rng):
    c, _ = zd_translation_fixture((4, 3), 2, seed=8, means=[[0.1, 0.0], [0.0, -0.2]])
    p = c.space.random_point(rng)
    for g in [(2, 1), (-3, 2), (1, -4), (0, 0)]:
        for w in c.base.states():
            a = zd_product(c, g, w)(p)
            b = c.product(g, w, order=(1, 0))(p)
            assert c.space.distance(a, b) <= 1e-9


def test_zd_inverse_step():
    c, _ = zd_translation_fixture((5,), 2, seed=1)
    p = c.space.origin()
    for w in c.base.states():
        back = c.product((-1,), c.base.act((1,), w)) @ c.product((1,), w)
        assert c.space.distance(back(p), p) <= 1e-12
