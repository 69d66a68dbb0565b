import itertools

import numpy as np
import pytest
import scipy.optimize

from cocyclone.barycenter import (
    ConvergenceError,
    MeanConfig,
    WeightedPoints,
    bary_uniform,
    karcher_cost,
    karcher_iterates,
    karcher_mean,
    two_point_interpolant,
)
from cocyclone.geometry import SPD, Euclidean, sym_exp

from conftest import close


def test_euclidean_weighted_average(rng):
    e = Euclidean(3)
    pts = rng.normal(size=(5, 3))
    w = rng.dirichlet(np.ones(5))
    got = karcher_mean(WeightedPoints.build(e, pts, w))
    assert close(got, w @ pts, 1e-9)


def test_two_point_interpolant_is_geodesic_point(space, rng):
    p, q = space.random_point(rng, 2.0), space.random_point(rng, 2.0)
    for s in (0.0, 0.3, 0.5, 1.0):
        got = two_point_interpolant(space, p, q, s)
        assert space.distance(got, space.geodesic(p, q, s)) <= 1e-9


def test_two_point_mean_is_midpoint(space, rng):
    for _ in range(10):
        p, q = space.random_point(rng, 2.5), space.random_point(rng, 2.5)
        assert space.distance(bary_uniform(space, [p, q]), space.geodesic(p, q, 0.5)) <= 1e-9


def test_single_atom():
    s = SPD(2)
    p = np.array([[2.0, 0.3], [0.3, 1.0]])
    assert close(bary_uniform(s, [p]), p, 0)


def test_equivariance(space, rng):
    pts = [space.random_point(rng, 2.0) for _ in range(6)]
    m = bary_uniform(space, pts)
    for _ in range(10):
        g = space.random_isometry(rng)
        assert space.distance(bary_uniform(space, [g(p) for p in pts]), g(m)) <= 1e-6


def test_moving_one_point_is_one_over_n_lipschitz(space, rng):
    n = 5
    pts = [space.random_point(rng, 2.0) for _ in range(n)]
    m = bary_uniform(space, pts)
    for i in range(n):
        moved = list(pts)
        moved[i] = space.random_point(rng, 2.0)
        shift = space.distance(bary_uniform(space, moved), m)
        assert shift <= space.distance(pts[i], moved[i]) / n + 1e-6


def test_cost_is_monotone_and_gradient_vanishes(rng):
    s = SPD(3)
    mu = WeightedPoints.build(s, [s.random_point(rng, 2.0) for _ in range(8)])
    costs = [c for _, _, c in karcher_iterates(mu)]
    assert all(b <= a + 1e-12 for a, b in zip(costs, costs[1:]))
    assert costs[-1] <= costs[0]


def test_nonconvergence_raises(rng):
    s = SPD(2)
    mu = WeightedPoints.build(s, [s.random_point(rng, 3.0) for _ in range(4)])
    with pytest.raises(ConvergenceError) as info:
        karcher_mean(mu, MeanConfig(max_iter=2))
    assert info.value.grad_norm > 0


@pytest.mark.parametrize("weights", [[0.5, 0.6], [-0.5, 1.5], [1.0]])
def test_weights_validated(weights):
    e = Euclidean(1)
    with pytest.raises(ValueError):
        WeightedPoints.build(e, [[0.0], [1.0]], weights)


@pytest.mark.parametrize("cfg", [dict(tol=0), dict(max_iter=0), dict(step=0), dict(step=1.5)])
def test_mean_config_validated(cfg):
    with pytest.raises(ValueError):
        MeanConfig(**cfg)


def _spd2(x):
    return sym_exp(np.array([[x[0], x[1]], [x[1], x[2]]]))


def _grid_oracle(mu):
    """Coarse grid over log-coordinates, refined with Nelder-Mead on the cost."""
    f = lambda x: karcher_cost(mu, _spd2(x))  # noqa: E731
    axis = np.linspace(-2.0, 2.0, 17)
    best = min(itertools.product(axis, axis, axis), key=f)
    res = scipy.optimize.minimize(f, np.array(best), method="Nelder-Mead",
                                  options={"xatol": 1e-11, "fatol": 1e-15, "maxiter": 20000})
    return _spd2(res.x)


@pytest.mark.parametrize("seed", range(5))
def test_matches_grid_search_oracle(seed):
    from cocyclone.fixtures import rng_for

    rng = rng_for(seed, 3)
    s = SPD(2)
    mu = WeightedPoints.build(s, [s.random_point(rng, 1.5) for _ in range(3)], rng.dirichlet(np.ones(3)))
    assert s.distance(karcher_mean(mu), _grid_oracle(mu)) <= 1e-4
