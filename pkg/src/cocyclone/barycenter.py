"""Karcher (Cartan) barycenters of finitely supported measures.

The mean is the minimiser of ``f(p) = sum_i w_i d(p, q_i)^2``.  Its Riemannian
gradient is ``-2 sum_i w_i log_p(q_i)``, so the solver iterates

    p <- exp_p(step * sum_i w_i log_p(q_i))

from the first support point until the weighted log-sum has norm ``<= tol``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .geometry import Space

__all__ = [
    "ConvergenceError",
    "MeanConfig",
    "WeightedPoints",
    "karcher_mean",
    "karcher_iterates",
    "karcher_cost",
    "gradient_norm",
    "bary_uniform",
    "two_point_interpolant",
]


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, grad_norm: float):
        super().__init__(message)
        self.grad_norm = grad_norm


@dataclass(frozen=True)
class MeanConfig:
    tol: float = 1e-10
    max_iter: int = 10_000
    step: float = 0.5

    def __post_init__(self) -> None:
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not 0 < self.step <= 1:
            raise ValueError("step must lie in (0, 1]")


@dataclass(frozen=True, eq=False)
class WeightedPoints:
    space: Space
    points: np.ndarray  # stacked along axis 0
    weights: np.ndarray

    @classmethod
    def build(cls, space: Space, points: Sequence, weights: Sequence[float] | None = None) -> "WeightedPoints":
        if len(points) == 0:
            raise ValueError("a measure needs at least one point")
        pts = np.stack([space.check_point(p) for p in points])
        if weights is None:
            w = np.full(len(pts), 1.0 / len(pts))
        else:
            w = np.asarray(weights, dtype=float)
            if w.shape != (len(pts),):
                raise ValueError("one weight per point required")
            if np.any(w < 0):
                raise ValueError("weights must be nonnegative")
            if abs(w.sum() - 1.0) > 1e-12:
                raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        return cls(space, pts, w)


def _weighted_log(space: Space, p: np.ndarray, mu: WeightedPoints) -> tuple[np.ndarray, np.ndarray]:
    logs = space.log_many(p, mu.points)
    return np.tensordot(mu.weights, logs, axes=1), logs


def karcher_cost(mu: WeightedPoints, p: np.ndarray) -> float:
    d = mu.space.norm(p, mu.space.log_many(p, mu.points))
    return float(mu.weights @ d**2)


def gradient_norm(mu: WeightedPoints, p: np.ndarray) -> float:
    """Norm of ``sum_i w_i log_p(q_i)``, the stopping quantity of the solver."""
    g, _ = _weighted_log(mu.space, p, mu)
    return float(mu.space.norm(p, g))


def karcher_iterates(mu: WeightedPoints, cfg: MeanConfig = MeanConfig()) -> Iterator[tuple[np.ndarray, float, float]]:
    """Yield ``(point, gradient norm, cost)`` for every iterate, starting at ``mu.points[0]``.

    Stops after the first iterate meeting ``cfg.tol``; raises
    :class:`ConvergenceError` once ``cfg.max_iter`` steps have been taken.
    """
    space = mu.space
    p = mu.points[0].copy()
    for it in range(cfg.max_iter + 1):
        g, logs = _weighted_log(space, p, mu)
        gn = float(space.norm(p, g))
        cost = float(mu.weights @ space.norm(p, logs) ** 2)
        yield p, gn, cost
        if gn <= cfg.tol:
            return
        if it == cfg.max_iter:
            break
        p = space.exp(p, cfg.step * g)
    raise ConvergenceError(
        f"Karcher iteration did not reach tol={cfg.tol:g} in {cfg.max_iter} steps "
        f"(final gradient norm {gn:.3e})",
        gn,
    )


def karcher_mean(mu: WeightedPoints, cfg: MeanConfig = MeanConfig()) -> np.ndarray:
    if len(mu.points) == 1 or np.count_nonzero(mu.weights) == 1:
        return mu.points[int(np.argmax(mu.weights))].copy()
    p = None
    for p, _, _ in karcher_iterates(mu, cfg):
        pass
    return p


def bary_uniform(space: Space, points: Sequence, cfg: MeanConfig = MeanConfig()) -> np.ndarray:
    if len(points) == 0:
        raise ValueError("bary_uniform of an empty list")
    return karcher_mean(WeightedPoints.build(space, points), cfg)


def two_point_interpolant(space: Space, p, q, s: float, cfg: MeanConfig = MeanConfig()) -> np.ndarray:
    """Barycenter of ``(1 - s) delta_p + s delta_q``; lies on the geodesic from p to q."""
    if not 0.0 <= s <= 1.0:
        raise ValueError("s must lie in [0, 1]")
    if s == 0.0:
        return space.check_point(p).copy()
    if s == 1.0:
        return space.check_point(q).copy()
    return karcher_mean(WeightedPoints.build(space, [p, q], [1.0 - s, s]), cfg)

