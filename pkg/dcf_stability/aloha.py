from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike

from .common import DomainError, ParameterError
from .core import FloatArray
from .shape import Shape, classify_profile, curvature_profile

SHAPE_SAMPLES = 9
SHAPE_BAND = 1e-3


@dataclass(frozen=True)
class AlohaPoint:
    tau: FloatArray
    rates: FloatArray


@dataclass(frozen=True)
class AlohaFrontier:
    """Pareto boundary of the capped slotted-Aloha region, sorted by the first rate."""

    wbar: float
    tau: FloatArray
    rates: FloatArray

    def __len__(self) -> int:
        return int(self.rates.shape[0])


def aloha_rate(tau: ArrayLike) -> FloatArray:
    """Per-user success rate τ_i Π_{j≠i}(1−τ_j); the last axis indexes users."""
    values = np.asarray(tau, dtype=np.float64)
    if np.any(values < 0) or np.any(values > 1):
        msg = "attempt probabilities must lie in [0, 1]"
        raise DomainError(msg)
    n = values.shape[-1]
    silent = 1.0 - values
    others = np.stack(
        [np.prod(np.delete(silent, i, axis=-1), axis=-1) for i in range(n)], axis=-1
    )
    return values * others


def aloha_point(tau: ArrayLike) -> AlohaPoint:
    values = np.array(tau, dtype=np.float64).reshape(-1)
    return AlohaPoint(tau=values, rates=aloha_rate(values))


def pareto_mask(points: FloatArray) -> np.ndarray:
    """Mask of points not weakly dominated by another point (maximization)."""
    efficient = np.ones(points.shape[0], dtype=bool)
    # strongest candidates first so the surviving set shrinks early
    for i in np.argsort(-points.sum(axis=1), kind="stable"):
        if not efficient[i]:
            continue
        candidate = points[i]
        efficient[efficient] = np.any(points[efficient] > candidate, axis=1)
        efficient[i] = True
    return efficient


def region_boundary(n: int, wbar: float, grid: int = 200) -> AlohaFrontier:
    if n < 1:
        msg = f"need at least one user, got {n}"
        raise ParameterError(msg)
    if not wbar >= 1:
        msg = f"average backoff length must be >= 1, got {wbar}"
        raise DomainError(msg)
    if grid < 2:
        msg = f"grid resolution must be >= 2, got {grid}"
        raise ParameterError(msg)
    axis = np.linspace(0.0, 1.0 / wbar, grid)
    mesh = np.meshgrid(*([axis] * n), indexing="ij")
    tau = np.stack([m.reshape(-1) for m in mesh], axis=1)
    rates = aloha_rate(tau)
    keep = pareto_mask(rates)
    tau, rates = tau[keep], rates[keep]
    order = np.lexsort(rates.T[::-1])
    return AlohaFrontier(wbar=float(wbar), tau=tau[order], rates=rates[order])


def frontier_shape(boundary: AlohaFrontier) -> Shape:
    """CONVEX, CONCAVE or MIXED (a straight frontier counts as MIXED)."""
    if len(boundary) < 3:
        msg = f"need at least 3 frontier points, got {len(boundary)}"
        raise ParameterError(msg)
    if boundary.rates.shape[1] != 2:
        msg = "shape classification is defined for two users"
        raise ParameterError(msg)
    profile = curvature_profile(boundary.rates[:, 0], boundary.rates[:, 1], SHAPE_SAMPLES)
    return classify_profile(profile, SHAPE_BAND, linear=Shape.MIXED)


def region_contains(frontier: AlohaFrontier, rates: ArrayLike, slack: float) -> np.ndarray:
    """Whether each rate vector is dominated by some frontier point, up to `slack`."""
    points = np.atleast_2d(np.asarray(rates, dtype=np.float64))
    covered = np.all(
        frontier.rates[np.newaxis, :, :] >= points[:, np.newaxis, :] - slack, axis=2
    )
    return np.any(covered, axis=1)


def frontier_nested(inner: AlohaFrontier, outer: AlohaFrontier, slack: float) -> bool:
    return bool(np.all(region_contains(outer, inner.rates, slack)))
