import enum
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike
from twisted.logger import Logger

from .common import ParameterError
from .core import FloatArray

log = Logger()


class Shape(enum.Enum):
    CONVEX = "convex"
    CONCAVE = "concave"
    NEAR_LINEAR = "near_linear"
    MIXED = "mixed"


@dataclass(frozen=True)
class CurvatureProfile:
    """A decreasing boundary curve rescaled to the unit square and resampled."""

    x: FloatArray
    y: FloatArray
    second_differences: FloatArray
    # resampled curve minus the straight line between its end points
    chord_deviation: FloatArray


def curvature_profile(x: ArrayLike, y: ArrayLike, samples: int) -> CurvatureProfile:
    xs = np.array(x, dtype=np.float64).reshape(-1)
    ys = np.array(y, dtype=np.float64).reshape(-1)
    if xs.shape != ys.shape:
        msg = f"curve coordinates differ in length: {xs.size} vs {ys.size}"
        raise ParameterError(msg)
    if samples < 3:
        msg = f"need at least 3 resampling points, got {samples}"
        raise ParameterError(msg)
    order = np.argsort(xs, kind="stable")
    xs, ys = xs[order], ys[order]
    unique_x, first = np.unique(xs, return_index=True)
    # keep the largest y on repeated x
    unique_y = np.maximum.reduceat(ys, first)
    x_span = unique_x[-1] - unique_x[0] if unique_x.size else 0.0
    y_span = unique_y.max() - unique_y.min() if unique_y.size else 0.0
    if unique_x.size < 2 or not x_span > 0 or not y_span > 0:
        msg = "curve is degenerate: it needs a positive extent on both axes"
        raise ParameterError(msg)
    grid = np.linspace(0.0, 1.0, samples)
    resampled = np.interp(
        grid, (unique_x - unique_x[0]) / x_span, (unique_y - unique_y.min()) / y_span
    )
    chord = resampled[0] + (resampled[-1] - resampled[0]) * grid
    return CurvatureProfile(
        x=grid,
        y=resampled,
        second_differences=np.diff(resampled, n=2),
        chord_deviation=resampled - chord,
    )


def second_difference_shape(
    profile: CurvatureProfile, band: float, linear: Shape = Shape.NEAR_LINEAR
) -> Shape:
    """Region shape from the sign pattern of the resampled second differences.

    Negative second differences bend the frontier away from the origin
    (convex region), positive ones towards it (concave region). Differences
    inside the band scaled to the sampling step count as flat.
    """
    step = profile.x[1] - profile.x[0]
    scaled = profile.second_differences / step
    outward = bool(np.any(scaled < -band))
    inward = bool(np.any(scaled > band))
    if not outward and not inward:
        return linear
    if outward and not inward:
        return Shape.CONVEX
    if inward and not outward:
        return Shape.CONCAVE
    return Shape.MIXED


def classify_profile(
    profile: CurvatureProfile, band: float, linear: Shape = Shape.NEAR_LINEAR
) -> Shape:
    """Region shape below a decreasing frontier.

    A frontier bulging away from the origin (above its chord) bounds a convex
    region; one sagging towards the origin bounds a concave region. The chord
    deviation decides. For frontiers that are convex or concave as functions
    it agrees with `second_difference_shape`; a disagreement means the
    frontier changes curvature and is logged.
    """
    deviation = profile.chord_deviation[1:-1]
    outward = bool(np.any(deviation > band))
    inward = bool(np.any(deviation < -band))
    if not outward and not inward:
        shape = linear
    elif outward and not inward:
        shape = Shape.CONVEX
    elif inward and not outward:
        shape = Shape.CONCAVE
    else:
        shape = Shape.MIXED
    curvature = second_difference_shape(profile, band, linear)
    if shape in (Shape.CONVEX, Shape.CONCAVE) and curvature not in (shape, linear):
        log.debug(
            "chord deviation says {shape} but second differences say {curvature}",
            shape=shape.value,
            curvature=curvature.value,
        )
    return shape
