"""Stability-aware distance of a convex correction.

A center ``x`` of a correction shape is *stable* when the whole weighted
box ``{x' : |x'[i] - x[i]| <= e * r[i]}`` stays inside the shape.  For a
convex polytope that is equivalent to satisfying every facet *eroded* by
the ball's support, ``a.x + b - e * sum_i |a[i]| r[i] >= 0``, so the set
of stable centers is itself a small LP-friendly polytope.  The reported
distance is the cheapest weighted-L1 cost over that eroded set, infinite
when it is empty.

The pairwise mode relaxes stability to a chosen pair of axes (all other
coordinates held fixed); the distance then takes the best pair.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import geometry, lincons
from .geometry import ConvexCorrection
from .lincons import GE, ConstraintSystem, LinearConstraint

Array = np.ndarray

MODES = ("all", "pairwise")
_BALL_SAMPLES = 1000
_SHAPE_TOL = 1e-9


@dataclass(frozen=True)
class CategoricalGroup:
    """A one-hot feature group and its admissible embeddings."""

    indices: tuple[int, ...]
    values: tuple[tuple[float, ...], ...]
    penalty: float = 1.0
    min_categories: int = 2

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))
        object.__setattr__(self, "values",
                           tuple(tuple(float(x) for x in v) for v in self.values))
        if not self.indices or not self.values:
            raise ValueError("categorical groups need indices and values")
        for v in self.values:
            if len(v) != len(self.indices):
                raise ValueError("categorical value arity mismatch")
        if self.penalty < 0 or self.min_categories < 1:
            raise ValueError("penalty must be >= 0 and min_categories >= 1")


@dataclass(frozen=True)
class DistanceConfig:
    """Weights, stability radii, and mode for the distance.

    ``weights`` and ``radii`` are full-input-dimension vectors (the
    conventional weight is 1/(max-min) per feature); ``e`` scales the
    stability ball.  ``min_side`` optionally demands a minimum per-axis
    extent of the shape before any center counts as stable.
    """

    weights: Array
    radii: Array
    e: float = 1.0
    mode: str = "all"
    categorical: tuple[CategoricalGroup, ...] = ()
    min_side: Array | float | None = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        r = np.array(self.radii, dtype=float)
        w.setflags(write=False)
        r.setflags(write=False)
        if w.ndim != 1 or r.shape != w.shape:
            raise ValueError("weights and radii must be equal-length vectors")
        if self.e <= 0:
            raise ValueError("e must be positive")
        if self.mode not in MODES:
            raise ValueError("mode must be one of %r" % (MODES,))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "radii", r)
        object.__setattr__(self, "categorical", tuple(self.categorical))

    def to_json(self) -> dict:
        out = {
            "weights": self.weights.tolist(),
            "radii": self.radii.tolist(),
            "e": self.e,
            "mode": self.mode,
            "categorical": [
                {"indices": list(g.indices),
                 "values": [list(v) for v in g.values],
                 "penalty": g.penalty,
                 "min_categories": g.min_categories}
                for g in self.categorical
            ],
        }
        if self.min_side is not None:
            ms = self.min_side
            out["min_side"] = ms.tolist() if isinstance(ms, np.ndarray) else ms
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "DistanceConfig":
        groups = tuple(
            CategoricalGroup(
                indices=tuple(g["indices"]),
                values=tuple(tuple(v) for v in g["values"]),
                penalty=g.get("penalty", 1.0),
                min_categories=g.get("min_categories", 2),
            )
            for g in obj.get("categorical", [])
        )
        min_side = obj.get("min_side")
        if isinstance(min_side, list):
            min_side = np.array(min_side, dtype=float)
        return cls(
            weights=np.array(obj["weights"], dtype=float),
            radii=np.array(obj["radii"], dtype=float),
            e=obj.get("e", 1.0),
            mode=obj.get("mode", "all"),
            categorical=groups,
            min_side=min_side,
        )


def default_config(input_dim: int, bounds=None) -> DistanceConfig:
    """Range-normalized weights (1/(hi-lo)) and radii of 5% of each range."""
    if bounds is None:
        ranges = np.ones(input_dim)
    else:
        lo, hi = bounds
        ranges = np.asarray(hi, dtype=float) - np.asarray(lo, dtype=float)
    return DistanceConfig(weights=1.0 / ranges, radii=0.05 * ranges)


@dataclass(frozen=True)
class StabilityReport:
    """What :func:`dis_e` found; ``distance`` is finite exactly when the
    eroded set was non-empty and the ball check passed."""

    distance: float
    center: Array | None
    eroded_nonempty: bool
    ball_check_passed: bool
    axes: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.center is not None:
            ctr = np.array(self.center, dtype=float)
            ctr.setflags(write=False)
            object.__setattr__(self, "center", ctr)
        finite = math.isfinite(self.distance)
        if finite != (self.eroded_nonempty and self.ball_check_passed):
            raise ValueError("distance finiteness must match the two checks")


def _local_radii(c: ConvexCorrection, cfg: DistanceConfig) -> Array:
    r = cfg.radii[list(c.features)]
    if np.any(r <= 0):
        raise ValueError("stability radii must be positive on the shape's features")
    return r


def _local_weights(c: ConvexCorrection, cfg: DistanceConfig) -> Array:
    w = cfg.weights[list(c.features)]
    if np.any(w <= 0):
        raise ValueError("weights must be positive on the shape's features")
    return w


def erode(c: ConvexCorrection, cfg: DistanceConfig,
          axes: tuple[int, ...] | None = None) -> ConstraintSystem:
    """Facets of ``c`` inset by the stability ball's support.

    ``axes`` are positions within the correction's coordinates; by default
    all of them.  A point satisfies the result iff its ball (varying only
    the chosen axes by ``e * r``) stays inside ``c``; for boxes and
    simplices the inset is exact.  The system may be infeasible (the shape
    is too thin), which is precisely the unstable case.
    """
    r = _local_radii(c, cfg)
    k = c.dim
    axes = tuple(range(k)) if axes is None else tuple(axes)
    if any(not 0 <= a < k for a in axes) or len(set(axes)) != len(axes):
        raise ValueError("axes must be distinct positions within the correction")
    A, b = geometry.facets(c)
    mask = np.zeros(k)
    mask[list(axes)] = 1.0
    inset = cfg.e * (np.abs(A) * (mask * r)).sum(axis=1)
    cons = tuple(
        LinearConstraint(A[i], float(b[i] - inset[i]), GE) for i in range(A.shape[0])
    )
    return ConstraintSystem(k, cons)


def erode_pairwise(c: ConvexCorrection, cfg: DistanceConfig, i: int,
                   j: int) -> ConstraintSystem:
    """Erosion along the single axis pair ``(i, j)``."""
    if i == j:
        raise ValueError("pairwise erosion needs two distinct axes")
    return erode(c, cfg, axes=(i, j))


def _stability_subsets(c: ConvexCorrection, cfg: DistanceConfig):
    if cfg.mode == "all":
        return [tuple(range(c.dim))]
    return [tuple(p) for p in itertools.combinations(range(c.dim), 2)]


def dis_e(c: ConvexCorrection, cfg: DistanceConfig,
          categorical_penalty: float = 0.0, rng=None) -> StabilityReport:
    """Cheapest stable center of the shape, in weighted L1.

    Minimizes ``sum_i w[i] |x[i]|`` over each admissible eroded system (all
    axes, or every pair in pairwise mode) and keeps the best; the winning
    center is then re-checked by sampling its ball.  Infinite when every
    eroded system is empty, when the ball check fails, or when the shape
    misses a configured ``min_side``.
    """
    w = _local_weights(c, cfg)
    rng = np.random.default_rng(0) if rng is None else rng

    if cfg.min_side is not None:
        wanted = np.broadcast_to(np.asarray(cfg.min_side, dtype=float), (c.dim,))
        if np.any(geometry.extent(c) < wanted):
            return StabilityReport(math.inf, None, False, False)

    best = None
    for axes in _stability_subsets(c, cfg):
        res = lincons.minimize_weighted_l1(w, erode(c, cfg, axes))
        if res.status != "feasible":
            continue
        if best is None or res.objective_value < best[0]:
            best = (res.objective_value, res.point, axes)
    if best is None:
        return StabilityReport(math.inf, None, False, False)

    cost, center, axes = best
    ball_ok = verify_stability(c, center, cfg, axes=axes, rng=rng)
    if not ball_ok:
        return StabilityReport(math.inf, center, True, False, axes)
    return StabilityReport(cost + categorical_penalty, center, True, True, axes)


def ball_points(c: ConvexCorrection, center: Array, cfg: DistanceConfig,
                axes: tuple[int, ...] | None = None,
                n_samples: int = _BALL_SAMPLES, rng=None) -> Array:
    """Sample the weighted-L-inf stability ball around ``center``: the center
    itself, all corners (when the axis count keeps 2^k sane), uniform fill."""
    rng = np.random.default_rng(0) if rng is None else rng
    center = np.asarray(center, dtype=float)
    k = c.dim
    axes = tuple(range(k)) if axes is None else tuple(axes)
    half = np.zeros(k)
    half[list(axes)] = cfg.e * _local_radii(c, cfg)[list(axes)]

    points = [center[None, :]]
    if len(axes) <= 12:
        signs = np.array(list(itertools.product((-1.0, 1.0), repeat=len(axes))))
        corners = np.tile(center, (signs.shape[0], 1))
        corners[:, list(axes)] += signs * half[list(axes)]
        points.append(corners)
    fill = n_samples - sum(p.shape[0] for p in points)
    if fill > 0:
        offs = rng.uniform(-1.0, 1.0, (fill, k)) * half
        points.append(center + offs)
    return np.vstack(points)


def verify_stability(c: ConvexCorrection, center: Array, cfg: DistanceConfig,
                     axes: tuple[int, ...] | None = None,
                     n_samples: int = _BALL_SAMPLES, rng=None) -> bool:
    """Every sampled ball point must sit inside the shape."""
    if center is None:
        return False
    pts = ball_points(c, center, cfg, axes=axes, n_samples=n_samples, rng=rng)
    return bool(geometry.shape_membership(c, pts, tol=_SHAPE_TOL).all())


def weighted_l1(x: Array, weights: Array) -> float:
    x = np.asarray(x, dtype=float)
    w = np.asarray(weights, dtype=float)
    return float(np.abs(x) @ w)


def l0_distance(c: ConvexCorrection, center: Array | None = None) -> int:
    """Features the correction genuinely touches: coordinate range excludes
    zero, or the chosen center is nonzero there."""
    if c.kind == "box":
        lo, hi = c.lo, c.hi
    else:
        lo = c.vertices.min(axis=0)
        hi = c.vertices.max(axis=0)
    moved = (lo > 0) | (hi < 0)
    if center is not None:
        moved |= np.asarray(center, dtype=float) != 0.0
    return int(moved.sum())
