"""Convex correction shapes inside a union of linear regions.

A correction is an axis-aligned box or a simplex in correction space.
Containment in a single convex region is exact (vertices suffice); in a
union of regions the in-loop check is approximate, decided by a fixed
probe set, which is why every grown shape must pass a dense post-hoc
sample audit plus an exact LP certificate before it is shipped.

Growth is deliberately dumb: move one face (box) or one vertex (simplex)
a small random amount, keep the move iff the shape still fits and its
volume strictly grew, and give up after ``max_stalls`` consecutive
rejections.  Paired with the audit this is sound but makes no optimality
claim.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import lincons
from .errors import UnstableCorrection
from .lincons import Region

Array = np.ndarray

_FULL_CORNER_DIM = 12   # enumerate box corners up to 2^12, sample beyond
_FULL_EDGE_DIM = 6      # enumerate box edge midpoints up to this dim
_SAMPLED_PROBES = 1024  # corner/edge probe budget above the cutoffs
_AUDIT_SAMPLES = 10_000
_FINAL_AUDIT_SAMPLES = 30_000
_SHRINK_FACTOR = 0.97
_SHRINK_ROUNDS = 8
_MAX_HALVINGS = 60
_RETRIES = 5
_CERTIFY_EPS = 1e-7     # must clear the LP slack tolerance or seams read as escapes
_CERTIFY_LP_BUDGET = 20_000
_GROWTH_CERTIFY_BUDGET = 4_000  # per-attempt cap inside the growth loop


@dataclass(frozen=True)
class GrowthParams:
    """Knobs for initial sampling and greedy growth.

    ``init_scale`` and ``step`` are fractions of the per-feature range
    (range 1.0 when the domain is unbounded).

    ``max_iters`` caps total growth moves; stalls only end the loop when
    rejections happen, and an unbounded region union rejects nothing.
    """

    init_scale: float = 0.01
    step: float = 0.005
    max_stalls: int = 200
    containment_samples: int = 256
    max_iters: int = 100_000

    def __post_init__(self):
        if self.init_scale <= 0 or self.step <= 0:
            raise ValueError("init_scale and step must be positive")
        if self.max_stalls < 0 or self.containment_samples < 0:
            raise ValueError("max_stalls and containment_samples must be >= 0")
        if self.max_iters <= 0:
            raise ValueError("max_iters must be positive")


@dataclass(frozen=True)
class ConvexCorrection:
    """A box (``lo``/``hi``) or simplex (``vertices``) over ``features``.

    ``base`` is the instance the correction is relative to; a point ``x``
    of the shape stands for the input ``embed(base, features, x)``.
    """

    kind: str
    features: tuple[int, ...]
    base: Array
    lo: Array | None = None
    hi: Array | None = None
    vertices: Array | None = None

    def __post_init__(self):
        if self.kind not in ("box", "simplex"):
            raise ValueError("kind must be 'box' or 'simplex'")
        object.__setattr__(self, "features", tuple(int(i) for i in self.features))
        base = np.array(self.base, dtype=float)
        base.setflags(write=False)
        object.__setattr__(self, "base", base)
        k = len(self.features)
        if k < 1:
            raise ValueError("corrections need at least one feature")
        if self.kind == "box":
            if self.lo is None or self.hi is None or self.vertices is not None:
                raise ValueError("box corrections carry lo and hi only")
            lo = np.array(self.lo, dtype=float)
            hi = np.array(self.hi, dtype=float)
            if lo.shape != (k,) or hi.shape != (k,):
                raise ValueError("lo/hi must match the feature count")
            if np.any(hi < lo):
                raise ValueError("box needs hi >= lo")
            lo.setflags(write=False)
            hi.setflags(write=False)
            object.__setattr__(self, "lo", lo)
            object.__setattr__(self, "hi", hi)
        else:
            if self.vertices is None or self.lo is not None or self.hi is not None:
                raise ValueError("simplex corrections carry vertices only")
            verts = np.array(self.vertices, dtype=float)
            if verts.shape != (k + 1, k):
                raise ValueError(
                    "simplex over %d features needs %d vertices of dim %d"
                    % (k, k + 1, k)
                )
            verts.setflags(write=False)
            object.__setattr__(self, "vertices", verts)

    @property
    def dim(self) -> int:
        return len(self.features)


def volume(c: ConvexCorrection) -> float:
    """Lebesgue volume; degenerate shapes report 0."""
    if c.kind == "box":
        return float(np.prod(c.hi - c.lo))
    edges = c.vertices[1:] - c.vertices[0]
    return abs(float(np.linalg.det(edges))) / math.factorial(c.dim)


def centroid(c: ConvexCorrection) -> Array:
    if c.kind == "box":
        return (c.lo + c.hi) / 2.0
    return c.vertices.mean(axis=0)


def extent(c: ConvexCorrection) -> Array:
    """Per-axis width of the shape (bounding-box sides for a simplex)."""
    if c.kind == "box":
        return c.hi - c.lo
    return c.vertices.max(axis=0) - c.vertices.min(axis=0)


def facets(c: ConvexCorrection) -> tuple[Array, Array]:
    """Inward halfspace representation ``A @ x + b >= 0``, unit normals.

    Box: two facets per axis.  Simplex: one facet per omitted vertex;
    raises on degenerate (zero-volume) simplices whose facet normals are
    not defined.
    """
    k = c.dim
    if c.kind == "box":
        eye = np.eye(k)
        A = np.vstack([eye, -eye])
        b = np.concatenate([-c.lo, c.hi])
        return A, b
    if k == 1:
        lo, hi = sorted(c.vertices[:, 0])
        return np.array([[1.0], [-1.0]]), np.array([-lo, hi])
    rows, offs = [], []
    for omit in range(k + 1):
        others = np.delete(c.vertices, omit, axis=0)
        edges = others[1:] - others[0]
        # unit normal of the facet = null direction of its edge span
        _, sv, vh = np.linalg.svd(edges)
        if sv[-1] > 1e-9 * max(sv[0], 1.0) or edges.shape[0] == k:
            normal = vh[-1]
        else:
            raise ValueError("degenerate simplex has no facet normals")
        off = -float(normal @ others[0])
        side = float(normal @ c.vertices[omit] + off)
        if abs(side) < 1e-12:
            raise ValueError("degenerate simplex has no facet normals")
        if side < 0:
            normal, off = -normal, -off
        rows.append(normal)
        offs.append(off)
    return np.array(rows), np.array(offs)


def shape_membership(c: ConvexCorrection, X: Array, tol: float = 1e-9) -> Array:
    """Closed membership in the shape itself (not the regions)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if c.kind == "box":
        return np.all(X >= c.lo - tol, axis=1) & np.all(X <= c.hi + tol, axis=1)
    A, b = facets(c)
    return np.all(X @ A.T + b >= -tol, axis=1)


def uniform_sample(c: ConvexCorrection, n: int, rng) -> Array:
    """IID uniform points of the shape."""
    if c.kind == "box":
        return rng.uniform(c.lo, c.hi, (n, c.dim))
    weights = rng.dirichlet(np.ones(c.dim + 1), n)
    return weights @ c.vertices


def _box_corners(lo: Array, hi: Array, rng) -> Array:
    k = lo.size
    if k <= _FULL_CORNER_DIM:
        picks = np.array(list(itertools.product((0, 1), repeat=k)), dtype=float)
    else:
        picks = (rng.random((_SAMPLED_PROBES, k)) < 0.5).astype(float)
    return lo + picks * (hi - lo)


def _box_edge_midpoints(lo: Array, hi: Array, rng) -> Array:
    k = lo.size
    mid = (lo + hi) / 2.0
    if k <= _FULL_EDGE_DIM:
        out = []
        for axis in range(k):
            rest = [i for i in range(k) if i != axis]
            for picks in itertools.product((0, 1), repeat=k - 1):
                p = np.empty(k)
                p[axis] = mid[axis]
                for j, bit in zip(rest, picks):
                    p[j] = lo[j] if bit == 0 else hi[j]
                out.append(p)
        return np.array(out)
    corners = _box_corners(lo, hi, rng)[:_SAMPLED_PROBES]
    axes = rng.integers(0, k, corners.shape[0])
    corners = corners.copy()
    corners[np.arange(corners.shape[0]), axes] = mid[axes]
    return corners


def _vertex_probes(c: ConvexCorrection, rng) -> Array:
    if c.kind == "box":
        return _box_corners(c.lo, c.hi, rng)
    return c.vertices


def _edge_probes(c: ConvexCorrection, rng) -> Array:
    if c.kind == "box":
        return _box_edge_midpoints(c.lo, c.hi, rng)
    pairs = list(itertools.combinations(range(c.dim + 1), 2))
    return np.array([(c.vertices[i] + c.vertices[j]) / 2.0 for i, j in pairs])


class _RegionStack:
    """All region systems stacked into one matrix for batched membership."""

    def __init__(self, regions: list[Region]):
        if not regions:
            raise ValueError("need at least one region")
        self.dim = regions[0].system.dim
        rows, offs, rels, starts = [], [], [], []
        for region in regions:
            if region.system.dim != self.dim:
                raise ValueError("regions live in different correction spaces")
            starts.append(len(rows))
            for con in region.system.constraints:
                rows.append(con.coeffs)
                offs.append(con.offset)
                rels.append(con.rel)
            if region.system.bounds is not None:
                lo, hi = region.system.bounds
                eye = np.eye(self.dim)
                for i in range(self.dim):
                    if np.isfinite(lo[i]):
                        rows.append(eye[i])
                        offs.append(-lo[i])
                        rels.append(lincons.GE)
                    if np.isfinite(hi[i]):
                        rows.append(-eye[i])
                        offs.append(hi[i])
                        rels.append(lincons.GE)
        self.A = np.array(rows)
        self.b = np.array(offs)
        rels = np.array(rels)
        self.ge = rels == lincons.GE
        self.gt = rels == lincons.GT
        self.eq = rels == lincons.EQ
        self.starts = np.array(starts)

    def _sat(self, X: Array) -> Array:
        vals = X @ self.A.T + self.b
        sat = np.empty(vals.shape, dtype=bool)
        sat[:, self.ge] = vals[:, self.ge] >= 0.0
        sat[:, self.gt] = vals[:, self.gt] > 0.0
        sat[:, self.eq] = vals[:, self.eq] == 0.0
        return sat

    def per_region(self, X: Array) -> Array:
        """(points, regions) membership matrix."""
        return np.logical_and.reduceat(self._sat(np.atleast_2d(X)),
                                       self.starts, axis=1)

    def region_containing_all(self, X: Array) -> int | None:
        cols = self.per_region(X).all(axis=0)
        hits = np.flatnonzero(cols)
        return int(hits[0]) if hits.size else None

    def covered(self, X: Array) -> Array:
        return self.per_region(X).any(axis=1)


def contained(c: ConvexCorrection, regions: list[Region], params: GrowthParams,
              rng=None) -> bool:
    """Is the shape inside the union of regions?

    Exact when some single region holds every vertex (convexity); otherwise
    approximate, true iff every probe (vertices, edge midpoints, centroid,
    ``containment_samples`` interior points) lands in some region.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    stack = _RegionStack(regions)
    return _contained(c, stack, params, rng)


def _contained(c: ConvexCorrection, stack: _RegionStack, params: GrowthParams,
               rng) -> bool:
    verts = _vertex_probes(c, rng)
    if stack.region_containing_all(verts) is not None:
        return True
    probes = [verts, _edge_probes(c, rng), centroid(c)[None, :]]
    if params.containment_samples > 0:
        probes.append(uniform_sample(c, params.containment_samples, rng))
    return bool(stack.covered(np.vstack(probes)).all())


def regular_simplex(k: int) -> Array:
    """(k+1, k) vertices of a regular simplex, centered, circumradius 1."""
    if k == 1:
        return np.array([[-1.0], [1.0]])
    c = (1.0 - math.sqrt(k + 1.0)) / k
    verts = np.vstack([np.eye(k), np.full(k, c)])
    verts -= verts.mean(axis=0)
    return verts / np.linalg.norm(verts[0])


def _random_rotation(k: int, rng) -> Array:
    q, r = np.linalg.qr(rng.standard_normal((k, k)))
    return q * np.sign(np.diag(r))


def sample_initial(regions: list[Region], kind: str, params: GrowthParams,
                   rng, ranges: Array | None = None) -> ConvexCorrection:
    """A tiny shape strictly inside one region.

    Picks regions in random order, centers a shape of radius
    ``init_scale * range`` on the region's feasibility witness, and halves
    it (up to 60 times) until all vertices sit in that region; moves on to
    the next region when halving never succeeds.
    """
    if not regions:
        raise UnstableCorrection("region search produced no regions")
    k = regions[0].system.dim
    ranges = np.ones(k) if ranges is None else np.asarray(ranges, dtype=float)
    radius = params.init_scale * ranges

    for idx in rng.permutation(len(regions)):
        region = regions[idx]
        witness = region.witness
        if witness is None:
            res = lincons.check_feasible(region.system)
            if res.status != "feasible":
                continue
            witness = res.point
        if kind == "simplex":
            template = regular_simplex(k) @ _random_rotation(k, rng).T
        scale = 1.0
        for _ in range(_MAX_HALVINGS + 1):
            if kind == "box":
                cand = ConvexCorrection(
                    "box", region.features, region.base,
                    lo=witness - scale * radius, hi=witness + scale * radius)
            else:
                cand = ConvexCorrection(
                    "simplex", region.features, region.base,
                    vertices=witness + scale * radius * template)
            verts = _vertex_probes(cand, rng)
            if lincons.satisfies_points(region.system, verts).all():
                return cand
            scale /= 2.0
    raise UnstableCorrection("no region admits an initial shape")


def grow(c: ConvexCorrection, regions: list[Region], params: GrowthParams,
         rng, ranges: Array | None = None) -> ConvexCorrection:
    """Greedy growth: random face/vertex moves, accepted iff the shape stays
    contained and its volume strictly increases; stops after ``max_stalls``
    consecutive rejections.

    Box faces take turns round-robin with a random outward step; simplex
    vertices take turns with a uniformly random direction.
    """
    stack = _RegionStack(regions)
    k = c.dim
    ranges = np.ones(k) if ranges is None else np.asarray(ranges, dtype=float)
    step = params.step * ranges

    if c.kind == "box":
        lo, hi = c.lo.copy(), c.hi.copy()
    else:
        verts = c.vertices.copy()
    vol = volume(c)
    stalls = 0
    turn = 0

    while stalls < params.max_stalls and turn < params.max_iters:
        if c.kind == "box":
            face = turn % (2 * k)
            axis, side = divmod(face, 2)
            turn += 1
            amount = rng.uniform(0.0, 1.0) * step[axis]
            new_lo, new_hi = lo.copy(), hi.copy()
            if side == 0:
                new_lo[axis] -= amount
            else:
                new_hi[axis] += amount
            cand = ConvexCorrection("box", c.features, c.base, lo=new_lo, hi=new_hi)
        else:
            vi = turn % (k + 1)
            turn += 1
            direction = rng.standard_normal(k)
            norm = np.linalg.norm(direction)
            if norm == 0.0:
                stalls += 1
                continue
            move = rng.uniform(0.0, 1.0) * step * (direction / norm)
            new_verts = verts.copy()
            new_verts[vi] += move
            cand = ConvexCorrection("simplex", c.features, c.base, vertices=new_verts)

        new_vol = volume(cand)
        if new_vol <= vol or not _contained(cand, stack, params, rng):
            stalls += 1
            continue
        if c.kind == "box":
            lo, hi = cand.lo.copy(), cand.hi.copy()
        else:
            verts = cand.vertices.copy()
        vol = new_vol
        stalls = 0

    if c.kind == "box":
        return ConvexCorrection("box", c.features, c.base, lo=lo, hi=hi)
    return ConvexCorrection("simplex", c.features, c.base, vertices=verts)


def audit_containment(c: ConvexCorrection, regions: list[Region],
                      n_samples: int, rng) -> int:
    """Number of fresh uniform samples of the shape outside every region."""
    stack = _RegionStack(regions)
    samples = uniform_sample(c, n_samples, rng)
    return int((~stack.covered(samples)).sum())


def _region_rows(region: Region) -> list[lincons.LinearConstraint]:
    rows = list(region.system.constraints)
    if region.system.bounds is not None:
        lo, hi = region.system.bounds
        eye = np.eye(region.system.dim)
        for i in range(region.system.dim):
            if np.isfinite(lo[i]):
                rows.append(lincons.LinearConstraint(eye[i], -lo[i], lincons.GE))
            if np.isfinite(hi[i]):
                rows.append(lincons.LinearConstraint(-eye[i], hi[i], lincons.GE))
    return rows


def _row_extent(c: ConvexCorrection, row: lincons.LinearConstraint):
    """Exact min and max of the row's value over the shape."""
    if c.kind == "box":
        lo = np.minimum(row.coeffs * c.lo, row.coeffs * c.hi).sum()
        hi = np.maximum(row.coeffs * c.lo, row.coeffs * c.hi).sum()
    else:
        vals = c.vertices @ row.coeffs
        lo, hi = vals.min(), vals.max()
    return float(lo + row.offset), float(hi + row.offset)


# float-roundoff guard for the interval screens below; anything closer to
# zero than this goes to the LP instead of being decided arithmetically
_EXTENT_MARGIN = 1e-12


def certify_containment(c: ConvexCorrection, regions: list[Region],
                        eps: float = _CERTIFY_EPS,
                        max_lp_calls: int = _CERTIFY_LP_BUDGET) -> bool | None:
    """Exact union containment by case analysis, no sampling involved.

    The shape minus the first region is split into one polytope piece per
    violated row; survivors are intersected with the next region's
    complement in turn, and a piece that outlives every region certifies an
    escape.  Sample audits cannot see thin slivers; this can.  Negated rows
    are closed strictly, so every piece keeps an ``eps``-deep interior:
    verdicts are exact up to ``eps``-deep boundary slivers, and mere face
    contact between the shape and a region boundary never reads as an
    escape.  Returns None when the case analysis would exceed
    ``max_lp_calls`` feasibility checks, proving nothing either way.

    Rows are screened by their exact value range over the shape before any
    LP runs: a region some row of which is violated across the whole shape
    subtracts nothing, and a row satisfied across the whole shape cannot
    seed or constrain an escape piece.  Only rows whose boundary actually
    cuts the shape reach the solver, which is what keeps many-region unions
    affordable.
    """
    A, b = facets(c)
    shape_rows = [lincons.LinearConstraint(A[i], b[i], lincons.GE)
                  for i in range(len(b))]
    extents = {}

    def active_rows(region):
        # None = region cannot intersect the shape; [] = region covers it
        out = []
        for row in _region_rows(region):
            key = (row.coeffs.tobytes(), row.offset)
            if key not in extents:
                extents[key] = _row_extent(c, row)
            lo_val, hi_val = extents[key]
            if row.rel == lincons.EQ:
                if lo_val > _EXTENT_MARGIN or hi_val < -_EXTENT_MARGIN:
                    return None
                out.append(row)
            else:
                if hi_val < -_EXTENT_MARGIN:
                    return None
                if lo_val >= 0.0:
                    continue
                out.append(row)
        return out

    pieces = [shape_rows]
    calls = 0
    for region in regions:
        rows = active_rows(region)
        if rows is None:
            continue
        if not rows:
            return True
        survivors = []
        for piece in pieces:
            prefix: list[lincons.LinearConstraint] = []
            for row in rows:
                if row.rel == lincons.EQ:
                    negations = [
                        lincons.LinearConstraint(row.coeffs, row.offset, lincons.GT),
                        lincons.LinearConstraint(-row.coeffs, -row.offset, lincons.GT),
                    ]
                else:
                    negations = [lincons.LinearConstraint(-row.coeffs, -row.offset,
                                                          lincons.GT)]
                for neg in negations:
                    cand = piece + prefix + [neg]
                    calls += 1
                    if calls > max_lp_calls:
                        return None
                    res = lincons.check_feasible(
                        lincons.ConstraintSystem(c.dim, tuple(cand)),
                        eps_strict=eps)
                    if res.status == "feasible":
                        survivors.append(cand)
                prefix.append(row)
        pieces = survivors
        if not pieces:
            return True
    return False


def shrink(c: ConvexCorrection, factor: float) -> ConvexCorrection:
    """Scale the shape toward its centroid; maps the shape into itself."""
    mid = centroid(c)
    if c.kind == "box":
        half = (c.hi - c.lo) / 2.0 * factor
        return ConvexCorrection("box", c.features, c.base, lo=mid - half, hi=mid + half)
    verts = mid + factor * (c.vertices - mid)
    return ConvexCorrection("simplex", c.features, c.base, vertices=verts)


def infer_convex_correction(regions: list[Region], kind: str,
                            params: GrowthParams, rng,
                            ranges: Array | None = None) -> ConvexCorrection:
    """Sample, grow, audit; retry sampling up to 5 times, keep the largest.

    Audit discipline: after growth the shape is sampled densely; while any
    sample escapes the region union, or the exact certificate finds an
    escape the samples missed, the shape is shrunk toward its centroid and
    re-checked.  A final fresh 30k-sample audit must also come back clean or
    the attempt is discarded.  Shapes returned here therefore carry both a
    clean dense audit and an LP certificate (unless the certificate ran out
    of budget, in which case the audit verdict stands alone).
    """
    if kind not in ("box", "simplex"):
        raise ValueError("kind must be 'box' or 'simplex'")
    best = None
    best_vol = 0.0
    failures = 0
    for _ in range(_RETRIES):
        try:
            seed_shape = sample_initial(regions, kind, params, rng, ranges)
        except UnstableCorrection:
            failures += 1
            continue
        grown = grow(seed_shape, regions, params, rng, ranges)
        certified = False
        for _ in range(_SHRINK_ROUNDS):
            if (audit_containment(grown, regions, _AUDIT_SAMPLES, rng) == 0
                    and certify_containment(
                        grown, regions,
                        max_lp_calls=_GROWTH_CERTIFY_BUDGET) is not False):
                certified = True
                break
            grown = shrink(grown, _SHRINK_FACTOR)
        # final audit always drawn so the sample stream is deterministic
        if audit_containment(grown, regions, _FINAL_AUDIT_SAMPLES, rng) > 0 \
                or not certified:
            failures += 1
            continue
        vol = volume(grown)
        if best is None or vol > best_vol:
            best, best_vol = grown, vol
    if best is None:
        raise UnstableCorrection(
            "no audited shape after %d attempts (%d failed)" % (_RETRIES, failures))
    return best


def correction_to_json(c: ConvexCorrection) -> dict:
    """The wire form: kind, features, and lo/hi or vertices."""
    if c.kind == "box":
        return {"kind": "box", "features": list(c.features),
                "lo": c.lo.tolist(), "hi": c.hi.tolist()}
    return {"kind": "simplex", "features": list(c.features),
            "vertices": c.vertices.tolist()}


def correction_from_json(obj: dict, base: Array) -> ConvexCorrection:
    kind = obj.get("kind")
    if kind == "box":
        return ConvexCorrection("box", tuple(obj["features"]), base,
                                lo=np.array(obj["lo"], dtype=float),
                                hi=np.array(obj["hi"], dtype=float))
    if kind == "simplex":
        return ConvexCorrection("simplex", tuple(obj["features"]), base,
                                vertices=np.array(obj["vertices"], dtype=float))
    raise ValueError("correction kind must be 'box' or 'simplex', got %r" % kind)
