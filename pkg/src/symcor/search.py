"""The correction search pipeline.

Per feature subset: walk the input to a concrete label flip along the
steepest logit-difference coordinate, collect the linear regions reachable
from that flip through shared boundary faces, grow a convex shape inside
their union, and score its cheapest stable center.  The top-level search
enumerates subsets (and categorical assignments) and keeps the cheapest
stable result.

Randomness policy: every branch derives its own generator from
``(rng_seed, branch index)``, so results are identical whether branches
run serially or on a thread pool.
"""

from __future__ import annotations

import itertools
import math
import time
from collections import deque
from dataclasses import dataclass, field
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import geometry, lincons, metrics, relunet
from .errors import CorrectionFailure, NoInitialCorrection, UnstableCorrection
from .geometry import ConvexCorrection, GrowthParams
from .lincons import Region, SolverError
from .metrics import DistanceConfig
from .relunet import Network

Array = np.ndarray

_FGSM_STEP_FRACTION = 0.025  # of the feature range, when no step is given


@dataclass(frozen=True)
class SearchParams:
    """Everything the search needs beyond the network and the instance.

    ``fgsm_step`` is an absolute step size; left ``None`` it defaults to
    2.5% of each feature's range.  ``feature_subsets`` pins the subsets to
    try explicitly; otherwise all size-``n`` subsets of the mutable
    features are enumerated.  ``sigma`` discards results whose stable
    center is within that weighted-L1 radius of the input (0 = off).
    """

    n: int = 2
    m: int | float = 100
    max_fgsm_iters: int = 400
    fgsm_step: float | None = None
    mutable_features: tuple[int, ...] | None = None
    desired_label: int = 1
    rng_seed: int = 0
    sigma: float = 0.0
    shape: str = "box"
    eps_strict: float = lincons.EPS_STRICT
    workers: int = 1
    bounds: tuple[Array, Array] | None = None
    feature_subsets: tuple[tuple[int, ...], ...] | None = None
    distance: DistanceConfig | None = None
    growth: GrowthParams = field(default_factory=GrowthParams)

    def __post_init__(self):
        if self.n < 1 or self.m < 1 or self.max_fgsm_iters < 1:
            raise ValueError("n, m, and max_fgsm_iters must be >= 1")
        if self.shape not in ("box", "simplex"):
            raise ValueError("shape must be 'box' or 'simplex'")
        if self.sigma < 0 or self.eps_strict <= 0 or self.workers < 1:
            raise ValueError("sigma >= 0, eps_strict > 0, workers >= 1 required")
        if self.bounds is not None:
            lo = np.array(self.bounds[0], dtype=float)
            hi = np.array(self.bounds[1], dtype=float)
            lo.setflags(write=False)
            hi.setflags(write=False)
            if lo.shape != hi.shape or lo.ndim != 1 or np.any(hi <= lo):
                raise ValueError("bounds must be (lo, hi) vectors with hi > lo")
            object.__setattr__(self, "bounds", (lo, hi))
        if self.mutable_features is not None:
            object.__setattr__(self, "mutable_features",
                               tuple(int(i) for i in self.mutable_features))
        if self.feature_subsets is not None:
            object.__setattr__(self, "feature_subsets",
                               tuple(tuple(int(i) for i in s)
                                     for s in self.feature_subsets))


@dataclass(frozen=True)
class Interpretation:
    """A shipped answer: the shape, its cheapest stable center, provenance."""

    correction: ConvexCorrection
    distance: float
    stable_center: Array
    regions_explored: int
    features: tuple[int, ...]
    diagnostics: dict
    stability_axes: tuple[int, ...]
    regions: tuple[Region, ...]
    desired_label: int
    base: Array
    instance: Array
    categorical_choice: tuple[tuple[tuple[int, ...], tuple[float, ...]], ...] = ()
    categorical_penalty: float = 0.0

    def __post_init__(self):
        for name in ("stable_center", "base", "instance"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def interpretation_to_json(interp: Interpretation) -> dict:
    """Canonical, deterministic payload: everything except wall-clock."""
    return {
        "correction": geometry.correction_to_json(interp.correction),
        "features": list(interp.features),
        "distance": interp.distance,
        "stable_center": interp.stable_center.tolist(),
        "stability_axes": list(interp.stability_axes),
        "regions_explored": interp.regions_explored,
        "desired_label": interp.desired_label,
        "base": interp.base.tolist(),
        "instance": interp.instance.tolist(),
        "categorical": [
            {"indices": list(idx), "value": list(val)}
            for idx, val in interp.categorical_choice
        ],
        "categorical_penalty": interp.categorical_penalty,
        "lp_calls": interp.diagnostics.get("lp_calls", 0),
    }


def _resolve_distance(net: Network, params: SearchParams) -> DistanceConfig:
    if params.distance is not None:
        return params.distance
    return metrics.default_config(net.input_dim, params.bounds)


def _fgsm_steps(net: Network, params: SearchParams) -> Array:
    if params.fgsm_step is not None:
        return np.full(net.input_dim, float(params.fgsm_step))
    if params.bounds is not None:
        lo, hi = params.bounds
        return _FGSM_STEP_FRACTION * (hi - lo)
    return np.full(net.input_dim, _FGSM_STEP_FRACTION)


def _rival(net: Network, logits: Array, desired: int) -> int:
    masked = logits.copy()
    masked[desired] = -np.inf
    return int(np.argmax(masked))


def find_min_concrete_correction(net: Network, v: Array, s, params: SearchParams,
                                 return_last_step: bool = False):
    """Gradient walk to a concrete label flip, one coordinate at a time.

    Each iteration takes the gradient of the desired-vs-rival logit gap,
    restricted to ``s``, and steps the coordinate of largest magnitude
    (ties to the lowest index) by ``fgsm_step`` in the gradient's
    direction, clamped to the domain.  Stops the moment the label flips;
    raises :class:`NoInitialCorrection` when the budget runs out or the
    restricted gradient vanishes.
    """
    v = np.asarray(v, dtype=float)
    s = tuple(int(i) for i in s)
    desired = params.desired_label
    if relunet.classify(net, v) == desired:
        raise ValueError("instance already classifies as the desired label")
    steps = _fgsm_steps(net, params)
    delta = np.zeros(net.input_dim)
    last_step = None

    for _ in range(params.max_fgsm_iters):
        point = v + delta
        logits = relunet.forward(net, point)
        g = relunet.gradient(net, point, (desired, _rival(net, logits, desired)))
        g_s = g[list(s)]
        j_local = int(np.argmax(np.abs(g_s)))
        if g_s[j_local] == 0.0:
            raise NoInitialCorrection("restricted gradient vanished")
        j = s[j_local]
        direction = math.copysign(1.0, g_s[j_local])
        delta[j] += direction * steps[j]
        if params.bounds is not None:
            lo, hi = params.bounds
            delta = np.clip(v + delta, lo, hi) - v
        last_step = np.zeros(net.input_dim)
        last_step[j] = direction
        if relunet.classify(net, v + delta) == desired:
            return (delta, last_step) if return_last_step else delta
    raise NoInitialCorrection(
        "no label flip within %d steps" % params.max_fgsm_iters)


def check_region_boundary(net: Network, pattern: Array, p: int, v: Array, s,
                          desired: int = 1, bounds=None,
                          eps_strict: float = lincons.EPS_STRICT) -> bool:
    """Can the region's pattern cross neuron ``p``'s zero face and keep the
    desired class?  Feasibility of the pinned face conjoined with the class
    constraints (both under the current pattern; on the face the two
    adjacent patterns' maps agree, so the side does not matter)."""
    system = lincons.conjoin(
        lincons.boundary_constraints(net, pattern, p, v, s),
        lincons.class_constraints(net, pattern, v, s, desired=desired),
    )
    if bounds is not None:
        system = lincons.with_domain(system, v, s, bounds)
    return lincons.check_feasible(system, eps_strict=eps_strict).status == "feasible"


def expand_regions(net: Network, v: Array, s, delta0: Array,
                   params: SearchParams, nudge_dir: Array | None = None) -> list[Region]:
    """Breadth-first worklist over single-neuron pattern flips.

    Starts from the pattern at ``v + delta0``; for every popped pattern and
    every neuron whose boundary check passes, the flipped pattern's region
    is built and recorded if feasible and unseen.  FIFO order plus the
    feasibility cap make the result deterministic and prefix-nested in
    ``m``.  Regions are returned in discovery order, witnesses attached.
    """
    v = np.asarray(v, dtype=float)
    s = tuple(int(i) for i in s)
    delta0 = np.asarray(delta0, dtype=float)
    desired, bounds, eps = params.desired_label, params.bounds, params.eps_strict
    if relunet.classify(net, v + delta0) != desired:
        raise ValueError("delta0 does not classify as the desired label")

    def build(pattern):
        region = lincons.region_from_activations(net, pattern, v, s,
                                                 desired=desired, bounds=bounds)
        return region, lincons.check_feasible(region.system, eps_strict=eps)

    pattern0 = relunet.get_activations(net, v + delta0)
    region0, res = build(pattern0)
    if res.status != "feasible":
        # delta0 sits on a face; nudge a strict step inward and re-derive
        if nudge_dir is None:
            logits = relunet.forward(net, v + delta0)
            g = relunet.gradient(net, v + delta0,
                                 (desired, _rival(net, logits, desired)))
            j = s[int(np.argmax(np.abs(g[list(s)])))]
            nudge_dir = np.zeros(net.input_dim)
            nudge_dir[j] = math.copysign(1.0, g[j]) if g[j] else 1.0
        nudged = delta0 + eps * nudge_dir
        pattern0 = relunet.get_activations(net, v + nudged)
        region0, res = build(pattern0)
        if res.status != "feasible":
            raise SolverError("initial region is infeasible even after nudging")

    regions = [region0.with_witness(res.point)]
    seen = {pattern0.tobytes()}
    if len(regions) >= params.m:
        return regions
    worklist = deque([pattern0])

    while worklist:
        pattern = worklist.popleft()
        for p in range(net.n_hidden):
            if not check_region_boundary(net, pattern, p, v, s, desired=desired,
                                         bounds=bounds, eps_strict=eps):
                continue
            flipped = pattern.copy()
            flipped[p] = not flipped[p]
            key = flipped.tobytes()
            if key in seen:
                continue
            seen.add(key)
            region, res = build(flipped)
            if res.status != "feasible":
                continue
            regions.append(region.with_witness(res.point))
            if len(regions) >= params.m:
                return regions
            worklist.append(flipped)
    return regions


def find_projected_interpretation(net: Network, v: Array, s,
                                  params: SearchParams,
                                  categorical_penalty: float = 0.0,
                                  rng=None, instance: Array | None = None) -> Interpretation:
    """The per-subset pipeline: concrete flip, regions, growth, distance.

    Raises :class:`CorrectionFailure` with stage ``no-initial-correction``,
    ``unstable``, ``adversarial`` (sigma filter), or ``solver-error``.
    """
    v = np.asarray(v, dtype=float)
    s = tuple(int(i) for i in s)
    instance = v if instance is None else np.asarray(instance, dtype=float)
    rng = np.random.default_rng(params.rng_seed) if rng is None else rng
    cfg = _resolve_distance(net, params)
    t0 = time.perf_counter()
    lp0 = lincons.lp_call_count()

    try:
        if relunet.classify(net, v) == params.desired_label:
            # possible for enumerated branches whose categorical switch
            # already flips the label: the concrete correction is zero
            delta0, last = np.zeros(net.input_dim), None
        else:
            delta0, last = find_min_concrete_correction(
                net, v, s, params, return_last_step=True)
        regions = expand_regions(net, v, s, delta0, params, nudge_dir=last)
        if params.bounds is not None:
            lo, hi = params.bounds
            ranges = (hi - lo)[list(s)]
        else:
            ranges = np.ones(len(s))
        correction = geometry.infer_convex_correction(
            regions, params.shape, params.growth, rng, ranges)
        report = metrics.dis_e(correction, cfg, categorical_penalty, rng=rng)
        if not math.isfinite(report.distance):
            detail = ("eroded set empty" if not report.eroded_nonempty
                      else "ball check failed")
            raise UnstableCorrection("no stable center: %s" % detail)
        if params.sigma > 0:
            norm = metrics.weighted_l1(report.center,
                                       cfg.weights[list(s)])
            if norm <= params.sigma:
                raise CorrectionFailure(
                    "stable center within sigma=%g of the input" % params.sigma,
                    stage="adversarial")
    except SolverError as exc:
        raise CorrectionFailure(str(exc), stage="solver-error") from exc

    return Interpretation(
        correction=correction,
        distance=report.distance,
        stable_center=report.center,
        regions_explored=len(regions),
        features=s,
        diagnostics={"lp_calls": lincons.lp_call_count() - lp0,
                     "elapsed": time.perf_counter() - t0},
        stability_axes=report.axes,
        regions=tuple(regions),
        desired_label=params.desired_label,
        base=v,
        instance=instance,
    )


def _apply_assignment(v: Array, groups, assignment) -> tuple[Array, float, tuple]:
    """Substitute categorical embeddings; returns (input, penalty, choice)."""
    out = v.copy()
    penalty = 0.0
    choice = []
    for group, value in zip(groups, assignment):
        idx = list(group.indices)
        value_arr = np.array(value, dtype=float)
        if not np.allclose(v[idx], value_arr, atol=1e-12):
            penalty += group.penalty
        out[idx] = value_arr
        choice.append((group.indices, value))
    return out, penalty, tuple(choice)


def _categorical_slack_ok(net: Network, interp: Interpretation, groups,
                          assignment, original: Array, desired: int) -> bool:
    """Corrections that switch a category must stay corrections under at
    least ``min_categories - 1`` alternative categories (center-level)."""
    base = interp.base
    center = interp.stable_center
    s = interp.features
    for group, value in zip(groups, assignment):
        idx = list(group.indices)
        if np.allclose(original[idx], np.array(value, dtype=float), atol=1e-12):
            continue  # unchanged groups carry no requirement
        needed = group.min_categories - 1
        if needed <= 0:
            continue
        flips = 0
        for other in group.values:
            if other == value:
                continue
            probe = base.copy()
            probe[idx] = np.array(other, dtype=float)
            if relunet.classify(net, lincons.embed(probe, s, center)) == desired:
                flips += 1
                if flips >= needed:
                    break
        if flips < needed:
            return False
    return True


def find_interpretation(net: Network, v: Array, params: SearchParams) -> Interpretation:
    """Search over feature subsets and categorical assignments; cheapest wins.

    Ties break toward the first-enumerated branch (subsets outer, in
    lexicographic index order; assignments inner, in declared order).
    Fails only when every branch fails; the aggregate carries per-branch
    stage tags, headline stage ``unstable`` if any branch got that far.
    """
    v = np.asarray(v, dtype=float)
    if v.shape != (net.input_dim,):
        raise ValueError("instance has shape %r, network expects (%d,)"
                         % (v.shape, net.input_dim))
    desired = params.desired_label
    if relunet.classify(net, v) == desired:
        raise ValueError("instance already classifies as the desired label")
    cfg = _resolve_distance(net, params)
    groups = cfg.categorical

    categorical_indices = {i for g in groups for i in g.indices}
    if params.mutable_features is not None:
        mutable = params.mutable_features
        overlap = set(mutable) & categorical_indices
        if overlap:
            raise ValueError("mutable features %r overlap categorical groups"
                             % sorted(overlap))
    else:
        mutable = tuple(i for i in range(net.input_dim)
                        if i not in categorical_indices)

    if params.feature_subsets is not None:
        subsets = params.feature_subsets
    else:
        if params.n > len(mutable):
            raise ValueError("n=%d exceeds the %d mutable features"
                             % (params.n, len(mutable)))
        subsets = tuple(itertools.combinations(mutable, params.n))

    assignments = list(itertools.product(*[g.values for g in groups])) or [()]
    branches = [(s, asg) for s in subsets for asg in assignments]
    seeds = np.random.SeedSequence(params.rng_seed).spawn(len(branches))

    def run(index: int):
        s, assignment = branches[index]
        branch_v, penalty, choice = _apply_assignment(v, groups, assignment)
        rng = np.random.default_rng(seeds[index])
        try:
            interp = find_projected_interpretation(
                net, branch_v, s, params, categorical_penalty=penalty,
                rng=rng, instance=v)
            if not _categorical_slack_ok(net, interp, groups, assignment,
                                         v, desired):
                raise UnstableCorrection(
                    "correction does not admit enough alternative categories")
            if choice:
                interp = Interpretation(
                    **{**interp.__dict__,
                       "categorical_choice": choice,
                       "categorical_penalty": penalty})
            return interp
        except CorrectionFailure as failure:
            return failure

    if params.workers > 1 and len(branches) > 1:
        with ThreadPoolExecutor(max_workers=params.workers) as pool:
            outcomes = list(pool.map(run, range(len(branches))))
    else:
        outcomes = [run(i) for i in range(len(branches))]

    best = None
    stages = {}
    for (s, assignment), outcome in zip(branches, outcomes):
        key = "s=%r" % (s,) + (" asg=%r" % (assignment,) if assignment else "")
        if isinstance(outcome, CorrectionFailure):
            if outcome.stage == "solver-error":
                raise outcome
            stages[key] = outcome.stage
            continue
        stages[key] = "ok"
        if best is None or outcome.distance < best.distance:
            best = outcome
    if best is not None:
        return best

    tags = set(stages.values())
    headline = ("unstable" if "unstable" in tags
                else "adversarial" if "adversarial" in tags
                else "no-initial-correction")
    raise CorrectionFailure("every branch failed: %s" % stages,
                            stage=headline, branches=stages)
