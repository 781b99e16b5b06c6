"""Linear constraint systems over correction space, and the LP contract.

A correction lives in the coordinates of a selected feature subset ``s``:
a point ``x`` of dimension ``len(s)`` stands for the full input
``embed(v, s, x) = v + (x scattered into s)``.  Every constraint here has
the shape ``coeffs . x + offset REL 0`` with REL one of ``ge`` / ``gt`` /
``eq``.

Strictness convention: solvers replace ``> 0`` by ``>= EPS_STRICT`` so the
LP stays closed, while membership evaluation keeps true strictness.
Constant rows (all-zero coefficients) are resolved without a solver call.

The solver behind :func:`check_feasible` maximizes a shared slack variable
instead of running a zero-objective LP, so the witness it returns sits as
deep inside the feasible set as the geometry allows; downstream shape
sampling relies on that.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import linprog

from . import relunet
from .relunet import AffineMap, Network

Array = np.ndarray

EPS_STRICT = 1e-6     # default closure margin for strict inequalities
SOLVER_TOL = 1e-7     # witness / optimum tolerance promised by the contract
_SLACK_CAP = 1.0      # max-slack objective cap; keeps the witness LP bounded

GE, GT, EQ = "ge", "gt", "eq"
_RELS = (GE, GT, EQ)


class SolverError(RuntimeError):
    """The LP backend failed numerically; never reported as plain infeasible."""


class UnboundedError(SolverError):
    """The requested objective has no finite optimum over the system."""


_tls = threading.local()


def lp_call_count() -> int:
    """LP invocations made by the current thread; used for diagnostics."""
    return getattr(_tls, "n", 0)


def _count_lp():
    _tls.n = lp_call_count() + 1


@dataclass(frozen=True)
class LinearConstraint:
    """``coeffs . x + offset REL 0``."""

    coeffs: Array
    offset: float
    rel: str

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        c.setflags(write=False)
        if c.ndim != 1:
            raise ValueError("constraint coefficients must be a vector")
        if not (np.isfinite(c).all() and np.isfinite(self.offset)):
            raise ValueError("constraint values must be finite")
        if self.rel not in _RELS:
            raise ValueError("rel must be one of %r" % (_RELS,))
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def is_constant(self) -> bool:
        return not np.any(self.coeffs)

    def constant_truth(self) -> bool:
        """Truth value of a constant row, under true strictness."""
        if self.rel == GE:
            return self.offset >= 0.0
        if self.rel == GT:
            return self.offset > 0.0
        return self.offset == 0.0


@dataclass(frozen=True)
class ConstraintSystem:
    """A conjunction of linear constraints, plus optional per-coordinate bounds."""

    dim: int
    constraints: tuple[LinearConstraint, ...]
    bounds: tuple[Array, Array] | None = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("constraint systems need dim >= 1")
        cons = tuple(self.constraints)
        for c in cons:
            if c.coeffs.shape != (self.dim,):
                raise ValueError(
                    "constraint of dim %d in a system of dim %d"
                    % (c.coeffs.shape[0], self.dim)
                )
        object.__setattr__(self, "constraints", cons)
        if self.bounds is not None:
            lo = np.array(self.bounds[0], dtype=float)
            hi = np.array(self.bounds[1], dtype=float)
            lo.setflags(write=False)
            hi.setflags(write=False)
            if lo.shape != (self.dim,) or hi.shape != (self.dim,):
                raise ValueError("bounds must be two vectors of the system's dim")
            if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
                raise ValueError("bounds must not be NaN")
            object.__setattr__(self, "bounds", (lo, hi))

    @property
    def has_constant_false(self) -> bool:
        return any(c.is_constant and not c.constant_truth() for c in self.constraints)


def conjoin(*systems: ConstraintSystem) -> ConstraintSystem:
    """Conjunction of systems over the same coordinates; bounds intersect."""
    dims = {s.dim for s in systems}
    if len(dims) != 1:
        raise ValueError("cannot conjoin systems of different dims: %r" % dims)
    dim = dims.pop()
    cons = tuple(c for s in systems for c in s.constraints)
    lo = hi = None
    for s in systems:
        if s.bounds is None:
            continue
        slo, shi = s.bounds
        lo = slo if lo is None else np.maximum(lo, slo)
        hi = shi if hi is None else np.minimum(hi, shi)
    bounds = None if lo is None else (lo, hi)
    return ConstraintSystem(dim, cons, bounds)


def satisfies_points(system: ConstraintSystem, X: Array,
                     strict_margin: float = 0.0, tol: float = 0.0) -> Array:
    """Vectorized membership: one bool per row of ``X``.

    True strictness by default (``gt`` needs value > 0, zero slack on the
    rest); ``tol`` loosens ``ge``/``eq``/bounds, ``strict_margin`` shifts
    what ``gt`` must clear.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    ok = np.ones(X.shape[0], dtype=bool)
    for c in system.constraints:
        vals = X @ c.coeffs + c.offset
        if c.rel == GE:
            ok &= vals >= -tol
        elif c.rel == GT:
            ok &= vals > strict_margin
        else:
            ok &= np.abs(vals) <= tol
    if system.bounds is not None:
        lo, hi = system.bounds
        ok &= np.all(X >= lo - tol, axis=1) & np.all(X <= hi + tol, axis=1)
    return ok


@dataclass(frozen=True)
class SolverResult:
    """Outcome of a feasibility or minimization call.

    ``point`` is present exactly when feasible and satisfies the system
    within SOLVER_TOL (strict rows hold with at least EPS_STRICT slack).
    """

    status: str                      # "feasible" | "infeasible"
    point: Array | None = None
    objective_value: float | None = None

    def __post_init__(self):
        if self.status not in ("feasible", "infeasible"):
            raise ValueError("bad solver status %r" % self.status)
        if (self.point is None) != (self.status == "infeasible"):
            raise ValueError("point must be present exactly when feasible")
        if self.point is not None:
            p = np.array(self.point, dtype=float)
            p.setflags(write=False)
            object.__setattr__(self, "point", p)


_INFEASIBLE = SolverResult("infeasible")


def _split_rows(system: ConstraintSystem, eps_strict: float):
    """Partition into (inequality rows as a.x + off >= 0 with strictness
    already folded into off, equality rows); constant rows resolved here.
    Returns None when a constant row is false.
    """
    ineq, eq = [], []
    for c in system.constraints:
        if c.is_constant:
            if not c.constant_truth():
                return None
            continue
        if c.rel == EQ:
            eq.append((c.coeffs, c.offset))
        else:
            off = c.offset - (eps_strict if c.rel == GT else 0.0)
            ineq.append((c.coeffs, off))
    return ineq, eq


def _linprog_bounds(system: ConstraintSystem):
    if system.bounds is None:
        return [(None, None)] * system.dim
    lo, hi = system.bounds
    return [
        (None if np.isneginf(l) else l, None if np.isposinf(h) else h)
        for l, h in zip(lo, hi)
    ]


def check_feasible(system: ConstraintSystem,
                   eps_strict: float = EPS_STRICT) -> SolverResult:
    """Feasibility of the system with strict rows closed by ``eps_strict``.

    Solved as a max-slack LP: maximize t subject to every inequality (and
    every finite bound) holding with slack ``t * scale``.  Feasible iff the
    optimum t is >= 0; the witness is the argmax, i.e. a point of maximal
    uniform slack rather than an arbitrary vertex.
    """
    split = _split_rows(system, eps_strict)
    if split is None:
        return _INFEASIBLE
    ineq, eq = split
    n = system.dim

    a_ub, b_ub = [], []
    for a, off in ineq:
        rho = float(np.max(np.abs(a)))
        a_ub.append(np.append(-a, rho))
        b_ub.append(off)
    if system.bounds is not None:
        lo, hi = system.bounds
        eye = np.eye(n)
        for i in range(n):
            if np.isfinite(lo[i]):
                a_ub.append(np.append(-eye[i], 1.0))
                b_ub.append(-lo[i])
            if np.isfinite(hi[i]):
                a_ub.append(np.append(eye[i], 1.0))
                b_ub.append(hi[i])
    a_eq = [np.append(a, 0.0) for a, _ in eq] or None
    b_eq = [-off for _, off in eq] or None

    _count_lp()
    res = linprog(
        c=np.append(np.zeros(n), -1.0),
        A_ub=np.array(a_ub) if a_ub else None,
        b_ub=np.array(b_ub) if b_ub else None,
        A_eq=np.array(a_eq) if a_eq is not None else None,
        b_eq=np.array(b_eq) if b_eq is not None else None,
        bounds=[(None, None)] * n + [(None, _SLACK_CAP)],
        method="highs",
    )
    if res.status == 2:
        return _INFEASIBLE  # only inconsistent equalities can land here
    if res.status != 0:
        raise SolverError("feasibility LP failed: %s" % res.message)
    slack = res.x[n]
    if slack < -1e-9:
        return _INFEASIBLE
    return SolverResult("feasible", point=res.x[:n])


def minimize(objective: Array, system: ConstraintSystem,
             eps_strict: float = EPS_STRICT) -> SolverResult:
    """Minimize a linear objective over the system (strict rows closed).

    Raises :class:`UnboundedError` when the optimum is not finite; the
    optimum is within SOLVER_TOL of the true LP optimum.
    """
    objective = np.asarray(objective, dtype=float)
    if objective.shape != (system.dim,):
        raise ValueError("objective dim %r does not match system dim %d"
                         % (objective.shape, system.dim))
    split = _split_rows(system, eps_strict)
    if split is None:
        return _INFEASIBLE
    ineq, eq = split

    _count_lp()
    res = linprog(
        c=objective,
        A_ub=np.array([-a for a, _ in ineq]) if ineq else None,
        b_ub=np.array([off for _, off in ineq]) if ineq else None,
        A_eq=np.array([a for a, _ in eq]) if eq else None,
        b_eq=np.array([-off for _, off in eq]) if eq else None,
        bounds=_linprog_bounds(system),
        method="highs",
    )
    if res.status == 2:
        return _INFEASIBLE
    if res.status == 3:
        raise UnboundedError("objective is unbounded below on this system")
    if res.status != 0:
        raise SolverError("minimize LP failed: %s" % res.message)
    return SolverResult("feasible", point=res.x,
                        objective_value=float(objective @ res.x))


def minimize_weighted_l1(weights: Array, system: ConstraintSystem,
                         eps_strict: float = EPS_STRICT) -> SolverResult:
    """Minimize ``sum_i weights[i] * |x[i]|`` over the system.

    Standard auxiliary-variable reduction: one extra variable per
    coordinate bounds the absolute value from above.  Weights must be
    positive so the auxiliaries are tight at the optimum.
    """
    w = np.asarray(weights, dtype=float)
    if w.shape != (system.dim,):
        raise ValueError("weights dim %r does not match system dim %d"
                         % (w.shape, system.dim))
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    split = _split_rows(system, eps_strict)
    if split is None:
        return _INFEASIBLE
    ineq, eq = split
    n = system.dim
    zeros = np.zeros(n)

    a_ub = [np.concatenate([-a, zeros]) for a, _ in ineq]
    b_ub = [off for _, off in ineq]
    eye = np.eye(n)
    for i in range(n):  # x_i - t_i <= 0 and -x_i - t_i <= 0
        a_ub.append(np.concatenate([eye[i], -eye[i]]))
        b_ub.append(0.0)
        a_ub.append(np.concatenate([-eye[i], -eye[i]]))
        b_ub.append(0.0)

    _count_lp()
    res = linprog(
        c=np.concatenate([zeros, w]),
        A_ub=np.array(a_ub),
        b_ub=np.array(b_ub),
        A_eq=np.array([np.concatenate([a, zeros]) for a, _ in eq]) if eq else None,
        b_eq=np.array([-off for _, off in eq]) if eq else None,
        bounds=_linprog_bounds(system) + [(0, None)] * n,
        method="highs",
    )
    if res.status == 2:
        return _INFEASIBLE
    if res.status != 0:
        raise SolverError("weighted-L1 LP failed: %s" % res.message)
    x = res.x[:n]
    return SolverResult("feasible", point=x,
                        objective_value=float(w @ np.abs(x)))


# ---------------------------------------------------------------------------
# correction-space embedding and the constraint builders

def embed(base: Array, features, x: Array) -> Array:
    """Full input for a correction: ``base`` plus ``x`` scattered into
    ``features``.  Batch-capable along leading axes of ``x``."""
    base = np.asarray(base, dtype=float)
    x = np.asarray(x, dtype=float)
    features = list(features)
    out = np.broadcast_to(base, x.shape[:-1] + base.shape).copy()
    out[..., features] += x
    return out


def _check_features(net: Network, v: Array, s) -> tuple[Array, tuple[int, ...]]:
    v = np.asarray(v, dtype=float)
    if v.shape != (net.input_dim,):
        raise ValueError("instance has shape %r, network expects (%d,)"
                         % (v.shape, net.input_dim))
    s = tuple(int(i) for i in s)
    if not s:
        raise ValueError("feature subset must be non-empty")
    if len(set(s)) != len(s) or min(s) < 0 or max(s) >= net.input_dim:
        raise ValueError("feature subset %r invalid for %d inputs"
                         % (s, net.input_dim))
    return v, s


def activation_constraints(net: Network, pattern: Array, v: Array, s,
                           pin: int | None = None) -> ConstraintSystem:
    """One constraint per hidden neuron tying correction space to ``pattern``.

    Active neurons contribute ``pre >= 0``, inactive ones the negated strict
    ``-pre > 0``; passing ``pin`` replaces that neuron's row with the
    equality ``pre = 0`` (the shared face used by boundary checks).
    """
    v, s = _check_features(net, v, s)
    pattern = np.asarray(pattern, dtype=bool)
    pre = relunet.preactivation_matrix(net, pattern)
    rows_s = pre.matrix[:, s]
    base_vals = pre.matrix @ v + pre.offset
    cons = []
    for r in range(net.n_hidden):
        if pin is not None and r == pin:
            cons.append(LinearConstraint(rows_s[r], base_vals[r], EQ))
        elif pattern[r]:
            cons.append(LinearConstraint(rows_s[r], base_vals[r], GE))
        else:
            cons.append(LinearConstraint(-rows_s[r], -base_vals[r], GT))
    return ConstraintSystem(len(s), tuple(cons))


def class_constraints(net: Network, pattern: Array, v: Array, s,
                      desired: int = 1) -> ConstraintSystem:
    """Desired logit strictly beats every other, under the fixed-pattern view."""
    v, s = _check_features(net, v, s)
    if not 0 <= desired < net.n_logits:
        raise ValueError("desired label %d out of range" % desired)
    fm = relunet.fixed_affine(net, pattern)
    cons = []
    for c in range(net.n_logits):
        if c == desired:
            continue
        row = fm.matrix[desired] - fm.matrix[c]
        off = float(row @ v + fm.offset[desired] - fm.offset[c])
        cons.append(LinearConstraint(row[list(s)], off, GT))
    return ConstraintSystem(len(s), tuple(cons))


def boundary_constraints(net: Network, pattern: Array, p: int, v: Array,
                         s) -> ConstraintSystem:
    """Activation constraints with neuron ``p`` pinned to its zero face."""
    if not 0 <= p < net.n_hidden:
        raise ValueError("neuron index %d out of range" % p)
    return activation_constraints(net, pattern, v, s, pin=p)


def restricted_logits_map(net: Network, pattern: Array, v: Array, s) -> AffineMap:
    """Logits as an affine map of the correction coordinates."""
    v, s = _check_features(net, v, s)
    fm = relunet.fixed_affine(net, pattern)
    return AffineMap(fm.matrix[:, s], fm.matrix @ v + fm.offset)


def correction_bounds(v: Array, s, bounds) -> tuple[Array, Array]:
    """Domain box ``lo <= input <= hi`` translated to correction space."""
    lo, hi = bounds
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    v = np.asarray(v, dtype=float)
    s = list(s)
    return lo[s] - v[s], hi[s] - v[s]


def with_domain(system: ConstraintSystem, v: Array, s, bounds) -> ConstraintSystem:
    """Attach domain bounds (in correction coordinates) to a system."""
    lo, hi = correction_bounds(v, s, bounds)
    return conjoin(system, ConstraintSystem(system.dim, (), (lo, hi)))


@dataclass(frozen=True)
class Region:
    """One verified linear region, in correction coordinates.

    Every member of ``system`` keeps the network inside one fixed activation
    pattern and classifies as the desired label; ``logits_map`` reproduces
    the network's logits there.  ``witness`` is filled in by the search once
    feasibility has been established.
    """

    features: tuple[int, ...]
    base: Array
    pattern: Array
    system: ConstraintSystem
    logits_map: AffineMap
    witness: Array | None = None

    def __post_init__(self):
        base = np.array(self.base, dtype=float)
        base.setflags(write=False)
        pat = np.array(self.pattern, dtype=bool)
        pat.setflags(write=False)
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "pattern", pat)
        object.__setattr__(self, "features", tuple(int(i) for i in self.features))
        if self.witness is not None:
            w = np.array(self.witness, dtype=float)
            w.setflags(write=False)
            object.__setattr__(self, "witness", w)

    def with_witness(self, point: Array) -> "Region":
        return replace(self, witness=point)


def region_from_activations(net: Network, pattern: Array, v: Array, s,
                            desired: int = 1, bounds=None) -> Region:
    """Assemble the full region system for a pattern.

    The caller decides feasibility; infeasible patterns still build (their
    systems simply have no solutions), which is how dead patterns get
    filtered during the search.
    """
    v, s = _check_features(net, v, s)
    pattern = np.asarray(pattern, dtype=bool)
    system = conjoin(
        activation_constraints(net, pattern, v, s),
        class_constraints(net, pattern, v, s, desired=desired),
    )
    if bounds is not None:
        system = with_domain(system, v, s, bounds)
    return Region(
        features=s,
        base=v,
        pattern=pattern,
        system=system,
        logits_map=restricted_logits_map(net, pattern, v, s),
    )


def membership(region: Region, x: Array) -> bool:
    """Point-in-region under true strictness and zero slack."""
    return bool(satisfies_points(region.system, np.asarray(x, dtype=float))[0])


def system_to_json(system: ConstraintSystem) -> dict:
    """Wire form.  Infinite bound entries serialize as null."""
    obj = {
        "dim": system.dim,
        "constraints": [
            {"coeffs": c.coeffs.tolist(), "offset": c.offset, "rel": c.rel}
            for c in system.constraints
        ],
    }
    if system.bounds is not None:
        lo, hi = system.bounds
        obj["bounds"] = {
            "lo": [None if np.isneginf(x) else float(x) for x in lo],
            "hi": [None if np.isposinf(x) else float(x) for x in hi],
        }
    return obj


def system_from_json(obj: dict) -> ConstraintSystem:
    cons = tuple(
        LinearConstraint(np.array(c["coeffs"], dtype=float),
                         float(c["offset"]), c["rel"])
        for c in obj["constraints"]
    )
    bounds = None
    if "bounds" in obj:
        lo = np.array([-np.inf if x is None else x for x in obj["bounds"]["lo"]],
                      dtype=float)
        hi = np.array([np.inf if x is None else x for x in obj["bounds"]["hi"]],
                      dtype=float)
        bounds = (lo, hi)
    return ConstraintSystem(int(obj["dim"]), cons, bounds)


def region_to_json(region: Region) -> dict:
    obj = {
        "features": list(region.features),
        "base": region.base.tolist(),
        "pattern": [bool(b) for b in region.pattern],
        "system": system_to_json(region.system),
        "logits": {"matrix": region.logits_map.matrix.tolist(),
                   "offset": region.logits_map.offset.tolist()},
    }
    if region.witness is not None:
        obj["witness"] = region.witness.tolist()
    return obj


def region_from_json(obj: dict) -> Region:
    return Region(
        features=tuple(obj["features"]),
        base=np.array(obj["base"], dtype=float),
        pattern=np.array(obj["pattern"], dtype=bool),
        system=system_from_json(obj["system"]),
        logits_map=AffineMap(np.array(obj["logits"]["matrix"], dtype=float),
                             np.array(obj["logits"]["offset"], dtype=float)),
        witness=(np.array(obj["witness"], dtype=float)
                 if "witness" in obj else None),
    )
