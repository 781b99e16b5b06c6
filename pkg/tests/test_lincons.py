import numpy as np
import pytest

import oracles
from symcor import lincons, relunet
from symcor.lincons import (EPS_STRICT, EQ, GE, GT, ConstraintSystem,
                            LinearConstraint, UnboundedError,
                            activation_constraints, boundary_constraints,
                            check_feasible, class_constraints, conjoin, embed,
                            membership, minimize, minimize_weighted_l1,
                            region_from_activations, region_to_json,
                            region_from_json, satisfies_points, system_to_json,
                            system_from_json, with_domain)


def _sys(rows, dim=2, bounds=None):
    cons = tuple(LinearConstraint(np.array(c, dtype=float), o, r)
                 for c, o, r in rows)
    return ConstraintSystem(dim, cons, bounds)


def _row_set(system):
    return {(tuple(c.coeffs.tolist()), round(c.offset, 12), c.rel)
            for c in system.constraints}


# -- builders, frozen against the hand-checkable reference net --------------


def test_activation_constraints_reference(diag_net):
    sys_ = activation_constraints(diag_net, np.array([True, False]),
                                  np.array([0.2, 0.1]), (0, 1))
    assert _row_set(sys_) == {
        ((1.0, 0.0), 0.2, GE),       # x1 + 0.2 >= 0
        ((-0.0, -1.0), -0.1, GT),    # -(x2 + 0.1) > 0
    }
    sys_ = activation_constraints(diag_net, np.array([True, True]),
                                  np.zeros(2), (0, 1))
    assert _row_set(sys_) == {((1.0, 0.0), 0.0, GE), ((0.0, 1.0), 0.0, GE)}


def test_activation_constraints_projected_subset(diag_net):
    # s = first feature only: x2 is frozen at v2, so neuron 2's row becomes
    # the constant -0.1 > 0, i.e. false
    sys_ = activation_constraints(diag_net, np.array([True, False]),
                                  np.array([0.2, 0.1]), (0,))
    assert sys_.dim == 1
    assert _row_set(sys_) == {((1.0,), 0.2, GE), ((-0.0,), -0.1, GT)}
    assert sys_.has_constant_false
    assert check_feasible(sys_).status == "infeasible"


def test_class_constraints_reference(diag_net):
    v = np.array([0.2, 0.1])
    sys_ = class_constraints(diag_net, np.array([True, True]), v, (0, 1))
    # (x1+0.2) + (x2+0.1) - 0.5 > 0
    assert _row_set(sys_) == {((1.0, 1.0), -0.2, GT)}
    sys_ = class_constraints(diag_net, np.array([True, False]), v, (0, 1))
    assert _row_set(sys_) == {((1.0, 0.0), -0.3, GT)}


def test_class_constraints_multiclass_count(rng):
    # 3 logits -> 2 strict rows for desired=2
    layers = (
        relunet.Layer(rng.normal(size=(4, 3)), rng.normal(size=4), "relu"),
        relunet.Layer(rng.normal(size=(3, 4)), rng.normal(size=3), "linear"),
    )
    net = relunet.Network(layers)
    sys_ = class_constraints(net, np.ones(4, dtype=bool), np.zeros(3),
                             (0, 1, 2), desired=2)
    assert len(sys_.constraints) == 2
    assert all(c.rel == GT for c in sys_.constraints)


def test_boundary_constraints_reference(diag_net):
    sys_ = boundary_constraints(diag_net, np.array([True, True]), 1,
                                np.array([0.2, 0.1]), (0, 1))
    assert _row_set(sys_) == {((1.0, 0.0), 0.2, GE), ((0.0, 1.0), 0.1, EQ)}
    sys_ = boundary_constraints(diag_net, np.array([True, False]), 0,
                                np.zeros(2), (0, 1))
    assert _row_set(sys_) == {((1.0, 0.0), 0.0, EQ), ((-0.0, -1.0), -0.0, GT)}
    sys_ = boundary_constraints(diag_net, np.array([False, True]), 0,
                                np.zeros(2), (0, 1))
    # the pin always uses the raw row, whatever the pattern said about p
    assert _row_set(sys_) == {((1.0, 0.0), 0.0, EQ), ((0.0, 1.0), 0.0, GE)}


def test_region_from_activations_reference(diag_net):
    v = np.array([0.2, 0.1])
    region = region_from_activations(diag_net, np.array([True, False]), v, (0, 1))
    assert _row_set(region.system) == {
        ((1.0, 0.0), 0.2, GE),
        ((-0.0, -1.0), -0.1, GT),
        ((1.0, 0.0), -0.3, GT),
    }
    # all-inactive pattern: logit1 is constantly 0, class row 0 > 0.5 false
    dead = region_from_activations(diag_net, np.array([False, False]), v, (0, 1))
    assert dead.system.has_constant_false
    assert check_feasible(dead.system).status == "infeasible"
    third = region_from_activations(diag_net, np.array([False, True]), v, (0, 1))
    assert _row_set(third.system) == {
        ((-1.0, -0.0), -0.2, GT),
        ((0.0, 1.0), 0.1, GE),
        ((0.0, 1.0), -0.4, GT),
    }


# -- solver contract --------------------------------------------------------


def test_check_feasible_witness():
    sys_ = _sys([([1, 0], -0.3, GT), ([0, -1], -0.1, GT)])
    res = check_feasible(sys_)
    assert res.status == "feasible"
    x = res.point
    assert x[0] - 0.3 > 0 and -(x[1] + 0.1) > 0


def test_check_feasible_contradiction():
    assert check_feasible(_sys([([1, 0], 0, GE), ([-1, 0], 0, GT)])).status \
        == "infeasible"


def test_check_feasible_witness_has_strict_slack(small_random_nets, rng):
    # the witness must survive membership with strict rows loosened by eps/2
    for net in small_random_nets:
        v = rng.uniform(-1, 1, net.input_dim)
        s = tuple(range(net.input_dim))
        for _ in range(10):
            x = rng.uniform(-2, 2, net.input_dim)
            pattern = relunet.get_activations(net, v + x)
            region = region_from_activations(net, pattern, v, s)
            res = check_feasible(region.system)
            if res.status != "feasible":
                continue
            margins = satisfies_points(region.system, res.point,
                                       strict_margin=EPS_STRICT / 2)
            assert bool(margins[0])


def test_minimize_reference_values():
    res = minimize(np.array([1.0, 0.0]), _sys([([1, 0], -0.3, GT)]))
    assert res.status == "feasible"
    assert res.objective_value == pytest.approx(0.3 + EPS_STRICT, abs=1e-9)

    res = minimize_weighted_l1(np.ones(2),
                               _sys([([1, 0], -0.2, GE), ([0, 1], -0.3, GE)]))
    assert res.objective_value == pytest.approx(0.5, abs=1e-9)
    assert np.allclose(res.point, [0.2, 0.3], atol=1e-7)


def test_minimize_unbounded():
    with pytest.raises(UnboundedError):
        minimize(np.array([-1.0, 0.0]),
                 _sys([([1, 0], 0, GE), ([0, 1], -1, EQ)]))


def test_minimize_respects_bounds():
    sys_ = _sys([([1, 1], 0, GE)], bounds=(np.array([-0.5, -0.5]),
                                           np.array([2.0, 2.0])))
    res = minimize(np.array([1.0, 0.0]), sys_)
    assert res.point[0] == pytest.approx(-0.5, abs=1e-9)


def test_constant_rows_skip_the_solver():
    before = lincons.lp_call_count()
    sys_ = _sys([([0, 0], -1.0, GT)])
    assert check_feasible(sys_).status == "infeasible"
    assert minimize(np.ones(2), sys_).status == "infeasible"
    assert lincons.lp_call_count() == before  # resolved without an LP


# -- membership strictness --------------------------------------------------


def test_membership_reference(diag_net):
    v = np.array([0.2, 0.1])
    region = region_from_activations(diag_net, np.array([True, True]), v, (0, 1))
    assert membership(region, np.array([0.3, 0.3]))
    assert membership(region, np.array([-0.2, 0.5]))
    # clearly below the class boundary x1 + x2 > 0.2
    assert not membership(region, np.array([0.05, 0.05]))


def test_membership_excludes_exact_boundary(diag_net):
    # v chosen so the class row's offset is exactly representable (0.0) and
    # x sums to an exact float zero: the strict row evaluates to 0, not >0
    v = np.array([0.25, 0.25])
    region = region_from_activations(diag_net, np.array([True, True]), v, (0, 1))
    assert not membership(region, np.array([-0.1, 0.1]))
    assert membership(region, np.array([-0.1, 0.1 + 1e-9]))


def test_satisfies_points_batch(diag_net):
    v = np.array([0.2, 0.1])
    region = region_from_activations(diag_net, np.array([True, True]), v, (0, 1))
    X = np.array([[0.3, 0.3], [0.05, 0.05], [-0.2, 0.5], [-0.3, 0.0]])
    assert satisfies_points(region.system, X).tolist() == \
        [True, False, True, False]


# -- region semantics -------------------------------------------------------


def test_region_soundness_and_affine_fidelity(small_random_nets, rng):
    # any member point classifies as desired and the logits map is exact
    total_hits = 0
    for net in small_random_nets:
        v = rng.uniform(-1, 1, net.input_dim)
        s = tuple(range(min(2, net.input_dim)))
        box = (v - 3.0, v + 3.0)  # keeps hit-and-run chords at sane scale
        # coarse scan for accepted points; random nets can be one-sided
        grid = np.linspace(-3, 3, 9)
        seen = set()
        for offs in np.stack(np.meshgrid(*([grid] * len(s))), -1).reshape(-1, len(s)):
            probe = embed(v, s, offs)
            if relunet.classify(net, probe) != 1:
                continue
            pattern = relunet.get_activations(net, probe)
            if pattern.tobytes() in seen or len(seen) >= 5:
                continue
            seen.add(pattern.tobytes())
            region = region_from_activations(net, pattern, v, s, bounds=box)
            res = check_feasible(region.system)
            if res.status != "feasible":
                continue
            total_hits += 1
            for x in oracles.hit_and_run(region.system, res.point, 40, rng):
                full = embed(v, s, x)
                assert relunet.classify(net, full) == 1
                assert np.max(np.abs(relunet.forward(net, full)
                                     - region.logits_map(x))) <= 1e-7
    assert total_hits >= 5


def test_projection_equals_explicit_zero_equalities(small_random_nets, rng):
    # restricted builders == full-dim builders + x[j] = 0 for j outside s
    for net in small_random_nets:
        d = net.input_dim
        v = rng.uniform(-1, 1, d)
        s = tuple(sorted(rng.choice(d, size=max(1, d - 1), replace=False).tolist()))
        for _ in range(10):
            pattern = rng.random(net.n_hidden) < 0.5
            proj = conjoin(
                activation_constraints(net, pattern, v, s),
                class_constraints(net, pattern, v, s),
            )
            full = conjoin(
                activation_constraints(net, pattern, v, tuple(range(d))),
                class_constraints(net, pattern, v, tuple(range(d))),
            )
            pins = tuple(
                LinearConstraint(np.eye(d)[j], 0.0, EQ)
                for j in range(d) if j not in s
            )
            pinned = conjoin(full, ConstraintSystem(d, pins))
            assert check_feasible(proj).status == check_feasible(pinned).status
            if check_feasible(proj).status == "feasible":
                w_proj = np.ones(len(s))
                w_full = np.ones(d)
                a = minimize_weighted_l1(w_proj, proj)
                b = minimize_weighted_l1(w_full, pinned)
                assert a.objective_value == pytest.approx(b.objective_value,
                                                          abs=1e-6)


def test_embed_scatter(rng):
    base = np.array([1.0, 2.0, 3.0])
    out = embed(base, (0, 2), np.array([0.5, -1.0]))
    assert np.allclose(out, [1.5, 2.0, 2.0])
    batch = embed(base, (1,), rng.uniform(-1, 1, (10, 1)))
    assert batch.shape == (10, 3)
    assert np.allclose(batch[:, [0, 2]], [1.0, 3.0])


def test_with_domain_translates_bounds(diag_net):
    v = np.array([0.2, 0.1])
    region = region_from_activations(
        diag_net, np.array([True, True]), v, (0, 1),
        bounds=(np.array([-1.0, -1.0]), np.array([1.0, 1.0])))
    lo, hi = region.system.bounds
    assert np.allclose(lo, [-1.2, -1.1])
    assert np.allclose(hi, [0.8, 0.9])


def test_conjoin_rejects_dim_mismatch():
    with pytest.raises(ValueError):
        conjoin(_sys([([1, 0], 0, GE)]), _sys([([1], 0, GE)], dim=1))


def test_system_json_round_trip(diag_net):
    v = np.array([0.2, 0.1])
    region = region_from_activations(
        diag_net, np.array([True, False]), v, (0, 1),
        bounds=(np.array([-1.0, -np.inf]), np.array([np.inf, 1.0])))
    back = system_from_json(system_to_json(region.system))
    assert _row_set(back) == _row_set(region.system)
    assert np.array_equal(back.bounds[0], region.system.bounds[0])
    assert np.array_equal(back.bounds[1], region.system.bounds[1])

    res = check_feasible(region.system)
    r2 = region_from_json(region_to_json(region.with_witness(res.point)))
    assert r2.pattern.tolist() == [True, False]
    assert np.allclose(r2.witness, res.point)
    assert np.allclose(r2.logits_map.matrix, region.logits_map.matrix)
