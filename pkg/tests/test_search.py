import json
import math

import numpy as np
import pytest

from symcor import geometry, lincons, relunet, search, synth
from symcor.errors import (CorrectionFailure, NoInitialCorrection,
                           UnstableCorrection)
from symcor.lincons import SolverError
from symcor.metrics import CategoricalGroup, DistanceConfig
from symcor.relunet import Layer, Network
from symcor.search import (SearchParams, check_region_boundary, expand_regions,
                           find_interpretation, find_min_concrete_correction,
                           find_projected_interpretation, interpretation_to_json)

_V = np.array([0.2, 0.1])
_BOUNDS = (np.array([-1.0, -1.0]), np.array([1.0, 1.0]))


def _params(**kw):
    kw.setdefault("fgsm_step", 0.05)
    kw.setdefault("bounds", _BOUNDS)
    return SearchParams(**kw)


def _patterns(regions):
    return [r.pattern.tolist() for r in regions]


def _thin_band_net():
    """1-dim net whose middle pattern [t,f] spans only 2e-7, thinner than
    eps_strict; its neighbors are fat.  Exercises the boundary nudge."""
    l1 = Layer(np.array([[1.0], [1.0]]), np.array([-0.5, -0.5 - 2e-7]), "relu")
    l2 = Layer(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([1e-8, 0.0]), "linear")
    return Network((l1, l2))


def _one_hot_net():
    """N1 with a dead one-hot triple appended (columns 2-4 unused)."""
    l1 = Layer(np.hstack([np.eye(2), np.zeros((2, 3))]), np.zeros(2), "relu")
    l2 = Layer(np.array([[0.0, 0.0], [1.0, 1.0]]), np.array([0.5, 0.0]), "linear")
    return Network((l1, l2))


def _category_gated_net():
    """logit1 = relu(x1) + relu(x2) - 2 * relu(c2): the second category
    suppresses acceptance outright."""
    l1 = Layer(np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0], [0, 0, 0, 1.0]]),
               np.zeros(3), "relu")
    l2 = Layer(np.array([[0.0, 0, 0], [1.0, 1.0, -2.0]]),
               np.array([0.5, 0.0]), "linear")
    return Network((l1, l2))


# -- the gradient walk ------------------------------------------------------


def test_fgsm_reference_trace(diag_net):
    # ties at gradient (1,1) break to the lower index; flip needs x1 > 0.3
    delta = find_min_concrete_correction(diag_net, _V, (0, 1), _params())
    assert delta == pytest.approx([0.25, 0.0], abs=1e-12)
    assert relunet.classify(diag_net, _V + delta) == 1


def test_fgsm_single_feature(diag_net):
    delta = find_min_concrete_correction(diag_net, _V, (1,), _params())
    assert delta == pytest.approx([0.0, 0.25], abs=1e-12)


def test_fgsm_dead_gradient_fails(diag_net):
    # both relus inactive at (-5,-5): the restricted gradient is zero
    with pytest.raises(NoInitialCorrection, match="vanished"):
        find_min_concrete_correction(diag_net, np.array([-5.0, -5.0]), (0,),
                                     SearchParams(fgsm_step=0.05,
                                                  max_fgsm_iters=10))


def test_fgsm_budget_exhaustion(diag_net):
    with pytest.raises(NoInitialCorrection, match="no label flip within 2"):
        find_min_concrete_correction(diag_net, _V, (0,),
                                     _params(fgsm_step=0.01, max_fgsm_iters=2))


def test_fgsm_rejects_already_accepted(diag_net):
    with pytest.raises(ValueError):
        find_min_concrete_correction(diag_net, np.array([1.0, 1.0]), (0, 1),
                                     _params())


def test_fgsm_wedges_on_a_binding_wall(diag_net):
    # the gradient stays tied at (1,1), so ties keep picking x1 even once
    # the clamp pins it at 0.35; the walk wedges and the budget reports it
    bounds = (np.array([-1.0, -1.0]), np.array([0.35, 1.0]))
    with pytest.raises(NoInitialCorrection, match="no label flip"):
        find_min_concrete_correction(
            diag_net, _V, (0, 1),
            SearchParams(fgsm_step=0.05, bounds=bounds, max_fgsm_iters=20))


def test_fgsm_clamped_walk_stays_in_domain(diag_net):
    # a wall on the non-preferred axis binds without blocking the flip
    bounds = (np.array([-0.02, -1.0]), np.array([1.0, 1.0]))
    delta = find_min_concrete_correction(
        diag_net, _V, (0, 1), SearchParams(fgsm_step=0.05, bounds=bounds))
    point = _V + delta
    assert (bounds[0] - 1e-12 <= point).all() and (point <= bounds[1] + 1e-12).all()
    assert relunet.classify(diag_net, point) == 1


def test_fgsm_default_step_is_range_fraction(diag_net):
    # no explicit step: 2.5% of the range-2 domain = 0.05 per move
    delta = find_min_concrete_correction(
        diag_net, _V, (0, 1), SearchParams(bounds=_BOUNDS))
    assert delta == pytest.approx([0.25, 0.0], abs=1e-12)


# -- boundary connectivity --------------------------------------------------


def test_boundary_reference_booleans(diag_net):
    tt = np.array([True, True])
    tf = np.array([True, False])
    assert check_region_boundary(diag_net, tt, 1, _V, (0, 1))
    assert check_region_boundary(diag_net, tt, 0, _V, (0, 1))
    # on neuron 0's face x1 is pinned to -0.2, forcing logit1 = 0 < 0.5
    assert not check_region_boundary(diag_net, tf, 0, _V, (0, 1))


# -- region expansion -------------------------------------------------------


_D0 = np.array([0.25, 0.0])


def test_expand_full_region_set(diag_net):
    regions = expand_regions(diag_net, _V, (0, 1), _D0, _params(m=100))
    assert _patterns(regions) == [[True, True], [False, True], [True, False]]
    for region in regions:
        assert region.witness is not None
        assert lincons.satisfies_points(region.system,
                                        region.witness[None, :]).all()


def test_expand_region_cap(diag_net):
    regions = expand_regions(diag_net, _V, (0, 1), _D0, _params(m=1))
    assert _patterns(regions) == [[True, True]]


def test_expand_cap_is_prefix_nested(diag_net):
    full = expand_regions(diag_net, _V, (0, 1), _D0, _params(m=100))
    for m in (1, 2, 3):
        sub = expand_regions(diag_net, _V, (0, 1), _D0, _params(m=m))
        assert _patterns(sub) == _patterns(full)[:m]


def test_expand_infinite_cap(diag_net):
    regions = expand_regions(diag_net, _V, (0, 1), _D0, _params(m=math.inf))
    assert len(regions) == 3


def test_expand_single_feature_single_region(diag_net):
    # flipping neuron 1 needs x2 to move, which s=(0,) forbids
    regions = expand_regions(diag_net, _V, (0,), _D0, _params())
    assert _patterns(regions) == [[True, True]]


def test_expand_rejects_non_flipping_delta(diag_net):
    with pytest.raises(ValueError):
        expand_regions(diag_net, _V, (0, 1), np.zeros(2), _params())


def test_expand_nudges_off_a_thin_band():
    net = _thin_band_net()
    v = np.array([0.0])
    delta0 = np.array([0.5 + 1e-7])   # lands in the 2e-7-wide [t,f] band
    assert relunet.classify(net, v + delta0) == 1
    assert relunet.get_activations(net, v + delta0).tolist() == [True, False]
    regions = expand_regions(net, v, (0,), delta0, SearchParams(),
                             nudge_dir=np.array([1.0]))
    assert _patterns(regions) == [[True, True]]
    assert regions[0].witness is not None


def test_expand_nudge_wrong_way_is_a_solver_error():
    net = _thin_band_net()
    with pytest.raises(SolverError, match="after nudging"):
        expand_regions(net, np.array([0.0]), (0,), np.array([0.5 + 1e-7]),
                       SearchParams(), nudge_dir=np.array([-1.0]))


def test_expand_patterns_are_single_flip_connected():
    spec = synth.TaskSpec(input_dim=3, hidden_sizes=(5,), seed=3)
    net = synth.gen_network(spec)
    rng = np.random.default_rng(0)
    v = next(x for x in rng.uniform(-1, 1, (500, 3))
             if relunet.classify(net, x) == 0)
    params = SearchParams(n=3, bounds=(-np.ones(3), np.ones(3)), m=12)
    delta0 = find_min_concrete_correction(net, v, (0, 1, 2), params)
    regions = expand_regions(net, v, (0, 1, 2), delta0, params)
    pats = [r.pattern for r in regions]
    assert len(pats) == 9
    for i, a in enumerate(pats):
        assert min(int((a != b).sum())
                   for j, b in enumerate(pats) if j != i) == 1
    full = [r.pattern.tobytes() for r in regions]
    for m in (1, 4, 7):
        sub = expand_regions(net, v, (0, 1, 2), delta0,
                             SearchParams(n=3, bounds=params.bounds, m=m))
        assert [r.pattern.tobytes() for r in sub] == full[:m]


# -- the per-subset pipeline ------------------------------------------------


def test_projected_interpretation_samples_all_flip(diag_net, rng):
    interp = find_projected_interpretation(diag_net, _V, (0, 1), _params())
    assert math.isfinite(interp.distance)
    assert interp.regions_explored == 3
    X = geometry.uniform_sample(interp.correction, 1000, rng)
    labels = relunet.classify(diag_net, lincons.embed(_V, (0, 1), X))
    assert (labels == 1).all()
    center_point = lincons.embed(_V, (0, 1), interp.stable_center)
    assert relunet.classify(diag_net, center_point) == 1


def test_projected_failure_no_initial(diag_net):
    with pytest.raises(CorrectionFailure) as err:
        find_projected_interpretation(diag_net, np.array([-5.0, -5.0]), (0,),
                                      _params(max_fgsm_iters=10))
    assert err.value.stage == "no-initial-correction"


def test_projected_failure_unstable_under_huge_e(diag_net):
    cfg = DistanceConfig(weights=np.full(2, 0.5), radii=np.full(2, 0.1), e=50.0)
    with pytest.raises(UnstableCorrection) as err:
        find_projected_interpretation(diag_net, _V, (0, 1),
                                      _params(distance=cfg))
    assert err.value.stage == "unstable"


def test_projected_sigma_filter_tags_adversarial(diag_net):
    with pytest.raises(CorrectionFailure) as err:
        find_projected_interpretation(diag_net, _V, (0, 1),
                                      _params(sigma=10.0))
    assert err.value.stage == "adversarial"


# -- the subset search ------------------------------------------------------


def test_search_single_subset_equals_projected(diag_net):
    params = _params(n=2)
    agg = find_interpretation(diag_net, _V, params)
    seed = np.random.SeedSequence(0).spawn(1)[0]
    proj = find_projected_interpretation(diag_net, _V, (0, 1), params,
                                         rng=np.random.default_rng(seed))
    assert json.dumps(interpretation_to_json(agg), sort_keys=True) == \
        json.dumps(interpretation_to_json(proj), sort_keys=True)


def test_search_takes_branch_minimum(diag_net):
    params = _params(n=1)
    agg = find_interpretation(diag_net, _V, params)
    seeds = np.random.SeedSequence(0).spawn(2)
    branches = [
        find_projected_interpretation(diag_net, _V, (i,), params,
                                      rng=np.random.default_rng(seeds[i]))
        for i in (0, 1)
    ]
    distances = [b.distance for b in branches]
    assert agg.distance == min(distances)
    assert agg.features == branches[int(np.argmin(distances))].features


def test_search_explicit_feature_subsets(diag_net):
    params = _params(feature_subsets=((1,),))
    got = find_interpretation(diag_net, _V, params)
    assert got.features == (1,)
    assert got.correction.features == (1,)


def test_search_parallel_equals_serial(diag_net):
    serial = find_interpretation(diag_net, _V, _params(n=1, workers=1))
    threaded = find_interpretation(diag_net, _V, _params(n=1, workers=4))
    assert json.dumps(interpretation_to_json(serial), sort_keys=True) == \
        json.dumps(interpretation_to_json(threaded), sort_keys=True)


def test_search_deterministic_across_runs(diag_net):
    one = find_interpretation(diag_net, _V, _params(rng_seed=11))
    two = find_interpretation(diag_net, _V, _params(rng_seed=11))
    assert json.dumps(interpretation_to_json(one), sort_keys=True) == \
        json.dumps(interpretation_to_json(two), sort_keys=True)


def test_search_simplex_shape(diag_net, rng):
    got = find_interpretation(diag_net, _V, _params(shape="simplex"))
    assert got.correction.kind == "simplex"
    X = geometry.uniform_sample(got.correction, 500, rng)
    labels = relunet.classify(diag_net, lincons.embed(_V, (0, 1), X))
    assert (labels == 1).all()


def test_search_aggregate_failure_headline(diag_net):
    # every branch dies in the gradient walk from a dead-relu start
    with pytest.raises(CorrectionFailure) as err:
        find_interpretation(diag_net, np.array([-5.0, -5.0]),
                            _params(n=1, max_fgsm_iters=5))
    assert err.value.stage == "no-initial-correction"
    assert set(err.value.branches.values()) == {"no-initial-correction"}


def test_search_sigma_failure_headline(diag_net):
    with pytest.raises(CorrectionFailure) as err:
        find_interpretation(diag_net, _V, _params(sigma=10.0))
    assert err.value.stage == "adversarial"
    assert set(err.value.branches.values()) == {"adversarial"}


# -- categorical enumeration ------------------------------------------------


_ONE_HOT = CategoricalGroup(
    indices=(2, 3, 4),
    values=((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)))


def _one_hot_setup():
    net = _one_hot_net()
    v = np.array([0.2, 0.1, 1.0, 0.0, 0.0])
    lo = np.array([-1.0, -1.0, 0.0, 0.0, 0.0])
    hi = np.ones(5)
    cfg = DistanceConfig(weights=1.0 / (hi - lo), radii=0.05 * (hi - lo),
                         categorical=(_ONE_HOT,))
    params = SearchParams(n=2, fgsm_step=0.05, bounds=(lo, hi), distance=cfg)
    return net, v, params


def test_categorical_winner_keeps_input_assignment():
    net, v, params = _one_hot_setup()
    got = find_interpretation(net, v, params)
    assert got.categorical_choice == (((2, 3, 4), (1.0, 0.0, 0.0)),)
    assert got.categorical_penalty == 0.0
    assert got.features == (0, 1)


def test_categorical_numeric_parts_identical_across_assignments():
    # the one-hot columns are dead weight, so under a shared rng every
    # assignment must produce the same box and center
    net, v, params = _one_hot_setup()
    outs = []
    for value in _ONE_HOT.values:
        branch_v = v.copy()
        branch_v[[2, 3, 4]] = value
        r = find_projected_interpretation(net, branch_v, (0, 1), params,
                                          rng=np.random.default_rng(7))
        outs.append((r.correction.lo.tolist(), r.correction.hi.tolist(),
                     r.stable_center.tolist(), r.distance))
    assert outs[0] == outs[1] == outs[2]


def _gated_setup(min_categories):
    net = _category_gated_net()
    v = np.array([0.2, 0.1, 0.0, 1.0])   # starts in the suppressed category
    group = CategoricalGroup(indices=(2, 3),
                             values=((1.0, 0.0), (0.0, 1.0)),
                             min_categories=min_categories)
    lo = np.array([-1.0, -1.0, 0.0, 0.0])
    hi = np.ones(4)
    cfg = DistanceConfig(weights=1.0 / (hi - lo), radii=0.05 * (hi - lo),
                         categorical=(group,))
    params = SearchParams(n=2, fgsm_step=0.05, bounds=(lo, hi), distance=cfg,
                          max_fgsm_iters=50)
    return net, v, params


def test_categorical_slack_demotes_single_category_fix():
    # switching to category 1 works numerically, but no ALTERNATIVE category
    # also flips, so min_categories=2 demotes it; the stay-put branch cannot
    # flip at all within its budget
    net, v, params = _gated_setup(min_categories=2)
    with pytest.raises(CorrectionFailure) as err:
        find_interpretation(net, v, params)
    assert err.value.stage == "unstable"
    assert sorted(err.value.branches.values()) == \
        ["no-initial-correction", "unstable"]


def test_categorical_penalty_charged_on_switch():
    net, v, params = _gated_setup(min_categories=1)
    got = find_interpretation(net, v, params)
    assert got.categorical_choice == (((2, 3), (1.0, 0.0)),)
    assert got.categorical_penalty == 1.0
    assert got.distance > 1.0


# -- serialization ----------------------------------------------------------


def test_interpretation_json_shape(diag_net):
    interp = find_interpretation(diag_net, _V, _params())
    payload = interpretation_to_json(interp)
    assert set(payload) == {
        "correction", "features", "distance", "stable_center",
        "stability_axes", "regions_explored", "desired_label", "base",
        "instance", "categorical", "categorical_penalty", "lp_calls",
    }
    assert "elapsed" not in payload
    assert payload["lp_calls"] >= 1
    assert payload["categorical"] == []
    json.dumps(payload)   # fully serializable


# -- parameter validation ---------------------------------------------------


def test_params_validation():
    for kw in ({"n": 0}, {"m": 0}, {"max_fgsm_iters": 0}, {"shape": "ball"},
               {"sigma": -1.0}, {"workers": 0}, {"eps_strict": 0.0}):
        with pytest.raises(ValueError):
            SearchParams(**kw)
    with pytest.raises(ValueError):
        SearchParams(bounds=(np.zeros(2), np.zeros(2)))


def test_search_input_validation(diag_net):
    with pytest.raises(ValueError, match="shape"):
        find_interpretation(diag_net, np.zeros(3), _params())
    with pytest.raises(ValueError, match="desired"):
        find_interpretation(diag_net, np.array([1.0, 1.0]), _params())
    with pytest.raises(ValueError, match="exceeds"):
        find_interpretation(diag_net, _V, _params(n=3))


def test_search_rejects_mutable_categorical_overlap():
    net, v, params = _one_hot_setup()
    clash = SearchParams(n=1, fgsm_step=0.05, bounds=params.bounds,
                         distance=params.distance, mutable_features=(0, 2))
    with pytest.raises(ValueError, match="overlap"):
        find_interpretation(net, v, clash)
