"""Walk the two-feature reference net from rejection to verified correction.

Every number printed here is deterministic; the script is safe to diff
across runs.
"""
import numpy as np

from symcor import geometry, lincons, metrics, relunet, search, synth


def banner(text):
    print()
    print(text)
    print("-" * len(text))


net = synth.diag_reference_net()
v = np.array([0.2, 0.1])
bounds = (np.array([-1.0, -1.0]), np.array([1.0, 1.0]))

banner("the instance is rejected")
print("logits at v=%s: %s" % (v, relunet.forward(net, v)))
print("class: %d (want 1)" % relunet.classify(net, v))

params = search.SearchParams(n=2, m=100, bounds=bounds,
                             feature_subsets=((0, 1),))

banner("a concrete flip first")
d0 = search.find_min_concrete_correction(net, v, (0, 1), params)
print("gradient walk lands on delta %s" % np.round(d0, 4))
print("class at v+delta: %d" % relunet.classify(net, v + d0))

banner("linear regions around the flip")
regions = search.expand_regions(net, v, (0, 1), d0, params)
for i, region in enumerate(regions):
    rows = ["%s.delta %s %.2f" % (row.coeffs, ">=" if row.rel == lincons.GE
                                  else ">", -row.offset)
            for row in region.system.constraints]
    print("region %d, pattern %s: %s"
          % (i, region.pattern.astype(int), "; ".join(rows)))

banner("grow a symbolic correction")
interp = search.find_interpretation(net, v, params)
c = interp.correction
print("box lo %s hi %s (correction coordinates)" % (np.round(c.lo, 4),
                                                    np.round(c.hi, 4)))
print("distance %.6f at stable center %s" % (interp.distance,
                                             np.round(interp.stable_center, 4)))
print("stability axes %s, %d regions explored"
      % (list(interp.stability_axes), interp.regions_explored))

banner("check the promises")
rng = np.random.default_rng(0)
X = geometry.uniform_sample(c, 2000, rng)
labels = relunet.classify(net, lincons.embed(c.base, c.features, X))
print("2000 fresh samples of the box, flip rate %.4f" % (labels == 1).mean())
cfg = metrics.default_config(2, bounds)
print("stability ball at the center holds: %s"
      % metrics.verify_stability(c, interp.stable_center, cfg,
                                 axes=interp.stability_axes))
print("exact containment certificate: %s"
      % geometry.certify_containment(c, list(interp.regions)))
