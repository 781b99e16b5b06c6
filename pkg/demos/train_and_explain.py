"""Train a small scorer on synthetic data, then explain one of its rejections.

The dense-grid oracle re-derives the flip distance independently, so the
two numbers printed at the end should agree to within grid pitch.
"""
import numpy as np

from symcor import metrics, oracle, relunet, search, synth

spec = synth.TaskSpec(input_dim=2, hidden_sizes=(8,), seed=0,
                      dataset_size=1000,
                      label_rule=synth.LabelRule((1.0, 1.0), threshold=1.0))
X, y = synth.gen_dataset(spec)
net = synth.train_tiny((X, y), (8,))
print("trained 2-8-2 net, accuracy %.3f, positives %.1f%%"
      % (synth.accuracy(net, (X, y)), 100.0 * y.mean()))

rejected = X[(y == 0) & (relunet.classify(net, X) == 0)]
v = rejected[0]
print("explaining v=%s (true label 0, predicted 0)" % np.round(v, 4))

bounds = (np.zeros(2), np.ones(2))
params = search.SearchParams(n=2, m=50, bounds=bounds)
interp = search.find_interpretation(net, v, params)
c = interp.correction

print("correction box lo %s hi %s over features %s"
      % (np.round(c.lo, 4), np.round(c.hi, 4), list(c.features)))
print("stable center %s at weighted-L1 distance %.6f"
      % (np.round(interp.stable_center, 4), interp.distance))
target = v + interp.stable_center
print("suggested input %s, class %d"
      % (np.round(target, 4), relunet.classify(net, target)))

# the oracle walks a dense grid with no LP involved
cfg = metrics.default_config(2, bounds)
report = oracle.run_oracle(net, v, (0, 1), bounds, grid=200,
                           weights=cfg.weights)
print("oracle min flip distance %.6f at %s"
      % (report["min_flip"]["distance"],
         np.round(report["min_flip"]["point"], 4)))
print("oracle accepted fraction %.3f, largest accepted box volume %.4f"
      % (report["accepted_fraction"], report["largest_box"]["volume"]))
gap = interp.distance - report["min_flip"]["distance"]
print("search paid %.6f over the grid optimum (stability has a price)" % gap)
