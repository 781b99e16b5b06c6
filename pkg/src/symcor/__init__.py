"""symcor: minimal stable symbolic corrections for ReLU classifiers.

The library answers "what is the smallest stable change to this rejected
input that the classifier would accept?" by enumerating the classifier's
linear regions around a concrete counterexample, growing a convex shape
(box or simplex) inside their union, and measuring the cheapest center of
the shape that keeps a whole tolerance ball inside it.

Modules
-------
relunet    networks, activation patterns, fixed-activation affine views
lincons    linear constraint systems, region builders, the LP contract
geometry   convex correction shapes: sampling, containment, greedy growth
metrics    erosion, stable distance, stability verification
search     the pipeline: concrete correction, region worklist, subsets
synth      seeded generators and a tiny trainer for end-to-end runs
oracle     grid-sampling ground truth for low-dimensional sanity checks
cli        explain / verify / oracle / plotdata commands
"""

from . import cli, geometry, lincons, metrics, oracle, relunet, search, synth
from .errors import CorrectionFailure, NoInitialCorrection, UnstableCorrection
from .geometry import ConvexCorrection, GrowthParams
from .lincons import (ConstraintSystem, LinearConstraint, Region, SolverError,
                      SolverResult, UnboundedError)
from .metrics import DistanceConfig, StabilityReport
from .relunet import AffineMap, Layer, Network, NetworkFormatError
from .search import Interpretation, SearchParams
from .synth import TaskSpec

__all__ = [
    "AffineMap", "ConstraintSystem", "ConvexCorrection", "CorrectionFailure",
    "DistanceConfig", "GrowthParams", "Interpretation", "Layer",
    "LinearConstraint", "Network", "NetworkFormatError",
    "NoInitialCorrection", "Region", "SearchParams", "SolverError",
    "SolverResult", "StabilityReport", "TaskSpec", "UnboundedError",
    "UnstableCorrection", "cli", "geometry", "lincons", "metrics", "oracle",
    "relunet", "search", "synth",
]
