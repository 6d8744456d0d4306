"""Reach-avoid controller synthesis with a reachability verifier in the loop.

The package computes flowpipes of sampled-data control loops (exactly for
linear systems under linear feedback, with interval enclosures for nonlinear
systems under small tanh networks), scores them against unsafe and goal sets,
and tunes controller parameters with two-sided perturbation gradients until the
flowpipe certifies the reach-avoid property.
"""

from .controllers import LinearController, NeuralController
from .dynamics import LtiSystem, NonlinearSystem, acc_system, discretize_lti, simulate, vanderpol_system
from .geometry import ConvexPolygon, IntervalBox
from .initset import InitSetResult, search_initial_set
from .learner import LearnConfig, LearnResult, ReachAvoidSets, difference_gradient, learn, learn_hybrid
from .metrics import geometric_goal, geometric_unsafe, wasserstein, wasserstein_score
from .reach import Flowpipe, ReachConfig, Verdict, VerdictKind, check_verdict, compute_flowpipe

__all__ = [
    "ConvexPolygon",
    "IntervalBox",
    "LtiSystem",
    "NonlinearSystem",
    "acc_system",
    "vanderpol_system",
    "discretize_lti",
    "simulate",
    "LinearController",
    "NeuralController",
    "Flowpipe",
    "ReachConfig",
    "Verdict",
    "VerdictKind",
    "check_verdict",
    "compute_flowpipe",
    "geometric_unsafe",
    "geometric_goal",
    "wasserstein",
    "wasserstein_score",
    "LearnConfig",
    "LearnResult",
    "ReachAvoidSets",
    "difference_gradient",
    "learn",
    "learn_hybrid",
    "InitSetResult",
    "search_initial_set",
]
