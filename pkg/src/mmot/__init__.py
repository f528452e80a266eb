"""Multi-marginal optimal transport with Riemannian barycenter costs."""

from .cost import CostTensor, build_tensor, evaluate, grad_x1, reconstruct_ybar
from .errors import (CapError, ConfigError, ConvergenceError, CutLocusError, IterationLimit,
                     MMOTError, NonUniqueError, NumericalError, SizeCapError)
from .frechet import (CostFamily, DistanceFunction, KarcherOptions, KarcherProblem, KarcherResult,
                      brute_force)
from .frechet import solve as karcher_mean
from .manifold import ManifoldSpec, euclidean, sphere, torus
from .solver import (DiscreteMeasure, DualPotentials, SolveReport, TransportPlan, solve_exact,
                     solve_sinkhorn)

__version__ = "0.1.0"

__all__ = [
    "CapError", "ConfigError", "ConvergenceError", "CostFamily", "CostTensor", "CutLocusError",
    "DiscreteMeasure", "DistanceFunction", "DualPotentials", "IterationLimit", "KarcherOptions",
    "KarcherProblem", "KarcherResult", "MMOTError", "ManifoldSpec", "NonUniqueError",
    "NumericalError", "SizeCapError", "SolveReport", "TransportPlan", "brute_force",
    "build_tensor", "euclidean", "evaluate", "grad_x1", "karcher_mean", "reconstruct_ybar",
    "solve_exact", "solve_sinkhorn", "sphere", "torus",
]
