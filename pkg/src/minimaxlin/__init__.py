"""Minimax linear balancing weights for linear functionals of a regression function.

Weights minimize worst-case conditional bias over a weighted-Lipschitz class
plus a variance penalty; the package solves the underlying modulus-of-
continuity program exactly, converts solutions into weights, bias bounds,
standard errors and intervals, and ships a Monte Carlo laboratory.
"""

__version__ = "0.1.0"

from .data import (ConstraintGraph, FunctionalTarget, LipschitzClass, NodeSet,
                   Sample, ate_target, att_target, build_constraint_graph,
                   build_nodes, custom_target, load_sample_csv)
from .errors import (DataError, DegenerateDenominator, InvalidDelta,
                     InvalidPruning, InvalidRule, InvalidVariance,
                     MinimaxLinError, MissingArm, OracleTooLarge, SolverStalled)
from .estimator import build_problem, estimate, estimate_att_ratio, estimate_late
from .inference import (CompositeComponent, CompositeSpec, EstimateReport,
                        PreliminaryFit, confidence_intervals, delta_method,
                        folded_normal_cv, influence_component, point_estimate,
                        preliminary_fit, ratio_spec, share_component,
                        variance_estimate)
from .modulus import (CurvePoint, ModulusEngine, ModulusProblem,
                      ModulusSolution, ToleranceSpec, omega_curve, solve_modulus)
from .oracle import brute_force_modulus
from .simlab import (DgpSpec, SimResult, augmented_estimate, discrepancy,
                     generate_sample, oracle_riesz_att, run_monte_carlo)
from .weights import (DeltaRule, HeteroskedasticProblem, WeightSet,
                      known_variance_transform, resolve_delta,
                      weights_from_modulus)
