"""High-order mesh morphing: TMOP quality optimization with node fitting to
implicit surfaces."""
from .fitting import (EmptyFitSetError, FitTerm, WeightState, fit_error, grad_sigma,
                      hess_sigma, mark_integral, mark_sign_at_max, objective_sigma, relabel,
                      select_fit_nodes, split_elements, split_quads, trim, update_weight)
from .mesh import HighOrderMesh, InvalidMeshError, make_cartesian, min_detA
from .pipeline import FitSetup, prepare_fit
from .refelem import reference_element
from .solver import (SolverConfig, SolverReport, line_search, minres_jacobi, newton_fit,
                     newton_quality)
from .tmop import (MetricId, QualityObjective, TargetSpec, grad_mu, hess_mu, metric_eval,
                   objective_mu)

__version__ = "0.1.0"

__all__ = [
    "EmptyFitSetError", "FitSetup", "FitTerm", "HighOrderMesh", "InvalidMeshError", "MetricId",
    "QualityObjective", "SolverConfig", "SolverReport", "TargetSpec", "WeightState",
    "fit_error", "grad_mu", "grad_sigma", "hess_mu", "hess_sigma", "line_search",
    "make_cartesian", "mark_integral", "mark_sign_at_max", "metric_eval", "min_detA",
    "minres_jacobi", "newton_fit", "newton_quality", "objective_mu", "objective_sigma",
    "prepare_fit", "reference_element", "relabel", "select_fit_nodes", "split_elements",
    "split_quads", "trim", "update_weight",
]
