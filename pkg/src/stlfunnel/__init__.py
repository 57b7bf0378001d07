"""Funnel-based feedback control for sequential signal temporal logic tasks."""

from .errors import StlFunnelError
from .stl_ast import PredicateAtom, flatten_to_tasks, parse_formula
from .robustness import SmoothConfig, exact_robustness, smooth_robustness, softmin
from .funnel import SelectionPolicy, select_funnel_parameters
from .dynamics import build_consensus_system, integrate_step, single_integrator
from .hybrid import run
from .scenario import load_scenario

__version__ = "0.1.0"

__all__ = [
    "StlFunnelError", "PredicateAtom", "flatten_to_tasks", "parse_formula", "SmoothConfig",
    "exact_robustness", "smooth_robustness", "softmin", "SelectionPolicy",
    "select_funnel_parameters", "build_consensus_system", "integrate_step",
    "single_integrator", "run", "load_scenario",
]
