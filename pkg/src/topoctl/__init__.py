"""Adaptive continuation control for density-based topology optimization.

Compliance-minimization SIMP solver with a three-field density pipeline,
interchangeable continuation controllers (including an LLM-steered one with
hard safety rails and byte-exact replay), a standardized sharpening-tail
evaluation protocol, and an outer meta-optimization loop over the agent's
constants.
"""

from .agent import AgentConfig, Observation, build_observation
from .controllers import ControllerAction, SolverParams
from .engine import RunConfig, RunSummary, run_benchmark
from .fem import Material, Mesh
from .problems import PRESETS, PROBLEM_IDS, build_problem

__version__ = "0.1.0"

__all__ = [
    "AgentConfig",
    "ControllerAction",
    "Material",
    "Mesh",
    "Observation",
    "PRESETS",
    "PROBLEM_IDS",
    "RunConfig",
    "RunSummary",
    "SolverParams",
    "build_observation",
    "build_problem",
    "run_benchmark",
    "__version__",
]
