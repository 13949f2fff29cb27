"""Distributed ADMM for loss-minimizing radial reconfiguration of distribution networks."""

__version__ = "0.1.0"

from .admm_core import SolverConfig
from .distributed import RestartSummary, RunResult, multi_restart, run, summarize
from .errors import (
    CaseFileError,
    InfeasibleError,
    NotRadialError,
    PdnrError,
    QpError,
    SizeGuardError,
)
from .io import load_case, save_case
from .model import NetworkCase, brute_force_optimum, configuration_from_open_lines, evaluate, open_lines
from .sim import Scenario, load_scenario, run_toy_protocol
from .variants import ALGORITHMS, centralized_run, relax_run

__all__ = [
    "ALGORITHMS",
    "CaseFileError",
    "InfeasibleError",
    "NetworkCase",
    "NotRadialError",
    "PdnrError",
    "QpError",
    "RestartSummary",
    "RunResult",
    "Scenario",
    "SizeGuardError",
    "SolverConfig",
    "brute_force_optimum",
    "centralized_run",
    "configuration_from_open_lines",
    "evaluate",
    "load_case",
    "load_scenario",
    "multi_restart",
    "open_lines",
    "relax_run",
    "run",
    "run_toy_protocol",
    "save_case",
    "summarize",
]
