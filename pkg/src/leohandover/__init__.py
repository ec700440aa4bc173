"""Handover-aware cooperative beamforming and implicit scheduling for
networked LEO satellite downlinks."""
from .config import ExperimentConfig, load_config, make_config, parse_config
from .experiment import emit_csv, run_scenario, simulate, sweep
from .optimizer import AlgoConfig, FrameSolution, solve_frame

__all__ = [
    "AlgoConfig",
    "ExperimentConfig",
    "FrameSolution",
    "emit_csv",
    "load_config",
    "make_config",
    "parse_config",
    "run_scenario",
    "simulate",
    "solve_frame",
    "sweep",
]
__version__ = "0.1.0"
