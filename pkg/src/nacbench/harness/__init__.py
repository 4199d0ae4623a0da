"""Scenario configs, closed-loop runs, reports, plots and the command line."""

from .config import ScenarioConfig, builtin_scenarios, config_from_dict, load_config
from .plots import emit_plots
from .run import RunArtifacts, emit_report, run_scenario

__all__ = [
    "ScenarioConfig", "builtin_scenarios", "config_from_dict", "load_config",
    "emit_plots", "RunArtifacts", "emit_report", "run_scenario",
]
