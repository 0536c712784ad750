"""Configuration, permeability fields, scenario drivers and output writers."""

from .config import ConfigError, ScenarioConfig, load_config, parse_config
from .drivers import (RunResult, ScenarioError, channel_motion_comparison, pressure_drop_sweep, run_scenario,
                      setup_scenario, shipped_config, shipped_config_names)
from .output import write_series_csv, write_vtk
from .permeability import PermeabilityError, PermeabilityField, permeability_field

__all__ = [
    "ConfigError", "PermeabilityError", "PermeabilityField", "RunResult", "ScenarioConfig", "ScenarioError",
    "channel_motion_comparison", "load_config", "parse_config", "permeability_field", "pressure_drop_sweep",
    "run_scenario", "setup_scenario", "shipped_config", "shipped_config_names", "write_series_csv", "write_vtk",
]
