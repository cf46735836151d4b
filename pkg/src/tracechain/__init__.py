"""Deterministic contact-tracing blockchain: protocol library and simulator."""

__version__ = "0.1.0"

from .config import (  # noqa: F401
    AttackConfig,
    ConfigError,
    ScenarioConfig,
    SimulationConfig,
    build_config,
    default_scenarios,
)
from .engine import RunResult, run_simulation  # noqa: F401
