"""Deterministic discrete-event simulation of the whole network."""

from .config import (
    Churn, ConfigError, ForkSpec, LatencyModel, ScenarioConfig, format_config, load_config,
    parse_config,
)
from .engine import SimResult, Simulation, TxRecord, run
from .metrics import Metrics, parse_metrics
from .trace import TraceWriter, VerifyReport, parse_trace, verify_trace

__all__ = [
    "Churn", "ConfigError", "ForkSpec", "LatencyModel", "ScenarioConfig", "format_config",
    "load_config", "parse_config", "SimResult", "Simulation", "TxRecord", "run", "Metrics",
    "parse_metrics", "TraceWriter", "VerifyReport", "parse_trace", "verify_trace",
]
