"""Deterministic federated learning simulator with reputation-based aggregation."""
from .config import ExperimentConfig, parse_config
from .metrics import ExperimentReport
from .orchestrator import run_experiment

__all__ = ["ExperimentConfig", "ExperimentReport", "parse_config", "run_experiment"]
__version__ = "0.1.0"
