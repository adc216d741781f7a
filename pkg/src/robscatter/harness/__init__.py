"""Experiment driver: configuration, Monte Carlo runs, serialization and CLI."""

from .config import ConfigError, ExperimentConfig
from .experiments import ExperimentResult, run_experiment, run_fig1, run_fig2, run_fig3, run_fig4
