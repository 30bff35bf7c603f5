"""Experiment runners, configuration and reporting for the CLI."""

from .config import (
    MetricsConfig,
    NnExperimentConfig,
    QuadFallConfig,
    VdpCompareConfig,
    config_from_dict,
    load_config,
)
from .nn_loop import run_nn_experiment
from .quad import run_quad_montecarlo
from .vdp import run_vdp_compare
