"""Experiment configurations: JSON-backed dataclasses with explicit defaults.

Every field of the resolved configuration is written to the run manifest, so
a run is reproducible from its manifest alone.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields

from ..errors import DimensionError


@dataclass
class VdpCompareConfig:
    """Van der Pol controller comparison."""

    experiment: str = "vdp-compare"
    seed: int = 0
    out: str = "results/vdp-compare"
    ts: float = 0.01
    eps: float = 1.0
    n_rollouts: int = 5000  # training rollouts with uniform random inputs
    rollout_steps: int = 50
    train_ic_range: float = 3.0  # training initial conditions in [-r, r]^2
    excitation: float = 2.0  # random input amplitude during training
    eval_ics: int = 100
    eval_ic_range: float = 3.0
    eval_horizon: float = 5.0
    q_diag: tuple = (1.0, 1.0)
    r: float = 0.1
    ridge: float = 1e-9
    state_space_baseline: bool = True  # learned state-space model, same basis


@dataclass
class QuadFallConfig:
    """Free-falling quadcopter Monte Carlo."""

    experiment: str = "quad-fall"
    seed: int = 0
    trials: int = 20
    method: str = "active"  # active | babble | adaptive | precomputed | all
    out: str = "results/quad-fall"
    ts: float = 0.005  # 200 Hz
    duration: float = 5.0
    learn_window: float = 1.0  # information weight drops to zero here
    ic_range: float = 2.0  # omega, v uniform in [-r, r]
    mass: float = 0.6
    inertia: tuple = (0.005, 0.005, 0.008)  # agile small-quad values
    thrust_coeff: float = 1.0
    moment_coeff: float = 0.025
    arm_length: float = 0.15
    gyro_convention: str = "printed"
    cross_terms: str = "printed"  # quadcopter dictionary variant
    saturation: float = 5.0  # per-rotor, bidirectional
    q_diag: tuple = (1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 5.0, 5.0, 5.0)
    r_diag: tuple = (1.0, 1.0, 1.0, 1.0)
    horizon: float = 0.1
    w_info: float = 0.1
    r_tilde_diag: tuple = (1000.0, 1000.0, 1000.0, 1000.0)
    epsilon: float = 1e-6
    sigma: float = 1.0  # noise covariance scale (sigma * I)
    init_variance: float = 1.0  # variance of the operator initialization
    feedforward: bool = True  # equilibrium feedforward against gravity
    babble_fraction: float = 0.33  # of the control saturation
    precomputed_rollouts: int = 50
    precomputed_duration: float = 0.5
    ridge: float = 1e-9
    ridge_relative: float = 1e-4  # shrinks weakly-excited online coefficients
    refit_stride: int = 5  # control steps between refits / re-syntheses
    fit_threshold: int = 44  # snapshot pairs required before the first fit
    bootstrap_excitation: float = 1.0  # exploration before the first fit
    policy_excitation: float = 0.3  # exploration on top of mu* in the window
    excitation_hold: int = 20  # steps the exploration draw is held
    mu_star_clip: float = 0.5  # trust region on the mu* departure from mu
    care_method: str = "schur"  # online synthesis keeps the last policy on failure
    precomputed_fraction: float = 0.1  # offline excitation, fraction of sat
    precomputed_ic_range: float = 0.5  # offline rollouts start near hover
    success_threshold: float = 0.01
    success_hold: float = 0.5  # the threshold must hold this long at the end


@dataclass
class NnExperimentConfig:
    """Episodic learning with neural-network function observables."""

    experiment: str = "cartpole-nn"
    plant: str = "cartpole"  # cartpole | twolink
    seed: int = 0
    n_seeds: int = 5
    method: str = "both"  # active | noise | both
    out: str = "results/cartpole-nn"
    ts: float = 0.02  # 50 Hz cartpole, 0.01 for the 2-link
    episode_duration: float = 3.0
    iterations: int = 45
    z_widths: tuple = (4, 20, 40)
    v_widths: tuple = (2, 20, 10)
    augment_const: bool = True  # append constant 1 to a scalar control
    q_diag: tuple = (50.0, 1.0, 10.0, 0.1)
    task_r: float = 0.1
    r_tilde: tuple = (1e6,)
    horizon: float = 0.1
    w_info_base: float = 1e9  # hot info weight; the reciprocal-trace term is tiny otherwise
    info_decay: float = 0.2  # weight decays as base * decay**(i+1)
    noise_variance_frac: float = 0.4  # of the saturation, decays likewise
    noise_decay: float = 0.9
    saturation: float = 10.0
    epsilon: float = 1e-6
    sigma: float = 1.0
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    care_iterations: int = 50  # backward Riccati steps (finite-horizon gain)
    k_init_noise: float = 0.01  # operator starts at I + noise
    target_state: tuple = (0.0, 0.0, 0.0, 0.0)
    ic_ranges: tuple = ((-0.05, 0.05), (-0.05, 0.05), (-0.1, 0.1), (-0.1, 0.1))
    success_threshold: float = 0.05  # target ball for the reaching task
    success_hold: float = 0.5
    success_angle: float = 0.2  # rad; cart-pendulum upright band


TWOLINK_NN_DEFAULTS = dict(
    experiment="twolink-nn",
    plant="twolink",
    out="results/twolink-nn",
    ts=0.01,  # 100 Hz
    v_widths=(2, 20, 20),
    augment_const=False,
    q_diag=(10.0, 1.0, 20.0, 1.0),
    r_tilde=(1e6, 1e6),
    horizon=0.05,
    target_state=(1.0, 0.0, -0.5, 0.0),
    ic_ranges=((-0.1, 0.1), (-0.1, 0.1), (-0.1, 0.1), (-0.1, 0.1)),
)


@dataclass
class MetricsConfig:
    """Tracking-metrics report for a pair of trajectory CSVs."""

    experiment: str = "metrics"
    seed: int = 0
    out: str = "results/metrics"
    reference_csv: str = ""
    actual_csv: str = ""
    base_frequency: float = 1.0  # rad/s
    ts: float = 0.01
    method_name: str = "koopman"


_CONFIG_TYPES = {
    "vdp-compare": VdpCompareConfig,
    "quad-fall": QuadFallConfig,
    "cartpole-nn": NnExperimentConfig,
    "twolink-nn": NnExperimentConfig,
    "metrics": MetricsConfig,
}


def default_config(experiment):
    if experiment not in _CONFIG_TYPES:
        raise DimensionError(f"unknown experiment '{experiment}'")
    cls = _CONFIG_TYPES[experiment]
    cfg = cls()
    if experiment == "twolink-nn":
        cfg = dataclasses.replace(cfg, **TWOLINK_NN_DEFAULTS)
    cfg.experiment = experiment
    return cfg


def _coerce(cfg, updates):
    valid = {f.name for f in fields(cfg)}
    unknown = set(updates) - valid
    if unknown:
        raise DimensionError(
            f"unknown config keys for {cfg.experiment}: {sorted(unknown)}"
        )
    for key, value in updates.items():
        if isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        setattr(cfg, key, value)
    return cfg


def config_from_dict(data, experiment=None):
    data = dict(data)
    experiment = data.pop("experiment", experiment)
    if experiment is None:
        raise DimensionError("config is missing the 'experiment' key")
    cfg = default_config(experiment)
    return _coerce(cfg, data)


def config_to_dict(cfg):
    def plain(value):
        if isinstance(value, tuple):
            return [plain(v) for v in value]
        return value

    return {k: plain(v) for k, v in dataclasses.asdict(cfg).items()}


def load_config(experiment, path=None, overrides=None):
    """Defaults, overlaid by an optional JSON file, overlaid by CLI flags."""
    cfg = default_config(experiment)
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        data.pop("experiment", None)
        _coerce(cfg, data)
    if overrides:
        _coerce(cfg, {k: v for k, v in overrides.items() if v is not None})
    return cfg
