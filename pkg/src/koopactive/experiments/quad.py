"""Free-falling quadcopter Monte Carlo: single-execution learning strategies.

Every method gets the same seeded initial velocities.  During the learning
window the strategies differ (information-maximizing control, motor babble,
or direct adaptive stabilization); at the end of the window each one freezes
its current model, synthesizes a stabilizing regulator and attempts the task.
The precomputed benchmark skips learning and uses an offline-fitted model.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from ..active_learning import (
    ActiveLearner,
    InfoWeightSchedule,
    LearnCostConfig,
    fisher_trace,
)
from ..errors import UnstabilizableModelError
from ..koopman import KoopmanEdmd, MomentAccumulator, model_to_text
from ..lqr import LqWeights, synthesize_policy, zero_policy
from ..observables import QuadcopterDictionary
from ..plants import GRAVITY, QuadParams, Quadcopter
from .reporting import write_csv, write_manifest, write_text

METHODS = ("active", "babble", "adaptive", "precomputed")

TIMESERIES_HEADER = (
    ("method", "trial", "t")
    + tuple(f"x{i}" for i in range(9))
    + tuple(f"u{i}" for i in range(4))
    + ("err2", "fisher", "l_task", "mig", "delta_info", "gain_norm")
)

SUMMARY_HEADER = (
    "method", "trial", "success", "success_time", "err2_final", "err2_at_3s",
    "fisher_mean", "clamp_flips",
)


def build_plant(cfg) -> Quadcopter:
    params = QuadParams(
        mass=cfg.mass, inertia=tuple(cfg.inertia), thrust_coeff=cfg.thrust_coeff,
        moment_coeff=cfg.moment_coeff, arm_length=cfg.arm_length,
    )
    return Quadcopter(params=params, saturation=cfg.saturation, ts=cfg.ts,
                      gyro_convention=cfg.gyro_convention)


def target_measurement():
    """Hover-aligned target: level attitude, zero angular and linear velocity."""
    return np.concatenate([[0.0, 0.0, GRAVITY], np.zeros(6)])


def velocity_error2(x):
    """Squared distance to the target velocities (omega and v blocks)."""
    return float(np.sum(x[3:] ** 2))


def _success_stats(err2, ts, threshold, hold):
    """Success flag and the earliest time from which err2 stays under threshold."""
    below = err2 < threshold
    hold_steps = max(int(round(hold / ts)), 1)
    if not np.all(below[-hold_steps:]):
        return False, float("nan")
    idx = len(below)
    while idx > 0 and below[idx - 1]:
        idx -= 1
    return True, idx * ts


def fit_precomputed_model(cfg, plant, dictionary):
    """Offline lifted model from babble-style rollouts (the benchmark)."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 999_983]))
    amp = cfg.precomputed_fraction * cfg.saturation
    steps = int(round(cfg.precomputed_duration / cfg.ts))
    moments = MomentAccumulator(dictionary.c_x + dictionary.c_u)
    for _ in range(cfg.precomputed_rollouts):
        r = cfg.precomputed_ic_range
        state = plant.sample_initial(rng, [(-r, r)] * 6)
        u_seq = rng.uniform(-amp, amp, (steps, 4))
        x = plant.measure(state)
        for k in range(steps):
            state = plant.step(state, u_seq[k])
            x_next = plant.measure(state)
            # held-control convention in the target (see ActiveLearner._ingest)
            moments.add(dictionary.lift_pair(x, u_seq[k]),
                        dictionary.lift_pair(x_next, u_seq[k]))
            x = x_next
    est = KoopmanEdmd(
        c_x=dictionary.c_x, c_u=dictionary.c_u, ts=cfg.ts, ridge=cfg.ridge,
        ridge_relative=cfg.ridge_relative,
    ).fit_moments(moments)
    return est.model_


@dataclass
class TrialResult:
    summary: tuple
    timeseries: list


def run_trial(cfg, plant, dictionary, method, trial, weights, learn_cfg,
              z_target, precomputed_model=None):
    ic_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, trial, 0]))
    init_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, trial, 1]))
    babble_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, trial, 2]))

    state = plant.sample_initial(ic_rng, [(-cfg.ic_range, cfg.ic_range)] * 6)
    n_steps = int(round(cfg.duration / cfg.ts))
    trace_sigma_inv = learn_cfg.trace_sigma_inv(dictionary.c_x)
    q_tilde = weights.lifted(dictionary.c_x)[0]

    def policy_log_terms(x, u):
        z = dictionary.lift(x)
        v = dictionary.lift_control(x, u)
        e = z - z_target
        fisher = fisher_trace(z, v, trace_sigma_inv)
        l_task = float(e @ q_tilde @ e + u @ weights.r @ u)
        return fisher, l_task

    learner = None
    if method in ("active", "babble", "adaptive"):
        schedule = InfoWeightSchedule(
            base=cfg.w_info if method == "active" else 0.0,
            off_time=cfg.learn_window,
        )
        learner = ActiveLearner(
            dictionary, weights, learn_cfg, schedule, cfg.ts,
            z_target=z_target, saturation=plant.saturation,
            init_sigma=float(np.sqrt(cfg.init_variance)), rng=init_rng,
            feedforward=cfg.feedforward, ridge=cfg.ridge,
            ridge_relative=cfg.ridge_relative, refit_stride=cfg.refit_stride,
            fit_threshold=cfg.fit_threshold,
            bootstrap_excitation=cfg.bootstrap_excitation,
            policy_excitation=cfg.policy_excitation,
            excitation_hold=cfg.excitation_hold,
            mu_star_clip=cfg.mu_star_clip,
            care_method=cfg.care_method,
        )

    frozen_policy = None
    if method == "precomputed":
        try:
            frozen_policy = synthesize_policy(
                precomputed_model, dictionary, weights, z_target=z_target,
                saturation=plant.saturation, feedforward=cfg.feedforward,
            )
        except UnstabilizableModelError:
            frozen_policy = zero_policy(4, dictionary.c_x, plant.saturation)

    err2 = np.empty(n_steps)
    fishers = np.empty(n_steps)
    rows = []
    babble_amp = cfg.babble_fraction * cfg.saturation
    for k in range(n_steps):
        t = k * cfg.ts
        x = plant.measure(state)
        err2[k] = velocity_error2(x)
        mig = 0.0
        dinfo = 0.0
        gain_norm = 0.0
        if method == "precomputed":
            u = frozen_policy.evaluate(dictionary.lift(x)).u
            fisher, l_task = policy_log_terms(x, u)
            gain_norm = float(np.linalg.norm(frozen_policy.gain))
        elif method == "babble" and t < cfg.learn_window:
            u = babble_rng.uniform(-babble_amp, babble_amp, 4)
            learner.observe(x, u)
            fisher, l_task = policy_log_terms(x, u)
        else:
            # the information weight drops to zero at the end of the learning
            # window; the recursive fit keeps absorbing data throughout
            rec = learner.step(x, t)
            u, fisher, l_task = rec.u, rec.fisher, rec.l_task
            mig, dinfo, gain_norm = rec.mig, rec.delta_info, rec.gain_norm
        fishers[k] = fisher
        rows.append(
            (method, trial, t) + tuple(x) + tuple(u)
            + (err2[k], fisher, l_task, mig, dinfo, gain_norm)
        )
        state = plant.step(state, u)

    success, success_time = _success_stats(
        err2, cfg.ts, cfg.success_threshold, cfg.success_hold
    )
    idx3 = min(int(round(3.0 / cfg.ts)), n_steps - 1)
    clamp_flips = learner.clamp_flip_count if learner is not None else 0
    summary = (
        method, trial, int(success), success_time, err2[-1], err2[idx3],
        float(np.mean(fishers)), clamp_flips,
    )
    return TrialResult(summary=summary, timeseries=rows)


@dataclass
class QuadReport:
    summary_rows: list
    timeseries_rows: list
    methods: tuple


def run_quad_montecarlo(cfg, write=True):
    methods = METHODS if cfg.method == "all" else (cfg.method,)
    for method in methods:
        if method not in METHODS:
            raise ValueError(f"unknown method '{method}'")
    plant = build_plant(cfg)
    dictionary = QuadcopterDictionary(cross_terms=cfg.cross_terms)
    weights = LqWeights(q=np.diag(cfg.q_diag), r=np.diag(cfg.r_diag))
    learn_cfg = LearnCostConfig(
        w_info=cfg.w_info, r_tilde=np.diag(cfg.r_tilde_diag),
        horizon=cfg.horizon, epsilon=cfg.epsilon, sigma=cfg.sigma,
    )
    z_target = dictionary.lift(target_measurement())

    precomputed_model = None
    if "precomputed" in methods:
        precomputed_model = fit_precomputed_model(cfg, plant, dictionary)

    summary_rows = []
    timeseries_rows = []
    for method in methods:
        for trial in range(cfg.trials):
            result = run_trial(
                cfg, plant, dictionary, method, trial, weights, learn_cfg,
                z_target, precomputed_model=precomputed_model,
            )
            summary_rows.append(result.summary)
            timeseries_rows.extend(result.timeseries)

    report = QuadReport(
        summary_rows=summary_rows, timeseries_rows=timeseries_rows,
        methods=methods,
    )
    if write:
        write_csv(os.path.join(cfg.out, "quad_summary.csv"), SUMMARY_HEADER,
                  summary_rows)
        write_csv(os.path.join(cfg.out, "quad_timeseries.csv"),
                  TIMESERIES_HEADER, timeseries_rows)
        extras = {"dictionary_terms": dictionary.terms(), "methods": list(methods)}
        if precomputed_model is not None:
            write_text(os.path.join(cfg.out, "precomputed_model.txt"),
                       model_to_text(precomputed_model))
        write_manifest(os.path.join(cfg.out, "manifest.json"), cfg, extras=extras)
    return report
