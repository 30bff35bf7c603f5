"""Episodic learning with neural-network observables on cart-pendulum / 2-link arm.

Every iteration attempts the task with the regulator built on the current
learned model, collecting transitions with either information-maximizing
perturbations (decaying weight) or decaying additive control noise.  After
the episode, the networks and the operator are trained jointly on all data
collected so far and the regulator is refreshed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from ..active_learning import HorizonCost, InfoWeightSchedule, compute_active_control
from ..errors import IntegrationBlowupError, MatrixLogError, UnstabilizableModelError
from ..koopman import KoopmanModel
from ..lqr import LqWeights, synthesize_policy, zero_policy
from ..nn_dictionary import AdamState, Mlp, NnDictionary, episode_fit
from ..plants import PLANTS
from .reporting import write_csv, write_manifest

NN_METHODS = ("active", "noise")

ITERATION_HEADER = (
    "method", "seed", "iteration", "loss", "success", "final_err2",
    "mean_fisher", "events",
)

SUMMARY_HEADER = ("method", "seed", "first_success_iteration")


def build_dictionary(cfg, rng) -> tuple[NnDictionary, np.ndarray]:
    z_net = Mlp(cfg.z_widths, rng=rng)
    v_net = Mlp(cfg.v_widths, rng=rng)
    plant_cls = PLANTS[cfg.plant]
    dictionary = NnDictionary(
        z_net, v_net, state_dim=plant_cls.n, control_dim=plant_cls.m,
        augment_const=cfg.augment_const, control_scale=cfg.saturation,
    )
    c = dictionary.c_x + dictionary.c_u
    kmat = np.eye(c) + cfg.k_init_noise * rng.standard_normal((c, c))
    return dictionary, kmat


def _success(cfg, xs, x_target):
    """Per-episode task success.

    Cart-pendulum: stabilization means the pole stays within the angle band
    for the whole second half of the episode.  2-link arm: the joint state
    reaches and holds a ball around the target configuration.
    """
    n = xs.shape[0]
    if cfg.plant == "cartpole":
        angle = xs[n // 2:, 2]
        return bool(np.all(np.abs(angle) < cfg.success_angle))
    hold_steps = max(int(round(cfg.success_hold / cfg.ts)), 1)
    err2 = np.sum((xs - x_target) ** 2, axis=1)
    return bool(np.all(err2[-hold_steps:] < cfg.success_threshold))


def run_episode(cfg, plant, dictionary, model, policy, method, iteration,
                weights, r_tilde, ep_rng, noise_rng, x_target):
    """Roll the plant under the current controller; returns transitions."""
    steps = int(round(cfg.episode_duration / cfg.ts))
    state = np.array(
        [ep_rng.uniform(lo, hi) for lo, hi in cfg.ic_ranges], dtype=float
    )
    z_target = dictionary.lift(x_target)
    q_tilde, q_f_tilde = weights.lifted(dictionary.c_x)
    info_schedule = InfoWeightSchedule(base=cfg.w_info_base, decay=cfg.info_decay)
    w = info_schedule.weight(iteration=iteration) if method == "active" else 0.0
    noise_var = cfg.noise_variance_frac * cfg.saturation * cfg.noise_decay ** (iteration + 1)
    noise_std = float(np.sqrt(noise_var))
    cost = HorizonCost(
        q_tilde, weights.r, z_target, q_f_tilde=q_f_tilde, w_info=w,
        epsilon=cfg.epsilon,
        trace_sigma_inv=dictionary.c_x / cfg.sigma,
    )

    xs = np.empty((steps + 1, plant.n))
    us = np.empty((steps + 1, plant.m))
    err2 = np.empty(steps + 1)
    fishers = np.empty(steps + 1)
    events = 0
    for k in range(steps + 1):
        x = plant.measure(state)
        xs[k] = x
        err2[k] = float(np.sum((x - x_target) ** 2))
        z = dictionary.lift(x)
        if method == "active" and w > 0.0:
            try:
                result = compute_active_control(
                    model, dictionary, policy, z, cost, r_tilde,
                    cfg.horizon, cfg.ts, saturation=plant.saturation,
                )
                u = result.u
                fishers[k] = result.fisher
            except FloatingPointError:
                events += 1
                u = policy.evaluate(z).u
                fishers[k] = cost.fisher(z, dictionary.lift_control(x, u))
        else:
            u = policy.evaluate(z).u
            if method == "noise":
                u = np.clip(
                    u + noise_std * noise_rng.standard_normal(plant.m),
                    -plant.saturation, plant.saturation,
                )
            fishers[k] = cost.fisher(z, dictionary.lift_control(x, u))
        us[k] = u
        if k == steps:
            break
        try:
            state = plant.step(state, u)
        except IntegrationBlowupError:
            # truncate the episode; keep what was collected
            xs, us, err2, fishers = xs[: k + 1], us[: k + 1], err2[: k + 1], fishers[: k + 1]
            events += 1
            break
    transitions = (xs[:-1], us[:-1], xs[1:], us[1:])
    success = _success(cfg, xs, x_target)
    return transitions, success, float(err2[-1]), float(np.mean(fishers)), events


def run_single_seed(cfg, method, seed_index):
    plant = PLANTS[cfg.plant](saturation=cfg.saturation, ts=cfg.ts)
    net_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, seed_index, 1]))
    fit_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, seed_index, 2]))
    dictionary, kmat = build_dictionary(cfg, net_rng)
    weights = LqWeights(
        q=np.diag(cfg.q_diag), r=np.diag([cfg.task_r] * plant.m)
    )
    r_tilde = np.diag(cfg.r_tilde)
    x_target = np.asarray(cfg.target_state, dtype=float)
    adam = AdamState(dictionary.params() + [kmat], lr=cfg.lr)

    try:
        model = KoopmanModel.from_discrete(
            kmat.copy(), cfg.ts, dictionary.c_x, dictionary.c_u
        )
    except MatrixLogError:
        model = KoopmanModel.random_init(
            net_rng, dictionary.c_x, dictionary.c_u, cfg.ts, sigma=0.1
        )

    def refresh_policy(current_model):
        # finite-horizon backward integration: always defined, truncates the
        # spurious unstable feature modes an over-parameterized fit produces
        try:
            return synthesize_policy(
                current_model, dictionary, weights,
                z_target=dictionary.lift(x_target),
                x_op=x_target, saturation=plant.saturation,
                method="integrate", max_iter=cfg.care_iterations,
            )
        except UnstabilizableModelError:
            return zero_policy(plant.m, dictionary.c_x, plant.saturation)

    policy = refresh_policy(model)
    dataset = None
    rows = []
    first_success = -1
    loss = float("nan")
    for iteration in range(cfg.iterations):
        ep_rng = np.random.default_rng(
            np.random.SeedSequence([cfg.seed, seed_index, 3, iteration])
        )
        noise_rng = np.random.default_rng(
            np.random.SeedSequence([cfg.seed, seed_index, 4, iteration])
        )
        transitions, success, final_err2, mean_fisher, events = run_episode(
            cfg, plant, dictionary, model, policy, method, iteration,
            weights, r_tilde, ep_rng, noise_rng, x_target,
        )
        if dataset is None:
            dataset = [np.array(t) for t in transitions]
        else:
            dataset = [np.vstack([d, t]) for d, t in zip(dataset, transitions)]
        try:
            model, losses = episode_fit(
                dictionary, kmat, dataset, cfg.epochs, cfg.batch_size,
                fit_rng, cfg.ts, adam=adam,
            )
            loss = losses[-1] if losses else loss
        except MatrixLogError:
            events += 1  # keep the previous model; parameters did train
        policy = refresh_policy(model)
        if success and first_success < 0:
            first_success = iteration
        rows.append(
            (method, seed_index, iteration, loss, int(success), final_err2,
             mean_fisher, events)
        )
    return rows, first_success


@dataclass
class NnReport:
    iteration_rows: list
    summary_rows: list


def run_nn_experiment(cfg, write=True):
    methods = NN_METHODS if cfg.method == "both" else (cfg.method,)
    for method in methods:
        if method not in NN_METHODS:
            raise ValueError(f"unknown method '{method}'")
    iteration_rows = []
    summary_rows = []
    for method in methods:
        for seed_index in range(cfg.n_seeds):
            rows, first_success = run_single_seed(cfg, method, seed_index)
            iteration_rows.extend(rows)
            summary_rows.append((method, seed_index, first_success))
    report = NnReport(iteration_rows=iteration_rows, summary_rows=summary_rows)
    if write:
        write_csv(os.path.join(cfg.out, "nn_iterations.csv"), ITERATION_HEADER,
                  iteration_rows)
        write_csv(os.path.join(cfg.out, "nn_summary.csv"), SUMMARY_HEADER,
                  summary_rows)
        write_manifest(
            os.path.join(cfg.out, "manifest.json"), cfg,
            extras={"methods": list(methods)},
        )
    return report
