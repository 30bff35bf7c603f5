"""Horizon simulation, adjoint, mode insertion gradient, mu*, information gain."""

import numpy as np
import pytest
import scipy.linalg

from oracles import mean_fisher_under_control, objective_with_insertion

from koopactive.active_learning import (
    HorizonCost,
    compute_active_control,
    delta_information,
    mode_insertion_gradient,
    mu_star_schedule,
    simulate_adjoint,
    simulate_forward,
)
from koopactive.errors import DimensionError
from koopactive.koopman import KoopmanModel
from koopactive.lqr import LqPolicy, zero_policy
from koopactive.observables import IdentityDictionary


def scalar_model(a, b, ts=0.01):
    k_c = np.array([[a, b], [0.0, 0.0]])
    return KoopmanModel(
        k_d=scipy.linalg.expm(k_c * ts), k_c=k_c,
        k_x=np.array([[a]]), k_u=np.array([[b]]), ts=ts, c_x=1, c_u=1,
    )


def lifted_model(rng, c_x, c_u, ts=0.01, stability=1.0):
    k_x = rng.normal(size=(c_x, c_x))
    k_x -= (np.max(np.linalg.eigvals(k_x).real) + stability) * np.eye(c_x)
    k_u = rng.normal(size=(c_x, c_u))
    k_c = np.zeros((c_x + c_u, c_x + c_u))
    k_c[:c_x, :c_x] = k_x
    k_c[:c_x, c_x:] = k_u
    return KoopmanModel(
        k_d=scipy.linalg.expm(k_c * ts), k_c=k_c, k_x=k_x, k_u=k_u,
        ts=ts, c_x=c_x, c_u=c_u,
    )


def make_cost(c_x, m, z_target=None, w_info=0.0, q_scale=1.0, q_f=None,
              trace_sigma_inv=1.0):
    q = q_scale * np.eye(c_x)
    r = 0.1 * np.eye(m)
    z_t = np.zeros(c_x) if z_target is None else z_target
    return HorizonCost(q, r, z_t, q_f_tilde=q_f, w_info=w_info,
                       trace_sigma_inv=trace_sigma_inv)


# -- forward -----------------------------------------------------------------

def test_forward_frozen_dynamics():
    model = scalar_model(0.0, 0.0)
    dic = IdentityDictionary(1, 1)
    policy = zero_policy(1, 1)
    traj = simulate_forward(model, dic, policy, [2.0], 0.1, 0.01)
    assert np.allclose(traj.z, 2.0)


def test_forward_matches_closed_form_decay():
    model = scalar_model(-1.0, 0.0)
    dic = IdentityDictionary(1, 1)
    policy = zero_policy(1, 1)
    traj = simulate_forward(model, dic, policy, [1.0], 1.0, 0.01)
    assert abs(traj.z[-1, 0] - np.exp(-1.0)) < 1e-8


def test_forward_grid_contract():
    model = scalar_model(-0.5, 1.0)
    dic = IdentityDictionary(1, 1)
    policy = zero_policy(1, 1)
    traj = simulate_forward(model, dic, policy, [0.7], 0.1, 0.01)
    assert traj.z.shape[0] == 11
    assert traj.z[0, 0] == 0.7
    assert np.allclose(np.diff(traj.times), 0.01)


def test_forward_requires_multiple_of_ts():
    model = scalar_model(-0.5, 1.0)
    with pytest.raises(DimensionError):
        simulate_forward(model, IdentityDictionary(1, 1), zero_policy(1, 1),
                         [1.0], 0.105, 0.01)


# -- adjoint ------------------------------------------------------------------

def test_adjoint_zero_costs():
    model = scalar_model(-1.0, 1.0)
    dic = IdentityDictionary(1, 1)
    policy = zero_policy(1, 1)
    cost = make_cost(1, 1, q_scale=0.0)
    cost.r = np.zeros((1, 1))
    traj = simulate_forward(model, dic, policy, [1.0], 0.2, 0.01)
    rho = simulate_adjoint(traj, model, dic, policy, cost)
    assert np.allclose(rho, 0.0)


def test_adjoint_linear_closed_form():
    # l = 0, m = 0.5 ||z||^2, zdot = a z: rho(t) = exp(a (T - t)) z(T)
    a = -0.8
    model = scalar_model(a, 0.0)
    dic = IdentityDictionary(1, 1)
    policy = zero_policy(1, 1)
    cost = make_cost(1, 1, q_scale=0.0)
    cost.q_f_tilde = 0.5 * np.eye(1)  # terminal 0.5 z^2 -> dm/dz = z
    traj = simulate_forward(model, dic, policy, [1.0], 0.5, 0.005)
    rho = simulate_adjoint(traj, model, dic, policy, cost)
    z_T = traj.z[-1, 0]
    expected = np.exp(a * (0.5 - traj.times)) * z_T
    assert np.abs(rho[:, 0] - expected).max() < 1e-8


def test_adjoint_terminal_condition_exact():
    rng = np.random.default_rng(0)
    model = lifted_model(rng, 3, 2)
    dic = IdentityDictionary(3, 2)
    policy = LqPolicy(gain=0.3 * rng.normal(size=(2, 3)), riccati=np.eye(3),
                      z_target=np.zeros(3))
    cost = make_cost(3, 2)
    traj = simulate_forward(model, dic, policy, rng.normal(size=3), 0.2, 0.01)
    rho = simulate_adjoint(traj, model, dic, policy, cost)
    _, dm = cost.terminal(traj.z[-1])
    assert np.array_equal(rho[-1], dm)


# -- mode insertion gradient ---------------------------------------------------

def test_mig_no_switch():
    assert mode_insertion_gradient([1.0, 2.0], [0.3, 0.4], [0.3, 0.4]) == 0.0


def test_mig_hand_dot_product():
    assert mode_insertion_gradient([1.0, 2.0], [3.0, -1.0], [0.0, 0.0]) == 1.0


def test_mig_matches_finite_difference_objective():
    rng = np.random.default_rng(1)
    model = lifted_model(rng, 4, 2)
    dic = IdentityDictionary(4, 2)
    policy = LqPolicy(gain=0.4 * rng.normal(size=(2, 4)), riccati=np.eye(4),
                      z_target=np.zeros(4))
    cost = make_cost(4, 2, w_info=0.3, trace_sigma_inv=2.0)
    z0 = rng.normal(size=4)
    horizon, ts = 0.2, 0.01
    traj = simulate_forward(model, dic, policy, z0, horizon, ts)
    rho = simulate_adjoint(traj, model, dic, policy, cost)
    lam = 1e-5
    for tau_index in (0, 5, 12):
        u_star = policy.evaluate(traj.z[tau_index]).u + rng.normal(size=2)
        x = dic.recover_state(traj.z[tau_index])
        f2 = model.predict(traj.z[tau_index], dic.lift_control(x, u_star))
        f1 = model.predict(traj.z[tau_index], traj.v[tau_index])
        analytic = mode_insertion_gradient(rho[tau_index], f2, f1)
        j_on = objective_with_insertion(model, dic, policy, cost, z0, horizon,
                                        ts, tau_index, lam, u_star)
        j_off = objective_with_insertion(model, dic, policy, cost, z0, horizon,
                                         ts, tau_index, lam, None)
        fd = (j_on - j_off) / lam
        assert abs(fd - analytic) <= 1e-2 * max(1.0, abs(analytic))


# -- mu* -------------------------------------------------------------------------

def test_mu_star_zero_adjoint_returns_policy():
    rng = np.random.default_rng(2)
    model = lifted_model(rng, 3, 2)
    dic = IdentityDictionary(3, 2)
    policy = LqPolicy(gain=rng.normal(size=(2, 3)), riccati=np.eye(3),
                      z_target=np.zeros(3))
    traj = simulate_forward(model, dic, policy, rng.normal(size=3), 0.1, 0.01)
    rho = np.zeros_like(traj.z)
    sched = mu_star_schedule(traj, rho, model, dic, np.eye(2))
    assert np.allclose(sched.raw, traj.u)


def test_mu_star_regularization_limit():
    rng = np.random.default_rng(3)
    model = lifted_model(rng, 3, 1)
    dic = IdentityDictionary(3, 1)
    policy = LqPolicy(gain=rng.normal(size=(1, 3)), riccati=np.eye(3),
                      z_target=np.zeros(3))
    cost = make_cost(3, 1)
    traj = simulate_forward(model, dic, policy, rng.normal(size=3), 0.1, 0.01)
    rho = simulate_adjoint(traj, model, dic, policy, cost)
    sched = mu_star_schedule(traj, rho, model, dic, 1e9 * np.eye(1))
    assert np.abs(sched.raw - traj.u).max() < 1e-6


def test_mu_star_insertion_gradient_identity():
    # substituting mu* into the insertion gradient gives the negative
    # r-tilde-inverse norm exactly, hence always <= 0
    rng = np.random.default_rng(4)
    model = lifted_model(rng, 4, 2)
    dic = IdentityDictionary(4, 2)
    policy = LqPolicy(gain=0.2 * rng.normal(size=(2, 4)), riccati=np.eye(4),
                      z_target=np.zeros(4))
    cost = make_cost(4, 2, w_info=1.0, trace_sigma_inv=2.0)
    r_tilde = np.diag([4.0, 9.0])
    traj = simulate_forward(model, dic, policy, rng.normal(size=4), 0.15, 0.01)
    rho = simulate_adjoint(traj, model, dic, policy, cost)
    sched = mu_star_schedule(traj, rho, model, dic, r_tilde)
    for i in range(traj.z.shape[0]):
        x = dic.recover_state(traj.z[i])
        b = model.k_u @ dic.control_jacobian(x, traj.u[i])
        f2 = model.predict(traj.z[i], dic.lift_control(x, sched.raw[i]))
        f1 = model.predict(traj.z[i], traj.v[i])
        mig = mode_insertion_gradient(rho[i], f2, f1)
        bt_rho = b.T @ rho[i]
        expected = -float(bt_rho @ np.linalg.solve(r_tilde, bt_rho))
        assert abs(mig - expected) < 1e-10
        assert mig <= 1e-12


def test_mu_star_trust_region():
    rng = np.random.default_rng(5)
    model = lifted_model(rng, 3, 2)
    dic = IdentityDictionary(3, 2)
    policy = zero_policy(2, 3)
    traj = simulate_forward(model, dic, policy, 5.0 * rng.normal(size=3), 0.1, 0.01)
    rho = 100.0 * np.ones_like(traj.z)
    sched = mu_star_schedule(traj, rho, model, dic, 0.01 * np.eye(2),
                             max_correction=0.5)
    assert np.abs(sched.raw - traj.u).max() <= 0.5 + 1e-12


# -- information gain ------------------------------------------------------------

def test_delta_information_zero_for_identical_controls():
    assert delta_information(0.0, 2.5, 2.5, 7.0, 7.0) == 0.0


def test_delta_information_sign_when_task_negligible():
    assert delta_information(0.3, 1.0, 1.0, 5.0, 4.0) > 0.0


def test_delta_information_first_order_consistency():
    # scalar synthetic system: |measured - formula| shrinks by >= 1.5x per
    # halving of the application interval, over three halvings
    a, b = -0.6, 1.0
    ts = 1e-4
    model = scalar_model(a, b, ts)
    dic = IdentityDictionary(1, 1)
    policy = LqPolicy(gain=np.array([[0.8]]), riccati=np.eye(1),
                      z_target=np.zeros(1))
    r_tilde = np.array([[2.0]])
    z0 = np.array([1.3])
    errors = []
    for dt in (16e-4, 8e-4, 4e-4, 2e-4):
        cost = HorizonCost(np.eye(1), 0.05 * np.eye(1), np.zeros(1),
                           w_info=1.0, epsilon=1e-6, trace_sigma_inv=4.0)
        traj = simulate_forward(model, dic, policy, z0, dt, ts)
        rho = simulate_adjoint(traj, model, dic, policy, cost)
        sched = mu_star_schedule(traj, rho, model, dic, r_tilde)
        u_star0 = sched.raw[0]
        u_mu0 = traj.u[0]
        b_mat = model.k_u @ dic.control_jacobian(z0, u_mu0)
        bt_rho = b_mat.T @ rho[0]
        bt_norm2 = float(bt_rho @ np.linalg.solve(r_tilde, bt_rho))
        fisher_mu = mean_fisher_under_control(
            model, dic, cost, z0, lambda i, z: policy.evaluate(z).u, dt, ts)
        fisher_star = mean_fisher_under_control(
            model, dic, cost, z0,
            lambda i, z: sched.raw[min(i, len(sched.raw) - 1)], dt, ts)
        formula = delta_information(
            bt_norm2, cost.task(z0, u_star0), cost.task(z0, u_mu0),
            fisher_star, fisher_mu)
        errors.append(abs((fisher_star - fisher_mu) - formula))
    for coarse, fine in zip(errors[:-1], errors[1:]):
        assert coarse / fine >= 1.5


# -- bundled controller step -------------------------------------------------------

def test_compute_active_control_diagnostics():
    rng = np.random.default_rng(6)
    model = lifted_model(rng, 3, 2)
    dic = IdentityDictionary(3, 2)
    policy = LqPolicy(gain=0.3 * rng.normal(size=(2, 3)), riccati=np.eye(3),
                      z_target=np.zeros(3))
    cost = make_cost(3, 2, w_info=0.5, trace_sigma_inv=2.0)
    result = compute_active_control(model, dic, policy, rng.normal(size=3),
                                    cost, np.eye(2), 0.1, 0.01)
    assert result.mig <= 1e-12
    assert result.fisher >= 0.0
    assert np.isfinite(result.delta_info)
    assert result.u.shape == (2,)
