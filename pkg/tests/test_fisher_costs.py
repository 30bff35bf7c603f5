"""Fisher information closed form and the running-cost gradients."""

import numpy as np
import pytest

from koopactive.active_learning import (
    HorizonCost,
    InfoWeightSchedule,
    LearnCostConfig,
    fisher_trace,
)


def brute_force_fisher(c_x, z, v, sigma):
    """Assemble the parameter Jacobian explicitly and trace the information.

    The dynamics are linear in the operator entries: column (i, j) of the
    Jacobian of f with respect to the entries of [K_x K_u] is e_i ztil_j.
    """
    ztil = np.concatenate([z, v])
    sigma_inv = np.linalg.inv(sigma)
    c = ztil.shape[0]
    jac = np.zeros((c_x, c_x * c))
    col = 0
    for i in range(c_x):
        for j in range(c):
            jac[i, col] = ztil[j]
            col += 1
    info = jac.T @ sigma_inv @ jac
    return float(np.trace(info))


def test_fisher_zero_observables():
    assert fisher_trace(np.zeros(3), np.zeros(2), 3.0) == 0.0


def test_fisher_spec_example():
    # Sigma = I (c_x = 2), z = [1, 0], v = [1] -> trace 2 * (1 + 1) = 4
    assert fisher_trace([1.0, 0.0], [1.0], trace_sigma_inv=2.0) == pytest.approx(4.0)


def test_fisher_homogeneity():
    rng = np.random.default_rng(0)
    z, v = rng.normal(size=4), rng.normal(size=2)
    base = fisher_trace(z, v, 1.7)
    assert fisher_trace(3.0 * z, 3.0 * v, 1.7) == pytest.approx(9.0 * base)


def test_fisher_matches_brute_force_jacobian():
    rng = np.random.default_rng(1)
    for _ in range(100):
        c_x = rng.integers(2, 6)
        c_u = rng.integers(1, 4)
        z = rng.normal(size=c_x)
        v = rng.normal(size=c_u)
        sig2 = float(rng.uniform(0.2, 4.0))
        sigma = sig2 * np.eye(c_x)
        closed = fisher_trace(z, v, c_x / sig2)
        brute = brute_force_fisher(c_x, z, v, sigma)
        assert abs(closed - brute) <= 1e-8 * max(1.0, abs(brute))


def test_learn_cost_config_trace():
    cfg = LearnCostConfig(w_info=0.1, r_tilde=np.eye(2), horizon=0.1, sigma=2.0)
    assert cfg.trace_sigma_inv(4) == pytest.approx(2.0)
    cfg_mat = LearnCostConfig(w_info=0.1, r_tilde=np.eye(2), horizon=0.1,
                              sigma=np.diag([1.0, 2.0, 4.0]))
    assert cfg_mat.trace_sigma_inv(3) == pytest.approx(1.0 + 0.5 + 0.25)


def test_learn_cost_config_validation():
    with pytest.raises(Exception):
        LearnCostConfig(w_info=0.1, r_tilde=np.zeros((2, 2)), horizon=0.1)
    with pytest.raises(Exception):
        LearnCostConfig(w_info=0.1, r_tilde=np.eye(2), horizon=0.1, epsilon=0.0)


def make_cost(w_info, c_x=3, m=2, trace_sigma_inv=3.0, seed=0):
    rng = np.random.default_rng(seed)
    q = np.abs(np.diag(rng.uniform(0.5, 2.0, c_x)))
    r = np.diag(rng.uniform(0.5, 2.0, m))
    z_t = rng.normal(size=c_x)
    return HorizonCost(q, r, z_t, w_info=w_info, epsilon=1e-6,
                       trace_sigma_inv=trace_sigma_inv)


def test_running_cost_pure_lq_when_weight_zero():
    cost = make_cost(0.0)
    rng = np.random.default_rng(2)
    z, u = rng.normal(size=3), rng.normal(size=2)
    v = u.copy()
    l, dz, du = cost.running(z, u, v, np.eye(2))
    e = z - cost.z_target
    assert l == pytest.approx(e @ cost.q_tilde @ e + u @ cost.r @ u)
    assert np.allclose(dz, 2 * cost.q_tilde @ e)
    assert np.allclose(du, 2 * cost.r @ u)


def test_running_cost_zero_at_target():
    cost = make_cost(0.0)
    z = cost.z_target.copy()
    u = np.zeros(2)
    l, _, _ = cost.running(z, u, u.copy(), np.eye(2))
    assert l == pytest.approx(0.0)


@pytest.mark.parametrize("w_info", [0.0, 0.5, 20.0])
def test_running_cost_gradients_match_finite_differences(w_info):
    # v = u (identity control map), so d l/d u includes the info term exactly
    cost = make_cost(w_info, c_x=4, m=3)
    rng = np.random.default_rng(3)
    h = 1e-6
    for _ in range(100):
        z = rng.normal(size=4)
        u = rng.normal(size=3)

        def full(zz, uu):
            return cost.running(zz, uu, uu.copy(), np.eye(3))[0]

        _, dz, du = cost.running(z, u, u.copy(), np.eye(3))
        for k in range(4):
            zp = z.copy(); zp[k] += h
            zm = z.copy(); zm[k] -= h
            fd = (full(zp, u) - full(zm, u)) / (2 * h)
            assert abs(fd - dz[k]) <= 1e-5 * max(1.0, abs(fd))
        for k in range(3):
            up = u.copy(); up[k] += h
            um = u.copy(); um[k] -= h
            fd = (full(z, up) - full(z, um)) / (2 * h)
            assert abs(fd - du[k]) <= 1e-5 * max(1.0, abs(fd))


def test_terminal_cost_gradient():
    cost = make_cost(0.0)
    rng = np.random.default_rng(4)
    z = rng.normal(size=3)
    m_val, dm = cost.terminal(z)
    e = z - cost.z_target
    assert m_val == pytest.approx(e @ cost.q_f_tilde @ e)
    assert np.allclose(dm, 2 * cost.q_f_tilde @ e)


def test_info_schedule():
    sched = InfoWeightSchedule(base=0.1, off_time=1.0)
    assert sched.weight(t=0.5) == pytest.approx(0.1)
    assert sched.weight(t=1.0) == 0.0
    decay = InfoWeightSchedule(base=1.0, decay=0.2)
    assert decay.weight(iteration=0) == pytest.approx(0.2)
    assert decay.weight(iteration=2) == pytest.approx(0.008)
    const = InfoWeightSchedule(base=0.7)
    assert const.weight(t=100.0, iteration=50) == pytest.approx(0.7)
