"""Weight expansion, Riccati solvers, policy evaluation."""

import numpy as np
import pytest
import scipy.linalg

from koopactive.errors import DimensionError, UnstabilizableModelError
from koopactive.koopman import KoopmanModel
from koopactive.lqr import (
    LqPolicy,
    LqWeights,
    care_residual,
    equilibrium_feedforward,
    expand_weights,
    solve_care,
    solve_care_integration,
    synthesize_policy,
    zero_policy,
)
from koopactive.observables import IdentityDictionary


def test_expand_weights_block():
    q = np.diag([1.0, 1.0])
    out = expand_weights(q, 4)
    assert np.array_equal(np.diag(out), [1.0, 1.0, 0.0, 0.0])
    assert np.count_nonzero(out) == 2


def test_expand_weights_identity_when_equal():
    q = np.diag([2.0, 3.0])
    assert np.array_equal(expand_weights(q, 2), q)


def test_expand_weights_quad_shape():
    q = np.diag([1, 1, 1, 1, 1, 1, 5, 5, 5]).astype(float)
    out = expand_weights(q, 18)
    assert out.shape == (18, 18)
    assert np.array_equal(np.diag(out)[:9], np.diag(q))
    assert np.all(np.diag(out)[9:] == 0.0)


def test_expand_weights_rejects_small_cx():
    with pytest.raises(DimensionError):
        expand_weights(np.eye(3), 2)


def test_scalar_care_hand_solution():
    # zdot = u, q = r = 1: P = 1, gain = 1
    p = solve_care_integration(np.zeros((1, 1)), np.ones((1, 1)),
                               np.eye(1), np.eye(1), 0.01)
    assert abs(p[0, 0] - 1.0) < 1e-7
    gain = np.linalg.solve(np.eye(1), np.ones((1, 1)).T @ p)
    assert abs(gain[0, 0] - 1.0) < 1e-7


def test_zero_cost_gives_zero_gain():
    a = np.array([[-1.0]])
    p = solve_care_integration(a, np.ones((1, 1)), np.zeros((1, 1)), np.eye(1), 0.01)
    assert abs(p[0, 0]) < 1e-9


@pytest.mark.parametrize("method", ["schur", "integrate"])
def test_care_residual_small(method):
    rng = np.random.default_rng(0)
    n, m = 4, 2
    a = rng.normal(size=(n, n)) - 1.0 * np.eye(n)
    b = rng.normal(size=(n, m))
    q = np.diag([1.0, 2.0, 0.5, 1.0])
    r = np.eye(m)
    p = solve_care(a, b, q, r, 0.005, method=method, tol=1e-11)
    assert care_residual(a, b, q, r, p) < 1e-7


def test_integration_matches_schur():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(3, 3)) - 1.5 * np.eye(3)
    b = rng.normal(size=(3, 1))
    q = np.eye(3)
    r = np.eye(1)
    p_int = solve_care_integration(a, b, q, r, 0.002, tol=1e-12)
    p_ref = scipy.linalg.solve_continuous_are(a, b, q, r)
    assert np.abs(p_int - p_ref).max() < 1e-7


def test_integration_divergence_raises():
    # unstable, completely uncontrollable, observable: no bounded solution
    a = np.array([[2.0]])
    b = np.zeros((1, 1))
    with pytest.raises(UnstabilizableModelError):
        solve_care_integration(a, b, np.eye(1), np.eye(1), 0.05, max_iter=100_000)


def test_lifted_lqr_matches_classical_on_identity_dictionary():
    # fit-free check: same (A, B) solved by our backward integration vs the
    # reference Schur solver; identity dictionary means z = x exactly
    rng = np.random.default_rng(2)
    n, m = 3, 1
    a = rng.normal(size=(n, n)) - 1.0 * np.eye(n)
    b = rng.normal(size=(n, m))
    dic = IdentityDictionary(n, m)
    model = KoopmanModel(
        k_d=scipy.linalg.expm(np.block([[a, b], [np.zeros((m, n + m))]]) * 0.01),
        k_c=np.block([[a, b], [np.zeros((m, n + m))]]),
        k_x=a, k_u=b, ts=0.01, c_x=n, c_u=m,
    )
    weights = LqWeights(q=np.eye(n), r=np.eye(m))
    policy = synthesize_policy(model, dic, weights, method="integrate", tol=1e-12)
    p_ref = scipy.linalg.solve_continuous_are(a, b, np.eye(n), np.eye(m))
    gain_ref = np.linalg.solve(np.eye(m), b.T @ p_ref)
    assert np.abs(policy.gain - gain_ref).max() < 1e-8


def test_closed_loop_cost_beats_zero_control():
    rng = np.random.default_rng(3)
    n, m = 3, 1
    a = rng.normal(size=(n, n)) - 1.2 * np.eye(n)  # stable so u=0 has finite cost
    b = rng.normal(size=(n, m))
    q = np.eye(n)
    r = 0.1 * np.eye(m)
    p = solve_care(a, b, q, r, 0.01)
    gain = np.linalg.solve(r, b.T @ p)

    def simulated_cost(k_gain):
        z = np.array([1.0, -1.0, 0.5])
        dt, cost = 0.001, 0.0
        for _ in range(20_000):
            u = -k_gain @ z
            cost += (z @ q @ z + u @ r @ u) * dt
            z = z + dt * (a @ z + b @ u)
        return cost

    assert simulated_cost(gain) <= simulated_cost(np.zeros((m, n))) + 1e-9


def test_policy_zero_at_target():
    policy = LqPolicy(gain=np.ones((1, 3)), riccati=np.eye(3),
                      z_target=np.array([1.0, 2.0, 3.0]))
    act = policy.evaluate([1.0, 2.0, 3.0])
    assert np.allclose(act.u, 0.0)
    assert not act.saturated


def test_policy_scalar_gain():
    policy = LqPolicy(gain=np.array([[1.0]]), riccati=np.eye(1),
                      z_target=np.zeros(1))
    assert policy.evaluate([0.5]).u[0] == pytest.approx(-0.5)


def test_policy_saturation_flag_and_raw():
    policy = LqPolicy(gain=np.array([[1.0]]), riccati=np.eye(1),
                      z_target=np.zeros(1), saturation=1.0)
    act = policy.evaluate([3.2])
    assert act.u[0] == -1.0
    assert act.u_raw[0] == pytest.approx(-3.2)
    assert act.saturated


def test_policy_jacobian_is_negative_gain():
    gain = np.array([[1.0, -2.0]])
    policy = LqPolicy(gain=gain, riccati=np.eye(2), z_target=np.zeros(2))
    assert np.array_equal(policy.jacobian, -gain)


def test_zero_policy():
    policy = zero_policy(2, 4, saturation=1.0)
    assert np.allclose(policy.evaluate(np.ones(4)).u, 0.0)
    assert np.array_equal(policy.jacobian, np.zeros((2, 4)))


def test_equilibrium_feedforward_exact_when_solvable():
    rng = np.random.default_rng(4)
    b = rng.normal(size=(3, 3))
    k_x = rng.normal(size=(3, 3))
    z_t = rng.normal(size=3)
    model = KoopmanModel(k_d=np.eye(6), k_c=np.zeros((6, 6)), k_x=k_x,
                         k_u=b, ts=0.01, c_x=3, c_u=3)
    u_ff = equilibrium_feedforward(model, b, z_t, ridge=1e-12)
    assert np.linalg.norm(k_x @ z_t + b @ u_ff) < 1e-6


def test_equilibrium_feedforward_clipped():
    model = KoopmanModel(k_d=np.eye(2), k_c=np.zeros((2, 2)),
                         k_x=np.array([[100.0]]), k_u=np.array([[1.0]]),
                         ts=0.01, c_x=1, c_u=1)
    u_ff = equilibrium_feedforward(model, np.array([[1.0]]), np.array([1.0]),
                                   clip=2.0)
    assert abs(u_ff[0]) <= 2.0


def test_stabilizing_closed_loop_eigenvalues():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(4, 4))
    b = rng.normal(size=(4, 2))
    q = np.eye(4)
    r = np.eye(2)
    p = solve_care(a, b, q, r, 0.005)
    gain = np.linalg.solve(r, b.T @ p)
    eig = np.linalg.eigvals(a - b @ gain)
    assert np.max(eig.real) < 0.0
