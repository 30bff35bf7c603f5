"""Plant dynamics, integrator order, samplers."""

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from koopactive.errors import DimensionError, IntegrationBlowupError
from koopactive.plants import (
    GRAVITY,
    CartPendulum,
    Plant,
    QuadState,
    Quadcopter,
    TwoLinkArm,
    VanDerPol,
)


class LinearDecay(Plant):
    """xdot = -x, closed form x(t) = x0 exp(-t)."""

    name = "decay"
    n = 1
    m = 1
    ts = 0.1

    def dynamics(self, x, u):
        return -np.asarray(x, dtype=float)


def test_vdp_equilibrium():
    vdp = VanDerPol()
    assert np.allclose(vdp.dynamics(np.zeros(2), np.zeros(1)), 0.0)


def test_vdp_known_point_no_input():
    vdp = VanDerPol()
    assert np.allclose(vdp.dynamics(np.array([1.0, 0.0]), np.zeros(1)), [0.0, -1.0])


def test_vdp_hand_evaluated_point():
    # x2' = -x1 + (1 - x1^2) x2 + u = -2 + (1-4)*1 + 0.5 = -4.5
    vdp = VanDerPol()
    out = vdp.dynamics(np.array([2.0, 1.0]), np.array([0.5]))
    assert np.allclose(out, [1.0, -4.5])


def test_vdp_step_fixed_point():
    vdp = VanDerPol()
    assert np.allclose(vdp.step(np.zeros(2), np.zeros(1), 0.01), 0.0)


def test_linear_plant_matches_exponential():
    # one RK4 step has local error ts^5/5! = 8.3e-8 at ts = 0.1
    plant = LinearDecay()
    out = plant.step(np.array([1.0]), np.zeros(1), 0.1)
    assert abs(out[0] - np.exp(-0.1)) < 1.5e-7
    fine = plant.step(np.array([1.0]), np.zeros(1), 0.01)
    assert abs(fine[0] - np.exp(-0.01)) < 1e-10


def test_rk4_order_halving_ts():
    plant = LinearDecay()
    x0 = np.array([1.0])

    def one_step_error(ts):
        return abs(plant.step(x0, np.zeros(1), ts)[0] - np.exp(-ts))

    # RK4 local error ~ ts^5: halving should shrink it by ~32, demand >= 14
    assert one_step_error(0.2) / one_step_error(0.1) >= 14.0


def test_step_rejects_nonpositive_ts():
    with pytest.raises(DimensionError):
        VanDerPol().step(np.zeros(2), np.zeros(1), 0.0)


def test_blowup_raises_with_state():
    class Exploding(Plant):
        n = 1
        m = 1
        ts = 1.0

        def dynamics(self, x, u):
            return np.array([x[0] ** 3])

    with pytest.raises(IntegrationBlowupError):
        state = np.array([10.0])
        for _ in range(20):
            state = Exploding().step(state, np.zeros(1))


def test_clamping():
    vdp = VanDerPol(saturation=1.0)
    assert vdp.clamp(np.array([-3.2]))[0] == -1.0
    assert vdp.clamp(np.array([0.5]))[0] == 0.5


def test_sampler_deterministic():
    vdp = VanDerPol()
    ranges = [(-2, 2), (-2, 2)]
    assert np.array_equal(vdp.sample_initial(7, ranges), vdp.sample_initial(7, ranges))


def test_sampler_uniform_bounds():
    vdp = VanDerPol()
    rng = np.random.default_rng(0)
    draws = np.array([vdp.sample_initial(rng, [(-2, 2)] * 2) for _ in range(10_000)])
    assert np.all(draws >= -2.0) and np.all(draws <= 2.0)
    assert np.all(draws.min(axis=0) <= -1.9) and np.all(draws.max(axis=0) >= 1.9)


def test_sampler_degenerate_range():
    vdp = VanDerPol()
    assert np.allclose(vdp.sample_initial(3, [(0, 0), (0, 0)]), 0.0)


def test_sampler_rejects_bad_ranges():
    with pytest.raises(DimensionError):
        VanDerPol().sample_initial(0, [(1, -1), (0, 0)])


# -- quadcopter -----------------------------------------------------------

def test_quad_initial_attitude_identity():
    quad = Quadcopter()
    state = quad.sample_initial(0, [(-2, 2)] * 6)
    assert np.allclose(state.rotation, np.eye(3))
    assert np.allclose(state.position, 0.0)


def test_quad_measurement_gravity_norm():
    quad = Quadcopter()
    state = quad.sample_initial(1, [(-2, 2)] * 6)
    for _ in range(100):
        state = quad.step(state, np.zeros(4))
    a_g = state.measurement()[:3]
    assert abs(np.linalg.norm(a_g) - GRAVITY) < 1e-6


def test_quad_rotation_stays_orthonormal():
    quad = Quadcopter()
    state = quad.sample_initial(2, [(-2, 2)] * 6)
    for _ in range(200):
        state = quad.step(state, np.array([0.5, -0.2, 0.1, 0.3]))
        err = np.linalg.norm(state.rotation.T @ state.rotation - np.eye(3))
        assert err < 1e-6


def test_quad_free_fall_first_order():
    quad = Quadcopter()
    state = QuadState(rotation=np.eye(3), position=np.zeros(3),
                      omega=np.zeros(3), velocity=np.zeros(3))
    ts = 0.005
    nxt = quad.step(state, np.zeros(4), ts)
    e3 = np.array([0.0, 0.0, 1.0])
    expected_dv = -ts * GRAVITY * state.rotation.T @ e3
    assert np.linalg.norm(nxt.velocity - state.velocity - expected_dv) < 1e-6


def test_quad_omega_against_high_resolution_oracle():
    # zero moments: J wdot = (J w) x w, integrated by a tight adaptive oracle
    quad = Quadcopter()
    j = quad.params.inertia_matrix()
    jinv = np.linalg.inv(j)
    w0 = np.array([1.5, -0.7, 0.9])

    sol = solve_ivp(
        lambda t, w: jinv @ np.cross(j @ w, w), (0.0, 1.0), w0,
        rtol=1e-12, atol=1e-12, dense_output=True,
    )
    state = QuadState(rotation=np.eye(3), position=np.zeros(3),
                      omega=w0.copy(), velocity=np.zeros(3))
    for _ in range(200):
        state = quad.step(state, np.zeros(4))
    assert np.linalg.norm(state.omega - sol.y[:, -1]) < 1e-5
    assert abs(np.linalg.norm(state.omega) - np.linalg.norm(sol.y[:, -1])) < 1e-5


def test_quad_gyro_convention_switch():
    printed = Quadcopter(gyro_convention="printed")
    negated = Quadcopter(gyro_convention="negated")
    s = QuadState(rotation=np.eye(3), position=np.zeros(3),
                  omega=np.array([1.0, 2.0, 0.5]), velocity=np.zeros(3))
    dp = printed.dynamics(s.pack(), np.zeros(4))[12:15]
    dn = negated.dynamics(s.pack(), np.zeros(4))[12:15]
    assert np.allclose(dp, -dn)
    j = printed.params.inertia_matrix()
    expected = np.linalg.inv(j) @ np.cross(j @ s.omega, s.omega)
    assert np.allclose(dp, expected)


def test_quad_thrust_and_moment_mixing():
    quad = Quadcopter()
    force, moment = quad.thrust_and_moment(np.array([1.0, 2.0, 3.0, 4.0]))
    kt, km, arm = (quad.params.thrust_coeff, quad.params.moment_coeff,
                   quad.params.arm_length)
    assert force == pytest.approx(kt * 10.0)
    assert moment == pytest.approx(
        [kt * arm * (2.0 - 4.0), kt * arm * (3.0 - 1.0), km * (1.0 - 2.0 + 3.0 - 4.0)]
    )


def test_trajectories_bit_identical_for_same_seed():
    def rollout():
        plant = CartPendulum()
        rng = np.random.default_rng(11)
        x = plant.sample_initial(rng, [(-0.1, 0.1)] * 4)
        out = [x]
        for _ in range(50):
            x = plant.step(x, rng.uniform(-1, 1, 1))
            out.append(x)
        return np.array(out)

    assert rollout().tobytes() == rollout().tobytes()


def test_twolink_configuration_is_equilibrium():
    arm = TwoLinkArm()
    x = np.array([0.7, 0.0, -0.3, 0.0])
    assert np.allclose(arm.dynamics(x, np.zeros(2)), 0.0)


def test_cartpole_upright_unstable():
    plant = CartPendulum()
    x = np.array([0.0, 0.0, 1e-3, 0.0])
    for _ in range(100):
        x = plant.step(x, np.zeros(1))
    assert abs(x[2]) > 1e-2  # perturbation grows without control
