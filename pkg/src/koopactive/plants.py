"""Simulated nonlinear plants with a fixed-step RK4 integrator.

All plants share the same surface: ``dynamics(x, u)`` returns the state
derivative, ``step(state, u)`` advances one sampling interval with
zero-order-hold control, and ``sample_initial(rng, ranges)`` draws a seeded
initial condition.  States are plain float vectors except for the quadcopter,
which carries its rotation matrix and position alongside the 9-dimensional
measurement it exposes to estimators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, IntegrationBlowupError
from .validation import as_vector

GRAVITY = 9.81


def rk4_step(f, x, dt):
    """One classical Runge-Kutta step of ``xdot = f(x)`` over ``dt``.

    Broadcasts over leading axes, so batched states work whenever ``f`` does.
    """
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _as_rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


class Plant:
    """Base class for simulated plants.

    Subclasses define ``n`` (measurement dimension), ``m`` (input dimension),
    ``ts`` (sampling interval) and implement ``dynamics``.  All methods are
    pure functions of their arguments; instances hold parameters only, so they
    are safe to share across workers.
    """

    name = "plant"
    n = 0
    m = 0
    ts = 0.01

    def __init__(self, saturation=None, ts=None):
        if ts is not None:
            self.ts = float(ts)
        if saturation is None:
            sat = np.full(self.m, np.inf)
        else:
            sat = np.broadcast_to(np.asarray(saturation, dtype=float), (self.m,)).copy()
        self.saturation = sat

    def dynamics(self, x, u):
        raise NotImplementedError

    def clamp(self, u):
        u = np.asarray(u, dtype=float)
        return np.clip(u, -self.saturation, self.saturation)

    def measure(self, state):
        """Measurement vector exposed to the estimator (identity by default)."""
        return np.asarray(state, dtype=float)

    def step(self, state, u, ts=None):
        """Advance ``state`` by one sampling interval under held control ``u``."""
        dt = self.ts if ts is None else float(ts)
        if dt <= 0.0:
            raise DimensionError("ts must be positive")
        u = self.clamp(as_vector(u, self.m, "u"))
        x = np.asarray(state, dtype=float)
        if x.shape[-1] != self.n:
            raise DimensionError(f"state must have length {self.n}, got {x.shape}")
        nxt = rk4_step(lambda s: self.dynamics(s, u), x, dt)
        if not np.all(np.isfinite(nxt)):
            raise IntegrationBlowupError(f"{self.name}: integration blew up", state=nxt)
        return nxt

    def sample_initial(self, seed_or_rng, ranges):
        """Uniformly sample a state with each channel in ``ranges[i] = (lo, hi)``."""
        rng = _as_rng(seed_or_rng)
        ranges = np.asarray(ranges, dtype=float)
        if ranges.shape != (self.n, 2):
            raise DimensionError(f"ranges must be ({self.n}, 2), got {ranges.shape}")
        if np.any(ranges[:, 1] < ranges[:, 0]):
            raise DimensionError("ranges must be well-ordered (lo <= hi)")
        return rng.uniform(ranges[:, 0], ranges[:, 1])


class VanDerPol(Plant):
    """Forced Van der Pol oscillator.

        x1' = x2
        x2' = -x1 + eps * (1 - x1^2) * x2 + u

    ``dynamics`` broadcasts over leading batch axes.
    """

    name = "vdp"
    n = 2
    m = 1
    ts = 0.01

    def __init__(self, eps=1.0, saturation=None, ts=None):
        super().__init__(saturation=saturation, ts=ts)
        self.eps = float(eps)

    def dynamics(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        x1 = x[..., 0]
        x2 = x[..., 1]
        return np.stack(
            [x2, -x1 + self.eps * (1.0 - x1**2) * x2 + u[..., 0]], axis=-1
        )


class CartPendulum(Plant):
    """Frictionless cart-pole, pole hinged on a driven cart.

    State ``[p, pdot, theta, thetadot]`` with ``theta = 0`` upright.  Cart
    mass 1.0 kg, pole mass 0.1 kg, pole half-length 0.5 m.  Force input in N.
    """

    name = "cartpole"
    n = 4
    m = 1
    ts = 0.02  # 50 Hz

    def __init__(self, saturation=10.0, ts=None):
        super().__init__(saturation=saturation, ts=ts)
        self.mass_cart = 1.0
        self.mass_pole = 0.1
        self.half_length = 0.5

    def dynamics(self, x, u):
        _, pdot, th, thdot = x
        force = float(np.asarray(u).reshape(-1)[0])
        mc, mp, l = self.mass_cart, self.mass_pole, self.half_length
        sin, cos = np.sin(th), np.cos(th)
        total = mc + mp
        tmp = (force + mp * l * thdot**2 * sin) / total
        thacc = (GRAVITY * sin - cos * tmp) / (l * (4.0 / 3.0 - mp * cos**2 / total))
        pacc = tmp - mp * l * thacc * cos / total
        return np.array([pdot, pacc, thdot, thacc])


class TwoLinkArm(Plant):
    """Planar two-link arm in the horizontal plane (no gravity).

    Unit-length links with unit point masses at the tips; torques at both
    joints.  State ``[th1, th1dot, th2, th2dot]``.  Any configuration with
    zero velocity is an equilibrium under zero torque.
    """

    name = "twolink"
    n = 4
    m = 2
    ts = 0.01  # 100 Hz

    def __init__(self, saturation=10.0, ts=None):
        super().__init__(saturation=saturation, ts=ts)
        self.l1 = self.l2 = 1.0
        self.m1 = self.m2 = 1.0

    def dynamics(self, x, u):
        th1, dth1, th2, dth2 = x
        tau = np.asarray(u, dtype=float)
        l1, l2, m1, m2 = self.l1, self.l2, self.m1, self.m2
        c2, s2 = np.cos(th2), np.sin(th2)
        m11 = m1 * l1**2 + m2 * (l1**2 + l2**2 + 2.0 * l1 * l2 * c2)
        m12 = m2 * (l2**2 + l1 * l2 * c2)
        m22 = m2 * l2**2
        mass = np.array([[m11, m12], [m12, m22]])
        cor = np.array(
            [
                -m2 * l1 * l2 * s2 * (2.0 * dth1 * dth2 + dth2**2),
                m2 * l1 * l2 * s2 * dth1**2,
            ]
        )
        ddq = np.linalg.solve(mass, tau - cor)
        return np.array([dth1, ddq[0], dth2, ddq[1]])


def hat(w):
    """Skew-symmetric matrix such that ``hat(w) @ v = w x v``."""
    return np.array(
        [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]
    )


def gram_schmidt(r):
    """Re-orthonormalize the columns of a near-rotation matrix."""
    q = np.empty_like(r)
    for j in range(3):
        v = r[:, j].copy()
        for k in range(j):
            v -= (q[:, k] @ r[:, j]) * q[:, k]
        q[:, j] = v / np.linalg.norm(v)
    return q


@dataclass
class QuadState:
    """Quadcopter state: rotation and position carried alongside body rates."""

    rotation: np.ndarray  # 3x3 body-to-world
    position: np.ndarray  # 3, world frame (m)
    omega: np.ndarray  # 3, body angular velocity (rad/s)
    velocity: np.ndarray  # 3, body linear velocity (m/s)

    def measurement(self):
        """9-vector ``[a_g, omega, v]`` with ``a_g = g R^T e3``."""
        a_g = GRAVITY * self.rotation.T @ np.array([0.0, 0.0, 1.0])
        return np.concatenate([a_g, self.omega, self.velocity])

    def pack(self):
        return np.concatenate(
            [self.rotation.reshape(9), self.position, self.omega, self.velocity]
        )

    @classmethod
    def unpack(cls, vec):
        vec = np.asarray(vec, dtype=float)
        return cls(
            rotation=vec[:9].reshape(3, 3),
            position=vec[9:12].copy(),
            omega=vec[12:15].copy(),
            velocity=vec[15:18].copy(),
        )


@dataclass
class QuadParams:
    """Physical parameters of the quadcopter (plausible small-quad defaults)."""

    mass: float = 0.6  # kg
    inertia: tuple = (0.04, 0.04, 0.07)  # principal moments, kg m^2
    thrust_coeff: float = 1.0
    moment_coeff: float = 0.025
    arm_length: float = 0.2  # m

    def inertia_matrix(self):
        return np.diag(np.asarray(self.inertia, dtype=float))


class Quadcopter(Plant):
    """SE(3) quadcopter in free fall with bidirectional rotor thrust.

        Rdot = R hat(omega)
        pdot = R v
        J omegadot = M + (J omega) x omega        (printed gyroscopic form)
        vdot = (F/m) e3 - omega x v - g R^T e3

    with total thrust ``F = k_t (u1+u2+u3+u4)`` and body moment
    ``M = [k_t l (u2-u4), k_t l (u3-u1), k_m (u1-u2+u3-u4)]``.  The estimator
    sees only the 9-dimensional measurement ``[a_g, omega, v]``.

    ``gyro_convention`` selects the sign of the gyroscopic term: ``"printed"``
    uses ``+(J omega) x omega`` (which coincides with the conventional
    ``-omega x (J omega)``), ``"negated"`` flips it.
    """

    name = "quadcopter"
    n = 9
    m = 4
    ts = 0.005  # 200 Hz

    def __init__(self, params: QuadParams | None = None, saturation=3.0, ts=None,
                 gyro_convention="printed"):
        super().__init__(saturation=saturation, ts=ts)
        self.params = params if params is not None else QuadParams()
        if gyro_convention not in ("printed", "negated"):
            raise DimensionError("gyro_convention must be 'printed' or 'negated'")
        self.gyro_sign = 1.0 if gyro_convention == "printed" else -1.0
        self._inertia = self.params.inertia_matrix()
        self._inertia_inv = np.linalg.inv(self._inertia)

    def thrust_and_moment(self, u):
        kt = self.params.thrust_coeff
        km = self.params.moment_coeff
        arm = self.params.arm_length
        force = kt * (u[0] + u[1] + u[2] + u[3])
        moment = np.array(
            [kt * arm * (u[1] - u[3]), kt * arm * (u[2] - u[0]),
             km * (u[0] - u[1] + u[2] - u[3])]
        )
        return force, moment

    def dynamics(self, packed, u):
        s = QuadState.unpack(packed)
        force, moment = self.thrust_and_moment(u)
        j, jinv = self._inertia, self._inertia_inv
        e3 = np.array([0.0, 0.0, 1.0])
        rdot = s.rotation @ hat(s.omega)
        pdot = s.rotation @ s.velocity
        omegadot = jinv @ (moment + self.gyro_sign * np.cross(j @ s.omega, s.omega))
        vdot = (force / self.params.mass) * e3 - np.cross(s.omega, s.velocity) \
            - GRAVITY * s.rotation.T @ e3
        return np.concatenate([rdot.reshape(9), pdot, omegadot, vdot])

    def measure(self, state):
        if not isinstance(state, QuadState):
            state = QuadState.unpack(state)
        return state.measurement()

    def step(self, state, u, ts=None):
        dt = self.ts if ts is None else float(ts)
        if dt <= 0.0:
            raise DimensionError("ts must be positive")
        u = self.clamp(as_vector(u, self.m, "u"))
        packed = state.pack() if isinstance(state, QuadState) else np.asarray(state, dtype=float)
        nxt = rk4_step(lambda s: self.dynamics(s, u), packed, dt)
        if not np.all(np.isfinite(nxt)):
            raise IntegrationBlowupError("quadcopter: integration blew up", state=nxt)
        out = QuadState.unpack(nxt)
        out.rotation = gram_schmidt(out.rotation)
        return out

    def sample_initial(self, seed_or_rng, ranges):
        """Draw angular/linear velocities uniformly; attitude starts at identity.

        ``ranges`` has six (lo, hi) rows: three for omega, three for v.
        """
        rng = _as_rng(seed_or_rng)
        ranges = np.asarray(ranges, dtype=float)
        if ranges.shape != (6, 2):
            raise DimensionError(f"ranges must be (6, 2), got {ranges.shape}")
        if np.any(ranges[:, 1] < ranges[:, 0]):
            raise DimensionError("ranges must be well-ordered (lo <= hi)")
        draw = rng.uniform(ranges[:, 0], ranges[:, 1])
        return QuadState(
            rotation=np.eye(3),
            position=np.zeros(3),
            omega=draw[:3],
            velocity=draw[3:],
        )


PLANTS = {
    "vdp": VanDerPol,
    "cartpole": CartPendulum,
    "twolink": TwoLinkArm,
    "quadcopter": Quadcopter,
}
