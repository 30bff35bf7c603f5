"""LQ synthesis in the lifted space.

The state weight acts only on the leading (physical-state) block of the
lifted vector; the steady-state Riccati solution is found by integrating the
continuous Riccati differential equation backward until it stops moving,
which converges on the stabilizable subspace even for rank-deficient
early-learning models.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DimensionError, UnstabilizableModelError
from .validation import as_square_matrix, as_vector


def expand_weights(q, c_x):
    """Embed an n x n weight into the top-left block of a c_x x c_x matrix."""
    q = as_square_matrix(q, name="q")
    n = q.shape[0]
    c_x = int(c_x)
    if c_x < n:
        raise DimensionError(f"c_x ({c_x}) must be at least the state dim ({n})")
    out = np.zeros((c_x, c_x))
    out[:n, :n] = q
    return out


@dataclass
class LqWeights:
    """Task weights; the lifted versions put Q (Q_f) on the state block only."""

    q: np.ndarray
    r: np.ndarray
    q_f: np.ndarray = None

    def __post_init__(self):
        self.q = as_square_matrix(self.q, name="q")
        self.r = as_square_matrix(self.r, name="r")
        self.q_f = self.q.copy() if self.q_f is None else as_square_matrix(self.q_f, name="q_f")

    def lifted(self, c_x):
        return expand_weights(self.q, c_x), expand_weights(self.q_f, c_x)


def care_residual(a, b, q, r, p):
    """Frobenius norm of  A^T P + P A - P B R^-1 B^T P + Q."""
    br = b @ np.linalg.solve(r, b.T)
    res = a.T @ p + p @ a - p @ br @ p + q
    return float(np.linalg.norm(res, "fro"))


def solve_care_integration(a, b, q, r, dt, p0=None, tol=1e-9, max_iter=100_000,
                           divergence=1e12):
    """Steady-state Riccati solution by backward integration.

    Integrates  Pdot = A^T P + P A - P B R^-1 B^T P + Q  backward in time
    (RK4, step ``dt``) from ``p0`` (default Q) until ``||Pdot||_F < tol``.
    Blowup beyond ``divergence`` or a non-finite iterate raises
    :class:`UnstabilizableModelError`.  Hitting the iteration cap returns the
    current iterate: directions the model cannot stabilize (or that the cost
    cannot see) never settle and are truncated by the cap.
    """
    a = as_square_matrix(a, name="a")
    n = a.shape[0]
    b = np.asarray(b, dtype=float)
    if b.ndim == 1:
        b = b.reshape(-1, 1)
    if b.shape[0] != n:
        raise DimensionError("b must have as many rows as a")
    q = as_square_matrix(q, n=n, name="q")
    r = as_square_matrix(r, name="r")
    br = b @ np.linalg.solve(r, b.T)

    def pdot(p):
        ap = (p @ a).T + p @ a  # A^T P + P A, using symmetry of P
        return ap - p @ br @ p + q

    p = q.copy() if p0 is None else as_square_matrix(p0, n=n, name="p0").copy()
    for _ in range(int(max_iter)):
        k1 = pdot(p)
        if np.linalg.norm(k1, "fro") < tol:
            break
        k2 = pdot(p + 0.5 * dt * k1)
        k3 = pdot(p + 0.5 * dt * k2)
        k4 = pdot(p + dt * k3)
        p = p + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        p = 0.5 * (p + p.T)
        if not np.all(np.isfinite(p)) or np.linalg.norm(p, "fro") > divergence:
            raise UnstabilizableModelError(
                "backward Riccati integration diverged; model not stabilizable"
            )
    return p


def solve_care(a, b, q, r, dt, p0=None, tol=1e-9, max_iter=100_000,
               divergence=1e12, method="auto"):
    """Steady-state Riccati solution.

    ``method="integrate"`` runs the backward Riccati integration directly.
    ``method="auto"`` (default) first tries the direct Schur solver, which is
    orders of magnitude faster on well-posed models, validates its output
    against the Riccati residual, and falls back to backward integration for
    the rank-deficient or marginally-detectable models that arise early in
    learning.
    """
    if method not in ("auto", "schur", "integrate"):
        raise DimensionError("method must be 'auto', 'schur' or 'integrate'")
    if method in ("auto", "schur"):
        b2 = np.asarray(b, dtype=float)
        if b2.ndim == 1:
            b2 = b2.reshape(-1, 1)
        try:
            p = scipy.linalg.solve_continuous_are(a, b2, q, r)
            scale = max(1.0, float(np.linalg.norm(p, "fro")),
                        float(np.linalg.norm(q, "fro")))
            if np.all(np.isfinite(p)) and care_residual(a, b2, q, r, p) <= 1e-6 * scale:
                return 0.5 * (p + p.T)
            if method == "schur":
                raise UnstabilizableModelError("Schur CARE solution failed validation")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError) as err:
            if method == "schur":
                raise UnstabilizableModelError(f"Schur CARE solver failed: {err}")
    return solve_care_integration(a, b, q, r, dt, p0=p0, tol=tol,
                                  max_iter=max_iter, divergence=divergence)


@dataclass
class PolicyAction:
    """Clamped control with its pre-clamp value and a saturation flag."""

    u: np.ndarray
    u_raw: np.ndarray
    saturated: bool


@dataclass
class LqPolicy:
    """Time-invariant feedback ``u = u_ff - K (z - z_target)`` with clamping.

    ``jacobian`` is the analytic policy derivative -K; the clamp is treated
    as inactive when differentiating.
    """

    gain: np.ndarray  # (m, c_x)
    riccati: np.ndarray  # (c_x, c_x)
    z_target: np.ndarray  # (c_x,)
    feedforward: np.ndarray = None  # (m,)
    saturation: np.ndarray = None  # (m,) or None for unbounded

    def __post_init__(self):
        self.gain = np.atleast_2d(np.asarray(self.gain, dtype=float))
        self.z_target = as_vector(self.z_target, self.gain.shape[1], "z_target")
        if self.feedforward is None:
            self.feedforward = np.zeros(self.gain.shape[0])
        else:
            self.feedforward = as_vector(self.feedforward, self.gain.shape[0], "feedforward")
        if self.saturation is not None:
            self.saturation = np.broadcast_to(
                np.asarray(self.saturation, dtype=float), (self.gain.shape[0],)
            ).copy()

    @property
    def m(self):
        return self.gain.shape[0]

    @property
    def jacobian(self):
        return -self.gain

    def evaluate(self, z) -> PolicyAction:
        z = as_vector(z, self.gain.shape[1], "z")
        raw = self.feedforward - self.gain @ (z - self.z_target)
        if self.saturation is None:
            return PolicyAction(u=raw.copy(), u_raw=raw, saturated=False)
        clamped = np.clip(raw, -self.saturation, self.saturation)
        return PolicyAction(u=clamped, u_raw=raw, saturated=bool(np.any(clamped != raw)))

    def __call__(self, z):
        return self.evaluate(z).u


def zero_policy(m, c_x, saturation=None):
    """Fallback policy u = 0 (used when synthesis fails on a bad model)."""
    return LqPolicy(
        gain=np.zeros((m, c_x)),
        riccati=np.zeros((c_x, c_x)),
        z_target=np.zeros(c_x),
        saturation=saturation,
    )


def effective_input_matrix(model, dictionary, x_op=None, u_op=None):
    """B = K_u dv/du evaluated at an operating point.

    For v(x, u) = u dictionaries this is exactly K_u regardless of the point.
    """
    if x_op is None:
        x_op = np.zeros(dictionary.n)
    if u_op is None:
        u_op = np.zeros(dictionary.m)
    return model.k_u @ dictionary.control_jacobian(x_op, u_op)


def equilibrium_feedforward(model, b, z_target, ridge=1e-6, clip=None):
    """Least-squares input making the target an equilibrium of the model.

    Solves ``min ||K_x z_target + B u||^2 + ridge ||u||^2`` and optionally
    clips the result; an unregularized solve on a half-learned model can
    demand absurd inputs.
    """
    m = b.shape[1]
    lhs = b.T @ b + ridge * np.eye(m)
    u_ff = np.linalg.solve(lhs, -b.T @ (model.k_x @ z_target))
    if clip is not None:
        u_ff = np.clip(u_ff, -np.asarray(clip, dtype=float),
                       np.asarray(clip, dtype=float))
    return u_ff


def synthesize_policy(model, dictionary, weights: LqWeights, z_target=None,
                      x_op=None, saturation=None, feedforward=False,
                      p0=None, dt=None, tol=1e-9, max_iter=100_000,
                      method="auto", ff_fraction=0.6):
    # method is forwarded to solve_care: "schur" raises on failure instead of
    # falling back to a possibly cap-truncated backward integration
    """Build the lifted LQ regulator for a fitted model.

    ``feedforward=True`` adds the ridge-regularized equilibrium input
    ``u_ff = argmin ||K_x z_target + B u||``, which removes the steady-state
    offset when the target is not an equilibrium of the learned dynamics
    (constant gravity on the quadcopter being the canonical case); it is
    clipped to ``ff_fraction`` of the saturation so a half-learned model
    cannot command absurd biases.
    """
    c_x = model.c_x
    q_tilde, _ = weights.lifted(c_x)
    z_target = np.zeros(c_x) if z_target is None else as_vector(z_target, c_x, "z_target")
    if x_op is None:
        x_op = dictionary.recover_state(z_target)
    b = effective_input_matrix(model, dictionary, x_op=x_op)
    dt = model.ts if dt is None else float(dt)
    p = solve_care(model.k_x, b, q_tilde, weights.r, dt, p0=p0, tol=tol,
                   max_iter=max_iter, method=method)
    gain = np.linalg.solve(weights.r, b.T @ p)
    u_ff = None
    if feedforward:
        clip = None
        if saturation is not None:
            clip = ff_fraction * np.broadcast_to(
                np.asarray(saturation, dtype=float), (gain.shape[0],)
            )
        u_ff = equilibrium_feedforward(model, b, z_target, clip=clip)
    return LqPolicy(gain=gain, riccati=p, z_target=z_target,
                    feedforward=u_ff, saturation=saturation)
