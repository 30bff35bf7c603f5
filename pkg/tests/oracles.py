"""Independent numerical oracles used by the tests.

These re-derive quantities through routes that do not share code with the
implementations they check: explicit objective evaluation with control
insertion for the adjoint/mode-insertion checks, and direct simulation of
the information measure for the first-order information-gain check.
"""

import numpy as np


def objective_with_insertion(model, dictionary, policy, cost, z0, horizon, ts,
                             tau_index=None, duration=0.0, u_insert=None,
                             substeps=1):
    """Evaluate the horizon objective, optionally inserting a fixed control.

    The rollout mirrors the controller's discretization (policy re-evaluated
    per grid step, held over the step) but integrates the running cost as an
    augmented state through the same RK4 stages.  When ``duration > 0`` the
    grid step starting at ``tau_index`` is split at ``tau + duration`` and
    ``u_insert`` is applied on the first piece.
    """
    n = int(round(horizon / ts))
    z = np.asarray(z0, dtype=float).copy()
    total = 0.0

    def segment(z_now, u_now, dt):
        # RK4 on the augmented state [z; running cost]
        def rhs(zz):
            x = dictionary.recover_state(zz)
            v = dictionary.lift_control(x, u_now)
            dv = dictionary.control_jacobian(x, u_now)
            l, _, _ = cost.running(zz, u_now, v, dv)
            return model.k_x @ zz + model.k_u @ v, l

        k1, l1 = rhs(z_now)
        k2, l2 = rhs(z_now + 0.5 * dt * k1)
        k3, l3 = rhs(z_now + 0.5 * dt * k2)
        k4, l4 = rhs(z_now + dt * k3)
        z_next = z_now + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        j_inc = (dt / 6.0) * (l1 + 2 * l2 + 2 * l3 + l4)
        return z_next, j_inc

    for i in range(n):
        u = policy.evaluate(z).u
        if duration > 0.0 and i == tau_index:
            # both the perturbed and the baseline evaluation must share this
            # split-step structure (pass u_insert=None for the baseline),
            # otherwise the mid-step policy re-evaluation, absent from the
            # unsplit path, shows up as a spurious first-order term
            first = u if u_insert is None else np.asarray(u_insert, dtype=float)
            z, dj = segment(z, first, duration)
            total += dj
            u = policy.evaluate(z).u
            z, dj = segment(z, u, ts - duration)
            total += dj
        else:
            dt = ts / substeps
            for _ in range(substeps):
                z, dj = segment(z, u, dt)
                total += dj
    m_val, _ = cost.terminal(z)
    return total + m_val


def mean_fisher_under_control(model, dictionary, cost, z0, control_fn,
                              duration, ts):
    """Average information along a rollout under an arbitrary control law."""
    n = max(int(round(duration / ts)), 1)
    z = np.asarray(z0, dtype=float).copy()
    vals = []
    for i in range(n):
        x = dictionary.recover_state(z)
        u = np.asarray(control_fn(i, z), dtype=float)
        v = dictionary.lift_control(x, u)
        vals.append(cost.fisher(z, v))

        def rhs(zz):
            xx = dictionary.recover_state(zz)
            return model.k_x @ zz + model.k_u @ dictionary.lift_control(xx, u)

        k1 = rhs(z)
        k2 = rhs(z + 0.5 * ts * k1)
        k3 = rhs(z + 0.5 * ts * k2)
        k4 = rhs(z + ts * k3)
        z = z + (ts / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return float(np.mean(vals))
