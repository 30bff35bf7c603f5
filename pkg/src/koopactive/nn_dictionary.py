"""Learned function observables: small tanh MLPs trained jointly with the operator.

The state map keeps a hard skip connection (its first outputs are the raw
state), which rules out the all-zero observable collapse and preserves the
leading-block recovery property every dictionary guarantees.  Training
minimizes the one-step lifted prediction error with the operator matrix as a
free parameter, using bias-corrected Adam and manual reverse-mode gradients.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError
from .koopman import KoopmanModel
from .observables import Dictionary


class Mlp:
    """Fully connected network, tanh hidden activations, linear output."""

    def __init__(self, sizes, rng=None, scale=None):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2:
            raise DimensionError("an MLP needs at least input and output sizes")
        rng = np.random.default_rng(0) if rng is None else rng
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            s = (1.0 / np.sqrt(fan_in)) if scale is None else scale
            self.weights.append(s * rng.standard_normal((fan_out, fan_in)))
            self.biases.append(np.zeros(fan_out))

    @property
    def n_in(self):
        return self.sizes[0]

    @property
    def n_out(self):
        return self.sizes[-1]

    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def forward(self, x):
        """Batch forward pass, (B, n_in) -> (B, n_out)."""
        a = np.asarray(x, dtype=float)
        if a.ndim != 2 or a.shape[1] != self.n_in:
            raise DimensionError(f"input must be (B, {self.n_in})")
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ w.T + b
            if i != last:
                a = np.tanh(a)
        return a

    def forward_cached(self, x):
        """Forward pass that keeps layer inputs for the backward pass."""
        a = np.asarray(x, dtype=float)
        cache = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inp = a
            a = a @ w.T + b
            if i != last:
                a = np.tanh(a)
            cache.append((inp, a))
        return a, cache

    def backward(self, cache, grad_out):
        """Gradients of a scalar loss given d(loss)/d(output).

        Returns ``(grads, grad_in)`` where grads matches :meth:`params`.
        """
        g = np.asarray(grad_out, dtype=float)
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            inp, out = cache[i]
            if i != last:
                g = g * (1.0 - out**2)  # through tanh
            grads_w[i] = g.T @ inp
            grads_b[i] = g.sum(axis=0)
            g = g @ self.weights[i]
        grads = []
        for gw, gb in zip(grads_w, grads_b):
            grads.extend([gw, gb])
        return grads, g

    def jacobian(self, x):
        """d(output)/d(input) at a single point, shape (n_out, n_in)."""
        x = np.asarray(x, dtype=float).reshape(1, -1)
        a = x
        jac = np.eye(self.n_in)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            pre = a @ w.T + b
            jac = w @ jac
            if i != last:
                act = np.tanh(pre)
                jac = (1.0 - act[0] ** 2)[:, None] * jac
                a = act
            else:
                a = pre
        return jac


class AdamState:
    """Bias-corrected Adam accumulators for a fixed list of parameter arrays."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def update(self, params, grads):
        """One Adam step; parameter arrays are updated in place."""
        if len(params) != len(self.m) or len(grads) != len(self.m):
            raise DimensionError("params/grads do not match the Adam state")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g**2
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return self


class NnDictionary(Dictionary):
    """Dictionary whose lift and control maps are learned MLPs.

    The first ``state_dim`` outputs of the state network are overwritten with
    the raw state, and the first ``control_dim`` outputs of the control
    network with the raw control (hard skip connections; they rule out the
    all-zero observable collapse and keep the control influence identifiable).
    When ``augment_const`` is set, a constant 1 is appended to the control
    before the control network, which reconciles a two-input network with a
    scalar actuator.  ``control_scale`` normalizes the control-network input
    (typically the saturation) so the tanh layers stay in their active range.
    """

    def __init__(self, z_net: Mlp, v_net: Mlp, state_dim, control_dim,
                 augment_const=False, control_scale=1.0):
        self.z_net = z_net
        self.v_net = v_net
        self.n = int(state_dim)
        self.m = int(control_dim)
        self.augment_const = bool(augment_const)
        self.control_scale = float(control_scale)
        if z_net.n_in != self.n:
            raise DimensionError("state network input must match the state dim")
        if z_net.n_out < self.n:
            raise DimensionError("state network output must cover the skip block")
        expected = self.m + (1 if self.augment_const else 0)
        if v_net.n_in != expected:
            raise DimensionError(
                f"control network input must be {expected} (control dim"
                f"{' + constant' if self.augment_const else ''})"
            )
        if v_net.n_out < self.m:
            raise DimensionError("control network output must cover the skip block")
        self.c_x = z_net.n_out
        self.c_u = v_net.n_out

    def _augment(self, u):
        u = np.atleast_2d(np.asarray(u, dtype=float)) / self.control_scale
        if not self.augment_const:
            return u
        ones = np.ones((u.shape[0], 1))
        return np.hstack([u, ones])

    def _lift(self, x):
        out = self.z_net.forward(x.reshape(1, -1))[0]
        out[: self.n] = x
        return out

    def lift_batch(self, X):
        X = np.asarray(X, dtype=float)
        out = self.z_net.forward(X)
        out[:, : self.n] = X
        return out

    def lift_control(self, x, u):
        u = np.asarray(u, dtype=float).reshape(-1)
        if u.shape[0] != self.m:
            raise DimensionError(f"u must have length {self.m}")
        out = self.v_net.forward(self._augment(u))[0]
        out[: self.m] = u
        return out

    def lift_control_batch(self, U):
        U = np.atleast_2d(np.asarray(U, dtype=float))
        out = self.v_net.forward(self._augment(U))
        out[:, : self.m] = U
        return out

    def control_jacobian(self, x, u):
        u = np.asarray(u, dtype=float).reshape(-1)
        jac = self.v_net.jacobian(self._augment(u)[0]) / self.control_scale
        jac = jac[:, : self.m].copy()
        jac[: self.m, :] = np.eye(self.m)
        return jac

    def terms(self):
        head = [f"x{i}" for i in range(self.n)]
        tail = [f"nn{i}" for i in range(self.n, self.c_x)]
        return head + tail

    def params(self):
        return self.z_net.params() + self.v_net.params()


def loss_and_grads(dictionary: NnDictionary, kmat, x_now, u_now, x_next, u_next):
    """One-step prediction loss of the joint (networks, operator) parameters.

    loss = mean over the batch of 0.5 ||ztil(x', u') - K ztil(x, u)||^2 with
    ztil the stacked observable.  Returns ``(loss, net_grads, k_grad)`` where
    ``net_grads`` matches ``dictionary.params()``.
    """
    x_now = np.atleast_2d(np.asarray(x_now, dtype=float))
    x_next = np.atleast_2d(np.asarray(x_next, dtype=float))
    u_now = np.atleast_2d(np.asarray(u_now, dtype=float))
    u_next = np.atleast_2d(np.asarray(u_next, dtype=float))
    batch = x_now.shape[0]
    if batch == 0:
        raise DimensionError("batch must be nonempty")
    n = dictionary.n
    c_x = dictionary.c_x

    z_raw_now, z_cache_now = dictionary.z_net.forward_cached(x_now)
    z_raw_next, z_cache_next = dictionary.z_net.forward_cached(x_next)
    z_now = z_raw_now.copy()
    z_now[:, :n] = x_now
    z_next = z_raw_next.copy()
    z_next[:, :n] = x_next
    v_raw_now, v_cache_now = dictionary.v_net.forward_cached(dictionary._augment(u_now))
    v_raw_next, v_cache_next = dictionary.v_net.forward_cached(dictionary._augment(u_next))
    m = dictionary.m
    v_now = v_raw_now.copy()
    v_now[:, :m] = u_now
    v_next = v_raw_next.copy()
    v_next[:, :m] = u_next

    zt_now = np.hstack([z_now, v_now])
    zt_next = np.hstack([z_next, v_next])
    err = zt_next - zt_now @ kmat.T
    loss = float(np.sum(err**2)) / (2.0 * batch)

    k_grad = -(err.T @ zt_now) / batch
    d_next = err / batch
    d_now = -(err / batch) @ kmat

    def z_grad(d_block, cache):
        g = d_block.copy()
        g[:, :n] = 0.0  # skip block is not produced by the network
        grads, _ = dictionary.z_net.backward(cache, g)
        return grads

    def v_grad(d_block, cache):
        g = d_block.copy()
        g[:, :m] = 0.0  # skip block is not produced by the network
        grads, _ = dictionary.v_net.backward(cache, g)
        return grads

    gz = z_grad(d_now[:, :c_x], z_cache_now)
    for a, b in zip(gz, z_grad(d_next[:, :c_x], z_cache_next)):
        a += b
    gv = v_grad(d_now[:, c_x:], v_cache_now)
    for a, b in zip(gv, v_grad(d_next[:, c_x:], v_cache_next)):
        a += b
    return loss, gz + gv, k_grad


def dataset_loss(dictionary: NnDictionary, kmat, x_now, u_now, x_next, u_next):
    """Prediction loss over a full dataset without gradients."""
    z_now = dictionary.lift_batch(np.atleast_2d(x_now))
    z_next = dictionary.lift_batch(np.atleast_2d(x_next))
    v_now = dictionary.lift_control_batch(np.atleast_2d(u_now))
    v_next = dictionary.lift_control_batch(np.atleast_2d(u_next))
    zt_now = np.hstack([z_now, v_now])
    zt_next = np.hstack([z_next, v_next])
    err = zt_next - zt_now @ kmat.T
    return float(np.sum(err**2)) / (2.0 * zt_now.shape[0])


def episode_fit(dictionary: NnDictionary, kmat, dataset, epochs, batch_size,
                rng, ts, adam=None, lr=1e-3):
    """Minibatch-Adam training of the joint parameters, then model extraction.

    ``dataset`` is ``(x_now, u_now, x_next, u_next)`` arrays over all
    transitions collected so far.  The trained (discrete) operator is
    converted to continuous time and partitioned for the LQ layer; a matrix
    logarithm failure propagates after the built-in subdivision fallback.

    Returns ``(model, losses)`` with one mean loss per epoch.  ``epochs=0``
    leaves the parameters untouched and extracts the model from the current
    operator.
    """
    x_now, u_now, x_next, u_next = (np.atleast_2d(np.asarray(a, dtype=float))
                                    for a in dataset)
    count = x_now.shape[0]
    if count == 0:
        raise DimensionError("dataset must be nonempty")
    params = dictionary.params() + [kmat]
    if adam is None:
        adam = AdamState(params, lr=lr)
    losses = []
    for _ in range(int(epochs)):
        order = rng.permutation(count)
        epoch_loss = 0.0
        for start in range(0, count, batch_size):
            idx = order[start: start + batch_size]
            loss, net_grads, k_grad = loss_and_grads(
                dictionary, kmat, x_now[idx], u_now[idx], x_next[idx], u_next[idx]
            )
            adam.update(params, net_grads + [k_grad])
            epoch_loss += loss * len(idx)
        losses.append(epoch_loss / count)
    model = KoopmanModel.from_discrete(
        kmat.copy(), ts, dictionary.c_x, dictionary.c_u,
        residual=float(np.sqrt(2.0 * losses[-1])) if losses else float("nan"),
    )
    return model, losses
