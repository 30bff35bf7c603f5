"""Function-observable dictionaries: lifting maps z(x) and control maps v(x, u).

Every dictionary starts its lifted vector with the raw state, so the plant
state can always be recovered from the leading entries of ``z``.  Dictionaries
are sklearn transformers (``transform`` lifts a batch of states) and expose
the single-sample methods ``lift``, ``lift_control`` and ``control_jacobian``
used by the controllers.
"""

from __future__ import annotations

import itertools

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import DimensionError
from .validation import as_vector


class Dictionary(TransformerMixin, BaseEstimator):
    """Base lifting map.  Immutable after construction.

    Attributes
    ----------
    n : int
        Plant measurement dimension.
    m : int
        Control dimension.
    c_x : int
        Lifted state dimension (``z``).
    c_u : int
        Control-observable dimension (``v``).
    """

    n = 0
    m = 0
    c_x = 0
    c_u = 0

    # -- lifting -----------------------------------------------------------
    def lift(self, x):
        x = as_vector(x, self.n, "x")
        return self._lift(x)

    def _lift(self, x):
        raise NotImplementedError

    def lift_control(self, x, u):
        """Control observable v(x, u); identity in u for all fixed bases."""
        u = as_vector(u, self.m, "u")
        return u.copy()

    def control_jacobian(self, x, u):
        """dv/du at (x, u); exact identity for v(x, u) = u dictionaries."""
        return np.eye(self.c_u, self.m)

    def lift_pair(self, x, u):
        """Stacked observable ``[z(x); v(x, u)]`` of length c_x + c_u."""
        return np.concatenate([self.lift(x), self.lift_control(x, u)])

    def recover_state(self, z):
        """Leading-block inverse projection: the first n entries of z are x."""
        z = np.asarray(z, dtype=float)
        return z[: self.n]

    def terms(self):
        """Human-readable term list, serialized into run manifests."""
        raise NotImplementedError

    # -- sklearn surface ----------------------------------------------------
    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n:
            raise DimensionError(f"X must be (n_samples, {self.n})")
        return self

    def transform(self, X):
        """Lift a batch of states, shape (n_samples, n) -> (n_samples, c_x)."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n:
            raise DimensionError(f"X must be (n_samples, {self.n})")
        return np.stack([self._lift(row) for row in X])


class IdentityDictionary(Dictionary):
    """z(x) = x and v(x, u) = u; the lifted model is the plain linear model."""

    def __init__(self, n, m):
        self.n = int(n)
        self.m = int(m)
        self.c_x = self.n
        self.c_u = self.m

    def _lift(self, x):
        return x.copy()

    def terms(self):
        return [f"x{i}" for i in range(self.n)]


class VdpDictionary(Dictionary):
    """Van der Pol basis ``z = [x1, x2, x1^2, x2 x1^2]`` with v(u) = u."""

    n = 2
    m = 1
    c_x = 4
    c_u = 1

    def __init__(self):
        pass

    def _lift(self, x):
        x1, x2 = x
        return np.array([x1, x2, x1**2, x2 * x1**2])

    def terms(self):
        return ["x0", "x1", "x0^2", "x0^2*x1"]


class QuadcopterDictionary(Dictionary):
    """Quadcopter basis over the measurement ``[a_g, omega, v]``.

    ``z = [a_g, omega, v, g(v, omega)]`` with nine velocity cross terms and
    v(u) = u for the four rotors.  ``cross_terms="printed"`` uses
    ``v3 w3, v2 w3, v3 w1, v1 w3, v2 w1, v1 w2, w2 w3, w1 w3, w1 w2``
    (1-based indices); ``"symmetric"`` swaps the odd-one-out ``v3 w3`` for
    ``v3 w2``, which makes the list exactly the six off-diagonal v-w products
    (everything ``omega x v`` needs) plus the three omega pairs.
    """

    n = 9
    m = 4
    c_x = 18
    c_u = 4

    # (velocity index, omega index) pairs, 0-based, plus omega-omega pairs
    _VW_PRINTED = [(2, 2), (1, 2), (2, 0), (0, 2), (1, 0), (0, 1)]
    _VW_SYMMETRIC = [(2, 1), (1, 2), (2, 0), (0, 2), (1, 0), (0, 1)]
    _WW_PAIRS = [(1, 2), (0, 2), (0, 1)]

    def __init__(self, cross_terms="printed"):
        if cross_terms not in ("printed", "symmetric"):
            raise DimensionError("cross_terms must be 'printed' or 'symmetric'")
        self.cross_terms = cross_terms

    @property
    def _vw_pairs(self):
        return self._VW_PRINTED if self.cross_terms == "printed" else self._VW_SYMMETRIC

    def _lift(self, x):
        omega = x[3:6]
        vel = x[6:9]
        cross = [vel[i] * omega[j] for i, j in self._vw_pairs]
        cross += [omega[i] * omega[j] for i, j in self._WW_PAIRS]
        return np.concatenate([x, np.array(cross)])

    def terms(self):
        base = [f"ag{i}" for i in range(3)] + [f"w{i}" for i in range(3)] + \
            [f"v{i}" for i in range(3)]
        cross = [f"v{i}*w{j}" for i, j in self._vw_pairs]
        cross += [f"w{i}*w{j}" for i, j in self._WW_PAIRS]
        return base + cross


def monomial_exponents(n_dims, min_degree, max_degree, max_terms=None):
    """Exponent tuples over ``n_dims`` variables in graded-lexicographic order.

    Degrees run from ``min_degree`` to ``max_degree``; within one degree the
    order follows ``itertools.combinations_with_replacement``, which is
    deterministic.  ``max_terms`` truncates the list.
    """
    exps = []
    for degree in range(min_degree, max_degree + 1):
        for combo in itertools.combinations_with_replacement(range(n_dims), degree):
            e = [0] * n_dims
            for idx in combo:
                e[idx] += 1
            exps.append(tuple(e))
            if max_terms is not None and len(exps) == max_terms:
                return exps
    return exps


class MonomialGroup:
    """A block of monomials over selected state indices."""

    def __init__(self, dims, min_degree, max_degree, max_terms=None):
        self.dims = tuple(int(d) for d in dims)
        self.min_degree = int(min_degree)
        self.max_degree = int(max_degree)
        self.max_terms = max_terms
        if self.min_degree < 1:
            raise DimensionError("min_degree must be >= 1")
        if self.max_degree < self.min_degree:
            raise DimensionError("max_degree must be >= min_degree")
        self.exponents = monomial_exponents(
            len(self.dims), self.min_degree, self.max_degree, max_terms
        )

    def evaluate(self, x):
        sel = x[list(self.dims)]
        out = np.empty(len(self.exponents))
        for k, exp in enumerate(self.exponents):
            val = 1.0
            for e, xi in zip(exp, sel):
                if e:
                    val *= xi**e
            out[k] = val
        return out

    def term_names(self):
        names = []
        for exp in self.exponents:
            parts = []
            for e, d in zip(exp, self.dims):
                if e == 1:
                    parts.append(f"x{d}")
                elif e > 1:
                    parts.append(f"x{d}^{e}")
            names.append("*".join(parts))
        return names


class PolynomialDictionary(Dictionary):
    """Generic polynomial expansion ``z = [x, 1, monomials...]`` with v(u) = u.

    ``groups`` is a sequence of :class:`MonomialGroup`; a single group over
    ``dims`` with degrees ``1..order`` reproduces the plain expansion whose
    monomial count is C(d + order, order) - 1 for d selected dims.
    """

    def __init__(self, state_dim, control_dim, groups):
        self.n = int(state_dim)
        self.m = int(control_dim)
        self.c_u = self.m
        self.groups = list(groups)
        for g in self.groups:
            if any(d < 0 or d >= self.n for d in g.dims):
                raise DimensionError("monomial dims out of range")
        self.c_x = self.n + 1 + sum(len(g.exponents) for g in self.groups)

    def _lift(self, x):
        parts = [x, np.array([1.0])]
        parts += [g.evaluate(x) for g in self.groups]
        return np.concatenate(parts)

    def terms(self):
        names = [f"x{i}" for i in range(self.n)] + ["1"]
        for g in self.groups:
            names += g.term_names()
        return names


def poly_dictionary(state_dim, control_dim, dims, order):
    """Polynomial dictionary over the selected dims with degrees 1..order."""
    if order < 1:
        raise DimensionError("order must be >= 1")
    return PolynomialDictionary(
        state_dim, control_dim, [MonomialGroup(dims, 1, order)]
    )


def sprk_dictionary():
    """18-term planar-rover basis: state ``[x, y, xdot, ydot]``, 2 controls.

    ``z = [x, y, xdot, ydot, 1, monomials of (xdot, ydot)]`` where the
    monomial block takes the graded-lexicographic list of velocity monomials
    of total degree 2..6, capped at 13 terms so that c_x = 18.
    """
    return PolynomialDictionary(4, 2, [MonomialGroup((2, 3), 2, 6, max_terms=13)])


def sawyer_dictionary():
    """51-term 7-joint arm basis: 14 states, two capped monomial blocks.

    ``z = [x, 1, 18 joint-angle monomials, 18 joint-velocity monomials]``
    with each block the graded-lexicographic monomials of degree 2..6 over
    its seven coordinates, capped at 18 terms.
    """
    return PolynomialDictionary(
        14,
        7,
        [
            MonomialGroup(tuple(range(0, 7)), 2, 6, max_terms=18),
            MonomialGroup(tuple(range(7, 14)), 2, 6, max_terms=18),
        ],
    )
