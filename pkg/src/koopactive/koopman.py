"""Data-driven estimation of the lifted linear operator.

The discrete operator is the least-squares solution ``K_d = A G^+`` built
from the running cross/Gram moments of snapshot pairs.  The continuous
operator is the scaled principal matrix logarithm of ``K_d``, with an
interval-subdivision fallback when the logarithm is ill-conditioned.  The
top block rows of the continuous operator give the control partition used by
the lifted dynamics ``zdot = K_x z + K_u v``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator

from .errors import (
    DataQualityError,
    DegenerateDataError,
    DimensionError,
    MatrixLogError,
)
from .validation import as_square_matrix, as_vector


class MomentAccumulator:
    """Running means of the cross moment A, Gram moment G and target energy.

    ``A = mean(z_next z_now^T)`` and ``G = mean(z_now z_now^T)`` over the M
    accumulated snapshot pairs.  The scalar mean of ``||z_next||^2`` is kept
    so the fit can report its residual without revisiting the data.  Updates
    are order-independent up to floating-point rounding.
    """

    def __init__(self, c):
        self.c = int(c)
        self.a = np.zeros((self.c, self.c))
        self.g = np.zeros((self.c, self.c))
        self.count = 0
        self.next_energy = 0.0

    def add(self, z_now, z_next):
        z_now = as_vector(z_now, self.c, "z_now")
        z_next = as_vector(z_next, self.c, "z_next")
        self.count += 1
        w = 1.0 / self.count
        self.a += w * (np.outer(z_next, z_now) - self.a)
        self.g += w * (np.outer(z_now, z_now) - self.g)
        self.next_energy += w * (float(z_next @ z_next) - self.next_energy)
        return self

    def add_batch(self, z_now, z_next):
        z_now = np.asarray(z_now, dtype=float)
        z_next = np.asarray(z_next, dtype=float)
        if z_now.shape != z_next.shape or z_now.ndim != 2 or z_now.shape[1] != self.c:
            raise DimensionError("batch shapes must be (M, c) and match")
        if not (np.all(np.isfinite(z_now)) and np.all(np.isfinite(z_next))):
            raise DataQualityError("batch contains non-finite samples")
        mb = z_now.shape[0]
        if mb == 0:
            return self
        a_b = z_next.T @ z_now / mb
        g_b = z_now.T @ z_now / mb
        e_b = float(np.mean(np.sum(z_next**2, axis=1)))
        total = self.count + mb
        w = mb / total
        self.a += w * (a_b - self.a)
        self.g += w * (g_b - self.g)
        self.next_energy += w * (e_b - self.next_energy)
        self.count = total
        return self

    def copy(self):
        out = MomentAccumulator(self.c)
        out.a = self.a.copy()
        out.g = self.g.copy()
        out.count = self.count
        out.next_energy = self.next_energy
        return out


def fit_discrete(moments: MomentAccumulator, ridge=1e-9, cutoff=1e-10,
                 complete_identity=True, ridge_relative=0.0):
    """Least-squares discrete operator from accumulated moments.

    Solves ``K_d = A (G + ridge I)^+`` through the eigendecomposition of the
    symmetric Gram matrix, dropping eigenvalues below ``cutoff`` times the
    largest.  Returns ``(k_d, residual)`` where the residual is the RMS
    one-step error implied by the moments.

    ``ridge_relative`` adds a Tikhonov term scaled by the largest Gram
    eigenvalue; online learners use it to shrink weakly-excited coefficients
    toward zero instead of letting the pseudoinverse extrapolate them.

    With ``complete_identity`` (default), directions the data has not excited
    act as the identity: a one-sampling-interval map is within O(ts) of the
    identity, so persistence is the neutral completion and it keeps the
    principal matrix logarithm well-defined.  The plain pseudoinverse would
    zero those directions instead.
    """
    if moments.count < 1:
        raise DegenerateDataError("no snapshot pairs accumulated")
    g_sym = 0.5 * (moments.g + moments.g.T)
    if ridge_relative:
        ridge = ridge + ridge_relative * float(np.linalg.eigvalsh(g_sym).max())
    g = g_sym + ridge * np.eye(moments.c)
    eigval, eigvec = np.linalg.eigh(g)
    top = eigval.max()
    if top <= 0.0:
        raise DegenerateDataError("Gram moment is identically zero")
    keep = eigval > cutoff * top
    inv = np.zeros_like(eigval)
    inv[keep] = 1.0 / eigval[keep]
    g_pinv = (eigvec * inv) @ eigvec.T
    k_d = moments.a @ g_pinv
    if complete_identity and not np.all(keep):
        cut = eigvec[:, ~keep]
        k_d = k_d + cut @ cut.T
    # RMS residual from moments: E||z' - K z||^2 = E||z'||^2 - 2 tr(K A^T) + tr(K G K^T)
    quad = moments.next_energy - 2.0 * np.trace(k_d @ moments.a.T) \
        + np.trace(k_d @ moments.g @ k_d.T)
    residual = float(np.sqrt(max(quad, 0.0)))
    return k_d, residual


_LOG_EIG_TOL = 1e-12


def _principal_log_ok(mat):
    """Principal log/sqrt exists iff no eigenvalue sits on the closed negative reals."""
    eig = np.linalg.eigvals(mat)
    scale = max(1.0, float(np.abs(eig).max()))
    for lam in eig:
        if abs(lam) < _LOG_EIG_TOL * scale:
            return False
        if lam.real < 0.0 and abs(lam.imag) <= _LOG_EIG_TOL * scale:
            return False
    return True


def to_continuous(k_d, ts, max_subdivision=8, roundtrip_tol=1e-8):
    """Continuous operator ``K_c = log(K_d) / ts`` via the principal logarithm.

    When the principal log is undefined or poorly conditioned, the sampling
    interval is subdivided: ``K_c = k log(K_d^(1/k)) / ts`` using repeated
    principal square roots for k in {2, 4, 8} up to ``max_subdivision``.
    The result is accepted only if ``exp(K_c ts)`` reproduces ``K_d`` within
    ``roundtrip_tol`` (Frobenius, relative above unit norm).
    """
    k_d = as_square_matrix(k_d, name="k_d")
    if ts <= 0.0:
        raise DimensionError("ts must be positive")
    tol = roundtrip_tol * max(1.0, float(np.linalg.norm(k_d, "fro")))
    subdivisions = [k for k in (1, 2, 4, 8) if k <= max_subdivision]
    last_error = None
    for k in subdivisions:
        try:
            root = k_d
            for _ in range(int(np.log2(k))):
                if not _principal_log_ok(root):
                    raise MatrixLogError("eigenvalue on the closed negative real axis")
                root = scipy.linalg.sqrtm(root)
                if np.iscomplexobj(root):
                    if np.abs(root.imag).max() > 1e-8 * max(1.0, np.abs(root.real).max()):
                        raise MatrixLogError("square root left the real matrices")
                    root = root.real
            if not _principal_log_ok(root):
                raise MatrixLogError("eigenvalue on the closed negative real axis")
            log_root = scipy.linalg.logm(root)
        except (MatrixLogError, ValueError, scipy.linalg.LinAlgError) as err:
            last_error = err
            continue
        if np.iscomplexobj(log_root):
            if np.abs(log_root.imag).max() > 1e-8 * max(1.0, np.abs(log_root.real).max()):
                last_error = MatrixLogError("logarithm is not real")
                continue
            log_root = log_root.real
        k_c = k * log_root / ts
        if not np.all(np.isfinite(k_c)):
            last_error = MatrixLogError("logarithm is not finite")
            continue
        err = np.linalg.norm(scipy.linalg.expm(k_c * ts) - k_d, "fro")
        if err <= tol:
            return k_c
        last_error = MatrixLogError(f"round-trip error {err:.3e} above tolerance")
    raise MatrixLogError(
        f"matrix logarithm undefined after subdivision fallback: {last_error}"
    )


def partition(k_c, c_x, c_u):
    """Split the top block rows of a (c_x+c_u) square operator.

    Returns ``(K_x, K_u)``; the bottom rows (the evolution of the control
    observables) are discarded.
    """
    k_c = as_square_matrix(k_c, name="k")
    c_x, c_u = int(c_x), int(c_u)
    if c_x + c_u != k_c.shape[0] or c_x < 1 or c_u < 0:
        raise DimensionError(
            f"partition sizes ({c_x}, {c_u}) do not match operator {k_c.shape}"
        )
    return k_c[:c_x, :c_x].copy(), k_c[:c_x, c_x:].copy()


@dataclass(frozen=True)
class KoopmanModel:
    """Immutable snapshot of a fitted (or initialized) lifted linear model."""

    k_d: np.ndarray
    k_c: np.ndarray
    k_x: np.ndarray
    k_u: np.ndarray
    ts: float
    c_x: int
    c_u: int
    residual: float = float("nan")

    @property
    def c(self):
        return self.c_x + self.c_u

    def predict(self, z, v):
        """Lifted state derivative ``zdot = K_x z + K_u v``."""
        z = as_vector(z, self.c_x, "z")
        v = as_vector(v, self.c_u, "v")
        return self.k_x @ z + self.k_u @ v

    @classmethod
    def from_discrete(cls, k_d, ts, c_x, c_u, residual=float("nan"),
                      max_subdivision=8):
        k_d = as_square_matrix(k_d, n=c_x + c_u, name="k_d")
        k_c = to_continuous(k_d, ts, max_subdivision=max_subdivision)
        k_x, k_u = partition(k_c, c_x, c_u)
        return cls(k_d=k_d, k_c=k_c, k_x=k_x, k_u=k_u, ts=float(ts),
                   c_x=int(c_x), c_u=int(c_u), residual=float(residual))

    @classmethod
    def from_continuous(cls, k_c, ts, c_x, c_u, residual=float("nan")):
        k_c = as_square_matrix(k_c, n=c_x + c_u, name="k_c")
        k_d = scipy.linalg.expm(k_c * ts)
        k_x, k_u = partition(k_c, c_x, c_u)
        return cls(k_d=k_d, k_c=k_c, k_x=k_x, k_u=k_u, ts=float(ts),
                   c_x=int(c_x), c_u=int(c_u), residual=float(residual))

    @classmethod
    def random_init(cls, rng, c_x, c_u, ts, sigma=1.0):
        """Zero-mean normal initialization with entrywise std ``sigma``.

        The draw seeds the continuous operator; the discrete operator is its
        exponential, so the pair is always log-consistent.
        """
        c = int(c_x) + int(c_u)
        k_c = sigma * rng.standard_normal((c, c))
        return cls.from_continuous(k_c, ts, c_x, c_u)


class KoopmanEdmd(BaseEstimator):
    """sklearn-style estimator for the lifted operator.

    ``fit(X, y)`` consumes snapshot pairs: row i of ``X`` is the stacked
    observable ``[z; v]`` at one sample and row i of ``y`` the observable one
    sampling interval later.  ``partial_fit`` accumulates pairs into the
    moment means and refits, matching the batch solution to rounding.

    Parameters
    ----------
    c_x, c_u : int
        Lifted state / control-observable dimensions.
    ts : float
        Sampling interval of the snapshot pairs.
    ridge : float
        Tikhonov term added to the Gram moment before inversion.
    cutoff : float
        Relative eigenvalue cutoff of the pseudoinverse.
    """

    def __init__(self, c_x, c_u, ts, ridge=1e-9, cutoff=1e-10, max_subdivision=8,
                 ridge_relative=0.0):
        self.c_x = c_x
        self.c_u = c_u
        self.ts = ts
        self.ridge = ridge
        self.cutoff = cutoff
        self.max_subdivision = max_subdivision
        self.ridge_relative = ridge_relative

    @property
    def c(self):
        return self.c_x + self.c_u

    def _refit(self, strict=True):
        k_d, residual = fit_discrete(self.moments_, self.ridge, self.cutoff,
                                     ridge_relative=self.ridge_relative)
        self.koopman_d_ = k_d
        self.residual_ = residual
        try:
            self.model_ = KoopmanModel.from_discrete(
                k_d, self.ts, self.c_x, self.c_u, residual=residual,
                max_subdivision=self.max_subdivision,
            )
        except MatrixLogError:
            # streaming callers tolerate a transiently un-loggable estimate
            if strict:
                raise
            self.model_ = None
        return self

    def fit(self, X, y):
        self.moments_ = MomentAccumulator(self.c)
        self.moments_.add_batch(X, y)
        return self._refit()

    def fit_moments(self, moments: MomentAccumulator):
        """Fit directly from an externally accumulated moment pair."""
        if moments.c != self.c:
            raise DimensionError("moment dimension does not match the estimator")
        self.moments_ = moments
        return self._refit()

    def partial_fit(self, X, y):
        if not hasattr(self, "moments_"):
            self.moments_ = MomentAccumulator(self.c)
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        self.moments_.add_batch(X, y)
        return self._refit(strict=False)

    def predict(self, X):
        """One-step discrete prediction of stacked observables."""
        X = np.asarray(X, dtype=float)
        return X @ self.koopman_d_.T


# --- plain-text serialization -------------------------------------------

def model_to_text(model: KoopmanModel) -> str:
    """Serialize a model to the text format used in run manifests.

    Header lines give dimensions, sampling interval and residual; each matrix
    follows as a name line and row-major rows of decimal floats.
    """
    lines = [
        "koopman-model 1",
        f"c_x {model.c_x}",
        f"c_u {model.c_u}",
        f"ts {model.ts!r}",
        f"residual {model.residual!r}",
    ]
    for name, mat in (("K_d", model.k_d), ("K_c", model.k_c)):
        lines.append(f"{name} {mat.shape[0]} {mat.shape[1]}")
        for row in mat:
            lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def model_from_text(text: str) -> KoopmanModel:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("koopman-model"):
        raise ValueError("not a koopman-model text block")
    header = {}
    idx = 1
    while idx < len(lines) and lines[idx].split()[0] in ("c_x", "c_u", "ts", "residual"):
        key, value = lines[idx].split(maxsplit=1)
        header[key] = value
        idx += 1
    mats = {}
    while idx < len(lines):
        name, rows, cols = lines[idx].split()
        rows, cols = int(rows), int(cols)
        block = lines[idx + 1: idx + 1 + rows]
        mats[name] = np.array([[float(v) for v in ln.split()] for ln in block])
        if mats[name].shape != (rows, cols):
            raise ValueError(f"matrix {name} has inconsistent shape")
        idx += 1 + rows
    c_x, c_u = int(header["c_x"]), int(header["c_u"])
    k_x, k_u = partition(mats["K_c"], c_x, c_u)
    return KoopmanModel(
        k_d=mats["K_d"], k_c=mats["K_c"], k_x=k_x, k_u=k_u,
        ts=float(header["ts"]), c_x=c_x, c_u=c_u,
        residual=float(header["residual"]),
    )
