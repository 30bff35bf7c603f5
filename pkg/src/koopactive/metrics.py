"""Trajectory-tracking metrics: RMSE, Pearson correlation, phase lag."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import CorrelationUndefinedError, DimensionError


@dataclass
class TrackingReport:
    rmse: float
    pearson_r: float
    phase_lag: float  # radians in [0, 2*pi)
    p_value: float
    per_axis_rmse: np.ndarray
    per_axis_r: np.ndarray


def _as_series(a, name):
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be (n_samples,) or (n_samples, n_axes)")
    return arr


def tracking_metrics(reference, actual, base_frequency, ts) -> TrackingReport:
    """Compare an executed trajectory against its reference.

    Both series must share a uniform sampling interval ``ts`` and have at
    least 8 samples.  The phase lag is the circular cross-correlation peak of
    the zero-meaned, amplitude-normalized series, converted to radians of the
    base frequency (rad/s); it is invariant to amplitude scaling of either
    series.  The Pearson coefficient is averaged over axes and reported with
    the two-sided p-value of its t-statistic.

    A constant series on any axis leaves the correlation undefined and raises
    :class:`CorrelationUndefinedError` (missing is reported, never zero).
    """
    ref = _as_series(reference, "reference")
    act = _as_series(actual, "actual")
    if ref.shape != act.shape:
        raise DimensionError("reference and actual must have the same shape")
    n, axes = ref.shape
    if n < 8:
        raise DimensionError("need at least 8 samples")
    if ts <= 0.0 or base_frequency <= 0.0:
        raise DimensionError("ts and base_frequency must be positive")

    err = act - ref
    per_axis_rmse = np.sqrt(np.mean(err**2, axis=0))
    rmse = float(np.sqrt(np.mean(err**2)))

    ref_c = ref - ref.mean(axis=0)
    act_c = act - act.mean(axis=0)
    ref_sd = ref_c.std(axis=0)
    act_sd = act_c.std(axis=0)
    if np.any(ref_sd == 0.0) or np.any(act_sd == 0.0):
        raise CorrelationUndefinedError("constant series: correlation undefined")
    per_axis_r = np.array(
        [float(np.mean(ref_c[:, k] * act_c[:, k]) / (ref_sd[k] * act_sd[k]))
         for k in range(axes)]
    )
    pearson_r = float(np.mean(per_axis_r))
    r_clip = min(max(pearson_r, -0.999999999), 0.999999999)
    t_stat = r_clip * np.sqrt((n - 2) / (1.0 - r_clip**2))
    p_value = float(2.0 * stats.t.sf(abs(t_stat), df=n - 2))

    # circular cross-correlation of normalized series, summed over axes
    ref_n = ref_c / ref_sd
    act_n = act_c / act_sd
    scores = np.empty(n)
    for k in range(n):
        scores[k] = float(np.sum(act_n * np.roll(ref_n, k, axis=0)))
    shift = int(np.argmax(scores))
    phase_lag = float((shift * ts * base_frequency) % (2.0 * np.pi))

    return TrackingReport(
        rmse=rmse, pearson_r=pearson_r, phase_lag=phase_lag, p_value=p_value,
        per_axis_rmse=per_axis_rmse, per_axis_r=per_axis_r,
    )
