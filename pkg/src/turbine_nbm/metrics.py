"""Accuracy metrics, residual statistics and residual-based anomaly detection."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


def _pair(pred, obs):
    pred = np.asarray(pred, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64)
    if pred.shape != obs.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs obs {obs.shape}")
    if pred.ndim == 1:
        pred, obs = pred[:, None], obs[:, None]
    return pred, obs


def residual_series(pred, obs) -> np.ndarray:
    """Observed minus predicted, row order preserved."""
    pred, obs = _pair(pred, obs)
    return obs - pred


def rmse_per_target(pred, obs) -> np.ndarray:
    pred, obs = _pair(pred, obs)
    if pred.shape[0] == 0:
        raise ValueError("RMSE of an empty sample")
    return np.sqrt(((pred - obs) ** 2).mean(axis=0))


def global_rmse(pred, obs) -> float:
    """Root of the squared residual pooled over every row and every target."""
    pred, obs = _pair(pred, obs)
    if pred.size == 0:
        raise ValueError("RMSE of an empty sample")
    return float(np.sqrt(((pred - obs) ** 2).mean()))


@dataclass(frozen=True)
class EvalReport:
    per_target: tuple
    global_rmse: float
    s: int
    target_labels: tuple = ()
    family: str = ""


def evaluate(pred, obs, target_labels=(), family="") -> EvalReport:
    per = rmse_per_target(pred, obs)
    return EvalReport(tuple(per.tolist()), global_rmse(pred, obs), int(np.shape(pred)[0]),
                      tuple(target_labels), family)


def quantile(sample, p):
    """Quantile with order statistic ``i`` (1-based) placed at ``(i - 0.5) / N``.

    Between plotting positions the value is linearly interpolated; outside
    them it is clamped to the extreme order statistics.
    """
    x = np.sort(np.asarray(sample, dtype=np.float64).reshape(-1))
    if x.size == 0:
        raise ValueError("quantile of an empty sample")
    pos = np.clip(x.size * np.asarray(p, dtype=np.float64) - 0.5, 0.0, x.size - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, x.size - 1)
    frac = pos - lo
    return x[lo] + frac * (x[hi] - x[lo])


def qq_pairs(a, b, q: int = 100) -> np.ndarray:
    """``(q, 2)`` array of matched quantiles at ``p = (i + 0.5) / q``."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.size == 0 or b.size == 0:
        raise ValueError("qq_pairs needs two non-empty samples")
    if q < 2 or a.size < q or b.size < q:
        raise ValueError(f"need 2 <= q <= sample sizes, got q={q}, sizes {a.size}, {b.size}")
    p = (np.arange(q) + 0.5) / q
    return np.column_stack([quantile(a, p), quantile(b, p)])


@dataclass(frozen=True)
class ResidualStats:
    mean: np.ndarray
    std: np.ndarray
    zero_variance: tuple = ()


def fit_residual_stats(residuals) -> ResidualStats:
    """Per-target mean and population std of fault-free reference residuals."""
    R = np.asarray(residuals, dtype=np.float64)
    if R.ndim == 1:
        R = R[:, None]
    if R.shape[0] == 0:
        raise ValueError("reference residuals are empty")
    mean = R.mean(axis=0)
    std = np.sqrt(((R - mean) ** 2).mean(axis=0))
    zero = std == 0
    if zero.any():
        warnings.warn("zero-variance residual column(s): std set to 1", RuntimeWarning, stacklevel=2)
        std = np.where(zero, 1.0, std)
    return ResidualStats(mean, std, tuple(zero.tolist()))


class AnomalyEvent(NamedTuple):
    target: int
    start: int
    end: int  # inclusive
    peak_z: float
    mean_z: float

    @property
    def length(self):
        return self.end - self.start + 1


def zscores(residuals, stats: ResidualStats) -> np.ndarray:
    R = np.asarray(residuals, dtype=np.float64)
    if R.ndim == 1:
        R = R[:, None]
    return (R - stats.mean) / stats.std


def flagged_rows(residuals, stats: ResidualStats, tau=3.0, w=6) -> np.ndarray:
    """Boolean ``(s, n)`` mask of rows that belong to a detected event."""
    mask = np.zeros(np.shape(zscores(residuals, stats)), dtype=bool)
    for ev in detect_anomalies(residuals, stats, tau, w):
        mask[ev.start:ev.end + 1, ev.target] = True
    return mask


def detect_anomalies(residuals, stats: ResidualStats, tau: float = 3.0, w: int = 6):
    """Runs of at least ``w`` consecutive rows with ``|z| > tau``, per target."""
    if tau <= 0 or w < 1:
        raise ValueError("need tau > 0 and w >= 1")
    absz = np.abs(zscores(residuals, stats))
    events = []
    for j in range(absz.shape[1]):
        hot = np.concatenate([[False], absz[:, j] > tau, [False]])
        edges = np.flatnonzero(hot[1:] != hot[:-1])
        for start, stop in zip(edges[::2], edges[1::2]):
            if stop - start >= w:
                seg = absz[start:stop, j]
                events.append(AnomalyEvent(j, int(start), int(stop - 1), float(seg.max()),
                                           float(seg.mean())))
    return events
