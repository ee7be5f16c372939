"""Trajectory containers and decay-rate fitting.

Fit-window rule (documented once, used everywhere): exponential fits use the
samples where the tracked norm lies in [lo, hi] * initial (defaults 1e-8 and
1e-2) and demand at least one e-fold of decay inside the window, with ties
broken toward later times so the asymptotic rate wins; algebraic fits use a
wider default window [1e-4, 0.3] * initial and at least one decade in t.
Residual = max deviation of the fit in log space (= max relative deviation).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import FitRejected, WindowEmpty

RESIDUAL_LIMIT = 0.1


@dataclass
class Trajectory:
    """Time series of named scalars (norms, invariants) plus optional sparse
    state snapshots."""

    times: np.ndarray
    series: dict
    snapshots: Optional[list] = None
    snapshot_times: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        for key, val in self.series.items():
            arr = np.asarray(val, dtype=float)
            if arr.shape != self.times.shape:
                raise ValueError(f"series {key!r} length mismatch")
            self.series[key] = arr

    def to_csv(self) -> str:
        """CSV with a t column plus one column per registered series."""
        keys = sorted(self.series)
        buf = io.StringIO()
        buf.write(",".join(["t"] + keys) + "\n")
        for i, t in enumerate(self.times):
            row = [f"{t:.12g}"] + [f"{self.series[k][i]:.12g}" for k in keys]
            buf.write(",".join(row) + "\n")
        return buf.getvalue()


@dataclass(frozen=True)
class DecayFit:
    """Fitted decay law: exponential (norm ~ C e^{-rate t}) or algebraic
    (norm ~ C t^{-rate}); residual is the max log-space deviation on the
    window and must stay below RESIDUAL_LIMIT for an accepted fit."""

    kind: str
    rate: float
    window: tuple
    residual: float
    n_samples: int = 0
    prefactor: float = 1.0

    def __post_init__(self):
        if self.kind not in ("exponential", "algebraic"):
            raise ValueError(f"unknown fit kind {self.kind!r}")


def _select_window(times, values, lo, hi, min_samples):
    values = np.asarray(values, dtype=float)
    times = np.asarray(times, dtype=float)
    v0 = values[0] if values[0] > 0 else np.max(values)
    if v0 <= 0:
        raise WindowEmpty("series identically zero")
    ok = (values > 0) & (values <= hi * v0) & (values >= lo * v0)
    idx = np.flatnonzero(ok)
    if len(idx) < min_samples:
        raise WindowEmpty(
            f"only {len(idx)} samples in [{lo:g}, {hi:g}] * initial (need {min_samples})"
        )
    # ties toward later times: keep the last contiguous run
    breaks = np.flatnonzero(np.diff(idx) > 1)
    if len(breaks):
        idx = idx[breaks[-1] + 1:]
        if len(idx) < min_samples:
            raise WindowEmpty("trailing window too short")
    return times[idx], values[idx]


def fit_exponential(times, values, lo: float = 1e-8, hi: float = 1e-2,
                    min_samples: int = 20, require_efolds: float = 1.0,
                    assert_ok: bool = True) -> DecayFit:
    """Least-squares slope of log(norm) vs t on the documented window."""
    ts, vs = _select_window(times, values, lo, hi, min_samples)
    span = math.log(vs[0] / vs[-1]) if vs[-1] > 0 else math.inf
    if span < require_efolds:
        raise WindowEmpty(f"window spans only {span:.2f} e-folds (need {require_efolds})")
    logv = np.log(vs)
    slope, intercept = np.polyfit(ts, logv, 1)
    resid = float(np.max(np.abs(logv - (slope * ts + intercept))))
    fit = DecayFit("exponential", rate=-float(slope), window=(float(ts[0]), float(ts[-1])),
                   residual=resid, n_samples=len(ts), prefactor=float(np.exp(intercept)))
    if assert_ok and resid > RESIDUAL_LIMIT:
        raise FitRejected(f"exponential fit residual {resid:.3f} > {RESIDUAL_LIMIT}")
    return fit


def fit_algebraic(times, values, lo: float = 1e-4, hi: float = 0.3,
                  min_samples: int = 20, require_decades: float = 1.0,
                  assert_ok: bool = True) -> DecayFit:
    """Least-squares slope of log(norm) vs log(t); rate is the positive
    algebraic exponent p in norm ~ t^{-p}."""
    ts, vs = _select_window(times, values, lo, hi, min_samples)
    ts = np.asarray(ts)
    pos = ts > 0
    ts, vs = ts[pos], vs[pos]
    if len(ts) < min_samples:
        raise WindowEmpty("too few positive-time samples")
    if math.log10(ts[-1] / ts[0]) < require_decades:
        raise WindowEmpty(
            f"window spans {math.log10(ts[-1] / ts[0]):.2f} decades in t "
            f"(need {require_decades})"
        )
    logt, logv = np.log(ts), np.log(vs)
    slope, intercept = np.polyfit(logt, logv, 1)
    resid = float(np.max(np.abs(logv - (slope * logt + intercept))))
    fit = DecayFit("algebraic", rate=-float(slope), window=(float(ts[0]), float(ts[-1])),
                   residual=resid, n_samples=len(ts), prefactor=float(np.exp(intercept)))
    if assert_ok and resid > RESIDUAL_LIMIT:
        raise FitRejected(f"algebraic fit residual {resid:.3f} > {RESIDUAL_LIMIT}")
    return fit
