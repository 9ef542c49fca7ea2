"""Quantitative checks of convergence behaviour from recorded trajectories.

Everything here is measurement: squared Wasserstein distance to a point
mass, exponential-rate fits of decay series, finite-difference speeds of a
consensus path, scaling-law fits of coupling errors, and repeated-run
success statistics.  The constants the theory leaves existential (decay
prefactors, mean-field constants) are never asserted, only the measurable
exponents and rates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .consensus import DomainError
from .particle import DivergenceError, run_optimization
from . import streams


@dataclass(frozen=True)
class DecaySeries:
    """Time-stamped positive scalars (a Lyapunov-style diagnostic)."""

    times: np.ndarray
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.shape != v.shape or t.ndim != 1:
            raise DomainError("times and values must be matching 1-d arrays")
        if np.any(np.diff(t) <= 0):
            raise DomainError("times must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise DomainError("series values must be finite")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)


def w2_to_dirac(positions: np.ndarray, v_star) -> float:
    """Squared 2-Wasserstein distance of an empirical measure to a point.

    Against a point mass the optimal coupling is forced, so this is just
    the mean squared distance to v_star.
    """
    positions = np.asarray(positions, dtype=float)
    if positions.ndim != 2 or positions.shape[0] < 1:
        raise DomainError("positions must be a nonempty (N, d) array")
    delta = positions - np.asarray(v_star, dtype=float)
    return float(np.mean(np.sum(np.square(delta), axis=1)))


def fit_exponential_rate(series: DecaySeries, window: tuple) -> tuple:
    """Least-squares decay rate of log(values) over a time window.

    Returns (rate, r_squared); rate is positive for decaying series.
    """
    t0, t1 = window
    sel = (series.times >= t0) & (series.times <= t1)
    if int(sel.sum()) < 4:
        raise DomainError("need at least 4 samples in the fit window")
    v = series.values[sel]
    if np.any(v <= 0.0):
        raise DomainError("nonpositive value inside the fit window")
    t = series.times[sel]
    y = np.log(v)
    coeffs = np.polyfit(t, y, 1)
    fit = np.polyval(coeffs, t)
    ss_res = float(np.sum((y - fit) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return -float(coeffs[0]), r2


@dataclass(frozen=True)
class PathSpeeds:
    speed_sup: float    # max |delta v| / delta t, bounded-derivative evidence
    holder_sup: float   # max |delta v| / sqrt(delta t), 1/2-Holder evidence
    sample_count: int


def consensus_path_speeds(times, points) -> PathSpeeds:
    """Finite-difference speeds of a sampled consensus path."""
    t = np.asarray(times, dtype=float)
    p = np.atleast_2d(np.asarray(points, dtype=float))
    if p.shape[0] != t.shape[0]:
        p = p.T
    if t.shape[0] < 3:
        raise DomainError("need at least 3 path samples")
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise DomainError("times must be strictly increasing")
    dv = np.linalg.norm(np.diff(p, axis=0), axis=1)
    return PathSpeeds(speed_sup=float(np.max(dv / dt)),
                      holder_sup=float(np.max(dv / np.sqrt(dt))),
                      sample_count=len(t))


@dataclass
class SuccessReport:
    runs: int
    epsilon: float
    hits: int
    fraction: float
    final_errors: list
    diverged_runs: list = field(default_factory=list)


def success_probability(obj, runs: int, epsilon: float, *, n_particles: int,
                        dt: float, lam: float, sigma: float, alpha: float,
                        horizon: float, seed: int, init_center,
                        init_spread: float = 1.0, workers: int = 1) -> SuccessReport:
    """Fraction of independent optimizations ending within epsilon of the
    known minimizer.  Each run derives its own seed, so the report is
    reproducible and independent of worker count; diverged runs count as
    misses and are flagged.
    """
    if runs < 1:
        raise DomainError("needs at least one run")
    v_star = obj.known_minimizer
    if v_star is None:
        raise DomainError("success probability needs a known minimizer")

    def one(run_index: int):
        run_seed = streams.derive_seed(seed, run_index)
        try:
            result = run_optimization(
                obj, n_particles=n_particles, dt=dt, lam=lam, sigma=sigma,
                alpha=alpha, horizon=horizon, seed=run_seed,
                init_center=init_center, init_spread=init_spread,
                record_every=0)
        except DivergenceError:
            return np.inf, True
        mean_final = result.final_positions.mean(axis=0)
        return float(np.linalg.norm(mean_final - v_star)), False

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(one, range(runs)))
    else:
        outcomes = [one(r) for r in range(runs)]

    final_errors = [e for e, _ in outcomes]
    diverged = [i for i, (_, bad) in enumerate(outcomes) if bad]
    hits = sum(1 for e, bad in outcomes if not bad and e <= epsilon)
    return SuccessReport(runs=runs, epsilon=epsilon, hits=hits,
                         fraction=hits / runs, final_errors=final_errors,
                         diverged_runs=diverged)


def mean_field_scaling_fit(rows: Sequence[tuple]) -> tuple:
    """Log-log slope of coupling error versus ensemble size.

    Zero-error rows (deterministic couplings) carry no scaling information
    and are dropped; fewer than 3 informative rows is an error.
    """
    ns = np.array([float(n) for n, _ in rows])
    errs = np.array([float(e) for _, e in rows])
    keep = errs > 0.0
    if int(keep.sum()) < 3:
        raise DomainError("need at least 3 nonzero error rows for a fit")
    slope, intercept = np.polyfit(np.log(ns[keep]), np.log(errs[keep]), 1)
    return float(slope), float(intercept)
