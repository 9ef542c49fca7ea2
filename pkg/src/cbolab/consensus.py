"""Numerically stable consensus points from ensembles and from densities.

The consensus point is the Gibbs-weighted average of positions with weights
exp(-alpha * f).  Both implementations shift the exponent by the minimum
sampled value before exponentiating, which changes nothing mathematically
(the weights are a ratio) and keeps every weight in (0, 1] for any alpha.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DomainError(ValueError):
    """Inputs outside an operation's domain (empty ensemble, NaN cost...)."""


class NumericalBreakdownError(RuntimeError):
    """A quadrature degenerated past the point of being trustworthy."""


@dataclass(frozen=True)
class ConsensusResult:
    point: np.ndarray
    log_normalizer: float          # log of the mean Gibbs weight
    effective_sample_fraction: float  # (sum w)^2 / (N sum w^2), in (0, 1]


def consensus_point(positions: np.ndarray, values: np.ndarray, alpha: float) -> ConsensusResult:
    """Gibbs-weighted average of an ensemble.

    positions has shape (N, d), values shape (N,).  All reductions are
    plain numpy sums (fixed pairwise order), so results are reproducible
    run to run and independent of worker count.
    """
    positions = np.asarray(positions, dtype=float)
    values = np.asarray(values, dtype=float)
    if positions.ndim != 2:
        raise DomainError(f"positions must be (N, d), got shape {positions.shape}")
    n = positions.shape[0]
    if n == 0:
        raise DomainError("consensus point of an empty ensemble")
    if values.shape != (n,):
        raise DomainError(f"values must have shape ({n},), got {values.shape}")
    if not np.all(np.isfinite(values)) or not np.all(np.isfinite(positions)):
        raise DomainError("non-finite entries in ensemble")
    if alpha < 0:
        raise DomainError(f"alpha must be >= 0, got {alpha}")

    fmin = float(values.min())
    w = np.exp(-alpha * (values - fmin))
    sw = float(w.sum())
    point = (w[:, None] * positions).sum(axis=0) / sw
    ess = sw**2 / (n * float(np.square(w).sum()))
    log_normalizer = float(np.log(sw / n)) - alpha * fmin
    return ConsensusResult(point=point, log_normalizer=log_normalizer,
                           effective_sample_fraction=ess)


def consensus_point_density(field, obj, alpha: float,
                            return_clamp_fraction: bool = False):
    """Consensus point of a density represented on a quadrature grid.

    `field` is any object exposing ``grid_values()`` (density samples),
    ``grid_points()`` (matching coordinates, shape (..., d)) and
    ``cell_volume``; the spectral fields of the PDE solver qualify.
    Negative density samples (spectral ringing) are clamped to zero for
    the weighting; if the clamped mass exceeds half of the total absolute
    mass the quadrature is meaningless and an error is raised.
    """
    rho = np.asarray(field.grid_values(), dtype=float)
    pts = field.grid_points()
    neg = np.minimum(rho, 0.0)
    pos = np.maximum(rho, 0.0)
    total_abs = float(np.sum(pos) - np.sum(neg))
    if total_abs <= 0.0:
        raise NumericalBreakdownError("density field has no mass on its grid")
    clamp_fraction = float(-np.sum(neg) / total_abs)
    if clamp_fraction > 0.5:
        raise NumericalBreakdownError(
            f"clamped {clamp_fraction:.1%} of the density mass; "
            "the field is no longer a usable density"
        )

    fvals = obj.eval(pts)
    fmin = float(fvals.min())
    w = np.exp(-alpha * (fvals - fmin)) * pos
    denom = float(w.sum())
    if denom <= 0.0:
        raise NumericalBreakdownError("all Gibbs weights vanished on the grid")
    point = np.tensordot(w, pts, axes=(tuple(range(w.ndim)), tuple(range(w.ndim)))) / denom
    if return_clamp_fraction:
        return point, clamp_fraction
    return point


def laplace_gap(positions: np.ndarray, values: np.ndarray, alpha: float, obj) -> float:
    """f(consensus point) minus the best sampled value.

    Shrinks toward zero as alpha grows; a diagnostic for how sharply the
    Gibbs weighting concentrates on the best particles, not a certified
    bound.
    """
    res = consensus_point(positions, values, alpha)
    return float(obj.eval(res.point[None, :])[0] - np.min(values))
