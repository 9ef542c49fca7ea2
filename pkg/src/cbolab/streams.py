"""Counter-based random streams for reproducible particle simulations.

Every Gaussian draw is a pure function of (seed, stream id, particle index,
step index), so two simulations that share a seed see identical noise for
the same particle at the same step regardless of ensemble size, worker
count, or evaluation order.  That is exactly what the coupling experiments
need: an interacting run and a mean-field run can be driven by the same
Brownian increments without storing them.

The generator is a stateless hash (splitmix64 finalizer chains) feeding a
Box-Muller transform.  It is not a cryptographic RNG; it is a deterministic
Monte Carlo stream with good equidistribution at the scales used here.
"""

from __future__ import annotations

import numpy as np

# splitmix64 constants
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MULT1 = np.uint64(0xBF58476D1CE4E5B9)
_MULT2 = np.uint64(0x94D049BB133111EB)

# stream ids keep logically different draws (initial positions vs. dynamics)
# from ever colliding
STREAM_INIT = 0x1D
STREAM_DYNAMICS = 0x2E


def _mix(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer, vectorized over uint64 arrays (wrapping is intended)."""
    x = np.asarray(x).copy()
    x ^= x >> np.uint64(30)
    x *= _MULT1
    x ^= x >> np.uint64(27)
    x *= _MULT2
    x ^= x >> np.uint64(31)
    return x


def _words(seed: int, stream: int, step: int, particles: np.ndarray, slot: int) -> np.ndarray:
    """One 64-bit word per particle for counter (seed, stream, step, slot)."""
    with np.errstate(over="ignore"):
        base = _mix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + _GAMMA * np.uint64(stream))
        key = _mix(base + _GAMMA * np.uint64(step + 1))
        h = _mix(key + _GAMMA * (particles.astype(np.uint64) + np.uint64(1)))
        return _mix(h + _GAMMA * np.uint64(slot + 1))


def _uniform(words: np.ndarray) -> np.ndarray:
    """Map uint64 words to floats in the open interval (0, 1)."""
    return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def gaussians(seed: int, step: int, particles: np.ndarray, dim: int,
              stream: int = STREAM_DYNAMICS) -> np.ndarray:
    """Standard normal draws of shape (len(particles), dim).

    The draw for a given (seed, stream, step, particle, axis) is the same
    no matter how many particles are requested alongside it.
    """
    particles = np.asarray(particles)
    n = particles.shape[0]
    pairs = (dim + 1) // 2
    out = np.empty((n, 2 * pairs))
    for p in range(pairs):
        u1 = _uniform(_words(seed, stream, step, particles, 2 * p))
        u2 = _uniform(_words(seed, stream, step, particles, 2 * p + 1))
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out[:, 2 * p] = r * np.cos(theta)
        out[:, 2 * p + 1] = r * np.sin(theta)
    return out[:, :dim]


def initial_positions(seed: int, n: int, dim: int, center, spread: float) -> np.ndarray:
    """Gaussian cloud; position of particle i depends only on (seed, i).

    Growing n extends the ensemble without disturbing existing particles,
    which is what couples systems of different sizes to one another.
    """
    idx = np.arange(n)
    z = gaussians(seed, 0, idx, dim, stream=STREAM_INIT)
    return np.asarray(center, dtype=float) + spread * z


def derive_seed(seed: int, salt: int) -> int:
    """Child seed for an independent sub-experiment (e.g. repeated runs)."""
    with np.errstate(over="ignore"):
        word = _mix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ _GAMMA * np.uint64(salt + 17))
    return int(word)
