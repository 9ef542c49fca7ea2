"""Pseudospectral solver for drift-diffusion densities on a periodic box.

The density lives on the box [-L, L]^d (d = 1 or 2) identified as a torus
and is represented by its Fourier coefficients up to |k| <= K per axis.
Nonlinear terms (variable-coefficient products) are evaluated on an M-point
collocation grid per axis and projected back onto the retained modes; with
M >= 4K the retained modes of a product of two resolved fields are free of
aliasing (the usual two-thirds-style truncation with extra margin).

Three right-hand sides are supported:

* ``gradient``    drho/dt = div(G grad rho) + <J, grad rho> + rho + g
* ``divergence``  drho/dt = div(G grad rho) - div(J rho) + rho + g
* ``cbo``         drho/dt = div(G grad rho) + 3 <J, grad rho> + 3 d rho,
                  with G = |v - v_a(t)|^2 and J = v - v_a(t)

The cbo form is the consensus dynamics density equation rewritten so the
diffusion appears under a divergence; ``cbo_divergence_rhs`` assembles the
original conservation form div((v - v_a) rho) + Lap(|v - v_a|^2 rho)
directly so the two pseudospectral routes can be compared.

Coefficients always pass through the cutoff module's truncation, so runs
where the shell and plateau are placed outside the box solve the raw
equation, while runs with active cutoffs solve the periodized one.

Time stepping is classical RK4 guarded by dt <= c_cfl / (max G * |kmax|^2);
for stiff production runs an s-stage Runge-Kutta-Chebyshev method (second
order, damped) is available whose stability interval grows like 0.65 s^2,
with the same spectral-radius estimate deciding the stage count.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field as dataclass_field
from typing import Callable, Optional

import numpy as np
import scipy.fft as sfft

from .consensus import DomainError, NumericalBreakdownError
from .cutoffs import (CoefficientField, CutoffSpec, smooth_step,
                      truncated_G, truncated_J, truncated_source)
from .objectives import ConfigurationError, Objective


# ---------------------------------------------------------------------------
# spectral fields


@dataclass
class SpectralField:
    """Truncated Fourier representation of a real density.

    `data` holds the numpy rfft layout of the M-point grid samples (shape
    (M//2+1,) in 1D, (M, M//2+1) in 2D) with every mode beyond |k| <= K
    zeroed.  Conjugate symmetry is inherited from the rfft layout, so the
    represented density is real by construction.
    """

    dim: int
    box: float       # half-width L
    modes: int       # K, largest retained |k| per axis
    grid: int        # M, collocation points per axis
    data: np.ndarray

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ConfigurationError(f"dim must be 1 or 2, got {self.dim}")
        if self.grid < 4 * self.modes:
            raise ConfigurationError(
                f"grid M={self.grid} must be at least 4K={4 * self.modes}")

    # -- constructors ------------------------------------------------------

    @staticmethod
    def zeros(dim: int, box: float, modes: int, grid: int) -> "SpectralField":
        shape = (grid // 2 + 1,) if dim == 1 else (grid, grid // 2 + 1)
        return SpectralField(dim, box, modes, grid, np.zeros(shape, dtype=complex))

    @staticmethod
    def from_grid(values: np.ndarray, box: float, modes: int) -> "SpectralField":
        values = np.asarray(values, dtype=float)
        dim = values.ndim
        grid = values.shape[0]
        data = sfft.rfftn(values)
        f = SpectralField(dim, box, modes, grid, data)
        f.data *= _mode_mask(dim, modes, grid)
        return f

    def copy(self) -> "SpectralField":
        return SpectralField(self.dim, self.box, self.modes, self.grid,
                             self.data.copy())

    # -- geometry ----------------------------------------------------------

    @property
    def cell_volume(self) -> float:
        return (2.0 * self.box / self.grid) ** self.dim

    def axis_points(self) -> np.ndarray:
        return -self.box + 2.0 * self.box * np.arange(self.grid) / self.grid

    def grid_points(self) -> np.ndarray:
        x = self.axis_points()
        if self.dim == 1:
            return x[:, None]
        return np.stack(np.meshgrid(x, x, indexing="ij"), axis=-1)

    # -- transforms --------------------------------------------------------

    def grid_values(self) -> np.ndarray:
        return sfft.irfftn(self.data, s=(self.grid,) * self.dim)

    @property
    def coefficients(self) -> np.ndarray:
        """Coefficients of exp(i pi k v / L), indexed k = -K..K per axis."""
        full = _pad_to_full(self.data, self.grid, self.dim)
        k = np.fft.fftfreq(self.grid, d=1.0 / self.grid).astype(int)
        order = np.argsort(k)
        sel = (np.abs(np.sort(k)) <= self.modes)
        phase1 = (-1.0) ** np.sort(k)[sel]
        if self.dim == 1:
            cent = full[order][sel] * phase1 / self.grid
            return cent
        cent = full[np.ix_(order, order)][np.ix_(sel, sel)]
        return cent * np.outer(phase1, phase1) / self.grid**2

    def mass(self) -> float:
        """Integral of the density: the k = 0 coefficient times (2L)^d."""
        flat = self.data if self.dim == 1 else self.data[0]
        return float(flat[0].real) * (2.0 * self.box) ** self.dim / self.grid ** self.dim


def _pad_to_full(data, grid, dim):
    """rfft layout -> full fft layout (used only by the slow accessor)."""
    if dim == 1:
        full = np.zeros(grid, dtype=complex)
        full[: grid // 2 + 1] = data
        full[grid // 2 + 1:] = np.conj(data[1: grid // 2][::-1])
        return full
    full = np.zeros((grid, grid), dtype=complex)
    full[:, : grid // 2 + 1] = data
    rows = (-np.arange(grid)) % grid
    cols = np.arange(grid // 2 + 1, grid)
    full[:, cols] = np.conj(data[rows][:, (-cols) % grid])
    return full


@functools.lru_cache(maxsize=32)
def _layout(dim: int, grid: int, box: float):
    """Cached per-layout arrays: integer modes, wavenumbers along each axis."""
    k_full = np.fft.fftfreq(grid, d=1.0 / grid).astype(int)
    k_half = np.arange(grid // 2 + 1)
    scale = np.pi / box
    if dim == 1:
        kappa = (scale * k_half,)
        modes_abs = (np.abs(k_half),)
    else:
        kappa = (scale * k_full[:, None], scale * k_half[None, :])
        modes_abs = (np.abs(k_full)[:, None], np.abs(k_half)[None, :])
    return kappa, modes_abs


@functools.lru_cache(maxsize=32)
def _mode_mask(dim: int, modes: int, grid: int) -> np.ndarray:
    _, modes_abs = _layout(dim, grid, 1.0)
    if dim == 1:
        return (modes_abs[0] <= modes).astype(float)
    return ((modes_abs[0] <= modes) & (modes_abs[1] <= modes)).astype(float)


# ---------------------------------------------------------------------------
# problems


@dataclass
class PDEProblem:
    """Equation form, coefficients, and solver policy for one run.

    For the cbo form the coefficients are generated from the consensus
    point: either a frozen path t -> v_a(t), or self-consistently from the
    current density via Gibbs weighting of the objective (`valpha_mode` =
    "self_consistent", re-evaluated at every integrator stage).
    """

    form: str                                   # gradient | divergence | cbo
    cutoff: CutoffSpec
    coefficients: Optional[CoefficientField] = None
    objective: Optional[Objective] = None
    alpha: float = 0.0
    valpha_mode: str = "frozen"
    valpha_path: Optional[Callable[[float], np.ndarray]] = None
    integrator: str = "rk4"                     # rk4 | rkc
    c_cfl: float = 2.78
    rkc_damping: float = 2.0 / 13.0
    rkc_stages: Optional[int] = None            # None: choose from stability
    # cbo assembly route: "gradient" rewrites the diffusion under a single
    # divergence (the rewritten form); "divergence" assembles the original
    # conservation form div(J rho) + Lap(G rho), whose k=0 mode is exactly
    # constant, so mass is conserved to rounding no matter what the box
    # boundary does.  The two agree to dealiasing accuracy on resolved
    # fields (that agreement is itself a tested property).
    cbo_assembly: str = "gradient"
    _workspace: object = dataclass_field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.form not in ("gradient", "divergence", "cbo"):
            raise ConfigurationError(f"unknown equation form {self.form!r}")
        if self.valpha_mode not in ("frozen", "self_consistent"):
            raise ConfigurationError(f"unknown valpha mode {self.valpha_mode!r}")
        if self.integrator not in ("rk4", "rkc"):
            raise ConfigurationError(f"unknown integrator {self.integrator!r}")
        if self.cbo_assembly not in ("gradient", "divergence"):
            raise ConfigurationError(f"unknown cbo assembly {self.cbo_assembly!r}")
        if self.form == "cbo":
            if self.valpha_mode == "frozen" and self.valpha_path is None:
                raise ConfigurationError("frozen cbo form needs a consensus path")
            if self.valpha_mode == "self_consistent" and self.objective is None:
                raise ConfigurationError("self-consistent cbo form needs an objective")
        elif self.coefficients is None:
            raise ConfigurationError(f"{self.form} form needs a coefficient field")


class _Workspace:
    """Static grids and cached coefficient evaluations for one field layout."""

    def __init__(self, problem: PDEProblem, f: SpectralField):
        self.dim, self.box, self.modes, self.grid = f.dim, f.box, f.modes, f.grid
        self.kappa, _ = _layout(f.dim, f.grid, f.box)
        self.mask = _mode_mask(f.dim, f.modes, f.grid)
        # fused multipliers for the hot assembly path
        self.masked_ikappa = [1j * k * self.mask for k in self.kappa]
        self.kappa_sq = sum(k**2 for k in self.kappa)
        self.points = f.grid_points()
        self.coords = tuple(self.points[..., j] for j in range(f.dim))
        self.radius = np.linalg.norm(self.points, axis=-1)
        self.radius_sq = self.radius**2
        self.cell = f.cell_volume
        spec = problem.cutoff
        self.shell = spec.shell(self.radius)
        self.plateau = spec.radial_plateau(self.radius)
        self.plateau_sq = self.plateau**2
        self.source_taper = 1.0 - smooth_step(self.radius - spec.plateau_scale,
                                              spec.h_table)
        # truncation entirely inactive on this box: the common production case
        self.truncation_inactive = (float(self.shell.max()) == 0.0
                                    and float(self.plateau.min()) == 1.0)
        self.shell_ratio = spec.shell_radius / np.maximum(self.radius, 0.5)
        if problem.form == "cbo" and problem.valpha_mode == "self_consistent":
            fv = problem.objective.eval(self.points)
            self.gibbs = np.exp(-problem.alpha * (fv - float(fv.min())))
        else:
            self.gibbs = None
        self._coeff_key = None
        self._coeff_val = None

    def consensus_from_grid(self, rho_grid: np.ndarray) -> np.ndarray:
        """Consensus point by quadrature against cached Gibbs weights."""
        pos = np.maximum(rho_grid, 0.0)
        neg_mass = float(np.sum(pos) - np.sum(rho_grid))
        total_abs = float(np.sum(pos)) + neg_mass
        if total_abs <= 0.0:
            raise NumericalBreakdownError("density lost all its mass")
        if neg_mass / total_abs > 0.5:
            raise NumericalBreakdownError(
                "more than half the density mass is negative ringing")
        w = self.gibbs * pos
        denom = float(w.sum())
        if denom <= 0.0:
            raise NumericalBreakdownError("Gibbs weights vanished on the grid")
        return np.array([float((w * c).sum()) / denom for c in self.coords])

    def cbo_coefficient_grids(self, vbar: np.ndarray):
        """(G_trunc, [J_trunc per axis]) grids for G = |v - vbar|^2."""
        key = ("cbo", tuple(np.round(vbar, 15)))
        if self._coeff_key == key:
            return self._coeff_val
        dot = sum(c * vb for c, vb in zip(self.coords, vbar))
        vv = float(np.dot(vbar, vbar))
        g_raw = self.radius_sq - 2.0 * dot + vv
        j_raw = [c - vb for c, vb in zip(self.coords, vbar)]
        if self.truncation_inactive:
            gi, ji = g_raw, j_raw
        else:
            r_shell = self.shell_ratio
            g_proj = (r_shell**2) * self.radius_sq - 2.0 * r_shell * dot + vv
            s = self.shell
            gbar = g_raw * (1.0 - s) + (1.0 + g_proj) * s
            amp = np.sqrt(g_proj + 1.0)
            jbar = [j * (1.0 - s) + amp * s for j in j_raw]
            gi = self.plateau_sq * gbar
            ji = [self.plateau * j for j in jbar]
        self._coeff_key, self._coeff_val = key, (gi, ji)
        return gi, ji

    def general_coefficient_grids(self, coeffs: CoefficientField,
                                  spec: CutoffSpec, t: float):
        key = ("gen", t)
        if self._coeff_key == key:
            return self._coeff_val
        gi = truncated_G(coeffs, spec, self.points, t)
        ji_vec = truncated_J(coeffs, spec, self.points, t)
        ji = [ji_vec[..., j] for j in range(self.dim)]
        gsrc = truncated_source(coeffs, spec, self.points, t)
        self._coeff_key, self._coeff_val = key, (gi, ji, gsrc)
        return gi, ji, gsrc


def _workspace(problem: PDEProblem, f: SpectralField) -> _Workspace:
    ws = problem._workspace
    if (ws is None or ws.dim != f.dim or ws.grid != f.grid
            or ws.modes != f.modes or ws.box != f.box):
        ws = _Workspace(problem, f)
        problem._workspace = ws
    return ws


def _consensus_at(problem: PDEProblem, ws: _Workspace, t: float,
                  rho_grid: Optional[np.ndarray]) -> np.ndarray:
    if problem.valpha_mode == "frozen":
        return np.asarray(problem.valpha_path(t), dtype=float)
    return ws.consensus_from_grid(rho_grid)


# ---------------------------------------------------------------------------
# right-hand sides


def rhs(f: SpectralField, problem: PDEProblem, t: float) -> SpectralField:
    """Time derivative of the field under the problem's equation form.

    Pseudospectral assembly: spatial derivatives of the density are taken
    in mode space (exact for the retained modes), coefficient products are
    formed on the M-grid, and the result is projected back onto |k| <= K.
    """
    if problem.form == "cbo" and problem.cbo_assembly == "divergence":
        return cbo_divergence_rhs(f, problem, t)
    ws = _workspace(problem, f)
    kappa, mask = ws.kappa, ws.mask
    d = f.dim
    grad_hat = [1j * kappa[j] * f.data for j in range(d)]
    grad = [sfft.irfftn(gh, s=(f.grid,) * d) for gh in grad_hat]

    if problem.form == "cbo":
        need_rho = problem.valpha_mode == "self_consistent"
        rho = sfft.irfftn(f.data, s=(f.grid,) * d) if need_rho else None
        vbar = _consensus_at(problem, ws, t, rho)
        gi, ji = ws.cbo_coefficient_grids(vbar)
        drift = ji[0] * grad[0]
        for j in range(1, d):
            drift += ji[j] * grad[j]
        out = (3.0 * mask) * sfft.rfftn(drift) + (3.0 * d) * f.data
        for j in range(d):
            out += ws.masked_ikappa[j] * sfft.rfftn(gi * grad[j])
        return SpectralField(d, f.box, f.modes, f.grid, out)

    gi, ji, gsrc = ws.general_coefficient_grids(problem.coefficients,
                                                problem.cutoff, t)
    out = f.data.copy()          # the + rho term
    for j in range(d):
        out += 1j * kappa[j] * (mask * sfft.rfftn(gi * grad[j]))
    if problem.form == "gradient":
        drift = ji[0] * grad[0]
        for j in range(1, d):
            drift += ji[j] * grad[j]
        out += mask * sfft.rfftn(drift)
    else:  # divergence
        rho = sfft.irfftn(f.data, s=(f.grid,) * d)
        for j in range(d):
            out -= 1j * kappa[j] * (mask * sfft.rfftn(ji[j] * rho))
    if np.any(gsrc):
        out += mask * sfft.rfftn(gsrc)
    return SpectralField(d, f.box, f.modes, f.grid, out)


def cbo_divergence_rhs(f: SpectralField, problem: PDEProblem, t: float) -> SpectralField:
    """The consensus density equation assembled in its conservation form,
    div(J rho) + Laplacian(G rho), with the same coefficient grids as the
    cbo right-hand side.  Used to certify that the rewritten form agrees."""
    if problem.form != "cbo":
        raise ConfigurationError("divergence assembly is defined for the cbo form")
    ws = _workspace(problem, f)
    kappa, mask = ws.kappa, ws.mask
    d = f.dim
    rho = sfft.irfftn(f.data, s=(f.grid,) * d)
    vbar = _consensus_at(problem, ws, t, rho)
    gi, ji = ws.cbo_coefficient_grids(vbar)
    kap_sq = sum(k**2 for k in kappa)
    out = -kap_sq * (mask * sfft.rfftn(gi * rho))
    for j in range(d):
        out += 1j * kappa[j] * (mask * sfft.rfftn(ji[j] * rho))
    return SpectralField(d, f.box, f.modes, f.grid, out)


# ---------------------------------------------------------------------------
# stability bound and integrators


def spectral_radius_bound(f: SpectralField, problem: PDEProblem, t: float) -> float:
    """max_grid(G_trunc) * |kappa_max|^2, the explicit-stability yardstick."""
    ws = _workspace(problem, f)
    if problem.form == "cbo":
        rho = (sfft.irfftn(f.data, s=(f.grid,) * f.dim)
               if problem.valpha_mode == "self_consistent" else None)
        vbar = _consensus_at(problem, ws, t, rho)
        gi, _ = ws.cbo_coefficient_grids(vbar)
    else:
        gi, _, _ = ws.general_coefficient_grids(problem.coefficients,
                                                problem.cutoff, t)
    kap_max_sq = f.dim * (np.pi * f.modes / f.box) ** 2
    return float(np.max(gi)) * kap_max_sq


def cfl_limit(f: SpectralField, problem: PDEProblem, t: float) -> float:
    lam = spectral_radius_bound(f, problem, t)
    return problem.c_cfl / lam if lam > 0.0 else np.inf


def _rk4_step(f, problem, t, dt):
    k1 = rhs(f, problem, t)
    f2 = SpectralField(f.dim, f.box, f.modes, f.grid, f.data + 0.5 * dt * k1.data)
    k2 = rhs(f2, problem, t + 0.5 * dt)
    f3 = SpectralField(f.dim, f.box, f.modes, f.grid, f.data + 0.5 * dt * k2.data)
    k3 = rhs(f3, problem, t + 0.5 * dt)
    f4 = SpectralField(f.dim, f.box, f.modes, f.grid, f.data + dt * k3.data)
    k4 = rhs(f4, problem, t + dt)
    new = f.data + (dt / 6.0) * (k1.data + 2.0 * k2.data + 2.0 * k3.data + k4.data)
    return SpectralField(f.dim, f.box, f.modes, f.grid, new)


@functools.lru_cache(maxsize=64)
def _rkc_coefficients(s: int, eps: float):
    """Damped second-order Chebyshev scheme coefficients for s stages."""
    w0 = 1.0 + eps / s**2
    tj = np.empty(s + 1)
    dtj = np.empty(s + 1)
    ddtj = np.empty(s + 1)
    tj[0], tj[1] = 1.0, w0
    dtj[0], dtj[1] = 0.0, 1.0
    ddtj[0], ddtj[1] = 0.0, 0.0
    for j in range(2, s + 1):
        tj[j] = 2.0 * w0 * tj[j - 1] - tj[j - 2]
        dtj[j] = 2.0 * tj[j - 1] + 2.0 * w0 * dtj[j - 1] - dtj[j - 2]
        ddtj[j] = 4.0 * dtj[j - 1] + 2.0 * w0 * ddtj[j - 1] - ddtj[j - 2]
    w1 = dtj[s] / ddtj[s]
    b = np.empty(s + 1)
    for j in range(2, s + 1):
        b[j] = ddtj[j] / dtj[j] ** 2
    b[0] = b[1] = b[2]
    a = 1.0 - b * tj
    c = np.empty(s + 1)
    c[0] = 0.0
    for j in range(2, s + 1):
        c[j] = (dtj[s] / ddtj[s]) * (ddtj[j] / dtj[j])
    c[1] = c[2] / 4.0 if s >= 2 else w1
    c[s] = 1.0
    beta = (w0 + 1.0) * ddtj[s] / dtj[s]
    return w0, w1, b, a, c, beta


def rkc_interval(s: int, eps: float = 2.0 / 13.0) -> float:
    """Length of the negative-real stability interval of the s-stage scheme."""
    return _rkc_coefficients(s, eps)[-1]


def rkc_stages_for(dt: float, lam_bound: float, eps: float = 2.0 / 13.0) -> int:
    """Smallest stage count whose stability interval covers dt * lam_bound."""
    target = dt * lam_bound
    s = max(2, int(np.ceil(np.sqrt(target / 0.65))))
    while rkc_interval(s, eps) < target:
        s += 1
    return s


def _rkc_step(f, problem, t, dt, lam_bound):
    if problem.rkc_stages is not None:
        s = problem.rkc_stages
        if rkc_interval(s, problem.rkc_damping) < dt * lam_bound:
            raise ConfigurationError(
                f"{s} Chebyshev stages cannot cover dt * lambda = "
                f"{dt * lam_bound:g}; raise rkc_stages or reduce dt")
    else:
        s = rkc_stages_for(dt, lam_bound, problem.rkc_damping)
    w0, w1, b, a, c, _ = _rkc_coefficients(s, problem.rkc_damping)
    f0 = rhs(f, problem, t).data
    y0 = f.data
    mu1 = b[1] * w1
    yjm1, yjm2 = y0 + mu1 * dt * f0, y0
    for j in range(2, s + 1):
        mu = 2.0 * b[j] * w0 / b[j - 1]
        nu = -b[j] / b[j - 2]
        mut = mu * w1 / w0
        gat = -a[j - 1] * mut
        fj = rhs(SpectralField(f.dim, f.box, f.modes, f.grid, yjm1),
                 problem, t + c[j - 1] * dt).data
        ynew = ((1.0 - mu - nu) * y0 + mu * yjm1 + nu * yjm2
                + mut * dt * fj + gat * dt * f0)
        yjm2, yjm1 = yjm1, ynew
    return SpectralField(f.dim, f.box, f.modes, f.grid, yjm1)


def step(f: SpectralField, problem: PDEProblem, t: float, dt: float) -> SpectralField:
    """Advance one time step with the problem's integrator.

    RK4 refuses dt beyond c_cfl over the spectral-radius estimate; the
    Chebyshev integrator instead raises its stage count to cover dt.
    """
    lam = spectral_radius_bound(f, problem, t)
    if problem.integrator == "rk4":
        limit = problem.c_cfl / lam if lam > 0.0 else np.inf
        if dt > limit:
            raise ConfigurationError(
                f"dt={dt:g} exceeds the stability bound {limit:g}; "
                "reduce dt or the resolution")
        return _rk4_step(f, problem, t, dt)
    return _rkc_step(f, problem, t, dt, lam)


# ---------------------------------------------------------------------------
# initial data, probes, monitors


def project_initial(sampler: Callable[[np.ndarray], np.ndarray],
                    problem: PDEProblem, dim: int, box: float,
                    modes: int, grid: int) -> SpectralField:
    """Sample a density, taper it to zero near the plateau radius, project.

    The taper multiplies by 1 - step(|v| - n) with n the cutoff's plateau
    scale, which is a no-op whenever the sampler's support stays inside
    radius n; it exists so active-cutoff runs start from periodic data.
    """
    probe = SpectralField.zeros(dim, box, modes, grid)
    pts = probe.grid_points()
    values = np.asarray(sampler(pts), dtype=float)
    radius = np.linalg.norm(pts, axis=-1)
    taper = 1.0 - smooth_step(radius - problem.cutoff.plateau_scale,
                              problem.cutoff.h_table)
    return SpectralField.from_grid(values * taper, box, modes)


def positivity_probe(f: SpectralField, v_alpha, r_exclude: float,
                     r_outer: float):
    """Minimum of the raw density over the annulus around the consensus point.

    Returns (min value, location).  Values are not clamped: a negative
    minimum reports the solver's ringing floor honestly.
    """
    if not (0.0 <= r_exclude < r_outer):
        raise DomainError("need 0 <= r_exclude < r_outer")
    pts = f.grid_points()
    dist = np.linalg.norm(pts - np.asarray(v_alpha, dtype=float), axis=-1)
    sel = (dist >= r_exclude) & (dist <= r_outer)
    if not np.any(sel):
        raise DomainError("annulus contains no grid points")
    vals = f.grid_values()[sel]
    arg = int(np.argmin(vals))
    return float(vals[arg]), pts[sel][arg]


def confinement_probe_1d(f: SpectralField, v_star: float) -> float:
    """Quadrature of max(rho, 0) over (v_star, L].

    Each grid node owns the cell [x - h/2, x + h/2]; a cell straddling
    v_star contributes only its right fraction, so a density symmetric
    about v_star integrates to exactly half its mass.
    """
    if f.dim != 1:
        raise DomainError("confinement probe is one-dimensional")
    x = f.axis_points()
    vals = np.maximum(f.grid_values(), 0.0)
    h = f.cell_volume
    frac = np.clip((x + 0.5 * h - v_star) / h, 0.0, 1.0)
    return float(np.sum(vals * frac) * h)


def mass(f: SpectralField) -> float:
    return f.mass()


def energy_monitor(times, fields, problem: PDEProblem):
    """(t, L2 norm squared, weighted H1 seminorm) per snapshot."""
    if len(fields) == 0:
        raise DomainError("empty field history")
    rows = []
    for t, f in zip(times, fields):
        ws = _workspace(problem, f)
        rho = f.grid_values()
        l2 = float(np.sum(rho**2)) * f.cell_volume
        grads = [sfft.irfftn(1j * ws.kappa[j] * f.data, s=(f.grid,) * f.dim)
                 for j in range(f.dim)]
        grad_sq = sum(g**2 for g in grads)
        if problem.form == "cbo":
            vbar = (problem.valpha_path(t) if problem.valpha_mode == "frozen"
                    else ws.consensus_from_grid(rho))
            gi, _ = ws.cbo_coefficient_grids(np.asarray(vbar, dtype=float))
        else:
            gi, _, _ = ws.general_coefficient_grids(problem.coefficients,
                                                    problem.cutoff, t)
        h1 = float(np.sum(gi * grad_sq)) * f.cell_volume
        rows.append((t, l2, h1))
    return rows


# ---------------------------------------------------------------------------
# evolution driver


@dataclass
class EvolveResult:
    times: np.ndarray
    mass_series: np.ndarray
    valpha_series: Optional[np.ndarray]     # (n_records, d) for the cbo form
    observed: dict
    snapshots: list
    final: SpectralField
    wall_time: float


def evolve(f: SpectralField, problem: PDEProblem, horizon: float, dt: float,
           record_every: int = 1, snapshot_times=(), observers=None) -> EvolveResult:
    """March the field to the horizon, recording cheap diagnostics.

    Mass is read off the k=0 coefficient at every recording step; for the
    cbo form the consensus point is recorded too.  `observers` maps names
    to callables (t, field) -> float evaluated at recording steps;
    `snapshot_times` are rounded to the nearest step and the field copied.
    """
    import time as _time

    n_steps = max(1, int(round(horizon / dt)))
    dt = horizon / n_steps
    snap_steps = {int(round(ts / dt)): ts for ts in snapshot_times}
    observers = observers or {}

    times, masses, vbars = [], [], []
    observed = {name: [] for name in observers}
    snapshots = []
    is_cbo = problem.form == "cbo"
    t0 = _time.perf_counter()

    def record(k, t, fld):
        times.append(t)
        masses.append(fld.mass())
        if is_cbo:
            ws = _workspace(problem, fld)
            if problem.valpha_mode == "frozen":
                vbars.append(np.asarray(problem.valpha_path(t), dtype=float))
            else:
                vbars.append(ws.consensus_from_grid(fld.grid_values()))
        for name, fn in observers.items():
            observed[name].append(fn(t, fld))
        if k in snap_steps:
            snapshots.append((t, fld.copy()))

    record(0, 0.0, f)
    for k in range(n_steps):
        f = step(f, problem, k * dt, dt)
        if (k + 1) % record_every == 0 or (k + 1) == n_steps or (k + 1) in snap_steps:
            record(k + 1, (k + 1) * dt, f)

    return EvolveResult(
        times=np.asarray(times),
        mass_series=np.asarray(masses),
        valpha_series=np.asarray(vbars) if is_cbo else None,
        observed={k: np.asarray(v) for k, v in observed.items()},
        snapshots=snapshots,
        final=f,
        wall_time=_time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# dense Galerkin oracle (small K only)


def galerkin_matrix_rhs(f: SpectralField, problem: PDEProblem, t: float) -> np.ndarray:
    """Time derivative computed from the densely assembled Galerkin system.

    Builds the mass matrix (diagonal for the trigonometric basis), the
    stiffness/transport matrix and the source vector by quadrature on the
    field's own grid, then solves for the coefficient derivatives.  Cost is
    O(K^2d) per entry pair, so this is an oracle for tiny K, kept to certify
    that the fast transform assembly is the same projection.

    Returns centered coefficients (index -K..K per axis) of the derivative.
    """
    if f.dim != 1:
        raise ConfigurationError("the dense oracle is assembled in 1D")
    ws = _workspace(problem, f)
    x = f.axis_points()
    ks = np.arange(-f.modes, f.modes + 1)
    psi = np.exp(1j * np.pi * np.outer(ks, x) / f.box)       # (n_modes, M)
    dpsi = (1j * np.pi * ks / f.box)[:, None] * psi
    cell = f.cell_volume

    if problem.form == "cbo":
        rho = f.grid_values()
        vbar = _consensus_at(problem, ws, t, rho)
        gi, ji = ws.cbo_coefficient_grids(vbar)
        gi_grid, j_grid = gi, ji[0]
        drift_scale, reaction, source = 3.0, 3.0 * f.dim, None
    else:
        gi_list = ws.general_coefficient_grids(problem.coefficients,
                                               problem.cutoff, t)
        gi_grid, j_grid, source = gi_list[0], gi_list[1][0], gi_list[2]
        drift_scale, reaction = 1.0, 1.0

    a_diag = np.full(len(ks), 2.0 * f.box)
    # <div(G grad psi_j), psi_k> integrates by parts to -<G dpsi_j, dpsi_k>
    # on the torus; with rectangle quadrature this is the identical sum the
    # transform route evaluates, so agreement is a floating-point property.
    stiff = -(dpsi * gi_grid) @ np.conj(dpsi).T * cell
    if problem.form == "divergence":
        # <-div(J psi_j), psi_k> = <J psi_j, dpsi_k>
        transport = (psi * j_grid) @ np.conj(dpsi).T * cell
    else:
        transport = drift_scale * (dpsi * j_grid) @ np.conj(psi).T * cell
    react = reaction * (psi @ np.conj(psi).T) * cell
    b_mat = stiff + transport + react

    coeffs = f.coefficients
    rhs_vec = b_mat.T @ coeffs
    if source is not None and np.any(source):
        rhs_vec = rhs_vec + (np.conj(psi) @ source) * cell
    return rhs_vec / a_diag
