"""Smooth cutoffs and truncated coefficient fields.

To solve the drift-diffusion equation on a periodic box, its coefficients
must be flattened near the boundary without breaking the structural
inequalities the well-posedness theory needs.  The construction here:

* a compactly supported mollifier (the classical exp(-1/(1-x^2)) bump),
* a smooth step `smooth_step`: 0 below 0, 1 above 1, obtained by mollifying
  a jump at 1/2 with a width-1/8 bump,
* a shell cutoff S_R(v) = step(|v| - R + 1) that switches on between the
  spheres of radius R-1 and R,
* a plateau window `plateau`: 1 on [-9, 9], 0 outside [-11, 11], and its
  radial version H_n(v) = plateau(|v|/n),
* truncated coefficients: inside the shell the original (G, J) survive;
  outside, G is replaced by 1 + G evaluated on the shell sphere and J by a
  matched constant-direction field; the plateau finally drives both to zero.

The step and plateau are evaluated from tables of the mollifier's
antiderivative built once by adaptive quadrature and interpolated with
cubic Hermite polynomials (the density itself supplies exact nodal
derivatives), giving absolute errors around 1e-12.

`check_base_growth`, `check_truncated_growth` and `check_static_weight`
probe, on deterministic sample clouds, the inequalities that the theory
asserts with uninstantiated constants: derivative bounds of G relative to
sqrt(G)(1 + sqrt(G)), the domination of J by sqrt(G), and the existence of
a time-independent comparable weight.  Derivatives of constructed fields
are always taken by central finite differences; the checks care about
values, not formulas.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad
from scipy.stats import norm, qmc


# ---------------------------------------------------------------------------
# mollifier and interpolation tables


def _bump_unscaled(x):
    """exp(-1/(1-x^2)) on (-1, 1), zero outside; not normalized."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    xi = x[inside]
    out[inside] = np.exp(-1.0 / (1.0 - xi * xi))
    return out


@functools.lru_cache(maxsize=4)
def _bump_normalization() -> float:
    """Total mass of the unscaled bump, by adaptive quadrature to ~1e-12."""
    val, _ = quad(lambda t: float(_bump_unscaled(np.array([t]))[0]),
                  -1.0, 1.0, epsabs=1e-13, epsrel=1e-13)
    return val


@functools.lru_cache(maxsize=4)
def _cdf_table(h_table: float):
    """(nodes, cdf values, nodal densities) of the normalized bump on [-1, 1]."""
    n_panels = int(np.ceil(2.0 / h_table))
    nodes = np.linspace(-1.0, 1.0, n_panels + 1)
    panels = np.empty(n_panels)
    f = lambda t: float(_bump_unscaled(np.array([t]))[0])
    for j in range(n_panels):
        panels[j], _ = quad(f, nodes[j], nodes[j + 1], epsabs=1e-14, epsrel=1e-13)
    cdf = np.concatenate([[0.0], np.cumsum(panels)])
    total = cdf[-1]
    cdf /= total          # forces CDF(1) = 1 exactly and keeps monotonicity
    dens = _bump_unscaled(nodes) / total
    return nodes, cdf, dens


def _hermite_eval(x, nodes, values, derivs):
    """Piecewise cubic Hermite interpolation with exact nodal derivatives."""
    h = nodes[1] - nodes[0]
    j = np.clip(((x - nodes[0]) / h).astype(int), 0, len(nodes) - 2)
    t = (x - nodes[j]) / h
    t2, t3 = t * t, t * t * t
    return ((2 * t3 - 3 * t2 + 1) * values[j]
            + (t3 - 2 * t2 + t) * h * derivs[j]
            + (-2 * t3 + 3 * t2) * values[j + 1]
            + (t3 - t2) * h * derivs[j + 1])


def mollifier_cdf(x, h_table: float = 1e-3) -> np.ndarray:
    """Antiderivative of the normalized bump: 0 at -1, 1 at +1."""
    x = np.asarray(x, dtype=float)
    nodes, cdf, dens = _cdf_table(h_table)
    out = np.where(x >= 1.0, 1.0, 0.0)
    mid = (x > -1.0) & (x < 1.0)
    if np.any(mid):
        out = np.array(out, dtype=float)
        out[mid] = _hermite_eval(x[mid], nodes, cdf, dens)
    return out


def smooth_step(x, h_table: float = 1e-3):
    """Mollified jump: 0 for x <= 0, 1 for x >= 1, transition on (3/8, 5/8).

    Equals the convolution of the indicator of [1/2, oo) with a mollifier
    of width 1/8, evaluated as the rescaled bump antiderivative.
    """
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    res = mollifier_cdf(8.0 * np.atleast_1d(x) - 4.0, h_table)
    return float(res[0]) if scalar else res


def plateau(x, h_table: float = 1e-3):
    """Mollified window: 1 on [-9, 9], 0 outside (-11, 11).

    Convolution of the indicator of [-10, 10] with the unit-width bump.
    """
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    xv = np.atleast_1d(x)
    res = mollifier_cdf(xv + 10.0, h_table) - mollifier_cdf(xv - 10.0, h_table)
    return float(res[0]) if scalar else res


# ---------------------------------------------------------------------------
# coefficient fields and their truncation


@dataclass(frozen=True)
class CoefficientField:
    """Scalar diffusion G >= 0, vector drift J, and source g.

    All three callables are vectorized: (points of shape (..., d), t) ->
    values of shape (...) for G and g, (..., d) for J.
    """

    dim: int
    G: Callable[[np.ndarray, float], np.ndarray]
    J: Callable[[np.ndarray, float], np.ndarray]
    g: Callable[[np.ndarray, float], np.ndarray]
    holder_exponent: float = 1.0


def cbo_coefficients(valpha: Callable[[float], np.ndarray], dim: int) -> CoefficientField:
    """G = |v - v_a(t)|^2, J = v - v_a(t), no source."""
    def G(pts, t):
        d = np.asarray(pts, dtype=float) - valpha(t)
        return np.sum(np.square(d), axis=-1)

    def J(pts, t):
        return np.asarray(pts, dtype=float) - valpha(t)

    def g(pts, t):
        return np.zeros(np.shape(pts)[:-1])

    return CoefficientField(dim=dim, G=G, J=J, g=g, holder_exponent=0.5)


@dataclass(frozen=True)
class CutoffSpec:
    """Radii of the shell / plateau truncation plus numerical step sizes.

    The shell switch happens on [shell_radius - 1, shell_radius];
    plateau_scale rescales the plateau window, so truncated coefficients
    vanish beyond 11 * plateau_scale.
    """

    shell_radius: float
    plateau_scale: float
    h_table: float = 1e-3
    h_fd: float = 1e-5

    def __post_init__(self):
        if self.shell_radius <= 1.0:
            raise ValueError("shell radius must exceed 1")
        if self.plateau_scale <= 0.0:
            raise ValueError("plateau scale must be positive")

    @staticmethod
    def for_bounded_consensus(shell_radius: float, consensus_bound: float) -> "CutoffSpec":
        """Plateau scale (shell_radius + bound + 1)^2, which dominates the
        quadratic diffusion everywhere inside the shell."""
        return CutoffSpec(shell_radius=shell_radius,
                          plateau_scale=(shell_radius + consensus_bound + 1.0) ** 2)

    def shell(self, radii) -> np.ndarray:
        """Shell switch: 0 inside radius R-1, 1 outside radius R."""
        return smooth_step(np.asarray(radii, dtype=float) - self.shell_radius + 1.0,
                           self.h_table)

    def radial_plateau(self, radii) -> np.ndarray:
        """Plateau in |v|: 1 up to 9n, 0 beyond 11n."""
        return plateau(np.asarray(radii, dtype=float) / self.plateau_scale,
                       self.h_table)


def _shell_projection(pts, radii, shell_radius):
    """Points rescaled onto the shell sphere (safe where the shell is off)."""
    safe = np.maximum(radii, 0.5)[..., None]
    return shell_radius * pts / safe


def truncated_G(field: CoefficientField, spec: CutoffSpec, pts: np.ndarray,
                t: float) -> np.ndarray:
    """Diffusion coefficient after shell replacement and plateau window."""
    pts = np.asarray(pts, dtype=float)
    radii = np.linalg.norm(pts, axis=-1)
    s = spec.shell(radii)
    gv = field.G(pts, t)
    proj = _shell_projection(pts, radii, spec.shell_radius)
    gbar = gv * (1.0 - s) + (1.0 + field.G(proj, t)) * s
    h = spec.radial_plateau(radii)
    return h * h * gbar


def truncated_J(field: CoefficientField, spec: CutoffSpec, pts: np.ndarray,
                t: float) -> np.ndarray:
    """Drift coefficient after shell replacement and plateau window."""
    pts = np.asarray(pts, dtype=float)
    radii = np.linalg.norm(pts, axis=-1)
    s = spec.shell(radii)[..., None]
    jv = field.J(pts, t)
    proj = _shell_projection(pts, radii, spec.shell_radius)
    amp = np.sqrt(field.G(proj, t) + 1.0)[..., None]
    ones = np.ones(pts.shape[-1])
    jbar = jv * (1.0 - s) + amp * ones * s
    h = spec.radial_plateau(radii)[..., None]
    return h * jbar


def truncated_source(field: CoefficientField, spec: CutoffSpec, pts: np.ndarray,
                     t: float) -> np.ndarray:
    """Source tapered to zero beyond radius plateau_scale."""
    pts = np.asarray(pts, dtype=float)
    radii = np.linalg.norm(pts, axis=-1)
    taper = 1.0 - smooth_step(radii - spec.plateau_scale, spec.h_table)
    return field.g(pts, t) * taper


def truncated_coefficients(field: CoefficientField, spec: CutoffSpec,
                           v: np.ndarray, t: float):
    """(G_trunc, J_trunc, grad of G_trunc) at a single point.

    The gradient is a central finite difference with step h_fd * (1 + |v|);
    the truncation is built from interpolation tables, so differentiating
    values is both simpler and more honest than chaining rules through them.
    """
    v = np.asarray(v, dtype=float)
    gval = float(truncated_G(field, spec, v[None, :], t)[0])
    jval = truncated_J(field, spec, v[None, :], t)[0]
    grad = _fd_gradient(lambda p: truncated_G(field, spec, p, t), v[None, :],
                        spec.h_fd)[0]
    return gval, jval, grad


# ---------------------------------------------------------------------------
# finite differences (vectorized over sample batches)


def _fd_steps(pts, h_fd):
    return h_fd * (1.0 + np.linalg.norm(pts, axis=-1))


def _fd_gradient(f, pts, h_fd):
    """Central-difference gradient of a scalar field, shape (n, d)."""
    pts = np.asarray(pts, dtype=float)
    n, d = pts.shape
    h = _fd_steps(pts, h_fd)
    grad = np.empty((n, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = 1.0
        grad[:, j] = (f(pts + h[:, None] * e) - f(pts - h[:, None] * e)) / (2.0 * h)
    return grad


def _fd_hessian_norm(f, pts, h_fd):
    """Frobenius norm of the central-difference Hessian, shape (n,)."""
    pts = np.asarray(pts, dtype=float)
    n, d = pts.shape
    h = _fd_steps(pts, h_fd)
    f0 = f(pts)
    acc = np.zeros(n)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = 1.0
        hii = (f(pts + h[:, None] * ei) - 2.0 * f0 + f(pts - h[:, None] * ei)) / h**2
        acc += hii**2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = 1.0
            hij = (f(pts + h[:, None] * (ei + ej)) - f(pts + h[:, None] * (ei - ej))
                   - f(pts - h[:, None] * (ei - ej)) + f(pts - h[:, None] * (ei + ej))
                   ) / (4.0 * h**2)
            acc += 2.0 * hij**2
    return np.sqrt(acc)


def _fd_jacobian_norm(f, pts, h_fd):
    """Frobenius norm of the central-difference Jacobian of a vector field."""
    pts = np.asarray(pts, dtype=float)
    n, d = pts.shape
    h = _fd_steps(pts, h_fd)
    acc = np.zeros(n)
    for j in range(d):
        e = np.zeros(d)
        e[j] = 1.0
        col = (f(pts + h[:, None] * e) - f(pts - h[:, None] * e)) / (2.0 * h[:, None])
        acc += np.sum(np.square(col), axis=-1)
    return np.sqrt(acc)


# ---------------------------------------------------------------------------
# sampled inequality reports


@dataclass
class InequalityEntry:
    name: str
    sup: float
    sample_count: int
    satisfied: Optional[bool] = None


@dataclass
class InequalityReport:
    entries: dict

    def __getitem__(self, key: str) -> InequalityEntry:
        return self.entries[key]

    def all_satisfied(self) -> bool:
        flags = [e.satisfied for e in self.entries.values() if e.satisfied is not None]
        return all(flags) if flags else True

    def rows(self):
        return [(e.name, e.sup, e.sample_count, e.satisfied)
                for e in self.entries.values()]


_G_FLOOR = 1e-12


def _ratio_entry(name, num, den, count, bound, j_violation=None):
    sup = float(np.max(num / den)) if num.size else 0.0
    if j_violation:
        sup = np.inf
    sat = None if bound is None else bool(sup <= bound)
    return InequalityEntry(name=name, sup=sup, sample_count=count, satisfied=sat)


def _sobol_block(dim: int, count: int, seed: int) -> np.ndarray:
    """Power-of-two Sobol draw, first `count` rows (nested under refinement)."""
    eng = qmc.Sobol(d=dim, scramble=True, seed=seed)
    return eng.random(1 << max(1, int(np.ceil(np.log2(count)))))[:count]


def sphere_directions(count: int, dim: int, seed: int) -> np.ndarray:
    """Deterministic quasi-random unit vectors."""
    u = _sobol_block(dim, count, seed)
    z = norm.ppf(np.clip(u, 1e-12, 1.0 - 1e-12))
    return z / np.linalg.norm(z, axis=-1, keepdims=True)


def _growth_ratios(g_fun, j_fun, pts, h_fd, bounds, count, prefix=""):
    """The four derivative/domination ratio families shared by both checks."""
    bounds = bounds or {}
    g0 = g_fun(pts)
    if np.min(g0) < -1e-10:
        raise ValueError("diffusion coefficient sampled negative")
    g0 = np.maximum(g0, 0.0)
    sqrt_g = np.sqrt(g0)
    grad_norm = np.linalg.norm(_fd_gradient(g_fun, pts, h_fd), axis=-1)
    hess_norm = _fd_hessian_norm(g_fun, pts, h_fd)
    jvals = j_fun(pts)
    jnorm = np.linalg.norm(jvals, axis=-1)
    jac_norm = _fd_jacobian_norm(j_fun, pts, h_fd)

    positive = g0 > _G_FLOOR
    # where G sits at the floor, J must be at floor scale too (both vanish
    # together under the plateau); an O(1) drift over vanished diffusion
    # breaks the domination inequality outright
    j_violation = bool(np.any(jnorm[~positive] > 1e-3))

    entries = {}
    entries[prefix + "grad_G"] = _ratio_entry(
        prefix + "grad_G", grad_norm[positive],
        (sqrt_g * (1.0 + sqrt_g))[positive], pts.shape[0],
        bounds.get("grad_G"))
    entries[prefix + "hess_G"] = _ratio_entry(
        prefix + "hess_G", hess_norm, 1.0 + g0, pts.shape[0],
        bounds.get("hess_G"))
    entries[prefix + "J_vs_sqrtG"] = _ratio_entry(
        prefix + "J_vs_sqrtG", jnorm[positive], sqrt_g[positive], pts.shape[0],
        bounds.get("J_vs_sqrtG"), j_violation=j_violation)
    entries[prefix + "grad_J"] = _ratio_entry(
        prefix + "grad_J", jac_norm, 1.0 + sqrt_g, pts.shape[0],
        bounds.get("grad_J"))
    return entries


def check_base_growth(field: CoefficientField, low, high, count: int,
                      t: float = 0.0, bounds: Optional[dict] = None,
                      seed: int = 0, h_fd: float = 1e-5) -> InequalityReport:
    """Sample the structural inequalities of the raw coefficient field.

    Reports sups of |grad G| / (sqrt(G)(1+sqrt(G))), |Hess G| / (1+G),
    |J| / sqrt(G) and |grad J| / (1+sqrt(G)) over a low-discrepancy cloud
    in the box [low, high]^d.
    """
    from .objectives import sample_box
    pts = sample_box(field.dim, low, high, count, seed)
    entries = _growth_ratios(lambda p: field.G(p, t), lambda p: field.J(p, t),
                             pts, h_fd, bounds, count)
    return InequalityReport(entries=entries)


def _stratified_radii(spec: CutoffSpec, count: int, seed: int) -> np.ndarray:
    """Radii covering the interior, both shell bands, the plateau roll-off
    and the dead zone, with fixed proportions.

    Each point picks its band from its own quasi-random coordinate, so the
    first n radii of a longer draw equal the length-n draw: doubling the
    sample keeps the original points (refinement can only raise the sups).
    """
    r, n = spec.shell_radius, spec.plateau_scale
    bands = [
        (0.0, r - 1.0, 0.30),
        (r - 1.0, r, 0.25),
        (r, 9.0 * n, 0.20),
        (9.0 * n, 11.0 * n, 0.20),
        (11.0 * n, 11.5 * n, 0.05),
    ]
    u = _sobol_block(2, count, seed + 1)
    cum = np.cumsum([frac for _, _, frac in bands])
    which = np.searchsorted(cum, u[:, 0], side="right").clip(0, len(bands) - 1)
    lo = np.array([b[0] for b in bands])[which]
    hi = np.array([b[1] for b in bands])[which]
    return lo + (hi - lo) * u[:, 1]


def check_truncated_growth(field: CoefficientField, spec: CutoffSpec,
                           count: int, t: float = 0.0,
                           bounds: Optional[dict] = None, seed: int = 0
                           ) -> InequalityReport:
    """Sample the same four ratio families for the truncated coefficients.

    The sample cloud is stratified over the regions where the truncation
    changes character.  With a nested sequence, enlarging `count` can only
    raise the sups, so refinement stability is a one-sided check.
    """
    radii = _stratified_radii(spec, count, seed)
    dirs = sphere_directions(count, field.dim, seed)
    pts = radii[:, None] * dirs
    entries = _growth_ratios(
        lambda p: truncated_G(field, spec, p, t),
        lambda p: truncated_J(field, spec, p, t),
        pts, spec.h_fd, bounds, count)
    return InequalityReport(entries=entries)


def check_static_weight(field: CoefficientField, spec: CutoffSpec,
                        count: int, t_anchor: float, t_samples,
                        low, high, bounds: Optional[dict] = None,
                        seed: int = 0) -> InequalityReport:
    """Check that the frozen-time truncated diffusion works as a weight.

    With Q := G_trunc(., t_anchor) the report samples |grad Q|/(1+sqrt(Q)),
    the two-sided comparability of Q+1 with 1+G_trunc(., t) across the
    given times, the premises behind that choice (|grad G| <= C(1+sqrt G),
    time-comparability of the raw G), and the weighted source integral
    integral (1+G^2)(g^2 + |grad g|^2).
    """
    from .objectives import sample_box
    bounds = bounds or {}
    pts = sample_box(field.dim, low, high, count, seed)
    h_fd = spec.h_fd

    entries = {}

    g_raw = np.maximum(field.G(pts, t_anchor), 0.0)
    grad_raw = np.linalg.norm(
        _fd_gradient(lambda p: field.G(p, t_anchor), pts, h_fd), axis=-1)
    entries["premise_grad_G"] = _ratio_entry(
        "premise_grad_G", grad_raw, 1.0 + np.sqrt(g_raw), count,
        bounds.get("premise_grad_G"))

    sup_time_raw = 0.0
    for t1 in t_samples:
        g1 = np.maximum(field.G(pts, t1), 0.0)
        for t2 in t_samples:
            g2 = np.maximum(field.G(pts, t2), 0.0)
            sup_time_raw = max(sup_time_raw, float(np.max((g2 + 1.0) / (1.0 + g1))))
    entries["premise_time_comparability"] = InequalityEntry(
        name="premise_time_comparability", sup=sup_time_raw, sample_count=count,
        satisfied=None if "premise_time_comparability" not in bounds
        else sup_time_raw <= bounds["premise_time_comparability"])

    q = np.maximum(truncated_G(field, spec, pts, t_anchor), 0.0)
    grad_q = np.linalg.norm(
        _fd_gradient(lambda p: truncated_G(field, spec, p, t_anchor), pts, h_fd),
        axis=-1)
    entries["grad_Q"] = _ratio_entry("grad_Q", grad_q, 1.0 + np.sqrt(q), count,
                                     bounds.get("grad_Q"))

    upper = 0.0
    lower = 0.0
    for t1 in t_samples:
        gt = np.maximum(truncated_G(field, spec, pts, t1), 0.0)
        upper = max(upper, float(np.max((q + 1.0) / (1.0 + gt))))
        lower = max(lower, float(np.max((1.0 + gt) / (q + 1.0))))
    entries["Q_comparability_upper"] = InequalityEntry(
        "Q_comparability_upper", upper, count,
        None if "Q_comparability_upper" not in bounds
        else upper <= bounds["Q_comparability_upper"])
    entries["Q_comparability_lower"] = InequalityEntry(
        "Q_comparability_lower", lower, count,
        None if "Q_comparability_lower" not in bounds
        else lower <= bounds["Q_comparability_lower"])

    # weighted integrability of the source over the sampled box, rectangle rule
    low_v = np.broadcast_to(np.asarray(low, dtype=float), (field.dim,))
    high_v = np.broadcast_to(np.asarray(high, dtype=float), (field.dim,))
    m = max(4, int(round(count ** (1.0 / field.dim))))
    axes = [np.linspace(low_v[j], high_v[j], m, endpoint=False) for j in range(field.dim)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    cell = float(np.prod((high_v - low_v) / m))
    sup_int = 0.0
    for t1 in t_samples:
        gg = field.g(mesh, t1)
        grad_g = _fd_gradient(lambda p: field.g(p, t1),
                              mesh.reshape(-1, field.dim), h_fd)
        weight = 1.0 + np.square(field.G(mesh, t1))
        val = float(np.sum(weight * np.square(gg)) * cell
                    + np.sum(weight.reshape(-1) * np.sum(np.square(grad_g), axis=-1)) * cell)
        sup_int = max(sup_int, val)
    entries["weighted_source_integral"] = InequalityEntry(
        "weighted_source_integral", sup_int, m ** field.dim,
        None if "weighted_source_integral" not in bounds
        else sup_int <= bounds["weighted_source_integral"])

    return InequalityReport(entries=entries)
