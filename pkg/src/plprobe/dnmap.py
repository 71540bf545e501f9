"""Weak Dirichlet-to-Neumann pairing and its structural checks.

The pairing is always evaluated in volume form,

    <L(f), g> = int_Omega gamma |grad u_f|^(p-2) grad u_f . grad conj(g) dx,

never as a boundary flux integral: u_f solves the Dirichlet problem for
the trace of f, and any extension of g with the same trace gives the same
value up to solver tolerance (the discrete weak form annihilates interior
test functions).  Structural facts checked here: p-homogeneity
<L(t f), t f> = t^p <L(f), f>, invariance under constant shifts of the
datum (so linearization at constants carries no information), positivity
and boundedness of the self-pairing.
"""

from __future__ import annotations

import numpy as np

from .pde import (ConductivityField, DomainGrid, PField, SolverSettings,
                  _element_gradients, solve_dirichlet)

__all__ = [
    "flux_pairing",
    "dn_pairing",
    "homogeneity_check",
    "constant_shift_check",
    "self_pairing_slope",
    "pairing_bound_margin",
    "extension_invariance_check",
]


def _as_gamma(gamma):
    return gamma if isinstance(gamma, ConductivityField) else ConductivityField(gamma)


def _complex_gradients(grid: DomainGrid, field: PField) -> np.ndarray:
    q = _element_gradients(grid, field.components())
    if q.shape[2] == 2:
        return q[:, :, 0] + 1j * q[:, :, 1]
    return q[:, :, 0].astype(np.complex128)


def flux_pairing(grid: DomainGrid, gamma, p: float, u: PField, g: PField) -> complex:
    """int gamma |grad u|^(p-2) grad u . grad conj(g), element-midpoint quadrature."""
    gamma_c = _as_gamma(gamma)(grid.centroid)
    qu = _complex_gradients(grid, u)
    qg = _complex_gradients(grid, g)
    mag2 = (qu.real**2 + qu.imag**2).sum(axis=1)
    safe = np.where(mag2 > 0.0, mag2, 1.0)
    w = np.where(mag2 > 0.0, safe ** ((p - 2.0) / 2.0), 0.0)
    return complex((grid.area * gamma_c * w * (qu * np.conj(qg)).sum(axis=1)).sum())


def dn_pairing(grid: DomainGrid, gamma, p: float, f: PField,
               g: PField | None = None,
               settings: SolverSettings | None = None,
               solution: PField | None = None) -> complex:
    """<L_gamma(trace f), trace g> with g defaulting to f itself.

    f and g are full fields; f's interior values warm-start the solve.
    Pass `solution` to reuse an existing solve of the same datum.
    """
    if g is None:
        g = f
    if solution is None:
        solution = solve_dirichlet(grid, gamma, p, f, settings).field
    return flux_pairing(grid, gamma, p, solution, g)


def homogeneity_check(grid, gamma, p, f: PField, t: float,
                      settings: SolverSettings | None = None) -> float:
    """| <L(tf), tf> - t^p <L(f), f> | / (t^p |<L(f), f>|)."""
    if not t > 0:
        raise ValueError("t must be positive")
    base = dn_pairing(grid, gamma, p, f, settings=settings)
    ft = PField(f.values * t, f.mode)
    scaled = dn_pairing(grid, gamma, p, ft, settings=settings)
    target = t**p * base
    return abs(scaled - target) / abs(target)


def constant_shift_check(grid, gamma, p, f: PField, z: complex, t: float,
                         settings: SolverSettings | None = None) -> float:
    """Relative deviation of <L(z + tf), z + tf> from t^p <L(f), f>.

    The pairing slot is linear in the extension gradient and constants have
    zero gradient, so the shift contributes nothing.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    if f.mode == "real" and np.iscomplexobj(z) and np.imag(z) != 0:
        raise ValueError("real-mode shift must be real")
    base = dn_pairing(grid, gamma, p, f, settings=settings)
    shifted = PField(z + t * f.values, f.mode)
    paired = dn_pairing(grid, gamma, p, shifted, settings=settings)
    target = t**p * base
    return abs(paired - target) / abs(target)


def self_pairing_slope(grid, gamma, p, f: PField, t_values,
                       settings: SolverSettings | None = None) -> float:
    """Least-squares slope of log <L(tf), tf> against log t.

    Equals p exactly in the continuum; demonstrates that the map has no
    first-order linearization at constants (the pairing scales like t^p,
    i.e. the flux like t^(p-1)).
    """
    t_values = np.asarray(t_values, dtype=float)
    if t_values.size < 2 or np.any(t_values <= 0.0):
        raise ValueError("need at least two positive t values")
    logs = []
    for t in t_values:
        ft = PField(f.values * t, f.mode)
        val = dn_pairing(grid, gamma, p, ft, settings=settings)
        logs.append(math_log_abs(val))
    slope = np.polyfit(np.log(t_values), np.array(logs), 1)[0]
    return float(slope)


def math_log_abs(v: complex) -> float:
    a = abs(v)
    if a == 0.0:
        raise ValueError("pairing vanished; slope undefined")
    return float(np.log(a))


def pairing_bound_margin(grid, gamma, p, f: PField,
                         g: PField | None = None,
                         settings: SolverSettings | None = None) -> float:
    """|<L(f), g>| / (gamma_max ||grad u_f||_p^(p-1) ||grad g||_p); at most 1."""
    gamma_f = _as_gamma(gamma)
    _, gamma_max = gamma_f.validate_on(grid)
    if g is None:
        g = f
    sol = solve_dirichlet(grid, gamma_f, p, f, settings)
    val = flux_pairing(grid, gamma_f, p, sol.field, g)
    qu = _complex_gradients(grid, sol.field)
    qg = _complex_gradients(grid, g)
    nu = float((grid.area * (np.abs(qu) ** 2).sum(axis=1) ** (p / 2.0)).sum()) ** (1 / p)
    ng = float((grid.area * (np.abs(qg) ** 2).sum(axis=1) ** (p / 2.0)).sum()) ** (1 / p)
    return abs(val) / (gamma_max * nu ** (p - 1.0) * ng)


def extension_invariance_check(grid, gamma, p, f: PField, g: PField,
                               bump_scale: float = 0.5,
                               settings: SolverSettings | None = None) -> float:
    """Relative pairing change under an interior perturbation of g's extension."""
    sol = solve_dirichlet(grid, gamma, p, f, settings)
    base = flux_pairing(grid, gamma, p, sol.field, g)
    bump = np.zeros(grid.npt, dtype=np.complex128)
    interior = ~grid.boundary
    x = grid.pts[interior]
    bump[interior] = bump_scale * np.sin(3.0 * x[:, 0]) * x[:, 1] * (1.0 - x[:, 1])
    if g.mode == "real":
        bump = bump.real.astype(np.complex128)
    g2 = PField(g.values + bump, g.mode)
    moved = flux_pairing(grid, gamma, p, sol.field, g2)
    return abs(moved - base) / abs(base)
