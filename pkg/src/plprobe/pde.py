"""Weighted p-Laplace Dirichlet solver on structured triangulations.

The domain (rectangle with flat or graph bottom boundary, or half disc) is
meshed by splitting each structured cell into two first-order triangles;
element gradients are constant, so affine fields are reproduced exactly
and the p-energy density is integrated by the midpoint rule per element.

The Dirichlet problem div(gamma |grad u|^(p-2) grad u) = 0, u = f on the
boundary, is solved as the minimization of the regularized convex energy

    E_eps(u) = sum_T area_T gamma_T (|grad u|_T^2 + eps^2)^(p/2)

by damped Newton with backtracking line search, warm-started along a
geometric continuation eps_0 > eps_1 > ... > eps_final.  Complex data is
handled as a coupled two-component real field with density
(|grad u_re|^2 + |grad u_im|^2 + eps^2)^(p/2); stationarity in each
component reproduces the complex weak form.  The Newton weight

    w (I + (p-2) q x q / (|q|^2 + eps^2)),   w = (|q|^2 + eps^2)^((p-2)/2)

is symmetric positive definite for every p > 1, so the damped iteration is
globally convergent on the strictly convex regularized energy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

__all__ = [
    "Rectangle",
    "HalfDisc",
    "DomainGrid",
    "build_grid",
    "ConductivityField",
    "PField",
    "SolverSettings",
    "SolveResult",
    "SolverConvergenceError",
    "energy",
    "solve_dirichlet",
    "weak_residual",
    "hardy_ratio",
    "h1_relative_error",
]


# ---------------------------------------------------------------------------
# Shapes and grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Rectangle:
    """[-half_width, half_width] x [0, height]; optional graph bottom x2 = g(x1).

    The bottom curve must satisfy g(0) = 0, g'(0) = 0 so the base boundary
    point is the origin with inward normal e_2.
    """

    half_width: float = 1.0
    height: float = 1.0
    bottom: object = None        # callable g(x1) or None for a flat bottom
    bottom_deriv: object = None  # g'(x1), required when bottom is given


@dataclass(frozen=True)
class HalfDisc:
    radius: float = 1.0


@dataclass
class DomainGrid:
    """Structured triangulation with P1 element geometry precomputed."""

    pts: np.ndarray          # (npt, 2)
    tri: np.ndarray          # (nel, 3) int
    area: np.ndarray         # (nel,)
    grad: np.ndarray         # (nel, 3, 2) gradients of the vertex hats
    centroid: np.ndarray     # (nel, 2)
    boundary: np.ndarray     # (npt,) bool
    nx: int
    ny: int
    resolution: float
    shape: object
    _delta: np.ndarray | None = field(default=None, repr=False)

    @property
    def npt(self) -> int:
        return self.pts.shape[0]

    @property
    def boundary_idx(self) -> np.ndarray:
        return np.flatnonzero(self.boundary)

    @property
    def interior_idx(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)

    @property
    def h(self) -> float:
        """Grid spacing (cells per unit resolution)."""
        return 1.0 / self.resolution

    @property
    def bottom_idx(self) -> np.ndarray:
        """Nodes of the bottom boundary row (contains the base point 0)."""
        return np.arange(self.nx + 1)

    @property
    def node_area(self) -> np.ndarray:
        w = np.zeros(self.npt)
        np.add.at(w, self.tri.ravel(), np.repeat(self.area / 3.0, 3))
        return w

    @property
    def delta(self) -> np.ndarray:
        """Distance to the boundary (exact for flat shapes, first-order
        normal distance for graph bottoms); 0 exactly on boundary nodes."""
        if self._delta is None:
            self._delta = _distance_to_boundary(self)
            self._delta[self.boundary] = 0.0
        return self._delta

    def interpolate(self, fn) -> np.ndarray:
        return np.asarray(fn(self.pts))


def _distance_to_boundary(grid: DomainGrid) -> np.ndarray:
    x, y = grid.pts[:, 0], grid.pts[:, 1]
    shape = grid.shape
    if isinstance(shape, HalfDisc):
        r = np.hypot(x, y)
        return np.maximum(np.minimum(shape.radius - r, y), 0.0)
    hw, ht = shape.half_width, shape.height
    lateral = np.minimum(x + hw, hw - x)
    top = ht - y
    if shape.bottom is None:
        bottom = y
    else:
        g = np.asarray(shape.bottom(x), dtype=float)
        dg = np.asarray(shape.bottom_deriv(x), dtype=float)
        bottom = (y - g) / np.hypot(1.0, dg)
    return np.maximum(np.minimum(np.minimum(lateral, top), bottom), 0.0)


def build_grid(shape, resolution: float) -> DomainGrid:
    """Mesh the shape at `resolution` cells per unit length.

    The cell count across the width is forced even so x1 = 0 is a node
    line (probes are centered at the origin).
    """
    resolution = float(resolution)
    if resolution < 8.0:
        raise ValueError(f"resolution must be at least 8 cells per unit, got {resolution}")

    if isinstance(shape, Rectangle):
        if shape.half_width <= 0 or shape.height <= 0:
            raise ValueError("degenerate rectangle")
        if (shape.bottom is None) != (shape.bottom_deriv is None):
            raise ValueError("bottom and bottom_deriv must be supplied together")
        nx = 2 * max(1, round(shape.half_width * resolution))
        ny = max(2, round(shape.height * resolution))
        xs = np.linspace(-shape.half_width, shape.half_width, nx + 1)
        ys = np.linspace(0.0, shape.height, ny + 1)
        X, Y = np.meshgrid(xs, ys)
        if shape.bottom is not None:
            g = np.asarray(shape.bottom(xs), dtype=float)
            if abs(g[nx // 2]) > 1e-12:
                raise ValueError("bottom curve must vanish at x1 = 0")
            # boundary-fitted stretching: bottom row follows the graph,
            # the top row stays flat at height
            Y = g[None, :] + Y * (shape.height - g[None, :]) / shape.height
        pts = np.column_stack([X.ravel(), Y.ravel()])
    elif isinstance(shape, HalfDisc):
        if shape.radius <= 0:
            raise ValueError("degenerate half disc")
        R = shape.radius
        nx = 2 * max(1, round(R * resolution))
        ny = max(2, round(R * resolution))
        xs = np.linspace(-R, R, nx + 1)
        ys = np.linspace(0.0, R, ny + 1)
        X, Y = np.meshgrid(xs, ys)
        # concentric map: reference L-inf radius s goes to euclidean radius s
        s = np.maximum(np.abs(X), np.abs(Y))
        r = np.hypot(X, Y)
        scale = np.where(r > 0.0, s / np.where(r > 0.0, r, 1.0), 0.0)
        pts = np.column_stack([(X * scale).ravel(), (Y * scale).ravel()])
    else:
        raise TypeError(f"unknown shape {shape!r}")

    def node_id(i, j):
        return j * (nx + 1) + i

    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny))
    ii, jj = ii.ravel(), jj.ravel()
    lower = np.column_stack([node_id(ii, jj), node_id(ii + 1, jj), node_id(ii, jj + 1)])
    upper = np.column_stack([node_id(ii + 1, jj), node_id(ii + 1, jj + 1), node_id(ii, jj + 1)])
    tri = np.vstack([lower, upper]).astype(np.int32)

    p0, p1, p2 = pts[tri[:, 0]], pts[tri[:, 1]], pts[tri[:, 2]]
    cross = ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
             - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0]))
    area = 0.5 * cross
    if np.any(area <= 0.0):
        raise ValueError("triangulation produced degenerate or inverted elements")

    grad = np.empty((tri.shape[0], 3, 2))
    corners = (p0, p1, p2)
    for i in range(3):
        pa, pb = corners[(i + 1) % 3], corners[(i + 2) % 3]
        grad[:, i, 0] = (pa[:, 1] - pb[:, 1]) / (2.0 * area)
        grad[:, i, 1] = (pb[:, 0] - pa[:, 0]) / (2.0 * area)

    centroid = (p0 + p1 + p2) / 3.0

    boundary = np.zeros(pts.shape[0], dtype=bool)
    for j in range(ny + 1):
        boundary[node_id(0, j)] = True
        boundary[node_id(nx, j)] = True
    for i in range(nx + 1):
        boundary[node_id(i, 0)] = True
        boundary[node_id(i, ny)] = True

    return DomainGrid(pts=pts, tri=tri, area=area, grad=grad, centroid=centroid,
                      boundary=boundary, nx=nx, ny=ny, resolution=resolution,
                      shape=shape)


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConductivityField:
    """Positive conductivity gamma(x); bounds are validated on each grid."""

    fn: object

    def __call__(self, pts) -> np.ndarray:
        vals = np.asarray(self.fn(np.asarray(pts, dtype=float)), dtype=float)
        return np.broadcast_to(vals, np.asarray(pts).shape[:-1]).copy() \
            if vals.ndim == 0 else vals

    @classmethod
    def constant(cls, c: float) -> "ConductivityField":
        c = float(c)
        return cls(fn=lambda pts: np.full(np.asarray(pts).shape[:-1], c))

    def validate_on(self, grid: DomainGrid) -> tuple[float, float]:
        vals = np.concatenate([self(grid.pts), self(grid.centroid)])
        if not np.all(np.isfinite(vals)) or vals.min() <= 0.0:
            k = int(np.argmin(vals))
            where = np.vstack([grid.pts, grid.centroid])[k]
            raise ValueError(
                f"conductivity must be positive; gamma({where[0]:.6g}, "
                f"{where[1]:.6g}) = {vals[k]:.6g}")
        return float(vals.min()), float(vals.max())


@dataclass
class PField:
    """Nodal scalar field; complex-valued, imaginary part exactly 0 in real mode."""

    values: np.ndarray
    mode: str = "complex"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.mode not in ("real", "complex"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "real" and np.any(self.values.imag != 0.0):
            raise ValueError("real-mode field carries a nonzero imaginary part")

    @classmethod
    def from_function(cls, grid: DomainGrid, fn, mode: str = "complex") -> "PField":
        vals = np.asarray(fn(grid.pts))
        return cls(values=vals.astype(np.complex128), mode=mode)

    @classmethod
    def zeros(cls, grid: DomainGrid, mode: str = "complex") -> "PField":
        return cls(values=np.zeros(grid.npt, dtype=np.complex128), mode=mode)

    @property
    def ncomp(self) -> int:
        return 1 if self.mode == "real" else 2

    def components(self) -> np.ndarray:
        """(npt, ncomp) real view of the nodal values."""
        u = np.column_stack([self.values.real, self.values.imag])
        return u[:, : self.ncomp]


def _values_from_components(U: np.ndarray, mode: str) -> np.ndarray:
    if U.shape[1] == 1:
        return U[:, 0].astype(np.complex128)
    return U[:, 0] + 1j * U[:, 1]


# ---------------------------------------------------------------------------
# Energy and residuals
# ---------------------------------------------------------------------------


def _element_gradients(grid: DomainGrid, U: np.ndarray) -> np.ndarray:
    """Constant per-element gradients, shape (nel, 2, ncomp)."""
    return np.einsum("eiv,eic->evc", grid.grad, U[grid.tri])


def energy(grid: DomainGrid, u, gamma, p: float, eps: float = 0.0) -> float:
    """E_eps(u) = sum_T area gamma(centroid) (|grad u|^2 + eps^2)^(p/2)."""
    if not p > 1:
        raise ValueError("p must be > 1")
    U = u.components() if isinstance(u, PField) else np.asarray(u, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    q = _element_gradients(grid, U)
    q2 = (q**2).sum(axis=(1, 2))
    gamma_c = gamma(grid.centroid) if callable(gamma) else np.asarray(gamma)
    return float((grid.area * gamma_c * (q2 + eps * eps) ** (p / 2.0)).sum())


def _dual_residual(grid, gamma_c, p, U, eps):
    """max_i |int gamma w grad u . grad phi_i| / (||grad u||_p^(p-1) ||grad phi_i||_p)
    over interior hats; w = (|q|^2 + eps^2)^((p-2)/2) (eps = 0 gives the
    unregularized weak form, with the flux extended by 0 where grad u = 0)."""
    q = _element_gradients(grid, U)
    q2 = (q**2).sum(axis=(1, 2))
    if eps > 0.0:
        w = (q2 + eps * eps) ** ((p - 2.0) / 2.0)
    else:
        safe = np.where(q2 > 0.0, q2, 1.0)
        w = np.where(q2 > 0.0, safe ** ((p - 2.0) / 2.0), 0.0)
    coef = grid.area * gamma_c * w
    r_el = np.einsum("eiv,evc->eic", grid.grad, q) * coef[:, None, None]
    r = np.zeros((grid.npt, U.shape[1]))
    np.add.at(r, grid.tri.ravel(), r_el.reshape(-1, U.shape[1]))

    unorm = float((grid.area * q2 ** (p / 2.0)).sum()) ** (1.0 / p)
    if unorm == 0.0:
        return 0.0
    gphi_p = np.zeros(grid.npt)
    contrib = grid.area[:, None] * (grid.grad**2).sum(axis=2) ** (p / 2.0)
    np.add.at(gphi_p, grid.tri.ravel(), contrib.ravel())
    phinorm = gphi_p ** (1.0 / p)

    rnorm = np.sqrt((r**2).sum(axis=1))
    interior = ~grid.boundary
    return float(np.max(rnorm[interior] / (unorm ** (p - 1.0) * phinorm[interior])))


def weak_residual(grid: DomainGrid, gamma, p: float, u: PField,
                  eps: float = 0.0) -> float:
    """Normalized dual-norm defect of the (eps-regularized) weak form."""
    gamma_c = gamma(grid.centroid) if callable(gamma) else np.asarray(gamma)
    return _dual_residual(grid, gamma_c, p, u.components(), eps)


def hardy_ratio(grid: DomainGrid, v: PField, p: float) -> float:
    """||v / delta||_p / ||grad v||_p for fields vanishing on the boundary."""
    if not p > 1:
        raise ValueError("p must be > 1")
    vals = v.values
    if np.max(np.abs(vals[grid.boundary])) > 1e-14 * max(1.0, np.max(np.abs(vals))):
        raise ValueError("hardy_ratio requires a field vanishing on the boundary")
    U = v.components()
    q = _element_gradients(grid, U)
    q2 = (q**2).sum(axis=(1, 2))
    den = float((grid.area * q2 ** (p / 2.0)).sum()) ** (1.0 / p)
    if den == 0.0:
        raise ValueError("hardy_ratio undefined for a constant field")
    interior = ~grid.boundary
    w = grid.node_area[interior]
    ratio_terms = np.abs(vals[interior]) / grid.delta[interior]
    num = float((w * ratio_terms**p).sum()) ** (1.0 / p)
    return num / den


def h1_relative_error(grid: DomainGrid, u, grad_exact) -> float:
    """Element-gradient L2 error against an analytic gradient at centroids."""
    U = u.components() if isinstance(u, PField) else np.asarray(u)
    if U.ndim == 1:
        U = U[:, None]
    q = _element_gradients(grid, U)
    qc = q[:, :, 0] + (1j * q[:, :, 1] if U.shape[1] == 2 else 0.0)
    gex = np.asarray(grad_exact(grid.centroid), dtype=np.complex128)
    err2 = (np.abs(qc - gex) ** 2).sum(axis=1)
    ref2 = (np.abs(gex) ** 2).sum(axis=1)
    return float(math.sqrt((grid.area * err2).sum() / (grid.area * ref2).sum()))


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SolverSettings:
    """Continuation/Newton controls.

    eps values are relative to the RMS gradient of the initial extension
    when eps_relative is set, which makes the solve exactly equivariant
    under scaling of the datum.  outer_tol is the relative energy-decrease
    stopping threshold per continuation stage; residual_tol bounds the
    regularized dual residual accepted at the final stage.
    """

    eps_start: float = 1e-1
    eps_final: float = 1e-6
    eps_stages: int = 6
    eps_relative: bool = True
    outer_tol: float = 1e-11
    residual_tol: float = 1e-7
    max_iter: int = 60
    max_backtracks: int = 40
    init: str = "datum"   # datum | zero | random
    seed: int = 12345

    def __post_init__(self):
        if not (self.eps_start >= self.eps_final > 0.0):
            raise ValueError("eps schedule must decrease to a positive eps_final")
        if self.eps_stages < 1:
            raise ValueError("eps_stages must be at least 1")
        if self.outer_tol <= 0 or self.residual_tol <= 0:
            raise ValueError("tolerances must be positive")

    def schedule(self, scale: float) -> np.ndarray:
        base = np.geomspace(self.eps_start, self.eps_final, self.eps_stages)
        return base * (scale if self.eps_relative else 1.0)


class SolverConvergenceError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass
class SolveResult:
    field: PField
    energy: float
    iterations: int
    energy_history: list
    weak_residual: float          # eps = 0 diagnostic
    regularized_residual: float   # dual residual at eps_final
    eps_final_abs: float
    converged: bool


def _assemble_hessian(grid, coef_w, coef_rank1, q, ncomp):
    """Sparse Newton matrix for the regularized energy (all dofs)."""
    nel = grid.tri.shape[0]
    bb = np.einsum("eiv,ejv->eij", grid.grad, grid.grad)          # (nel, 3, 3)
    iq = np.einsum("eiv,evc->eic", grid.grad, q)                  # (nel, 3, ncomp)
    ndof_el = 3 * ncomp
    Hloc = np.zeros((nel, ndof_el, ndof_el))
    for c in range(ncomp):
        for d in range(ncomp):
            block = coef_rank1[:, None, None] * iq[:, :, c][:, :, None] * iq[:, :, d][:, None, :]
            if c == d:
                block = block + coef_w[:, None, None] * bb
            Hloc[:, c::ncomp, d::ncomp] = block
    dof = (grid.tri[:, :, None] * ncomp + np.arange(ncomp)[None, None, :]).reshape(nel, ndof_el)
    rows = np.repeat(dof, ndof_el, axis=1).ravel()
    cols = np.tile(dof, (1, ndof_el)).ravel()
    n = grid.npt * ncomp
    return sp.coo_matrix((Hloc.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _energy_from_q2(grid, gamma_c, p, q2, eps):
    return float((grid.area * gamma_c * (q2 + eps * eps) ** (p / 2.0)).sum())


def solve_dirichlet(grid: DomainGrid, gamma, p: float, datum: PField,
                    settings: SolverSettings | None = None,
                    initial: PField | None = None) -> SolveResult:
    """Minimize the regularized p-energy subject to the datum's boundary trace.

    The datum is a full field; its boundary values are the Dirichlet data
    and (with init = "datum") its interior values are the warm start.
    """
    if not p > 1:
        raise ValueError(f"p must be > 1, got {p}")
    settings = settings or SolverSettings()
    gamma_field = gamma if isinstance(gamma, ConductivityField) else ConductivityField(gamma)
    gamma_field.validate_on(grid)
    gamma_c = gamma_field(grid.centroid)

    mode = datum.mode
    ncomp = datum.ncomp
    U = None
    if initial is not None:
        if initial.mode != mode:
            raise ValueError("initial field mode must match the datum mode")
        U = initial.components().copy()
    elif settings.init == "datum":
        U = datum.components().copy()
    elif settings.init == "zero":
        U = np.zeros((grid.npt, ncomp))
    elif settings.init == "random":
        rng = np.random.default_rng(settings.seed)
        scale = float(np.max(np.abs(datum.values))) or 1.0
        U = rng.standard_normal((grid.npt, ncomp)) * scale
    else:
        raise ValueError(f"unknown init {settings.init!r}")
    U[grid.boundary] = datum.components()[grid.boundary]

    # Regularization scale: RMS gradient of the datum extension (the probe
    # or boundary-data extension), so eps tracks the datum amplitude.
    q0 = _element_gradients(grid, datum.components())
    grad_rms = math.sqrt(float(((q0**2).sum(axis=(1, 2)) * grid.area).sum())
                         / float(grid.area.sum()))
    scale = grad_rms if grad_rms > 0.0 else 1.0

    eps_list = settings.schedule(scale)
    if p == 2.0:
        eps_list = eps_list[-1:]  # the weight is eps-independent at p = 2

    interior = ~grid.boundary
    free = (interior[:, None] * np.ones(ncomp, dtype=bool)[None, :]).ravel()

    history = []
    total_iters = 0
    for stage, eps in enumerate(eps_list):
        is_final = stage == len(eps_list) - 1
        for it in range(settings.max_iter):
            q = _element_gradients(grid, U)
            q2 = (q**2).sum(axis=(1, 2))
            E = _energy_from_q2(grid, gamma_c, p, q2, eps)
            w = (q2 + eps * eps) ** ((p - 2.0) / 2.0)
            coef = grid.area * gamma_c * p * w
            g_el = np.einsum("eiv,evc->eic", grid.grad, q) * coef[:, None, None]
            g = np.zeros((grid.npt, ncomp))
            np.add.at(g, grid.tri.ravel(), g_el.reshape(-1, ncomp))
            gflat = g.ravel()[free]

            coef_rank1 = grid.area * gamma_c * p * (p - 2.0) * w / (q2 + eps * eps)
            H = _assemble_hessian(grid, coef, coef_rank1, q, ncomp)
            Hff = H[free][:, free]
            d = splu(Hff.tocsc()).solve(-gflat)
            decrement = float(-gflat @ d)
            if decrement < 0.0:
                raise SolverConvergenceError(
                    "Newton direction is not a descent direction", residual=None)

            D = np.zeros((grid.npt, ncomp))
            D.ravel()[free] = d
            t = 1.0
            for _ in range(settings.max_backtracks):
                U_try = U + t * D
                q2_try = (_element_gradients(grid, U_try)**2).sum(axis=(1, 2))
                E_try = _energy_from_q2(grid, gamma_c, p, q2_try, eps)
                if E_try <= E - 1e-4 * t * decrement + 1e-15 * abs(E):
                    break
                t *= 0.5
            else:
                raise SolverConvergenceError(
                    f"line search failed at eps = {eps:.3e}",
                    residual=_dual_residual(grid, gamma_c, p, U, eps))
            U = U_try
            total_iters += 1
            history.append((float(eps), E_try, decrement))
            rel_decrease = (E - E_try) / max(abs(E_try), 1e-300)
            if rel_decrease <= settings.outer_tol:
                if not is_final:
                    break
                # final stage also has to meet the dual-residual target
                if _dual_residual(grid, gamma_c, p, U, eps) <= settings.residual_tol:
                    break
                if decrement <= 1e-28 * max(abs(E_try), 1e-300):
                    break  # at float resolution; the post-loop check decides
        else:
            raise SolverConvergenceError(
                f"no convergence within {settings.max_iter} iterations "
                f"at eps = {eps:.3e}",
                residual=_dual_residual(grid, gamma_c, p, U, eps))

    eps_final_abs = float(eps_list[-1])
    res_reg = _dual_residual(grid, gamma_c, p, U, eps_final_abs)
    res0 = _dual_residual(grid, gamma_c, p, U, 0.0)
    q2 = (_element_gradients(grid, U)**2).sum(axis=(1, 2))
    E_final = _energy_from_q2(grid, gamma_c, p, q2, eps_final_abs)
    converged = res_reg <= settings.residual_tol
    if not converged:
        raise SolverConvergenceError(
            f"final regularized residual {res_reg:.3e} exceeds "
            f"residual_tol {settings.residual_tol:.3e}", residual=res_reg)

    field = PField(values=_values_from_components(U, mode), mode=mode)
    return SolveResult(field=field, energy=E_final, iterations=total_iters,
                       energy_history=history, weak_residual=res0,
                       regularized_residual=res_reg,
                       eps_final_abs=eps_final_abs, converged=converged)
