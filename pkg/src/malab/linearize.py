"""Linearizations of the Monge-Ampere equation around a convex base solution.

The base solution u0 induces a geometry: the covariant metric is the
Hessian D^2 u0, whose volume weight sqrt|g| equals sqrt F, and the stored
MetricField holds the inverse Hessian, which is both the contravariant
metric and the coefficient matrix of the linearized operator. The first
linearization solves g^{ab} d_ab v = 0 with the perturbation's boundary
data; the second linearization solves g^{ab} d_ab w = tr(G V1 G V2) with
zero data, where V_k are the Hessians of first-order solutions and G the
coefficient matrix; the adjoint problem carries the drift in divergence
form. Linear systems are solved iteratively (BiCGSTAB) with diagonal
preconditioning, as small nonsymmetric sparse systems converge quickly
under it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .complexcalc import deriv
from .grid import (BoundaryTrace, DomainGrid, GridError, MetricField,
                   ScalarField, boundary_restrict, interp_masked)
from .maforward import (MASolution, StencilOps, boundary_vector,
                        build_stencil_ops, eval_boundary_data, solve_ma,
                        solve_ma_zero)

__all__ = [
    "VectorField",
    "LinearSolveFailure",
    "solution_hessian",
    "metric_from_solution",
    "rim_extrapolated",
    "drift_field",
    "divergence_form_apply",
    "nondiv_solve",
    "adjoint_solve",
    "second_solve",
    "eps_consistency",
    "EpsReport",
]

ANISOTROPY_LIMIT = 20.0


@dataclass(frozen=True)
class VectorField:
    """Two-component field on a grid (drift vectors, gradients)."""

    c1: np.ndarray
    c2: np.ndarray
    grid: object
    backend: str = "grid"

    def norm_max(self, where=None) -> float:
        mag = np.hypot(self.c1, self.c2)
        return float(np.max(mag if where is None else mag[where]))


class LinearSolveFailure(RuntimeError):
    """Iterative linear solve failed; carries the residual history."""

    def __init__(self, msg: str, residuals):
        super().__init__(msg)
        self.residuals = residuals


# ---------------------------------------------------------------------------
# geometry from the base solution


def solution_hessian(sol: MASolution):
    """Discrete Hessian entries of a base solution on the interior numbering.

    Uses the same stencil operators the Newton solver used, so the returned
    entries are exactly the ones whose determinant met the residual target.
    Quasi-boundary rows have no PDE stencil; they inherit the entries of
    their interpolation anchors.
    """
    grid = sol.u.grid
    ops = build_stencil_ops(grid)
    U = sol.u.values[grid.mask]
    h11 = ops.L11 @ U + boundary_vector(ops, ops.g11, sol.phi)
    h22 = ops.L22 @ U + boundary_vector(ops, ops.g22, sol.phi)
    h12 = ops.L12 @ U + boundary_vector(ops, ops.g12, sol.phi)

    # anchor chase: every interpolation row copies its neighbor until all
    # values originate at PDE rows
    anchor = np.arange(ops.N)
    rows, cols = ops.R.nonzero()
    off = cols != rows
    anchor[rows[off]] = cols[off]
    for _ in range(8):
        bad = ~ops.pde[anchor]
        if not np.any(bad):
            break
        anchor[bad] = anchor[anchor[bad]]
    for h in (h11, h22, h12):
        h[~ops.pde] = h[anchor[~ops.pde]]
    return h11, h12, h22, ops


def metric_from_solution(sol: MASolution) -> MetricField:
    """Inverse Hessian of the base solution as the linearization coefficients.

    The returned MetricField stores the contravariant metric of the
    Hessian geometry; its matrix inverse is D^2 u0 and the covariant
    volume weight is sqrt det D^2 u0.
    """
    if not sol.convex:
        raise GridError("base solution carries no convexity certificate")
    h11, h12, h22, ops = solution_hessian(sol)
    det = h11 * h22 - h12 ** 2
    if np.min(det) <= 0.0 or np.min(h11) <= 0.0:
        raise GridError("base Hessian is not positive definite")
    m11 = ops.scatter(h22 / det)
    m12 = ops.scatter(-h12 / det)
    m22 = ops.scatter(h11 / det)
    return MetricField(m11, m12, m22, sol.u.grid, backend="hessian-inverse")


def rim_extrapolated(g: MetricField, band: float = 5.0,
                     depths: tuple = (6.0, 9.0)) -> MetricField:
    """Metric with the shallow boundary band rebuilt by normal-ray
    extrapolation from clean depths.

    Discrete Hessians of a solved field carry a lattice boundary layer:
    entry errors of order one at cut rows, decaying geometrically inward
    and independent of resolution when measured in cells. The layer is
    harmless to the linear solves, which want exactly those stencil
    values, but masked differentiation amplifies it, so the drift and any
    other derivative of the metric blow up near the rim. Here every node
    shallower than `band` cells gets each component replaced by a linear
    extrapolation along the inward normal from samples at `depths` cells,
    where the layer has died off. The result is smooth along rays at the
    cost of second-order accuracy in the band.
    """
    grid = g.grid
    if not isinstance(grid, DomainGrid):
        raise GridError("rim extrapolation expects a domain grid")
    if len(depths) != 2 or depths[0] >= depths[1] or band > depths[0]:
        raise GridError("need band <= depths[0] < depths[1]")
    X, Y = grid.meshgrid()
    if grid.kind == "disk":
        nx, ny = X.copy(), Y.copy()
    elif grid.kind == "ellipse":
        nx = X / grid.params["a"] ** 2
        ny = Y / grid.params["b"] ** 2
    else:
        raise GridError(f"no analytic normals for kind {grid.kind!r}")
    mag = np.hypot(nx, ny)
    mag[mag == 0.0] = 1.0           # domain center, never in the band
    nx, ny = nx / mag, ny / mag

    reach = (band + 1.0) * grid.dx
    t = np.full(grid.mask.shape, np.inf)
    m = grid.mask
    t[m] = grid.ray_cut(X[m], Y[m], reach * nx[m], reach * ny[m]) * reach
    sel = m & (t < band * grid.dx)
    if not np.any(sel):
        return g

    px, py, depth = X[sel], Y[sel], t[sel]
    t1, t2 = depths[0] * grid.dx, depths[1] * grid.dx
    frac = (depth - t1) / (t2 - t1)
    fixed = []
    for comp in (g.g11, g.g12, g.g22):
        v1 = interp_masked(comp, grid, np.column_stack(
            [px - (t1 - depth) * nx[sel], py - (t1 - depth) * ny[sel]]))
        v2 = interp_masked(comp, grid, np.column_stack(
            [px - (t2 - depth) * nx[sel], py - (t2 - depth) * ny[sel]]))
        out = comp.copy()
        out[sel] = v1 + (v2 - v1) * frac
        fixed.append(out)
    return MetricField(fixed[0], fixed[1], fixed[2], grid,
                       backend=g.backend + "+rim-extrapolated")


def _volume_weight(g: MetricField, where) -> np.ndarray:
    """sqrt|g| of the covariant metric: 1 / sqrt(det of the stored matrix)."""
    w = np.ones_like(g.g11)
    d = g.det()
    if np.min(d[where]) <= 0.0:
        raise GridError("metric determinant is not positive")
    w[where] = 1.0 / np.sqrt(d[where])
    return w


def drift_field(g: MetricField) -> VectorField:
    """Drift of the Hessian geometry: X^b = |g|^{-1/2} d_a(|g|^{1/2} g^{ab}).

    g^{ab} is the stored coefficient matrix and |g|^{1/2} the covariant
    volume weight. The differentiation backend follows the grid type:
    spectral on periodic boxes, masked differences on domain grids.
    """
    grid = g.grid
    where = grid.mask if isinstance(grid, DomainGrid) else slice(None)
    w = _volume_weight(g, where)
    c1 = deriv(w * g.g11, grid, 1, 0) + deriv(w * g.g12, grid, 0, 1)
    c2 = deriv(w * g.g12, grid, 1, 0) + deriv(w * g.g22, grid, 0, 1)
    backend = "spectral" if not isinstance(grid, DomainGrid) else "fd-masked"
    return VectorField(c1 / w, c2 / w, grid, backend=backend)


def divergence_form_apply(g: MetricField, X: VectorField, v: np.ndarray):
    """Apply (1/w) d_a(w g^{ab} d_b v) - X . grad v by explicit product rule.

    This is the divergence-form route to the same operator that
    nondiv_solve assembles from bare coefficients; comparing the two on a
    smooth field verifies the product-rule identity behind the drift. The
    result is only meaningful away from the boundary; the second return
    value masks the nodes where every inner differentiation was central.
    """
    grid = g.grid
    if not isinstance(grid, DomainGrid):
        raise GridError("divergence_form_apply expects a domain grid")
    w = _volume_weight(g, grid.mask)
    f1 = w * (g.g11 * deriv(v, grid, 1, 0) + g.g12 * deriv(v, grid, 0, 1))
    f2 = w * (g.g12 * deriv(v, grid, 1, 0) + g.g22 * deriv(v, grid, 0, 1))
    out = (deriv(f1, grid, 1, 0) + deriv(f2, grid, 0, 1)) / w
    out -= X.c1 * deriv(v, grid, 1, 0) + X.c2 * deriv(v, grid, 0, 1)
    # trustworthy where two nested central stencils fit
    m = grid.mask
    deep = m.copy()
    for sh in (1, 2):
        for ax in (0, 1):
            deep &= np.roll(m, sh, axis=ax) & np.roll(m, -sh, axis=ax)
    return out, deep


# ---------------------------------------------------------------------------
# assembly and the iterative solve


def _coeffs_at_nodes(g: MetricField, ops: StencilOps):
    m = ops.grid.mask
    a11 = g.g11[m]
    a12 = g.g12[m]
    a22 = g.g22[m]
    lo, hi = g.eig_bounds(where=m)
    if lo <= 0.0:
        raise GridError("coefficient matrix is not positive definite")
    if hi / lo > ANISOTROPY_LIMIT:
        raise GridError(
            f"anisotropy ratio {hi / lo:.1f} exceeds {ANISOTROPY_LIMIT}; "
            "the 9-point stencil is not reliable here")
    return a11, a12, a22


def _nondiv_matrix(ops: StencilOps, a11, a12, a22, X1=None, X2=None, c0=None):
    A = (sp.diags(a11) @ ops.L11 + 2.0 * sp.diags(a12) @ ops.L12
         + sp.diags(a22) @ ops.L22)
    if X1 is not None:
        A = A + sp.diags(X1) @ ops.L1 + sp.diags(X2) @ ops.L2
    if c0 is not None:
        A = A + sp.diags(np.where(ops.pde, c0, 0.0))
    return (A + ops.R).tocsr()


def _nondiv_rhs(ops: StencilOps, data, a11, a12, a22, f=None,
                X1=None, X2=None):
    rhs = np.zeros(ops.N) if f is None else np.array(f, dtype=float)
    rhs -= a11 * boundary_vector(ops, ops.g11, data)
    rhs -= 2.0 * a12 * boundary_vector(ops, ops.g12, data)
    rhs -= a22 * boundary_vector(ops, ops.g22, data)
    if X1 is not None:
        rhs -= X1 * boundary_vector(ops, ops.g1, data)
        rhs -= X2 * boundary_vector(ops, ops.g2, data)
    rhs[~ops.pde] = boundary_vector(ops, ops.r_ghost, data)[~ops.pde]
    return rhs


def _source_vec(f, grid: DomainGrid):
    """Interior source as a vector over the masked numbering, or None."""
    if f is None:
        return None
    if isinstance(f, ScalarField):
        f = f.values
    arr = np.asarray(f, dtype=float)
    if arr.ndim == 2:
        return arr[grid.mask]
    if arr.ndim == 0:
        return np.full(int(grid.mask.sum()), float(arr))
    return arr


def _iter_solve(A: sp.csr_matrix, rhs: np.ndarray, rtol: float,
                maxiter: int) -> np.ndarray:
    diag = A.diagonal()
    if np.any(diag == 0.0):
        raise GridError("zero diagonal entry in the assembled system")
    rhs_norm = float(np.linalg.norm(rhs))
    if rhs_norm == 0.0:
        return np.zeros_like(rhs)
    M = sp.diags(1.0 / diag)
    history = []

    def track(xk):
        history.append(float(np.linalg.norm(rhs - A @ xk)))

    x, info = spla.bicgstab(A, rhs, M=M, rtol=rtol, atol=0.0,
                            maxiter=maxiter, callback=track)
    if info != 0:
        # BiCGSTAB can break down on noise-level right sides just short
        # of the target; a direct factorization is cheap at these sizes
        # and must still meet the same residual bound.
        x = spla.spsolve(A.tocsc(), rhs)
        res = float(np.linalg.norm(rhs - A @ x))
        history.append(res)
        if res > rtol * rhs_norm:
            raise LinearSolveFailure(
                f"iterative solve failed (info {info}) and the direct "
                f"fallback left residual {res:.3e} above rtol {rtol:g}",
                history)
    return x


def nondiv_solve(g: MetricField, phi, f=None, *, rtol: float = 1e-10,
                 maxiter: int = 20000, cross_check: bool = True) -> ScalarField:
    """Solve g^{ab} d_ab v = f (default 0) with Dirichlet data phi.

    Assembles the equation twice: from the bare coefficients, and through
    the divergence-form expansion whose drift terms cancel, which guards
    the volume-weight wiring. The divergence-route residual of the
    computed solution must stay within a factor 10 of the primary one.
    """
    grid = g.grid
    if not isinstance(grid, DomainGrid):
        raise GridError("nondiv_solve expects a domain grid")
    ops = build_stencil_ops(grid)
    a11, a12, a22 = _coeffs_at_nodes(g, ops)
    fvec = _source_vec(f, grid)
    A = _nondiv_matrix(ops, a11, a12, a22)
    rhs = _nondiv_rhs(ops, phi, a11, a12, a22, f=fvec)
    v = _iter_solve(A, rhs, rtol, maxiter)

    if cross_check:
        w = _volume_weight(g, grid.mask)[grid.mask]
        B = _nondiv_matrix(ops, w * a11, w * a12, w * a22)
        B = sp.diags(np.where(ops.pde, 1.0 / w, 1.0)) @ B
        rhsB = _nondiv_rhs(ops, phi, a11, a12, a22, f=fvec)
        scale = float(np.max(np.abs(rhs))) + 1.0
        resA = float(np.max(np.abs(A @ v - rhs)))
        resB = float(np.max(np.abs(B @ v - rhsB)))
        if resB > 10.0 * max(resA, rtol * scale):
            raise LinearSolveFailure(
                "divergence-form assembly disagrees with the bare-"
                f"coefficient route: {resB:.3e} vs {resA:.3e}", [resA, resB])

    return ScalarField(ops.scatter(v), grid, backend="nondiv-bicgstab")


def adjoint_solve(g: MetricField, X: VectorField, phi_star, f=None, *,
                  rtol: float = 1e-10, maxiter: int = 20000) -> ScalarField:
    """Solve the adjoint problem Lap_g v* + (1/w) d_b(w X^b v*) = f.

    Expanded, the operator is g^{ab} d_ab + (X_g + X) . grad + c0 with
    c0 = (1/w) d_b(w X^b); w is the covariant volume weight.
    """
    grid = g.grid
    if not isinstance(grid, DomainGrid):
        raise GridError("adjoint_solve expects a domain grid")
    ops = build_stencil_ops(grid)
    a11, a12, a22 = _coeffs_at_nodes(g, ops)
    Xg = drift_field(g)
    w = _volume_weight(g, grid.mask)
    c0_full = (deriv(w * X.c1, grid, 1, 0) + deriv(w * X.c2, grid, 0, 1)) / w
    m = grid.mask
    X1 = (Xg.c1 + X.c1)[m]
    X2 = (Xg.c2 + X.c2)[m]
    c0 = c0_full[m]
    fvec = _source_vec(f, grid)
    A = _nondiv_matrix(ops, a11, a12, a22, X1, X2, c0)
    rhs = _nondiv_rhs(ops, phi_star, a11, a12, a22, f=fvec, X1=X1, X2=X2)
    v = _iter_solve(A, rhs, rtol, maxiter)
    return ScalarField(ops.scatter(v), grid, backend="adjoint-bicgstab")


def _hessian_of(ops: StencilOps, vals: np.ndarray, data):
    vec = vals[ops.grid.mask]
    v11 = ops.L11 @ vec + boundary_vector(ops, ops.g11, data)
    v22 = ops.L22 @ vec + boundary_vector(ops, ops.g22, data)
    v12 = ops.L12 @ vec + boundary_vector(ops, ops.g12, data)
    return v11, v12, v22


def second_solve(g: MetricField, X: VectorField, v1: ScalarField,
                 v2: ScalarField, phi1=None, phi2=None, *,
                 rtol: float = 1e-10, maxiter: int = 20000) -> ScalarField:
    """Second-linearization solve: g^{ab} d_ab w = tr(G V1 G V2), w = 0 on
    the boundary.

    V_k are the discrete Hessians of the first-order solutions and G the
    coefficient matrix. Supplying phi1/phi2 closes the Hessian stencils
    with the exact boundary data of v1/v2; otherwise their traces are
    fitted from the interior. X is accepted for interface uniformity with
    the adjoint; the non-divergence form of the equation does not use it.
    """
    grid = g.grid
    ops = build_stencil_ops(grid)
    if phi1 is None:
        phi1 = boundary_restrict(v1)
    if phi2 is None:
        phi2 = boundary_restrict(v2)
    a11, a12, a22 = _coeffs_at_nodes(g, ops)
    p11, p12, p22 = _hessian_of(ops, v1.values, phi1)
    q11, q12, q22 = _hessian_of(ops, v2.values, phi2)

    # entries of G V_k, then tr(G V1 G V2) = sum_ij (G V1)_ij (G V2)_ji
    b11 = a11 * p11 + a12 * p12
    b12 = a11 * p12 + a12 * p22
    b21 = a12 * p11 + a22 * p12
    b22 = a12 * p12 + a22 * p22
    c11 = a11 * q11 + a12 * q12
    c12 = a11 * q12 + a12 * q22
    c21 = a12 * q11 + a22 * q12
    c22 = a12 * q12 + a22 * q22
    rhs_trace = b11 * c11 + b12 * c21 + b21 * c12 + b22 * c22
    rhs_trace[~ops.pde] = 0.0

    return nondiv_solve(g, 0.0, f=rhs_trace, rtol=rtol, maxiter=maxiter)


# ---------------------------------------------------------------------------
# expansion consistency


@dataclass(frozen=True)
class EpsReport:
    """Measured agreement between solver differences and linearizations."""

    eps1: float
    eps2: float
    scales: tuple
    e1: tuple                # |(u_{e1,0} - u0)/e1 - v1| per scale
    e2: tuple                # mixed-difference error against w per scale
    rem1: tuple              # raw remainder |u_{e1,0} - u0 - e1 v1|
    slope1: float
    slope2: float


def eps_consistency(F, phi1, phi2, eps1: float = 0.1, eps2: float = 0.1,
                    scales=(1.0, 0.3, 0.1), grid: DomainGrid | None = None,
                    **opts) -> EpsReport:
    """Check the two-parameter expansion of the solved family.

    For boundary data s eps1 phi1 + s eps2 phi2, the first divided
    difference converges to the first linearization and the mixed second
    difference to the second linearization, both at rate O(s).
    """
    if grid is None:
        if not isinstance(F, ScalarField):
            raise GridError("pass a grid when F is not a ScalarField")
        grid = F.grid
    base = solve_ma_zero(F, grid, **opts)
    g = metric_from_solution(base)
    X = drift_field(g)
    v1 = nondiv_solve(g, phi1)
    v2 = nondiv_solve(g, phi2)
    w = second_solve(g, X, v1, v2, phi1, phi2)

    b = grid.boundary
    p1 = eval_boundary_data(grid, phi1, b.points[:, 0], b.points[:, 1])
    p2 = eval_boundary_data(grid, phi2, b.points[:, 0], b.points[:, 1])
    m = grid.mask

    e1s, e2s, rems = [], [], []
    for s in scales:
        a, c = s * eps1, s * eps2
        u10 = solve_ma(F, BoundaryTrace(a * p1, grid), grid, **opts)
        u01 = solve_ma(F, BoundaryTrace(c * p2, grid), grid, **opts)
        u11 = solve_ma(F, BoundaryTrace(a * p1 + c * p2, grid), grid, **opts)
        d1 = (u10.u.values - base.u.values) / a - v1.values
        mixed = (u11.u.values - u10.u.values - u01.u.values
                 + base.u.values) / (a * c)
        d2 = mixed - w.values
        e1s.append(float(np.max(np.abs(d1[m]))))
        e2s.append(float(np.max(np.abs(d2[m]))))
        rems.append(float(np.max(np.abs((u10.u.values - base.u.values
                                         - a * v1.values)[m]))))
    ls = np.log(np.asarray(scales, dtype=float))
    slope1 = float(np.polyfit(ls, np.log(e1s), 1)[0])
    slope2 = float(np.polyfit(ls, np.log(e2s), 1)[0])
    return EpsReport(eps1, eps2, tuple(scales), tuple(e1s), tuple(e2s),
                     tuple(rems), slope1, slope2)
