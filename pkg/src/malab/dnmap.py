"""Boundary measurement maps and boundary determination formulas.

The nonlinear map sends Dirichlet data to the outward normal derivative
of the Monge-Ampere solution; its linearization at a base solution sends
data to the conormal derivative sqrt|g| g^{ik} d_i v nu_k of the
first-linearized solution, and projects onto a Fourier basis on the
boundary ring to give a matrix. In the opposite direction, the boundary
trace of the base normal derivative, the boundary values of the source,
and the curvature determine the full Hessian of the base solution on the
boundary pointwise, and one more normal derivative of the source
determines the third normal derivative. All tangential differentiation
is spectral in the periodic ring parameter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (BoundaryTrace, DomainGrid, GridError, MetricField,
                   ScalarField, boundary_restrict, normal_derivative)
from .linearize import metric_from_solution, nondiv_solve
from .maforward import eval_boundary_data, solve_ma

__all__ = [
    "DNMatrix",
    "dn_full",
    "dn_full_derivative",
    "dn_lin",
    "dn_lin_matrix",
    "recover_boundary_hessian",
    "recover_boundary_third",
    "tangential_derivative",
]


# ---------------------------------------------------------------------------
# spectral calculus on the boundary ring


def _circle_deriv(vals: np.ndarray) -> np.ndarray:
    """d/dtheta of ring samples, theta the uniform parameter in [0, 2pi)."""
    M = len(vals)
    fh = np.fft.rfft(vals)
    k = np.arange(len(fh), dtype=float)
    fh *= 1j * k
    if M % 2 == 0:
        fh[-1] = 0.0            # the Nyquist mode has no odd derivative
    return np.fft.irfft(fh, n=M)


def _ring_speed(grid: DomainGrid) -> np.ndarray:
    """|dp/dtheta| along the ring, from the stored boundary points."""
    b = grid.boundary
    return np.hypot(_circle_deriv(b.points[:, 0]),
                    _circle_deriv(b.points[:, 1]))


def tangential_derivative(grid: DomainGrid, vals: np.ndarray,
                          order: int = 1) -> np.ndarray:
    """d^order/ds^order of ring samples, s the arclength parameter."""
    speed = _ring_speed(grid)
    out = np.asarray(vals, dtype=float)
    for _ in range(order):
        out = _circle_deriv(out) / speed
    return out


def _ring_eval(grid: DomainGrid, data) -> np.ndarray:
    b = grid.boundary
    return eval_boundary_data(grid, data, b.points[:, 0], b.points[:, 1])


def _band_limit(vals: np.ndarray, kmax: int | None) -> np.ndarray:
    """Drop ring modes above kmax from a measured trace.

    Traces extracted from solved fields carry node-decorrelated
    interpolation noise; spectral differentiation amplifies mode k by k,
    so formulas that differentiate a measured trace twice are dominated
    by its highest modes. Truncation is exact on band-limited truth and
    spectrally accurate on analytic traces.
    """
    if kmax is None:
        return vals
    fh = np.fft.rfft(vals)
    fh[kmax + 1:] = 0.0
    return np.fft.irfft(fh, n=len(vals))


def _tangent(grid: DomainGrid) -> np.ndarray:
    """Counterclockwise unit tangent: outward normal rotated by +90 deg."""
    nu = grid.boundary.normal
    return np.column_stack([-nu[:, 1], nu[:, 0]])


# ---------------------------------------------------------------------------
# measurement maps


def dn_full(F, phi=None, grid: DomainGrid | None = None, **opts) -> BoundaryTrace:
    """Normal derivative trace of the Monge-Ampere solution with data phi."""
    sol = solve_ma(F, phi, grid, **opts)
    return normal_derivative(sol.u, anchor=sol.phi)


def dn_lin(g: MetricField, X, phi, *, rtol: float = 1e-10,
           maxiter: int = 20000) -> BoundaryTrace:
    """Conormal derivative of the first-linearized solution.

    Solves g^{ab} d_ab v = 0 with data phi and evaluates
    sqrt|g| g^{ik} d_i v nu_k on the ring, splitting the gradient into the
    normal part (one-sided ray fit anchored at the exact data) and the
    tangential part (spectral derivative of the data itself). X is
    accepted for signature uniformity with the adjoint-side maps; the
    first-linearized equation carries no drift.
    """
    grid = g.grid
    if not isinstance(grid, DomainGrid):
        raise GridError("dn_lin expects a domain grid")
    v = nondiv_solve(g, phi, rtol=rtol, maxiter=maxiter)
    p = _ring_eval(grid, phi)
    anchor = BoundaryTrace(p, grid)
    dnu = normal_derivative(v, anchor=anchor).values
    dtau = tangential_derivative(grid, p)

    b11 = boundary_restrict(ScalarField(g.g11, grid)).values
    b12 = boundary_restrict(ScalarField(g.g12, grid)).values
    b22 = boundary_restrict(ScalarField(g.g22, grid)).values
    det = b11 * b22 - b12 ** 2
    if np.min(det) <= 0.0:
        raise GridError("metric trace is not positive definite on the ring")
    weight = 1.0 / np.sqrt(det)

    nu = grid.boundary.normal
    tau = _tangent(grid)
    gn1 = b11 * nu[:, 0] + b12 * nu[:, 1]
    gn2 = b12 * nu[:, 0] + b22 * nu[:, 1]
    nu_g_nu = nu[:, 0] * gn1 + nu[:, 1] * gn2
    tau_g_nu = tau[:, 0] * gn1 + tau[:, 1] * gn2
    return BoundaryTrace(weight * (nu_g_nu * dnu + tau_g_nu * dtau), grid)


def dn_full_derivative(base, phi, *, rtol: float = 1e-10,
                       maxiter: int = 20000) -> BoundaryTrace:
    """Exact derivative of dn_full at a solved base.

    The full map composes the nonlinear solve with a normal-derivative
    extraction that is linear in the field and its boundary anchor, so
    its derivative is the same extraction applied to the first variation
    of the solve. That variation solves the linearized equation whose
    coefficients are the base's own stencil inverse Hessian; any other
    coefficient choice leaves an O(dx)-layer mismatch that shows up as a
    linear-in-epsilon leak in remainder sweeps. The conormal-weighted
    dn_lin agrees with this map when the base metric has unit conormal
    weight on the ring (F = 1 bases); in general they differ at the
    discretization level.
    """
    g = metric_from_solution(base)
    grid = g.grid
    v = nondiv_solve(g, phi, rtol=rtol, maxiter=maxiter)
    anchor = BoundaryTrace(_ring_eval(grid, phi), grid)
    return normal_derivative(v, anchor=anchor)


@dataclass(frozen=True)
class DNMatrix:
    """Linearized measurement map over the ring Fourier basis.

    Row i holds the coefficients of basis function i in the image of
    basis function j; labels order the basis as 1, cos k, sin k for
    k = 1..order.
    """

    values: np.ndarray
    labels: tuple
    order: int
    grid: DomainGrid

    def to_csv(self) -> str:
        lines = ["basis," + ",".join(self.labels)]
        for lab, row in zip(self.labels, self.values):
            lines.append(lab + "," + ",".join("%.16e" % x for x in row))
        return "\n".join(lines) + "\n"


def _basis_values(theta: np.ndarray, K: int):
    cols = [np.ones_like(theta)]
    labels = ["1"]
    for k in range(1, K + 1):
        cols.append(np.cos(k * theta))
        labels.append(f"cos{k}")
        cols.append(np.sin(k * theta))
        labels.append(f"sin{k}")
    return cols, labels


def _basis_project(vals: np.ndarray, K: int) -> np.ndarray:
    M = len(vals)
    fh = np.fft.rfft(vals)
    out = np.empty(2 * K + 1)
    out[0] = fh[0].real / M
    for k in range(1, K + 1):
        out[2 * k - 1] = 2.0 * fh[k].real / M
        out[2 * k] = -2.0 * fh[k].imag / M
    return out


def dn_lin_matrix(g: MetricField, X, K: int = 6, **opts) -> DNMatrix:
    """Assemble the linearized map column-by-column over the Fourier basis."""
    grid = g.grid
    M = len(grid.boundary)
    if 2 * K + 1 > M // 2:
        raise GridError(f"basis order {K} too large for a ring of {M} nodes")
    theta = 2.0 * np.pi * np.arange(M) / M
    cols, labels = _basis_values(theta, K)
    A = np.empty((2 * K + 1, 2 * K + 1))
    for j, col in enumerate(cols):
        out = dn_lin(g, X, BoundaryTrace(col, grid), **opts)
        A[:, j] = _basis_project(out.values, K)
    return DNMatrix(A, tuple(labels), K, grid)


# ---------------------------------------------------------------------------
# boundary determination


def recover_boundary_hessian(lam0: BoundaryTrace, Fb, grid: DomainGrid,
                             data=None, frame: str = "local",
                             kmax: int | None = None):
    """Full Hessian of the base solution on the boundary, node by node.

    In the tangent/normal frame, the arclength second derivative of the
    Dirichlet data gives u_tt = phi'' + kappa * dnu_u; tangential
    differentiation of the normal derivative gives
    u_tn = (dnu_u)' - kappa * phi'; and the equation itself closes the
    system with u_nn = (F + u_tn^2) / u_tt. Returns the three traces
    (u_tt, u_tn, u_nn), or the Cartesian entries (u_11, u_12, u_22) when
    frame="cartesian". kmax band-limits the measured trace before
    arclength differentiation; exact inputs need none.
    """
    if frame not in ("local", "cartesian"):
        raise GridError(f"unknown frame {frame!r}")
    lam = _band_limit(np.asarray(lam0.values, dtype=float), kmax)
    fb = _ring_eval(grid, Fb)
    if np.min(fb) <= 0.0:
        raise GridError("boundary source values must be positive")
    kappa = grid.boundary.curvature
    phi = np.zeros_like(lam) if data is None else _ring_eval(grid, data)
    dphi = tangential_derivative(grid, phi)
    ddphi = tangential_derivative(grid, dphi)

    utt = ddphi + kappa * lam
    if np.min(utt) <= 0.0:
        raise GridError(
            "tangential second derivative of the base is not positive; "
            "boundary determination requires a uniformly convex base")
    utn = tangential_derivative(grid, lam) - kappa * dphi
    unn = (fb + utn ** 2) / utt

    if frame == "local":
        traces = (utt, utn, unn)
    else:
        nu = grid.boundary.normal
        tau = _tangent(grid)
        t1, t2 = tau[:, 0], tau[:, 1]
        n1, n2 = nu[:, 0], nu[:, 1]
        traces = (
            utt * t1 * t1 + 2.0 * utn * t1 * n1 + unn * n1 * n1,
            utt * t1 * t2 + utn * (t1 * n2 + t2 * n1) + unn * n1 * n2,
            utt * t2 * t2 + 2.0 * utn * t2 * n2 + unn * n2 * n2,
        )
    return tuple(BoundaryTrace(t, grid) for t in traces)


def recover_boundary_third(lam0: BoundaryTrace, Fb, dnu_F, second,
                           grid: DomainGrid, data=None) -> BoundaryTrace:
    """Third normal derivative of the base solution on the boundary.

    Differentiates det D^2 u = F along the normal and solves for the pure
    normal third derivative. The frame components (u_tt, u_tn, u_nn) come
    from a prior second-order recovery; their arclength derivatives pick
    up rotation terms through the curvature:

        u_ttn = u_tn' + kappa (u_nn - u_tt)
        u_tnn = u_nn' - 2 kappa u_tn

    and the differentiated equation gives
    u_nnn = (dnu_F - u_ttn u_nn + 2 u_tn u_tnn) / u_tt.
    """
    utt = np.asarray(second[0].values, dtype=float)
    utn = np.asarray(second[1].values, dtype=float)
    unn = np.asarray(second[2].values, dtype=float)
    if np.min(utt) <= 0.0:
        raise GridError("second-order recovery is not uniformly convex")
    kappa = grid.boundary.curvature
    dF = _ring_eval(grid, dnu_F)
    uttn = tangential_derivative(grid, utn) + kappa * (unn - utt)
    utnn = tangential_derivative(grid, unn) - 2.0 * kappa * utn
    unnn = (dF - uttn * unn + 2.0 * utn * utnn) / utt
    return BoundaryTrace(unnn, grid)
