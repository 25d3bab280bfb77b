"""Complex geometric optics solutions for the planar drift Laplacian.

Everything here serves one construction: exponentially growing solutions of

    -lap v + X . grad v + q v = 0

on a padded box, built from a holomorphic polynomial phase.  The operator
factorizes through a gauge transform killing the first-order term,

    -lap + X . grad + q  =  2 G_c (dzb*) [ m dzb ( G . ) ] + Q,   dzb* = -2 dz,

where G = exp(i alpha) with dzb(alpha) = (i/4)(X1 + i X2), G_c = exp(i
conj(alpha)) is its conjugate partner, and m = exp(-2i Re alpha) is a
unimodular middle weight.  The zeroth-order coefficient Q this factorization
carries is

    Q = |X|^2 / 4 - div X / 2 - (i/2) curl X + q,

and the whole identity is checked numerically to spectral accuracy by
factorization_check.  (The drift parts of Q appear in the literature with
the opposite signs next to an outer weight 1/G_c and a middle weight
|G|^-2; that sign set leaves an O(1) residual in the identity, so this
module keeps the set the residual actually certifies.  potential_Q below
retains the conventional signs for reference.)

Given the factorization, a solution v = G^-1 exp(Phi/h) (a + r) with
holomorphic Phi and a requires the remainder r to satisfy a fixed-point
equation driven by two oscillatory inverses.  With osc the oscillatory
right inverse of dzb (phase exp(-2i psi/h)) and P* the matching right
inverse of dzb* = -2 dz (phase exp(+2i psi/h)),

    b   = -P*( V a ),      T t = P*( V osc( V' t ) ),
    s   = sum_{j<=K} T^j b,  r = -osc( V' s ),
    V   = Q exp(-2i Re alpha) / 2,   V' = -exp(+2i Re alpha),

truncated at K terms.  The remainder decays with h at the same rate the
oscillatory inverses do: like h (up to logs) when psi has a nondegenerate
critical point and like h^1 or better when it has none, which is what the
decay sweeps measure.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .complexcalc import (cauchy_inverse, oscillatory_dbar_inv,
                          oscillatory_dbar_inv_conj, periodic_fd4,
                          spectral_deriv)
from .grid import ComplexField, GridError, PaddedGrid
from .linearize import VectorField

DEPTH_DEFAULT = 6                       # series truncation depth
H_SWEEP = (0.4, 0.283, 0.2, 0.141, 0.1)  # standard decay-sweep values


# ---------------------------------------------------------------------------
# spectral Wirtinger helpers on raw arrays


def _dz(vals: np.ndarray, grid: PaddedGrid) -> np.ndarray:
    return 0.5 * (spectral_deriv(vals, grid, 1, 0)
                  - 1j * spectral_deriv(vals, grid, 0, 1))


def _dzb(vals: np.ndarray, grid: PaddedGrid) -> np.ndarray:
    return 0.5 * (spectral_deriv(vals, grid, 1, 0)
                  + 1j * spectral_deriv(vals, grid, 0, 1))


def _l2(vals: np.ndarray, grid: PaddedGrid, where=None) -> float:
    v2 = np.abs(vals) ** 2
    if where is not None:
        v2 = np.where(where, v2, 0.0)
    return float(np.sqrt(np.real(grid.quadrature(v2))))


def _require_padded(grid) -> PaddedGrid:
    if not isinstance(grid, PaddedGrid):
        raise GridError("CGO machinery needs a padded periodic box")
    return grid


# ---------------------------------------------------------------------------
# one-form bookkeeping and gauge transform


def oneform_split(X: VectorField) -> tuple[ComplexField, ComplexField]:
    """Split X1 dx1 + X2 dx2 into its dz and dzb coefficients.

    X1 dx1 + X2 dx2 = (X1 - i X2)/2 dz + (X1 + i X2)/2 dzb; returns the
    coefficient pair (dz part, dzb part).
    """
    grid = _require_padded(X.grid)
    w = X.c1 + 1j * X.c2
    return (ComplexField(0.5 * np.conj(w), grid, backend="oneform"),
            ComplexField(0.5 * w, grid, backend="oneform"))


def _gauge_source(X: VectorField) -> np.ndarray:
    """Right side of the gauge equation dzb(alpha) = (i/4)(X1 + i X2)."""
    return 0.25j * (X.c1 + 1j * X.c2)


def gauge(X: VectorField) -> tuple[ComplexField, ComplexField, ComplexField]:
    """Gauge transform killing the drift: alpha, exp(i alpha), conj partner.

    alpha is the Cauchy transform of the dzb-coefficient source, so it
    carries the usual 1/z tail; exp(i alpha) never vanishes, with |G| >=
    exp(-max |Im alpha|) nodewise.  Drifts reaching the outer third of the
    box are rejected by the transform's support guard.
    """
    grid = _require_padded(X.grid)
    src = ComplexField(_gauge_source(X), grid, backend="gauge")
    alpha = cauchy_inverse(src)
    ga = np.exp(1j * alpha.values)
    gc = np.exp(1j * np.conj(alpha.values))
    return (alpha,
            ComplexField(ga, grid, backend="gauge"),
            ComplexField(gc, grid, backend="gauge"))


def _spectral_gauge(X: VectorField) -> np.ndarray:
    """Gauge field with dzb(alpha) = (i/4)(X1 + i X2) to spectral accuracy.

    A periodic field cannot produce the lattice mean of the source, so that
    one mode rides on an explicit conj(z) term; every other Fourier mode is
    divided exactly.  Used internally where the factorization identity must
    hold far below the Cauchy-transform quadrature floor.
    """
    grid = _require_padded(X.grid)
    src = _gauge_source(X)
    K1, K2 = grid.wavenumbers()
    sym = 0.5 * (1j * K1 - K2)          # spectral symbol of dzb
    sh = np.fft.fft2(src)
    mean = sh[0, 0] / grid.n ** 2
    sym[0, 0] = 1.0
    sh = sh / sym
    sh[0, 0] = 0.0
    return np.fft.ifft2(sh) + mean * np.conj(grid.zz)


# ---------------------------------------------------------------------------
# zeroth-order coefficients


def _drift_scalars(X: VectorField):
    grid = X.grid
    div = spectral_deriv(X.c1, grid, 1, 0) + spectral_deriv(X.c2, grid, 0, 1)
    curl = spectral_deriv(X.c2, grid, 1, 0) - spectral_deriv(X.c1, grid, 0, 1)
    absq = X.c1 * X.c1 + X.c2 * X.c2
    return absq, div, curl


def potential_Q(X: VectorField, q=0.0) -> ComplexField:
    """Conventional zeroth-order coefficient (i/2) curl X - |X|^2/4 + div X/2 + q.

    Complex unless X is curl-free.  For X = grad(rho) this is
    -|grad rho|^2/4 + lap(rho)/2 + q.  Note the verified factorization
    carries factor_potential, whose drift part is the negative of this one.
    """
    grid = _require_padded(X.grid)
    absq, div, curl = _drift_scalars(X)
    vals = 0.5j * curl - 0.25 * absq + 0.5 * div + np.asarray(q)
    return ComplexField(vals.astype(complex), grid, backend="spectral")


def factor_potential(X: VectorField, q=0.0) -> ComplexField:
    """Zeroth-order coefficient the verified factorization carries.

    |X|^2/4 - div X/2 - (i/2) curl X + q: the drift part is the negative of
    potential_Q's, a sign set fixed by driving the factorization residual
    to the spectral floor (the conventional set leaves O(1)).
    """
    grid = _require_padded(X.grid)
    absq, div, curl = _drift_scalars(X)
    vals = 0.25 * absq - 0.5 * div - 0.5j * curl + np.asarray(q)
    return ComplexField(vals.astype(complex), grid, backend="spectral")


def _zero_drift(grid: PaddedGrid) -> VectorField:
    z = np.zeros((grid.n, grid.n))
    return VectorField(z, z.copy(), grid, backend="zero")


def factorization_check(X: VectorField, q=0.0, f=None) -> float:
    """Relative residual of the gauge factorization on a test function.

    Compares (-lap + X.grad + q) f against
    2 G_c dzb*[ m dzb(G f) ] + factor_potential(X, q) f with dzb* = -2 dz,
    all derivatives spectral and the gauge solved spectrally, so the
    residual sits at rounding level when the identity is exact.
    """
    grid = _require_padded(X.grid)
    if f is None:
        XX, YY = grid.meshgrid()
        r2 = XX * XX + YY * YY
        f = np.exp(-r2 / 0.8) * (1.0 + 0.4 * XX - 0.3 * YY)
    fv = f.values if hasattr(f, "values") else np.asarray(f)
    fv = fv.astype(complex)
    qv = np.asarray(q)

    lhs = (-(spectral_deriv(fv, grid, 2, 0) + spectral_deriv(fv, grid, 0, 2))
           + X.c1 * spectral_deriv(fv, grid, 1, 0)
           + X.c2 * spectral_deriv(fv, grid, 0, 1) + qv * fv)

    alpha = _spectral_gauge(X)
    ga = np.exp(1j * alpha)
    gc = np.exp(1j * np.conj(alpha))
    mid = np.exp(-1j * (alpha + np.conj(alpha)))
    bracket = 2.0 * gc * (-2.0 * _dz(mid * _dzb(ga * fv, grid), grid))
    rhs = bracket + factor_potential(X, qv).values * fv
    return _l2(lhs - rhs, grid) / _l2(lhs, grid)


# ---------------------------------------------------------------------------
# polynomial phases


@dataclass(frozen=True)
class PhaseSpec:
    """Holomorphic polynomial phase on a padded box.

    Evaluated from its coefficients, so dzb(Phi) = 0 holds by construction;
    the critical-point flag reports whether any root of the derivative
    polynomial lies inside the core disk (radius half/3) where the
    oscillatory machinery operates.
    """

    coeffs: tuple                        # ascending powers of (z - center)
    center: complex
    grid: PaddedGrid
    values: np.ndarray                   # Phi on the lattice
    dvalues: np.ndarray                  # dPhi/dz on the lattice
    phi: np.ndarray                      # Re Phi
    psi: np.ndarray                      # Im Phi
    critical_points: tuple               # roots of dPhi/dz (z-plane)
    has_critical_point: bool             # any root inside the core disk

    def negated(self) -> "PhaseSpec":
        return phase_spec(tuple(-c for c in self.coeffs), self.grid,
                          self.center)


def phase_spec(coeffs, grid: PaddedGrid, center=0j) -> PhaseSpec:
    """Build a PhaseSpec from ascending polynomial coefficients."""
    _require_padded(grid)
    cs = tuple(complex(c) for c in coeffs)
    if not cs:
        raise GridError("phase needs at least one coefficient")
    w = grid.zz - complex(center)
    vals = np.zeros_like(w)
    for c in reversed(cs):
        vals = vals * w + c
    dcs = tuple(k * cs[k] for k in range(1, len(cs)))
    dvals = np.zeros_like(w)
    for c in reversed(dcs):
        dvals = dvals * w + c
    if not dcs or all(c == 0 for c in dcs):
        roots = ()
        has_cp = True                    # derivative vanishes identically
    else:
        rr = np.roots(list(reversed(dcs)))
        roots = tuple(complex(center) + complex(z) for z in rr)
        has_cp = any(abs(z) <= grid.half / 3.0 for z in roots)
    return PhaseSpec(cs, complex(center), grid, vals, dvals,
                     vals.real.copy(), vals.imag.copy(), roots, has_cp)


def standard_phases(grid: PaddedGrid) -> dict:
    """The three phases every sweep uses.

    cp_free         z + z^2/8   no critical point inside the core
    morse           -z^2/4      nondegenerate critical point at the origin
    adjoint_partner -z + z^2/8  growth opposite to cp_free
    """
    return {
        "cp_free": phase_spec((0.0, 1.0, 0.125), grid),
        "morse": phase_spec((0.0, 0.0, -0.25), grid),
        "adjoint_partner": phase_spec((0.0, -1.0, 0.125), grid),
    }


# ---------------------------------------------------------------------------
# oscillatory Neumann operator


def series_weights(alpha: np.ndarray, X: VectorField, q=0.0
                   ) -> tuple[ComplexField, ComplexField]:
    """Weight pair (V, V') of the remainder series for a given gauge field.

    V = factor_potential x exp(-2i Re alpha) / 2 drives the source side;
    V' = -exp(+2i Re alpha) is the unimodular return weight.
    """
    grid = _require_padded(X.grid)
    re2 = 2.0 * np.real(alpha)
    v = 0.5 * factor_potential(X, q).values * np.exp(-1j * re2)
    vp = -np.exp(1j * re2)
    return (ComplexField(v, grid, backend="series"),
            ComplexField(vp, grid, backend="series"))


def _dbar_star_inv(vals: np.ndarray, psi, h: float, grid: PaddedGrid,
                   core_radius) -> np.ndarray:
    """Oscillatory right inverse of dzb* = -2 dz with phase exp(+2i psi/h)."""
    f = ComplexField(vals, grid, backend="series")
    out = oscillatory_dbar_inv_conj(f, psi, h, core_radius)
    return -0.5 * out.values


def neumann_T(f: ComplexField, psi, h: float, V: ComplexField,
              vp: ComplexField, core_radius: float | None = None
              ) -> ComplexField:
    """One application of the remainder-series operator.

    T f = (dzb*-inverse with phase +2i psi/h) [ V x (dzb-inverse with phase
    -2i psi/h)( V' f ) ]; linear in f, zero when V is, and contracting in h
    at the oscillatory decay rate.
    """
    grid = _require_padded(f.grid)
    inner = oscillatory_dbar_inv(
        ComplexField(vp.values * f.values, grid), psi, h, core_radius)
    vals = _dbar_star_inv(V.values * inner.values, psi, h, grid, core_radius)
    return ComplexField(vals, grid, backend="neumann")


def t_norm_proxy(psi, h: float, V: ComplexField, vp: ComplexField,
                 steps: int = 5, seed: int = 0,
                 core_radius: float | None = None) -> float:
    """Operator-norm proxy for the series operator: short power iteration.

    Starts from a seeded random bump-localized field and returns the last
    norm-growth ratio after the iterates align.
    """
    grid = _require_padded(V.grid)
    rng = np.random.default_rng(seed)
    XX, YY = grid.meshgrid()
    bump = np.exp(-(XX * XX + YY * YY) / 1.5)
    f = ComplexField(bump * (rng.standard_normal((grid.n, grid.n))
                             + 1j * rng.standard_normal((grid.n, grid.n))),
                     grid)
    ratio = 0.0
    nf = _l2(f.values, grid)
    for _ in range(steps):
        g = neumann_T(f, psi, h, V, vp, core_radius)
        ng = _l2(g.values, grid)
        if ng == 0.0 or nf == 0.0:
            return 0.0
        ratio = ng / nf
        f, nf = g, ng
    return float(ratio)


# ---------------------------------------------------------------------------
# bundles


@dataclass(frozen=True)
class CGOBundle:
    """One constructed solution with its series bookkeeping.

    r always equals -osc(V' s) for the stored s and gauge, bit for bit; the
    residual is the drift operator applied to v by 4th-order differences
    over the measurement disk, normalized by h^-2 times the solution norm
    there.  term_norms records the series decay; K_effective is where the
    sum was actually truncated (argmin of term_norms when they fail to
    decrease, K otherwise).
    """

    kind: str                            # "holo" | "antiholo" | "adjoint"
    phase: PhaseSpec
    h: float
    K: int
    K_effective: int
    core_radius: float
    alpha: np.ndarray
    gauge_factor: np.ndarray             # exp(i alpha), conj partner for antiholo
    amplitude: np.ndarray
    s: ComplexField
    r: ComplexField
    v: ComplexField
    residual: float
    term_norms: tuple
    r_norm: float
    backend: str = "oscillatory-series"

    def diagnostics(self) -> dict:
        return {
            "kind": self.kind,
            "h": self.h,
            "K": self.K,
            "K_effective": self.K_effective,
            "core_radius": self.core_radius,
            "residual": self.residual,
            "r_norm": self.r_norm,
            "term_norms": list(self.term_norms),
            "has_critical_point": self.phase.has_critical_point,
        }

    def diagnostics_json(self) -> str:
        return json.dumps(self.diagnostics(), indent=2, sort_keys=True)


def _eval_amplitude(amplitude, grid: PaddedGrid) -> np.ndarray:
    """Holomorphic amplitude as a lattice field, with a dzb guard."""
    if amplitude is None:
        return np.ones((grid.n, grid.n), dtype=complex)
    if callable(amplitude):
        vals = np.asarray(amplitude(grid.zz), dtype=complex)
    elif hasattr(amplitude, "values"):
        vals = amplitude.values.astype(complex)
    else:
        vals = complex(amplitude) * np.ones((grid.n, grid.n), dtype=complex)
    if vals.shape != (grid.n, grid.n):
        raise GridError("amplitude shape does not match the grid")
    # interior holomorphy check by local differences (exact on polynomials
    # through degree 4, seam rows excluded)
    dzb = 0.5 * (periodic_fd4(vals, grid, 0, 1)
                 + 1j * periodic_fd4(vals, grid, 1, 1))
    XX, YY = grid.meshgrid()
    inner = np.maximum(np.abs(XX), np.abs(YY)) <= grid.half - 4 * grid.dx
    scale = float(np.max(np.abs(vals))) or 1.0
    if float(np.max(np.abs(dzb)[inner])) > 1e-6 * scale:
        raise GridError("amplitude is not holomorphic")
    return vals


def _measure_mask(grid: PaddedGrid, rc: float) -> np.ndarray:
    XX, YY = grid.meshgrid()
    rim = rc - 3.0 * grid.dx
    return XX * XX + YY * YY <= rim * rim


def drift_residual(vals: np.ndarray, X: VectorField, q, h: float,
                   grid: PaddedGrid, rc: float,
                   conservative: bool = False) -> float:
    """Normalized PDE residual of a candidate solution over the core.

    Applies -lap + X.grad + q (or the adjoint -lap - div(X .) + q in
    conservative form) with 4th-order periodic differences, measures the L2
    norm over the eroded core disk, and normalizes by h^-2 times the
    solution's norm there: the natural size of any single second-order
    term.
    """
    qv = np.asarray(q)
    lap = (periodic_fd4(vals, grid, 0, 2) + periodic_fd4(vals, grid, 1, 2))
    if conservative:
        flux = (periodic_fd4(X.c1 * vals, grid, 0, 1)
                + periodic_fd4(X.c2 * vals, grid, 1, 1))
        res = -lap - flux + qv * vals
    else:
        res = (-lap + X.c1 * periodic_fd4(vals, grid, 0, 1)
               + X.c2 * periodic_fd4(vals, grid, 1, 1) + qv * vals)
    mask = _measure_mask(grid, rc)
    scale = _l2(vals, grid, mask) / h ** 2
    return _l2(res, grid, mask) / scale


def build_cgo_holo(phase: PhaseSpec, h: float, drift: VectorField | None = None,
                   q=0.0, amplitude=None, K: int = DEPTH_DEFAULT,
                   core_radius: float | None = None) -> CGOBundle:
    """Holomorphically growing solution exp(i alpha)^-1 e^{Phi/h} (a + r).

    The remainder r comes from the truncated Neumann series of neumann_T
    applied to the gauge-weighted amplitude.  If the series terms ever grow
    instead of decaying, a warning is issued and the sum is truncated at
    the observed minimum.  Zero drift and potential give r = 0 exactly.
    """
    grid = _require_padded(phase.grid)
    if h <= 0:
        raise GridError("h must be positive")
    if K < 0:
        raise GridError("series depth must be nonnegative")
    X = drift if drift is not None else _zero_drift(grid)
    if X.grid is not grid:
        raise GridError("drift lives on a different grid")
    rc = core_radius if core_radius is not None else grid.half / 3.0
    a_vals = _eval_amplitude(amplitude, grid)
    qv = np.asarray(q)

    trivial = (X.norm_max() == 0.0 and np.all(qv == 0))
    if trivial:
        alpha = np.zeros((grid.n, grid.n), dtype=complex)
    else:
        alpha = _spectral_gauge(X)
    ga = np.exp(1j * alpha)
    im_max = float(np.max(np.abs(np.imag(alpha))))
    if float(np.min(np.abs(ga))) < np.exp(-im_max) * (1.0 - 1e-12):
        raise GridError("gauge factor fell below its lower bound")

    V, vp = series_weights(alpha, X, qv)
    psi = phase.psi
    zero = np.zeros((grid.n, grid.n), dtype=complex)
    if trivial:
        terms = [ComplexField(zero.copy(), grid)]
        norms = [0.0]
    else:
        first = ComplexField(
            -_dbar_star_inv(V.values * a_vals, psi, h, grid, rc), grid)
        terms, norms = [first], [_l2(first.values, grid)]
        for _ in range(K):
            nxt = neumann_T(terms[-1], psi, h, V, vp, rc)
            terms.append(nxt)
            norms.append(_l2(nxt.values, grid))
    k_eff = len(terms) - 1
    if any(norms[j + 1] > norms[j] for j in range(len(norms) - 1)):
        k_eff = int(np.argmin(norms))
        warnings.warn(
            f"remainder series stopped decreasing; truncating at {k_eff}",
            RuntimeWarning, stacklevel=2)
    s_vals = zero.copy()
    for t in terms[:k_eff + 1]:
        s_vals = s_vals + t.values
    s = ComplexField(s_vals, grid, backend="neumann-series")
    if trivial:
        r = ComplexField(zero.copy(), grid, backend="neumann-series")
    else:
        r = ComplexField(
            -oscillatory_dbar_inv(ComplexField(vp.values * s_vals, grid),
                                  psi, h, rc).values,
            grid, backend="neumann-series")

    v_vals = np.exp(-1j * alpha) * np.exp(phase.values / h) * (a_vals + r.values)
    v = ComplexField(v_vals, grid, backend="oscillatory-series")
    res = drift_residual(v_vals, X, qv, h, grid, rc)
    return CGOBundle("holo", phase, float(h), int(K), int(k_eff), float(rc),
                     alpha, ga, a_vals, s, r, v, res, tuple(norms),
                     _l2(r.values, grid))


def build_cgo_antiholo(phase: PhaseSpec, h: float,
                       drift: VectorField | None = None, q=0.0,
                       K: int = DEPTH_DEFAULT,
                       core_radius: float | None = None) -> CGOBundle:
    """Antiholomorphically growing partner exp(i conj alpha) e^{-conj Phi/h} (1 + r).

    For the real drift and potential this operator carries, conjugating a
    solution gives another solution, so the bundle is the nodewise complex
    conjugate of build_cgo_holo at the negated phase; its residual is
    re-measured directly on the conjugated field.
    """
    grid = _require_padded(phase.grid)
    if np.iscomplexobj(np.asarray(q)):
        raise GridError("antiholo construction needs a real potential")
    nb = build_cgo_holo(phase.negated(), h, drift, q, None, K, core_radius)
    X = drift if drift is not None else _zero_drift(grid)
    v_vals = np.conj(nb.v.values)
    res = drift_residual(v_vals, X, np.asarray(q), h, grid, nb.core_radius)
    return CGOBundle("antiholo", phase, float(h), int(K), nb.K_effective,
                     nb.core_radius, nb.alpha, np.conj(nb.gauge_factor),
                     np.conj(nb.amplitude),
                     ComplexField(np.conj(nb.s.values), grid, backend=nb.s.backend),
                     ComplexField(np.conj(nb.r.values), grid, backend=nb.r.backend),
                     ComplexField(v_vals, grid, backend=nb.v.backend),
                     res, nb.term_norms, nb.r_norm)


def build_cgo_adjoint(phase: PhaseSpec, h: float,
                      drift: VectorField | None = None, q=0.0,
                      amplitude=None, K: int = DEPTH_DEFAULT,
                      core_radius: float | None = None) -> CGOBundle:
    """Solution of the adjoint equation -lap u - div(X u) + q u = 0.

    Expanding the divergence turns the adjoint into the forward operator
    with drift -X and potential q - div X, so the construction reduces to
    build_cgo_holo there; the stored residual is re-measured in the
    conservative (divergence) form of the adjoint itself.
    """
    grid = _require_padded(phase.grid)
    X = drift if drift is not None else _zero_drift(grid)
    div = (spectral_deriv(X.c1, grid, 1, 0)
           + spectral_deriv(X.c2, grid, 0, 1))
    Xneg = VectorField(-X.c1, -X.c2, grid, backend=X.backend)
    nb = build_cgo_holo(phase, h, Xneg, np.asarray(q) - div, amplitude, K,
                        core_radius)
    res = drift_residual(nb.v.values, X, np.asarray(q), h, grid,
                         nb.core_radius, conservative=True)
    return CGOBundle("adjoint", phase, float(h), int(K), nb.K_effective,
                     nb.core_radius, nb.alpha, nb.gauge_factor, nb.amplitude,
                     nb.s, nb.r, nb.v, res, nb.term_norms, nb.r_norm)


# ---------------------------------------------------------------------------
# asymptotic expansion of the oscillatory inverse


def remainder_expansion(phase: PhaseSpec, f: ComplexField, N: int) -> tuple:
    """Formal h-expansion coefficients of the oscillatory dzb-inverse.

    Away from phase critical points, osc(f) = e^{-2i psi/h} sum_j h^j F_j +
    higher order, with F_1 = f / conj(dPhi) and F_{j+1} = -dzb(F_j) /
    conj(dPhi).  Returns (F_1, ..., F_{N+1}); rejects phases whose
    derivative vanishes on the support of f.
    """
    grid = _require_padded(phase.grid)
    if N < 0:
        raise GridError("expansion order must be nonnegative")
    fv = f.values
    amax = float(np.max(np.abs(fv)))
    if amax == 0.0:
        raise GridError("expansion needs nonzero data")
    supp = np.abs(fv) > 1e-12 * amax
    dmag = np.abs(phase.dvalues)
    if float(np.min(dmag[supp])) < 1e-6:
        raise GridError("phase derivative vanishes on the data support")
    inv = np.where(supp, 1.0 / np.conj(np.where(supp, phase.dvalues, 1.0)),
                   0.0)
    out = []
    cur = fv * inv
    out.append(ComplexField(cur, grid, backend="expansion"))
    for _ in range(N):
        cur = -_dzb(cur, grid) * inv
        out.append(ComplexField(cur, grid, backend="expansion"))
    return tuple(out)


# ---------------------------------------------------------------------------
# Calderon-Zygmund style diagnostic


def cz_diagnostic(bundle: CGOBundle, eps: float = 0.1) -> float:
    """h^{1/2 - eps}-weighted second-derivative mass of the remainder.

    Computes the Hessian of r by 4th-order differences, localizes it with a
    fixed Gaussian bump inside the measurement disk, and returns
    ||bump . D2 r||_L2 x h^{1/2 - eps}.  Bounded along the standard sweep
    when the remainder obeys the expected Calderon-Zygmund bounds.
    """
    grid = bundle.r.grid
    rv = bundle.r.values
    rxx = periodic_fd4(rv, grid, 0, 2)
    ryy = periodic_fd4(rv, grid, 1, 2)
    rxy = periodic_fd4(periodic_fd4(rv, grid, 0, 1), grid, 1, 1)
    XX, YY = grid.meshgrid()
    r2 = XX * XX + YY * YY
    rc = bundle.core_radius
    bump = np.exp(-4.0 * r2 / rc ** 2) * _measure_mask(grid, rc)
    mass = np.sqrt(np.abs(rxx) ** 2 + 2.0 * np.abs(rxy) ** 2
                   + np.abs(ryy) ** 2)
    return _l2(bump * mass, grid) * bundle.h ** (0.5 - eps)
