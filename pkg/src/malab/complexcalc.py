"""Wirtinger calculus, the complex Hessian split, and Cauchy-transform inverses.

Derivative conventions: with z = x1 + i x2,

    dz  = (d/dx1 - i d/dx2) / 2        (holomorphic derivative)
    dzb = (d/dx1 + i d/dx2) / 2        (antiholomorphic derivative)

so dzb annihilates holomorphic functions and 4 dz dzb equals the Laplacian.
The real Hessian of a (possibly complex) function splits as

    D^2 f = A dz^2 f + B dzb^2 f + 2 I dz dzb f

with constant Gaussian-integer matrices A, B defined below.

Two derivative backends exist: spectral (periodic padded boxes) and finite
differences (4th-order central inside a masked lattice, degrading to
one-sided second order against the boundary). Every result records which
backend produced it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import ComplexField, DomainGrid, GridError, PaddedGrid, ScalarField

# constant matrices of the Hessian split; entries are Gaussian integers and
# every advertised trace identity is exact
A_MAT = np.array([[1, 1j], [1j, -1]])
B_MAT = np.array([[1, -1j], [-1j, -1]])


def trace_identities() -> dict:
    """Exact trace identities of the split matrices (integer arithmetic)."""
    tr = lambda m: complex(m[0, 0] + m[1, 1])
    return {
        "tr_A": tr(A_MAT),
        "tr_B": tr(B_MAT),
        "tr_AB": tr(A_MAT @ B_MAT),
        "tr_AA": tr(A_MAT @ A_MAT),
        "tr_BB": tr(B_MAT @ B_MAT),
    }


# ---------------------------------------------------------------------------
# derivative backends


def spectral_deriv(vals: np.ndarray, grid: PaddedGrid, o1: int, o2: int) -> np.ndarray:
    """(d/dx1)^o1 (d/dx2)^o2 by FFT on the periodic box.

    The unbalanced Nyquist mode is zeroed for odd derivative orders.
    """
    K1, K2 = grid.wavenumbers()
    mult = (1j * K1) ** o1 * (1j * K2) ** o2
    if grid.n % 2 == 0:
        kny = np.min(2.0 * np.pi * np.fft.fftfreq(grid.n, d=grid.dx))
        if o1 % 2:
            mult[np.isclose(K1, kny)] = 0.0
        if o2 % 2:
            mult[np.isclose(K2, kny)] = 0.0
    return np.fft.ifft2(mult * np.fft.fft2(vals))


_C4_1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0     # offsets -2..2
_C4_2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0


def periodic_fd4(vals: np.ndarray, grid: PaddedGrid, axis: int, order: int) -> np.ndarray:
    """4th-order central difference with periodic wrap on the padded box."""
    coeff = _C4_1 if order == 1 else _C4_2
    scale = grid.dx ** order
    out = np.zeros_like(np.asarray(vals, dtype=complex))
    for k, c in zip(range(-2, 3), coeff):
        if c != 0.0:
            out += c * np.roll(vals, -k, axis=axis)
    return out / scale


def _shift(vals, di, dj):
    return np.roll(np.roll(vals, -di, axis=0), -dj, axis=1)


def masked_deriv1(vals: np.ndarray, grid: DomainGrid, axis: int) -> np.ndarray:
    """First derivative on the masked lattice.

    4th-order central deep inside, 2nd-order central one node from the rim,
    one-sided 2nd order on the rim itself. Nodes with no admissible stencil
    raise (they would mean a sliver thinner than three nodes).
    """
    m = grid.mask
    dx = grid.dx
    e = (1, 0) if axis == 0 else (0, 1)
    sh = lambda k: _shift(vals, k * e[0], k * e[1])
    av = lambda k: _shift(m, k * e[0], k * e[1])

    out = np.full(vals.shape, np.nan, dtype=np.result_type(vals, float))
    c4 = av(-2) & av(-1) & av(1) & av(2)
    c2 = av(-1) & av(1)
    fwd = av(1) & av(2)
    bwd = av(-1) & av(-2)

    r4 = (sh(-2) - 8 * sh(-1) + 8 * sh(1) - sh(2)) / (12 * dx)
    r2 = (sh(1) - sh(-1)) / (2 * dx)
    rf = (-3 * vals + 4 * sh(1) - sh(2)) / (2 * dx)
    rb = (3 * vals - 4 * sh(-1) + sh(-2)) / (2 * dx)

    for cond, val in ((bwd, rb), (fwd, rf), (c2, r2), (c4, r4)):
        out = np.where(cond, val, out)
    bad = m & ~np.isfinite(out if np.isrealobj(out) else out.real)
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise GridError(f"no difference stencil fits at node ({i}, {j})")
    return np.where(m, out, 0.0)


def masked_deriv2(vals: np.ndarray, grid: DomainGrid, axes: tuple[int, int]) -> np.ndarray:
    """Second derivative d^2/dx_a dx_b on the masked lattice."""
    if axes[0] != axes[1]:
        # composition keeps every leg inside the mask
        return masked_deriv1(masked_deriv1(vals, grid, axes[1]), grid, axes[0])
    m = grid.mask
    dx = grid.dx
    e = (1, 0) if axes[0] == 0 else (0, 1)
    sh = lambda k: _shift(vals, k * e[0], k * e[1])
    av = lambda k: _shift(m, k * e[0], k * e[1])

    out = np.full(vals.shape, np.nan, dtype=np.result_type(vals, float))
    c4 = av(-2) & av(-1) & av(1) & av(2)
    c2 = av(-1) & av(1)
    fwd = av(1) & av(2) & av(3)
    bwd = av(-1) & av(-2) & av(-3)

    r4 = (-sh(-2) + 16 * sh(-1) - 30 * vals + 16 * sh(1) - sh(2)) / (12 * dx * dx)
    r2 = (sh(1) - 2 * vals + sh(-1)) / (dx * dx)
    rf = (2 * vals - 5 * sh(1) + 4 * sh(2) - sh(3)) / (dx * dx)
    rb = (2 * vals - 5 * sh(-1) + 4 * sh(-2) - sh(-3)) / (dx * dx)

    for cond, val in ((bwd, rb), (fwd, rf), (c2, r2), (c4, r4)):
        out = np.where(cond, val, out)
    bad = m & ~np.isfinite(out if np.isrealobj(out) else out.real)
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise GridError(f"no difference stencil fits at node ({i}, {j})")
    return np.where(m, out, 0.0)


def deriv(vals: np.ndarray, grid, o1: int, o2: int, backend: str = "auto") -> np.ndarray:
    """Mixed partial derivative dispatching on grid type and backend."""
    if isinstance(grid, PaddedGrid):
        if backend in ("auto", "spectral"):
            return spectral_deriv(vals, grid, o1, o2)
        out = np.asarray(vals, dtype=complex)
        for _ in range(o1):
            out = periodic_fd4(out, grid, 0, 1)
        for _ in range(o2):
            out = periodic_fd4(out, grid, 1, 1)
        return out
    if isinstance(grid, DomainGrid):
        order = o1 + o2
        if order == 1:
            return masked_deriv1(vals, grid, 0 if o1 else 1)
        if order == 2:
            if o1 == 2:
                return masked_deriv2(vals, grid, (0, 0))
            if o2 == 2:
                return masked_deriv2(vals, grid, (1, 1))
            return masked_deriv2(vals, grid, (0, 1))
        # higher orders by composition
        out = vals
        rem1, rem2 = o1, o2
        while rem1 + rem2 > 0:
            if rem1:
                out = masked_deriv1(out, grid, 0)
                rem1 -= 1
            else:
                out = masked_deriv1(out, grid, 1)
                rem2 -= 1
        return out
    raise GridError(f"unsupported grid type {type(grid).__name__}")


def _backend_name(grid, backend):
    if isinstance(grid, PaddedGrid):
        return "spectral" if backend in ("auto", "spectral") else "fd4-periodic"
    return "fd-masked"


# ---------------------------------------------------------------------------
# wirtinger derivatives and the complex Hessian


def wirtinger(f, backend: str = "auto"):
    """Holomorphic and antiholomorphic first derivatives (dz f, dzb f)."""
    vals, grid = f.values, f.grid
    d1 = deriv(vals, grid, 1, 0, backend)
    d2 = deriv(vals, grid, 0, 1, backend)
    name = _backend_name(grid, backend)
    dz = 0.5 * (d1 - 1j * d2)
    dzb = 0.5 * (d1 + 1j * d2)
    return (ComplexField(dz, grid, backend=name),
            ComplexField(dzb, grid, backend=name))


@dataclass(frozen=True)
class ComplexHessian:
    dz2: np.ndarray        # dz^2 f
    dzb2: np.ndarray       # dzb^2 f
    dzdzb: np.ndarray      # dz dzb f
    hessian: np.ndarray    # (n, n, 2, 2) assembled through A, B
    backend: str


def complex_hessian(f, backend: str = "auto") -> ComplexHessian:
    """Complex second derivatives and the assembled 2x2 Hessian field."""
    vals, grid = f.values, f.grid
    d11 = deriv(vals, grid, 2, 0, backend)
    d22 = deriv(vals, grid, 0, 2, backend)
    d12 = deriv(vals, grid, 1, 1, backend)
    dz2 = 0.25 * (d11 - d22) - 0.5j * d12
    dzb2 = 0.25 * (d11 - d22) + 0.5j * d12
    dzdzb = 0.25 * (d11 + d22)
    H = (A_MAT[None, None] * dz2[..., None, None]
         + B_MAT[None, None] * dzb2[..., None, None]
         + 2.0 * np.eye(2)[None, None] * dzdzb[..., None, None])
    return ComplexHessian(dz2, dzb2, dzdzb, H, _backend_name(grid, backend))


# ---------------------------------------------------------------------------
# Cauchy transforms


def _support_guard(vals: np.ndarray, grid: PaddedGrid, what: str):
    # Spectrally differentiated C^2 cutoffs ring at ~1e-6 relative across
    # the whole box; only mass above the leakage tolerance threatens the
    # convolution with wraparound, and genuinely wide inputs carry O(1)
    # relative mass near the margin.
    amax = np.max(np.abs(vals))
    if amax == 0.0:
        return
    X, Y = grid.meshgrid()
    supp = np.abs(vals) > 1e-5 * amax
    margin = grid.half / 3.0
    reach = np.max(np.maximum(np.abs(X), np.abs(Y))[supp])
    if reach > grid.half - margin:
        raise GridError(
            f"{what}: support reaches {reach:.3f}, within the wraparound "
            f"margin of the {grid.half:.3f} box")


def _cauchy_kernel(grid: PaddedGrid) -> np.ndarray:
    """Kernel h^2/(pi z) on the doubled lattice, origin cell integrated exactly.

    The exact integral of 1/(pi z) over the centered origin cell vanishes by
    odd symmetry, so the origin weight is zero; every other cell is point
    sampled at its center.
    """
    n, h = grid.n, grid.dx
    idx = np.fft.fftfreq(2 * n, d=1.0 / (2 * n))   # signed offsets
    ZX, ZY = np.meshgrid(idx * h, idx * h, indexing="ij")
    Z = ZX + 1j * ZY
    with np.errstate(divide="ignore", invalid="ignore"):
        K = h * h / (np.pi * Z)
    K[0, 0] = 0.0
    return K


_kernel_cache: dict = {}


def cauchy_inverse(omega: ComplexField) -> ComplexField:
    """Right inverse of dzb: convolution with 1/(pi z) by zero-padded FFT.

    The input must be supported in the core of the padded box; the outer
    third of the box is reserved as wraparound margin.
    """
    grid = omega.grid
    if not isinstance(grid, PaddedGrid):
        raise GridError("cauchy_inverse expects a field on a padded box")
    _support_guard(omega.values, grid, "cauchy_inverse")
    key = (grid.n, grid.half)
    if key not in _kernel_cache:
        _kernel_cache[key] = np.fft.fft2(_cauchy_kernel(grid))
    Khat = _kernel_cache[key]
    n = grid.n
    pad = np.zeros((2 * n, 2 * n), dtype=complex)
    pad[:n, :n] = omega.values
    conv = np.fft.ifft2(np.fft.fft2(pad) * Khat)[:n, :n]
    return ComplexField(conv, grid, backend="cauchy-fft")


def conj_cauchy_inverse(omega: ComplexField) -> ComplexField:
    """Right inverse of dz, via the conjugation identity."""
    inner = ComplexField(np.conj(omega.values), omega.grid, backend=omega.backend)
    out = cauchy_inverse(inner)
    return ComplexField(np.conj(out.values), omega.grid, backend="conj-cauchy-fft")


def smooth_cutoff(grid: PaddedGrid, r_inner: float, r_outer: float) -> np.ndarray:
    """C^2 radial bump: 1 inside r_inner, 0 outside r_outer (quintic step)."""
    X, Y = grid.meshgrid()
    r = np.hypot(X, Y)
    t = np.clip((r - r_inner) / (r_outer - r_inner), 0.0, 1.0)
    return 1.0 - t ** 3 * (10.0 - 15.0 * t + 6.0 * t * t)


def oscillatory_dbar_inv(f: ComplexField, psi, h: float,
                         core_radius: float | None = None,
                         nodes_per_osc: float = 6.0) -> ComplexField:
    """Oscillatory inverse: restrict(cauchy_inverse(exp(-2i psi/h) E f)).

    E is a fixed C^2 cutoff equal to 1 on the core disk and 0 beyond twice
    its radius; the result is restricted (zeroed) outside the core. Rejects
    h too small for the grid to resolve the oscillation, reporting the
    minimal admissible h.
    """
    grid = f.grid
    if h <= 0:
        raise GridError("h must be positive")
    psi_vals = psi.values if hasattr(psi, "values") else np.asarray(psi)
    rc = core_radius if core_radius is not None else grid.half / 3.0
    E = smooth_cutoff(grid, rc, 2.0 * rc)

    # np.gradient, not spectral: the phase is generally not box periodic
    g1, g2 = np.gradient(np.real(psi_vals), grid.dx, edge_order=2)
    gmax = float(np.max(np.hypot(g1, g2)[E > 0]))
    if gmax > 0:
        # local wavelength of exp(-2i psi / h) is pi h / |grad psi|
        h_min = nodes_per_osc * grid.dx * gmax / np.pi
        if h < h_min:
            raise GridError(
                f"h = {h:.4g} unresolved at this resolution; "
                f"minimal admissible h = {h_min:.4g}")

    phase = np.exp(-2j * psi_vals / h)
    inner = ComplexField(phase * E * f.values, grid, backend="oscillatory")
    out = cauchy_inverse(inner)
    X, Y = grid.meshgrid()
    core = (X * X + Y * Y) <= rc * rc
    return ComplexField(np.where(core, out.values, 0.0), grid,
                        backend="oscillatory-cauchy")


def oscillatory_dbar_inv_conj(f: ComplexField, psi, h: float,
                              core_radius: float | None = None,
                              nodes_per_osc: float = 6.0) -> ComplexField:
    """Oscillatory right inverse of dz with phase exp(+2i psi / h).

    Mirrors oscillatory_dbar_inv through the conjugation identity, so the
    pair shares one resolution guard and one cutoff.
    """
    grid = f.grid
    conj_in = ComplexField(np.conj(f.values), grid, backend=f.backend)
    out = oscillatory_dbar_inv(conj_in, psi, h, core_radius, nodes_per_osc)
    return ComplexField(np.conj(out.values), grid, backend="oscillatory-conj-cauchy")
