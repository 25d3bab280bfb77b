"""Linearized solves, the solution-induced metric, and expansion checks.

Oracles: harmonic polynomials on the flat metric, a manufactured solve on
the analytic quartic metric diag(1/(1+x^2), 1), the drifted exponential
e^x for the adjoint, and the Poisson solve w = 2(x^2+y^2-1) for the
second linearization. Solved-metric accuracy is split by depth: discrete
Hessians carry a geometric boundary layer (in cells, independent of
resolution), so rim values are only trustworthy after normal-ray
extrapolation.
"""

import numpy as np
import pytest

from malab.grid import (GridError, MetricField, ScalarField, build_disk,
                        build_ellipse, quadrature)
from malab.maforward import solve_ma, solve_ma_zero
from malab.complexcalc import deriv
from malab.linearize import (VectorField, adjoint_solve, divergence_form_apply,
                             drift_field, eps_consistency, metric_from_solution,
                             nondiv_solve, rim_extrapolated, second_solve)


def flat_metric(grid):
    one = np.ones((grid.n, grid.n))
    return MetricField(one, np.zeros_like(one), one.copy(), grid)


def quartic_metric(grid):
    X, _ = grid.meshgrid()
    one = np.ones_like(X)
    return MetricField(1.0 / (1.0 + X ** 2), np.zeros_like(X), one, grid)


def test_harmonic_cubic_on_flat_metric():
    g = build_disk(1.0, 64)
    X, Y = g.meshgrid()
    v = nondiv_solve(flat_metric(g), lambda x, y: x ** 3 - 3 * x * y ** 2)
    err = np.abs(v.values - (X ** 3 - 3 * X * Y ** 2))[g.mask].max()
    assert err < 2e-3


def test_constant_diagonal_metric_quadratic_exact():
    # g = diag(1, 2) and data x*y: the mixed entry never enters, and the
    # axis stencils with linear ghost closure are exact on x*y
    g = build_disk(1.0, 48)
    X, Y = g.meshgrid()
    one = np.ones_like(X)
    met = MetricField(one, np.zeros_like(X), 2.0 * one, g)
    v = nondiv_solve(met, lambda x, y: x * y)
    assert np.abs(v.values - X * Y)[g.mask].max() < 1e-8


def test_manufactured_quartic_metric_solve():
    # a11 v_11 + a22 v_22 = 0 for v = y^2 - x^2 - x^4/6 when
    # a = diag(1/(1+x^2), 1)
    g = build_disk(1.0, 64)
    X, Y = g.meshgrid()
    vex = Y ** 2 - X ** 2 - X ** 4 / 6.0
    v = nondiv_solve(quartic_metric(g),
                     lambda x, y: y ** 2 - x ** 2 - x ** 4 / 6.0)
    assert np.abs(v.values - vex)[g.mask].max() < 1.5e-3


def test_nondiv_second_order_convergence():
    errs = []
    for n in (48, 96):
        g = build_disk(1.0, n)
        X, Y = g.meshgrid()
        vex = Y ** 2 - X ** 2 - X ** 4 / 6.0
        v = nondiv_solve(quartic_metric(g),
                         lambda x, y: y ** 2 - x ** 2 - x ** 4 / 6.0)
        errs.append(np.abs(v.values - vex)[g.mask].max())
    assert errs[0] / errs[1] > 2.5


def test_ellipse_harmonic_quadratic():
    g = build_ellipse(1.3, 0.8, 64)
    X, Y = g.meshgrid()
    v = nondiv_solve(flat_metric(g), lambda x, y: x * y)
    assert np.abs(v.values - X * Y)[g.mask].max() < 1e-8


def test_adjoint_constant_drift_exponential():
    # with g = I and X = (-1, 0) the adjoint operator is Lap - d/dx,
    # annihilated by e^x
    g = build_disk(1.0, 64)
    X, Y = g.meshgrid()
    Xf = VectorField(-np.ones_like(X), np.zeros_like(X), g)
    vs = adjoint_solve(flat_metric(g), Xf, lambda x, y: np.exp(x))
    assert np.abs(vs.values - np.exp(X))[g.mask].max() < 1e-3


def test_adjoint_zero_drift_is_harmonic_extension():
    g = build_disk(1.0, 64)
    X, Y = g.meshgrid()
    Z = np.zeros_like(X)
    vs = adjoint_solve(flat_metric(g), VectorField(Z, Z.copy(), g),
                       lambda x, y: x * y)
    assert np.abs(vs.values - X * Y)[g.mask].max() < 1e-8


def test_adjoint_duality_quadrature():
    # <L v, v*> = <v, L* v*> in L^2(w dx) for compactly supported fields;
    # L is the bare non-divergence operator, L* the adjoint with the
    # metric's own drift
    g = build_disk(1.0, 96)
    X, Y = g.meshgrid()
    met = quartic_metric(g)
    w = np.sqrt(1.0 + X ** 2)

    def bump(cx, cy, rad):
        rho = np.hypot(X - cx, Y - cy) / rad
        out = np.where(rho < 1.0, (1.0 - rho ** 2) ** 3, 0.0)
        return out

    v = bump(-0.2, 0.0, 0.5)
    vs = bump(0.2, 0.1, 0.5)
    Lv = met.g11 * deriv(v, g, 2, 0) + met.g22 * deriv(v, g, 0, 2)
    Xg = drift_field(met)
    c0 = (deriv(w * Xg.c1, g, 1, 0) + deriv(w * Xg.c2, g, 0, 1)) / w
    Ls = (met.g11 * deriv(vs, g, 2, 0) + met.g22 * deriv(vs, g, 0, 2)
          + 2.0 * (Xg.c1 * deriv(vs, g, 1, 0) + Xg.c2 * deriv(vs, g, 0, 1))
          + c0 * vs)
    gap = quadrature(ScalarField(w * (vs * Lv - v * Ls), g))
    assert abs(gap) < 5e-4


def test_second_solve_poisson_oracle():
    # flat base, v1 = v2 = 2xy: tr(V1 V2) = 8, so w solves Lap w = 8 with
    # zero data, i.e. w = 2(x^2+y^2-1)
    g = build_disk(1.0, 64)
    X, Y = g.meshgrid()
    base = solve_ma_zero(1.0, g)
    met = metric_from_solution(base)
    phi = lambda x, y: 2.0 * x * y
    v1 = nondiv_solve(met, phi)
    w = second_solve(met, drift_field(met), v1, v1, phi, phi)
    err = np.abs(w.values - 2.0 * (X ** 2 + Y ** 2 - 1.0))[g.mask].max()
    assert err < 2e-3


def test_second_solve_symmetric_in_arguments():
    g = build_disk(1.0, 48)
    base = solve_ma_zero(1.0, g)
    met = metric_from_solution(base)
    phi1 = lambda x, y: 2.0 * x * y
    phi2 = lambda x, y: x ** 2 - y ** 2
    v1 = nondiv_solve(met, phi1)
    v2 = nondiv_solve(met, phi2)
    X = drift_field(met)
    w12 = second_solve(met, X, v1, v2, phi1, phi2)
    w21 = second_solve(met, X, v2, v1, phi2, phi1)
    assert np.abs(w12.values - w21.values).max() < 1e-8


def test_second_solve_constant_argument_gives_zero():
    g = build_disk(1.0, 48)
    base = solve_ma_zero(1.0, g)
    met = metric_from_solution(base)
    ones = ScalarField(np.ones((g.n, g.n)), g)
    v2 = nondiv_solve(met, lambda x, y: 2.0 * x * y)
    w = second_solve(met, drift_field(met), ones, v2, 1.0,
                     lambda x, y: 2.0 * x * y)
    assert np.abs(w.values[g.mask]).max() < 1e-8


def test_metric_from_solution_deep_accuracy():
    # solved-metric entries match the analytic inverse Hessian away from
    # the boundary layer
    n = 64
    g = build_disk(1.0, n)
    X, Y = g.meshgrid()
    sol = solve_ma(ScalarField(X ** 2 + 1.0, g),
                   lambda x, y: x ** 4 / 12 + x ** 2 / 2 + y ** 2 / 2)
    met = metric_from_solution(sol)
    deep = g.mask & (np.hypot(X, Y) < 1.0 - 8 * g.dx)
    assert np.abs(met.g11 - 1.0 / (1.0 + X ** 2))[deep].max() < 5e-4
    assert np.abs(met.g12)[deep].max() < 5e-4
    assert np.abs(met.g22 - 1.0)[deep].max() < 5e-4


def test_rim_extrapolated_metric_and_drift():
    n = 64
    g = build_disk(1.0, n)
    X, Y = g.meshgrid()
    m = g.mask
    sol = solve_ma(ScalarField(X ** 2 + 1.0, g),
                   lambda x, y: x ** 4 / 12 + x ** 2 / 2 + y ** 2 / 2)
    met = rim_extrapolated(metric_from_solution(sol))
    assert np.abs(met.g11 - 1.0 / (1.0 + X ** 2))[m].max() < 3e-2

    dr = drift_field(met)
    exact1 = -X / (1.0 + X ** 2) ** 2
    assert np.abs(dr.c1 - exact1)[m].max() < 0.2
    deep = m & (np.hypot(X, Y) < 1.0 - 12 * g.dx)
    assert np.abs(dr.c1 - exact1)[deep].max() < 1e-4
    assert np.abs(dr.c2)[deep].max() < 1e-4


def test_drift_of_flat_metric_vanishes():
    g = build_disk(1.0, 64)
    dr = drift_field(flat_metric(g))
    assert dr.norm_max(g.mask) == 0.0


def test_divergence_form_identity_deep():
    # (1/w) d(w g dv) - X.grad v equals g^{ab} d_ab v once X is the
    # metric's drift; checked on an analytic field away from the rim
    g = build_disk(1.0, 64)
    X, Y = g.meshgrid()
    met = quartic_metric(g)
    v = np.sin(X) * np.cos(Y)
    lhs, deep = divergence_form_apply(met, drift_field(met), v)
    rhs = -(1.0 / (1.0 + X ** 2)) * np.sin(X) * np.cos(Y) \
        - np.sin(X) * np.cos(Y)
    assert np.abs(lhs - rhs)[deep].max() < 6e-3


def test_dual_assembly_agreement_random_metrics():
    # the divergence-form cross-check inside nondiv_solve must accept the
    # computed solution for a spread of smooth SPD coefficient fields
    rng = np.random.default_rng(7)
    g = build_disk(1.0, 48)
    X, Y = g.meshgrid()
    for _ in range(20):
        a, b, c = rng.uniform(-0.25, 0.25, size=3)
        s11 = 1.0 + a * np.sin(X + 2 * Y) + b * X ** 2
        s22 = 1.0 + c * np.cos(2 * X - Y) + a * Y ** 2
        s12 = 0.2 * b * np.sin(X * Y)
        met = MetricField(s11, s12, s22, g)
        v = nondiv_solve(met, lambda x, y: x + 0.3 * x * y,
                         cross_check=True)
        assert np.all(np.isfinite(v.values[g.mask]))


def test_discrete_maximum_principle():
    rng = np.random.default_rng(11)
    g = build_disk(1.0, 48)
    for _ in range(5):
        a11 = rng.uniform(0.5, 2.0)
        a22 = rng.uniform(0.5, 2.0)
        a12 = rng.uniform(-0.4, 0.4) * min(a11, a22)
        one = np.ones((g.n, g.n))
        met = MetricField(a11 * one, a12 * one, a22 * one, g)
        k1, k2 = rng.uniform(0.5, 2.0, size=2)
        phi = lambda x, y: np.sin(k1 * x) * np.cos(k2 * y)
        v = nondiv_solve(met, phi)
        b = g.boundary
        bound = np.abs(phi(b.points[:, 0], b.points[:, 1])).max()
        assert np.abs(v.values[g.mask]).max() <= bound + 1e-9


def test_anisotropy_rejection():
    g = build_disk(1.0, 48)
    one = np.ones((g.n, g.n))
    met = MetricField(one, np.zeros_like(one), 50.0 * one, g)
    with pytest.raises(GridError, match="anisotropy"):
        nondiv_solve(met, lambda x, y: x)


def test_eps_consistency_flat_base():
    g = build_disk(1.0, 64)
    phi = lambda x, y: 2.0 * x * y
    rep = eps_consistency(1.0, phi, phi, scales=(1.0, 0.5, 0.25), grid=g)
    r = np.asarray(rep.rem1)
    ratios = r[:-1] / r[1:]
    assert np.all(ratios > 3.2) and np.all(ratios < 4.8)
    assert rep.slope1 > 0.9
    assert rep.slope2 > 0.9


def test_eps_consistency_affine_data_sits_at_floor():
    # data cos(theta) = x restricts an affine function, and adding an
    # affine function never changes the Hessian: the expansion is exact
    # and every remainder stays at the solver floor
    g = build_disk(1.0, 64)
    rep = eps_consistency(1.0, lambda x, y: x, lambda x, y: y,
                          scales=(1.0, 0.25), grid=g)
    assert max(rep.rem1) < 1e-7
    assert max(rep.e2) < 1e-6


def test_eps_consistency_quartic_base():
    g = build_disk(1.0, 64)
    X, _ = g.meshgrid()
    F = ScalarField(X ** 2 + 1.0, g)
    phi = lambda x, y: x ** 2 - y ** 2
    rep = eps_consistency(F, phi, phi, scales=(1.0, 0.5, 0.25))
    r = np.asarray(rep.rem1)
    ratios = r[:-1] / r[1:]
    assert np.all(ratios > 3.2) and np.all(ratios < 4.8)
    assert rep.slope1 > 0.9


def test_metric_requires_convexity_certificate():
    g = build_disk(1.0, 48)
    sol = solve_ma_zero(1.0, g)
    object.__setattr__(sol, "convex", False)
    with pytest.raises(GridError, match="convexity"):
        metric_from_solution(sol)
