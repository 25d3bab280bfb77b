"""Forward Monge-Ampere solver tests: benchmarks with known solutions,
Newton behavior, and the data-norm bookkeeping."""

import numpy as np
import pytest

from malab.grid import BoundaryTrace, GridError, ScalarField, boundary_restrict
from malab.grid import build_disk, build_ellipse
from malab.maforward import (NewtonFailure, build_stencil_ops,
                             data_norm_surrogate, eval_boundary_data,
                             perturbation_stability, solve_ma, solve_ma_zero)


def _flat_error(n):
    g = build_disk(1.0, n)
    X, Y = g.meshgrid()
    sol = solve_ma_zero(ScalarField(np.ones((n, n)), g))
    assert sol.convex
    return float(np.max(np.abs((sol.u.values - 0.5 * (X**2 + Y**2 - 1.0))[g.mask])))


def test_flat_source_benchmark():
    e64, e128 = _flat_error(64), _flat_error(128)
    assert e128 <= 1e-3
    assert 3.0 <= e64 / e128 <= 5.0


def test_scaled_flat_with_unit_data():
    n = 96
    g = build_disk(1.0, n)
    X, Y = g.meshgrid()
    sol = solve_ma(ScalarField(np.full((n, n), 4.0), g), 1.0)
    assert np.max(np.abs((sol.u.values - (X**2 + Y**2))[g.mask])) < 5e-4


def test_zero_data_radial_scaling():
    n = 96
    g = build_disk(1.0, n)
    X, Y = g.meshgrid()
    sol = solve_ma_zero(ScalarField(np.full((n, n), 4.0), g))
    assert np.max(np.abs((sol.u.values - (X**2 + Y**2 - 1.0))[g.mask])) < 5e-4


def test_zero_cache_matches_explicit_call():
    n = 48
    g = build_disk(1.0, n)
    X, _ = g.meshgrid()
    F = ScalarField(X**2 + 1.0, g)
    a = solve_ma_zero(F)
    b = solve_ma(F, None)
    assert np.array_equal(a.u.values, b.u.values)
    assert solve_ma_zero(F) is a


def _ustar(x, y):
    return x**4 / 12 + x**2 / 2 + y**2 / 2


def _manufactured_error(n):
    g = build_disk(1.0, n)
    X, Y = g.meshgrid()
    sol = solve_ma(ScalarField(X**2 + 1.0, g), _ustar)
    assert sol.convex
    return float(np.max(np.abs((sol.u.values - _ustar(X, Y))[g.mask])))


def test_manufactured_quartic():
    e64, e128 = _manufactured_error(64), _manufactured_error(128)
    assert e128 < 1e-4
    assert 3.0 <= e64 / e128 <= 5.0


def test_boundary_trace_data_equals_callable_data():
    n = 64
    g = build_disk(1.0, n)
    b = g.boundary
    trace = BoundaryTrace(_ustar(b.points[:, 0], b.points[:, 1]), g)
    F = ScalarField(g.meshgrid()[0]**2 + 1.0, g)
    s1 = solve_ma(F, trace)
    s2 = solve_ma(F, _ustar)
    assert np.max(np.abs(s1.u.values - s2.u.values)) < 1e-10


def test_newton_quadratic_tail():
    n = 96
    g = build_disk(1.0, n)
    X, Y = g.meshgrid()
    F = ScalarField(1.0 + 0.8 * np.exp(-3 * ((X - 0.2)**2 + Y**2)), g)
    sol = solve_ma(F, lambda x, y: 0.1 * (x**2 - y**2))
    rs = [row[1] for row in sol.log]
    tail = [(a, b) for a, b in zip(rs, rs[1:]) if a < 1e-2]
    assert tail, "no residuals below the quadratic-tail threshold"
    for a, b in tail:
        assert b <= 100.0 * a * a + 1e-13


def test_solution_trace_matches_data():
    n = 96
    g = build_disk(1.0, n)
    sol = solve_ma_zero(ScalarField(np.ones((n, n)), g))
    tr = boundary_restrict(sol.u)
    assert np.max(np.abs(tr.values)) < 2e-4


def test_rejects_nonpositive_source():
    n = 32
    g = build_disk(1.0, n)
    X, _ = g.meshgrid()
    with pytest.raises(GridError):
        solve_ma(ScalarField(X, g), None)


def test_failure_carries_log():
    n = 48
    g = build_disk(1.0, n)
    X, _ = g.meshgrid()
    with pytest.raises(NewtonFailure) as exc:
        solve_ma(ScalarField(X**2 + 1.0, g), _ustar, max_iter=1)
    assert len(exc.value.log) >= 1


def test_ellipse_domain():
    n = 96
    g = build_ellipse(1.2, 0.8, n)
    X, Y = g.meshgrid()
    sol = solve_ma_zero(ScalarField(np.ones((n, n)), g))
    a, b = 1.2, 0.8
    exact = 0.5 * a * b * ((X / a)**2 + (Y / b)**2 - 1.0)
    assert np.max(np.abs((sol.u.values - exact)[g.mask])) < 1e-3


def test_perturbation_stability_sweep():
    n = 64
    g = build_disk(1.0, n)
    F = ScalarField(np.ones((n, n)), g)
    rep = perturbation_stability(F, lambda x, y: x)
    assert rep.stable(0.2)
    assert all(r > 0 for r in rep.ratios)
    zero = perturbation_stability(F, 0.0)
    assert zero.deviations == (0.0, 0.0, 0.0)


def test_data_norm_surrogate_exact_on_modes():
    g = build_disk(1.0, 64)
    # a mode of amplitude a and frequency k on the unit circle has second
    # arclength derivative a k^2, so 0.1 cos(2 theta) scores 0.4
    val = data_norm_surrogate(g, lambda x, y: 0.1 * (x**2 - y**2))
    assert abs(val - 0.4) < 1e-9
    sol = solve_ma(ScalarField(np.ones((64, 64)), g),
                   lambda x, y: 0.02 * x)
    assert sol.admissible and abs(sol.data_norm - 0.02) < 1e-10


def test_stencil_structure():
    g = build_disk(1.0, 64)
    ops = build_stencil_ops(g)
    assert ops.N == int(g.mask.sum())
    assert np.any(~ops.pde)            # some quasi-boundary rows exist
    assert ops.R.getnnz() > 0
    # interpolation rows never collide with PDE rows
    rows_R = np.unique(ops.R.nonzero()[0])
    assert not np.any(ops.pde[rows_R])


def test_eval_boundary_data_trig_exactness():
    g = build_disk(1.0, 64)
    b = g.boundary
    f = lambda x, y: x**2 - y**2 + 0.3 * x * y
    trace = BoundaryTrace(f(b.points[:, 0], b.points[:, 1]), g)
    th = np.linspace(0.1, 6.0, 37)
    qx, qy = np.cos(th), np.sin(th)
    out = eval_boundary_data(g, trace, qx, qy)
    assert np.max(np.abs(out - f(qx, qy))) < 1e-12
