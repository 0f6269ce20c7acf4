import numpy as np
import pytest

from tubeplan.knots import KnotVector
from tubeplan.trajopt import (AffineInequalities, BoundarySpec, CorridorSpec,
                              CostSpec, EqualitySystem, Infeasible,
                              OutOfDomain, PiecewisePolynomial, RankDeficient,
                              assemble_cost, assemble_equality, basis_row,
                              corridor_constraints, evaluate, solve_full_pivot,
                              solve_qp)

UNIT = KnotVector(np.array([0.0, 1.0]), normalized=True)


def test_basis_row_values():
    assert np.allclose(basis_row(1.0, 1, 3), [0.0, 1.0, 2.0, 3.0])
    assert np.allclose(basis_row(0.5, 2, 3), [0.0, 0.0, 2.0, 3.0])
    t = 0.3
    assert np.allclose(basis_row(t, 0, 2), [1.0, t, t * t])
    assert np.allclose(basis_row(0.0, 0, 4), [1.0, 0.0, 0.0, 0.0, 0.0])
    # differentiating past the degree leaves nothing
    assert np.allclose(basis_row(0.7, 4, 3), np.zeros(4))


def test_cost_matrix_linear_velocity():
    cost = assemble_cost(UNIT, 1, 1, 1)
    assert np.allclose(cost.H, [[0.0, 0.0], [0.0, 1.0]])


def test_cost_matrix_quadratic_acceleration():
    cost = assemble_cost(UNIT, 2, 2, 1)
    expect = np.zeros((3, 3))
    expect[2, 2] = 4.0
    assert np.allclose(cost.H, expect)


def test_cost_matrix_block_diagonal_and_psd():
    kv = KnotVector(np.array([0.0, 0.4, 1.0]), normalized=True)
    cost = assemble_cost(kv, 3, 5, 2)
    H = cost.H
    w = 12   # coefficients per segment: (5 + 1) * 2
    assert H.shape == (24, 24)
    assert np.allclose(H[:w, w:], 0.0)
    assert np.allclose(H, H.T)
    assert np.linalg.eigvalsh(H).min() >= -1e-9


def test_cost_kills_constant_offsets():
    kv = KnotVector(np.array([0.0, 0.5, 1.0]), normalized=True)
    cost = assemble_cost(kv, 3, 5, 2)
    shift = np.zeros(24)
    shift[0:2] = 1.0        # constant coefficients of segment 0
    shift[12:14] = 1.0      # constant coefficients of segment 1
    assert np.allclose(cost.H @ shift, 0.0, atol=1e-12)


def test_equality_line_fit_oracle():
    system = assemble_equality(np.array([[0.0], [1.0]]), UNIT, 1, 0)
    assert np.allclose(system.A, [[1.0, 0.0], [1.0, 1.0]])
    assert np.allclose(system.b, [0.0, 1.0])
    x = np.linalg.solve(system.A, system.b)
    assert np.allclose(x, [0.0, 1.0])


def test_equality_block_layout():
    kv = KnotVector(np.array([0.0, 0.5, 1.0]), normalized=True)
    pts = np.array([[0.0], [1.0], [0.5]])
    system = assemble_equality(pts, kv, 5, 2)
    # (m-1)(p+1) + (m+1) + 2p rows for d = 1
    assert system.A.shape == (10, 12)
    assert system.blocks == {"continuity": (0, 3), "waypoints": (3, 6),
                             "terminal": (6, 10)}
    lo, hi = system.blocks["waypoints"]
    assert np.allclose(system.b[lo:hi], [0.0, 1.0, 0.5])
    assert np.allclose(system.b[:lo], 0.0)
    assert np.allclose(system.b[hi:], 0.0)


def test_equality_custom_boundary_rhs():
    kv = KnotVector(np.array([0.0, 0.5, 1.0]), normalized=True)
    pts = np.array([[0.0], [1.0], [0.5]])
    bounds = BoundarySpec(start_derivs=[np.array([2.0]), np.array([-1.0])],
                          goal_derivs=[np.array([3.0]), np.array([4.0])])
    system = assemble_equality(pts, kv, 5, 2, bounds)
    lo, hi = system.blocks["terminal"]
    # derivative order runs continuity..1 at the start, then at the goal
    assert np.allclose(system.b[lo:hi], [-1.0, 2.0, 4.0, 3.0])


def test_equality_rejects_dependent_rows():
    kv = KnotVector(np.array([0.0, 0.5, 1.0]), normalized=True)
    pts = np.array([[0.0], [1.0], [0.5]])
    with pytest.raises(RankDeficient):
        assemble_equality(pts, kv, 3, 2)   # more rows than a cubic affords


def test_equality_waypoint_count_mismatch():
    with pytest.raises(ValueError):
        assemble_equality(np.array([[0.0], [1.0], [2.0]]), UNIT, 5, 2)


def test_solve_full_pivot_matches_reference():
    rng = np.random.default_rng(1)
    for n in (3, 8, 20):
        M = rng.standard_normal((n, n)) + n * np.eye(n)
        rhs = rng.standard_normal(n)
        assert np.allclose(solve_full_pivot(M, rhs), np.linalg.solve(M, rhs),
                           atol=1e-9)


def test_solve_full_pivot_rejects_singular():
    M = np.array([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(RankDeficient):
        solve_full_pivot(M, np.array([1.0, 1.0]))


def test_qp_minimum_norm_on_a_line():
    cost = CostSpec(np.eye(2), 0)
    eq = EqualitySystem(np.array([[1.0, 1.0]]), np.array([2.0]))
    sol = solve_qp(cost, eq)
    assert np.allclose(sol.x, [1.0, 1.0], atol=1e-10)
    assert sol.objective == pytest.approx(2.0)
    assert sol.eq_residual <= 1e-10
    assert sol.active_set.size == 0


def test_qp_matches_one_dof_oracle():
    # two segments, cubic, one remaining degree of freedom after equalities
    kv = KnotVector(np.array([0.0, 0.5, 1.0]), normalized=True)
    pts = np.array([[0.0], [1.0], [0.0]])
    system = assemble_equality(pts, kv, 3, 1)
    assert system.A.shape == (7, 8)
    cost = assemble_cost(kv, 2, 3, 1)
    sol = solve_qp(cost, system)

    # independent oracle: along the one-dimensional feasible line the
    # objective is an exact quadratic, so a parabola through three samples
    # recovers the true minimum without touching the KKT machinery
    x_p, *_ = np.linalg.lstsq(system.A, system.b, rcond=None)
    _, _, vh = np.linalg.svd(system.A)
    direction = vh[-1]
    assert np.abs(system.A @ direction).max() < 1e-9

    def f(t):
        v = x_p + t * direction
        return float(v @ cost.H @ v)

    a = 0.5 * (f(1.0) + f(-1.0)) - f(0.0)
    slope = 0.5 * (f(1.0) - f(-1.0))
    assert a > 0.0
    t_star = -slope / (2.0 * a)
    best = f(t_star)
    assert sol.objective == pytest.approx(best, rel=1e-8, abs=1e-10)
    assert np.allclose(sol.x, x_p + t_star * direction, atol=1e-7)


def test_qp_active_inequality():
    cost = CostSpec(np.eye(2), 0)
    eq = EqualitySystem(np.array([[1.0, 0.0]]), np.array([1.0]))
    ineq = AffineInequalities(np.array([[0.0, -1.0]]), np.array([-2.0]))
    sol = solve_qp(cost, eq, ineq)            # min |x|^2, x0 = 1, x1 >= 2
    assert np.allclose(sol.x, [1.0, 2.0], atol=1e-10)
    assert list(sol.active_set) == [0]
    assert sol.mu[0] == pytest.approx(4.0)
    assert sol.mu.min() >= -1e-10
    assert sol.kkt_stationarity <= 1e-8


def test_qp_inactive_inequality():
    cost = CostSpec(np.eye(2), 0)
    eq = EqualitySystem(np.array([[1.0, 0.0]]), np.array([1.0]))
    ineq = AffineInequalities(np.array([[0.0, 1.0]]), np.array([5.0]))
    sol = solve_qp(cost, eq, ineq)
    assert np.allclose(sol.x, [1.0, 0.0], atol=1e-10)
    assert sol.active_set.size == 0
    assert np.allclose(sol.mu, 0.0)


def test_qp_infeasible_constraints():
    cost = CostSpec(np.eye(1), 0)
    eq = EqualitySystem(np.array([[1.0]]), np.array([0.0]))
    ineq = AffineInequalities(np.array([[-1.0]]), np.array([-1.0]))
    with pytest.raises(Infeasible):
        solve_qp(cost, eq, ineq)      # x = 0 and x >= 1


def test_qp_deterministic():
    kv = KnotVector(np.array([0.0, 0.5, 1.0]), normalized=True)
    pts = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]])
    system = assemble_equality(pts, kv, 5, 2)
    cost = assemble_cost(kv, 3, 5, 2)
    a = solve_qp(cost, system)
    b = solve_qp(cost, system)
    assert np.array_equal(a.x, b.x)


def test_corridor_rows_on_and_off_the_polyline():
    pts = np.array([[0.0, 0.0], [2.0, 0.0]])
    spec = CorridorSpec(np.array(0.5), samples_per_segment=1)
    ineq = corridor_constraints(pts, UNIT, spec, 1)
    straight = np.array([0.0, 0.0, 2.0, 0.0])   # h(t) = (2t, 0)
    res = ineq.residuals(straight)
    assert np.allclose(res, -0.5)
    shifted = np.array([0.0, 0.3, 2.0, 0.0])    # h(t) = (2t, 0.3)
    res = ineq.residuals(shifted)
    assert res.max() == pytest.approx(-0.2)
    assert res.min() == pytest.approx(-0.8)


def test_corridor_rows_scale_with_sample_count():
    pts = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]])
    kv = KnotVector(np.array([0.0, 0.5, 1.0]), normalized=True)
    ineq = corridor_constraints(pts, kv, CorridorSpec(np.array(1.0), 3), 5)
    # 2 segments x 3 samples x 2 coordinates x two sides
    assert ineq.G.shape == (24, 24)


def test_continuity_across_interior_knots():
    kv = KnotVector(np.array([0.0, 0.3, 0.7, 0.9, 1.0]), normalized=True)
    pts = np.array([[0.0, 0.0], [1.0, 2.0], [3.0, 1.0], [3.5, 0.5],
                    [4.0, 0.0]])
    system = assemble_equality(pts, kv, 5, 3)
    cost = assemble_cost(kv, 3, 5, 2)
    sol = solve_qp(cost, system)
    traj = PiecewisePolynomial(2, 5, kv, sol.x)
    # evaluate the adjacent segment polynomials at the shared knot itself
    for seg, knot in enumerate(kv.u[1:-1]):
        for p in range(4):
            row = basis_row(float(knot), p, 5)
            left = row @ traj.segment_coefficients(seg)
            right = row @ traj.segment_coefficients(seg + 1)
            assert np.abs(left - right).max() <= 1e-9


def test_second_derivative_matches_finite_differences():
    kv = KnotVector(np.array([0.0, 0.5, 1.0]), normalized=True)
    pts = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]])
    system = assemble_equality(pts, kv, 5, 2)
    cost = assemble_cost(kv, 3, 5, 2)
    traj = PiecewisePolynomial(2, 5, kv, solve_qp(cost, system).x)
    rng = np.random.default_rng(7)
    # h = 1e-4 balances cancellation noise against truncation; samples stay
    # clear of the interior knot so the stencil never straddles segments
    h = 1e-4
    for _ in range(100):
        t = rng.uniform(2 * h, 1.0 - 2 * h)
        while min(abs(t - k) for k in kv.u[1:-1]) < 2 * h:
            t = rng.uniform(2 * h, 1.0 - 2 * h)
        fd = (evaluate(traj, t + h) - 2 * evaluate(traj, t)
              + evaluate(traj, t - h)) / (h * h)
        exact = evaluate(traj, t, 2)
        denom = max(1.0, np.abs(exact).max())
        assert np.abs(fd - exact).max() / denom <= 1e-5


def test_objective_invariant_under_translation():
    kv = KnotVector(np.array([0.0, 0.5, 1.0]), normalized=True)
    pts = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]])
    base = solve_qp(assemble_cost(kv, 3, 5, 2),
                    assemble_equality(pts, kv, 5, 2))
    moved = solve_qp(assemble_cost(kv, 3, 5, 2),
                     assemble_equality(pts + [10.0, -4.0], kv, 5, 2))
    assert moved.objective == pytest.approx(base.objective, abs=1e-6)
    # only the constant coefficients change
    diff = (moved.x - base.x).reshape(2, 6, 2)
    assert np.abs(diff[:, 1:, :]).max() <= 1e-6


def test_evaluate_domain_checks():
    traj = PiecewisePolynomial(1, 1, UNIT, np.array([0.0, 1.0]))
    assert evaluate(traj, 0.0) == pytest.approx(0.0)
    assert evaluate(traj, 1.0) == pytest.approx(1.0)
    with pytest.raises(OutOfDomain):
        evaluate(traj, 1.1)
    with pytest.raises(OutOfDomain):
        evaluate(traj, -0.1)


def test_piecewise_polynomial_size_check():
    with pytest.raises(ValueError):
        PiecewisePolynomial(2, 5, UNIT, np.zeros(10))
