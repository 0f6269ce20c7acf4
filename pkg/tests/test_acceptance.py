"""End-to-end checks of the package's headline guarantees.

Each test prints one PASS/FAIL line summarizing the measured quantities
against their bounds.  The shipped scenarios are planned once at module
scope, and every quadratic-program solution produced along the way is
retained for the final numerical-hygiene audit.
"""

import dataclasses
import time

import numpy as np
import pytest

from tubeplan.cli import plan_tube
from tubeplan.geometry import OrderPairSet, Terminal
from tubeplan.knots import chord_length_knots, normalize_knots, public_knots
from tubeplan.mpcsim import compute_metrics, simulate
from tubeplan.scenario_io import load_scenario
from tubeplan.trajopt import (assemble_cost, assemble_equality, basis_row,
                              solve_qp)
from tubeplan.tube import (OptimalVirtualTube, TrajectoryConfig,
                           _shared_corridor, direct_member_solve,
                           member_trajectory, verify_member_optimality)

AUDITED = []   # (label, QpSolution) pairs accumulated by every criterion
TUBES = []     # (label, tube) pairs whose trajectories get the hygiene audit


def keep(label, solution):
    AUDITED.append((label, solution))


def keep_tube(label, tube):
    TUBES.append((label, tube))
    for k, sol in enumerate(tube.solutions):
        keep(f"{label} basis {k}", sol)


def report(number, passed, details):
    line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'} - {details}"
    print(line)
    assert passed, line


@pytest.fixture(scope="module")
def corridor():
    scenario = load_scenario("scenarios/corridor_2d.json")
    tube = plan_tube(scenario)
    keep_tube("corridor", tube)
    return scenario, tube


@pytest.fixture(scope="module")
def equality_only(corridor):
    scenario, _ = corridor
    bare = dataclasses.replace(
        scenario, traj=dataclasses.replace(scenario.traj,
                                           corridor_mode="none"))
    tube = plan_tube(bare)
    keep_tube("hyperplane-only corridor", tube)
    return tube


@pytest.fixture(scope="module")
def triangle():
    scenario = load_scenario("scenarios/triangle_2d.json")
    tube = plan_tube(scenario)
    keep_tube("triangle", tube)
    return scenario, tube


@pytest.fixture(scope="module")
def tetra():
    scenario = load_scenario("scenarios/tetra_3d.json")
    tube = plan_tube(scenario)
    keep_tube("tetra", tube)
    return scenario, tube


def straight_tube(segments, length=0.2, gap=0.04):
    """Two parallel straight member paths, solved directly; small physical
    scale keeps the stacked coefficients well inside double precision."""
    xs = np.linspace(0.0, length, segments + 1)
    waypoints = np.array(
        [np.column_stack([xs, np.full(segments + 1, -gap / 2)]),
         np.column_stack([xs, np.full(segments + 1, gap / 2)])])
    config = TrajectoryConfig(m_target=segments, corridor_width=gap)
    pairs = OrderPairSet(Terminal(waypoints[:, 0, :]),
                         Terminal(waypoints[:, -1, :]), np.arange(2))
    knots = normalize_knots(
        public_knots([chord_length_knots(p) for p in waypoints]))
    systems = [assemble_equality(p, knots, config.order, config.continuity)
               for p in waypoints]
    cost = assemble_cost(knots, config.cost_deriv, config.order, 2)
    corridor = _shared_corridor(waypoints, knots, config)
    sols = [solve_qp(cost, s, corridor) for s in systems]
    return OptimalVirtualTube(
        pairs=pairs, config=config, knots=knots, chord_total=length,
        waypoints=waypoints, A=systems[0].A, blocks=systems[0].blocks,
        basis_x=np.array([s.x for s in sols]),
        basis_b=np.array([s.b for s in systems]), cost=cost,
        corridor=corridor, pair_corridors=None, solutions=sols, qp_solves=2)


@pytest.fixture(scope="module")
def straight_pair():
    base, doubled = straight_tube(7), straight_tube(14)
    keep_tube("straight 7-segment", base)
    keep_tube("straight 14-segment", doubled)
    return base, doubled


def member_error(tube, theta, label):
    """Coefficient and objective gap between combination and direct solve."""
    direct = direct_member_solve(tube, theta)
    keep(label, direct)
    x = tube.basis_x.T @ theta
    coeff = float(np.abs(x - direct.x).max())
    obj = float(x @ tube.cost.H @ x)
    obj_rel = abs(obj - direct.objective) / max(abs(direct.objective), 1e-12)
    return coeff, obj_rel


def test_criterion_1_interior_members_match_direct_solves(corridor):
    _, tube = corridor
    assert tube.count == 2 and tube.dim == 2
    assert tube.config.order == 5 and tube.config.m_target >= 5
    start = time.perf_counter()
    worst_coeff = worst_obj = 0.0
    for count in (9, 99):
        for i in range(1, count + 1):
            f = i / (count + 1)
            coeff, obj_rel = member_error(tube, np.array([f, 1.0 - f]),
                                          "interior member")
            worst_coeff = max(worst_coeff, coeff)
            worst_obj = max(worst_obj, obj_rel)
    elapsed = time.perf_counter() - start
    report(1, worst_coeff <= 1e-6 and worst_obj <= 1e-8 and elapsed < 10.0,
           f"9+99 interior members: max coeff err {worst_coeff:.2e} "
           f"(<= 1e-6), max objective rel err {worst_obj:.2e} (<= 1e-8), "
           f"{elapsed:.1f}s (< 10s)")


def test_criterion_2_error_flat_from_10_to_1000_members(corridor):
    _, tube = corridor
    start = time.perf_counter()
    rng = np.random.default_rng(0)

    def worst_error(count):
        worst = 0.0
        for theta in rng.dirichlet(np.ones(tube.count), size=count):
            coeff, _ = member_error(tube, theta, "sampled member")
            worst = max(worst, coeff)
        return worst

    err_small = worst_error(10)
    err_large = worst_error(1000)
    elapsed = time.perf_counter() - start
    ratio = err_large / err_small
    report(2, err_large <= 10.0 * err_small and elapsed < 60.0,
           f"max coeff err {err_small:.2e} at 10 members vs {err_large:.2e} "
           f"at 1000, growth {ratio:.2f}x (<= 10x), {elapsed:.0f}s (< 60s)")


def test_criterion_3_first_order_optimality_holds_along_the_tube(
        corridor, equality_only):
    _, strict = corridor
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    worst_eq = worst_corridor = 0.0
    worst_variational = np.inf
    for tube in (equality_only, strict):
        for theta in rng.dirichlet(np.ones(tube.count), size=100):
            rep = verify_member_optimality(tube, theta, directions=100)
            worst_eq = max(worst_eq, rep.eq_residual)
            worst_corridor = max(worst_corridor, rep.corridor_violation)
            worst_variational = min(worst_variational, rep.variational_min)
    elapsed = time.perf_counter() - start
    report(3, worst_eq <= 1e-8 and worst_corridor <= 1e-8
           and worst_variational >= -1e-8 and elapsed < 30.0,
           f"100 members on each instance, 100 feasible probes each: "
           f"feasibility {max(worst_eq, worst_corridor):.2e} (<= 1e-8), "
           f"min variational inner product {worst_variational:.2e} "
           f"(>= -1e-8), {elapsed:.0f}s (< 30s)")


def test_criterion_4_three_solves_serve_every_member(triangle):
    _, tube = triangle
    coeff, obj_rel = member_error(tube, np.array([0.5, 0.3, 0.2]),
                                  "triangle interior member")
    passed = (tube.count == 3 and tube.qp_solves == 3
              and tube.knots.segments == 7
              and coeff <= 1e-6 and obj_rel <= 1e-8)
    report(4, passed,
           f"3-vertex, 7-segment tube from {tube.qp_solves} QP solves; "
           f"4th member coeff err {coeff:.2e} (<= 1e-6), objective rel err "
           f"{obj_rel:.2e} (<= 1e-8)")


def _member_seconds(tube, repeats=7, count=200):
    thetas = np.random.default_rng(2).dirichlet(np.ones(tube.count),
                                                size=count)
    best = np.inf
    for _ in range(repeats):
        begin = time.perf_counter()
        for theta in thetas:
            member_trajectory(tube, theta)
        best = min(best, (time.perf_counter() - begin) / count)
    return best


def _direct_seconds(tube, repeats=3, count=3):
    thetas = np.random.default_rng(3).dirichlet(np.ones(tube.count),
                                                size=count)
    best = np.inf
    for _ in range(repeats):
        begin = time.perf_counter()
        for theta in thetas:
            direct_member_solve(tube, theta)
        best = min(best, (time.perf_counter() - begin) / count)
    return best


def test_criterion_5_combination_is_fast_and_scales_linearly(
        corridor, straight_pair):
    _, tube = corridor
    base, doubled = straight_pair
    assert 2 * base.basis_x.shape[1] == doubled.basis_x.shape[1]
    combine = _member_seconds(tube)
    direct = _direct_seconds(tube)
    ratio = direct / combine
    scale = _member_seconds(doubled) / _member_seconds(base)
    report(5, ratio >= 50.0 and scale <= 2.5,
           f"combination {combine * 1e6:.1f}us vs direct solve "
           f"{direct * 1e3:.2f}ms per member ({ratio:.0f}x, >= 50x); "
           f"doubling coefficients {base.basis_x.shape[1]} -> "
           f"{doubled.basis_x.shape[1]} scales time {scale:.2f}x (<= 2.5x)")


def min_pairwise_distance_per_tick(log):
    worst = np.inf
    d = log.dim
    for t in range(log.states.shape[0]):
        pos = log.states[t, :, :d]
        dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
        np.fill_diagonal(dist, np.inf)
        worst = min(worst, float(dist.min()))
    return worst


def test_criterion_6_eleven_robots_cross_the_corridor_safely(corridor):
    scenario, tube = corridor
    assert scenario.robot_starts.shape == (11, 2)
    start = time.perf_counter()
    log = simulate(tube, scenario.robot_starts, scenario.mpc,
                   scenario.avoidance, time_limit=scenario.time_limit,
                   goal_radius=scenario.goal_radius, threads=2)
    wall = time.perf_counter() - start
    metrics = compute_metrics(log, scenario.time_limit, scenario.goal_radius)
    closest = min_pairwise_distance_per_tick(log)
    report(6, metrics.arrival_rate == 1.0 and closest >= 1.0 and wall < 120.0,
           f"11 robots: arrival rate {metrics.arrival_rate:.2f} (= 1), "
           f"min pairwise distance {closest:.3f} m every tick (>= 1.0), "
           f"simulated {log.times[-1]:.1f}s in {wall:.0f}s wall (< 120s)")


def test_criterion_7_twenty_robots_fly_the_tetrahedral_tube(tetra):
    scenario, tube = tetra
    assert tube.count == 4 and tube.dim == 3
    assert scenario.robot_starts.shape == (20, 3)
    log = simulate(tube, scenario.robot_starts, scenario.mpc,
                   scenario.avoidance, time_limit=scenario.time_limit,
                   goal_radius=scenario.goal_radius, threads=2)
    metrics = compute_metrics(log, scenario.time_limit, scenario.goal_radius)
    closest = min_pairwise_distance_per_tick(log)
    safety = scenario.avoidance.safety_distance
    worst_coeff = worst_obj = 0.0
    rng = np.random.default_rng(5)
    for theta in rng.dirichlet(np.ones(4), size=5):
        coeff, obj_rel = member_error(tube, theta, "tetra member")
        worst_coeff = max(worst_coeff, coeff)
        worst_obj = max(worst_obj, obj_rel)
    report(7, metrics.arrival_rate == 1.0 and closest >= safety
           and worst_coeff <= 1e-6 and worst_obj <= 1e-8,
           f"20 robots: arrival rate {metrics.arrival_rate:.2f} (= 1), "
           f"min distance {closest:.3f} m (>= safety {safety}); member "
           f"coeff err {worst_coeff:.2e} (<= 1e-6), objective rel err "
           f"{worst_obj:.2e} (<= 1e-8)")


def continuity_gap(tube):
    """Worst two-sided derivative mismatch at interior knots, orders 0..p,
    over the centroid member and every basis member."""
    q = tube.count
    worst = 0.0
    for theta in [np.full(q, 1.0 / q), *np.eye(q)]:
        traj = member_trajectory(tube, theta)
        for seg in range(tube.knots.segments - 1):
            knot = float(tube.knots.u[seg + 1])
            for deriv in range(tube.config.continuity + 1):
                row = basis_row(knot, deriv, tube.config.order)
                gap = np.abs(row @ traj.segment_coefficients(seg)
                             - row @ traj.segment_coefficients(seg + 1))
                worst = max(worst, float(gap.max()))
    return worst


def second_derivative_fd_error(tube, samples=100, seed=4):
    """Five-point central-difference check of evaluate's second derivative.

    The stencil is exact for degree-5 segments, so the step can stay large
    enough that subtractive cancellation in evaluate stays far below the
    tolerance.  Samples keep the whole stencil inside one segment.
    """
    traj = member_trajectory(tube, np.full(tube.count, 1.0 / tube.count))
    interior = tube.knots.u[1:-1]
    h = min(2e-2, float(np.diff(tube.knots.u).min()) / 7.0)
    rng = np.random.default_rng(seed)
    worst = 0.0
    taken = 0
    while taken < samples:
        t = float(rng.uniform(2 * h, 1 - 2 * h))
        if interior.size and np.abs(t - interior).min() < 2.5 * h:
            continue
        taken += 1
        exact = traj.evaluate(t, deriv=2)
        stencil = (-traj.evaluate(t + 2 * h) + 16 * traj.evaluate(t + h)
                   - 30 * traj.evaluate(t) + 16 * traj.evaluate(t - h)
                   - traj.evaluate(t - 2 * h)) / (12 * h * h)
        rel = np.abs(stencil - exact) / np.maximum(1.0, np.abs(exact))
        worst = max(worst, float(rel.max()))
    return worst


def test_criterion_8_numerical_hygiene(corridor, equality_only, triangle,
                                       tetra, straight_pair):
    assert len(AUDITED) > 1000 and len(TUBES) >= 6
    worst_eq = max(sol.eq_residual for _, sol in AUDITED)
    worst_ineq = max(sol.ineq_violation for _, sol in AUDITED)
    worst_stat = max(
        sol.kkt_stationarity / (1e-6 * (1.0 + np.linalg.norm(sol.x)))
        for _, sol in AUDITED)
    worst_mu = min((sol.mu.min() for _, sol in AUDITED if sol.mu.size),
                   default=0.0)
    worst_gap = max(continuity_gap(tube) for _, tube in TUBES)
    worst_fd = max(second_derivative_fd_error(tube) for _, tube in TUBES)
    report(8, worst_eq <= 1e-8 and worst_ineq <= 1e-8 and worst_stat <= 1.0
           and worst_mu >= -1e-10 and worst_gap <= 1e-9 and worst_fd <= 1e-5,
           f"{len(AUDITED)} QP solutions: eq residual {worst_eq:.2e} "
           f"(<= 1e-8), corridor violation {worst_ineq:.2e} (<= 1e-8), "
           f"stationarity {worst_stat:.2e} of bound (<= 1), multipliers "
           f">= {worst_mu:.1e}; knot continuity {worst_gap:.2e} (<= 1e-9); "
           f"FD second-derivative rel err {worst_fd:.2e} (<= 1e-5) "
           f"at 100 random t per tube")
