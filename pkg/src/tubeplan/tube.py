"""Optimal virtual tubes: bundles of minimum-energy trajectories whose
members are convex combinations of a few basis solutions.

All basis problems share the same equality matrix, cost Hessian, and (in
strict corridor mode) the same inequality rows; only the right-hand sides
differ.  Any member with simplex weights theta is then optimal for the
combined right-hand side and costs one matrix-vector product instead of a
full QP solve.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import OrderPairSet
from .knots import (KnotVector, chord_length_knots, normalize_knots,
                    public_knots)
from .pathfinder import (ObstacleSet, RrtConfig, equalize_waypoints,
                         find_homotopic_paths)
from .trajopt import (AffineInequalities, BoundarySpec, CorridorSpec,
                      CostSpec, EqualitySystem, OutOfDomain, PiecewisePolynomial,
                      QpSolution, assemble_cost, assemble_equality,
                      corridor_constraints, solve_qp)

CORRIDOR_MODES = ("strict", "loose", "none")


class InvalidWeights(ValueError):
    """Weights are not nonnegative or do not sum to one."""


@dataclass
class TrajectoryConfig:
    """Polynomial, equalization, and corridor settings for a tube build."""

    order: int = 5
    cost_deriv: int = 3
    continuity: int = 3
    m_target: int = 7
    corridor_width: float = 1.0
    corridor_samples: int = 3
    corridor_mode: str = "strict"

    def __post_init__(self):
        if self.corridor_mode not in CORRIDOR_MODES:
            raise ValueError(f"corridor_mode must be one of {CORRIDOR_MODES}")
        if self.continuity > self.order:
            raise ValueError("continuity cannot exceed polynomial order")


@dataclass
class OptimalVirtualTube:
    """Basis solutions plus everything needed to combine and audit members."""

    pairs: OrderPairSet
    config: TrajectoryConfig
    knots: KnotVector            # normalized, shared by every member
    chord_total: float           # mean chord length before normalization
    waypoints: np.ndarray        # (q, m + 1, d) equalized waypoints
    A: np.ndarray                # shared equality matrix
    blocks: dict
    basis_x: np.ndarray          # (q, n_t) stacked basis coefficients
    basis_b: np.ndarray          # (q, rows) stacked right-hand sides
    cost: CostSpec
    corridor: AffineInequalities | None          # shared rows (strict mode)
    pair_corridors: list | None                  # per-pair rows (loose mode)
    solutions: list | None                       # build-time audits, if any
    qp_solves: int

    @property
    def count(self) -> int:
        return self.basis_x.shape[0]

    @property
    def dim(self) -> int:
        return self.pairs.dim

    @property
    def n_t(self) -> int:
        return self.basis_x.shape[1]


def check_weights(theta, count: int) -> np.ndarray:
    """Validate simplex weights: length, nonnegative, sum to one."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.size != count:
        raise InvalidWeights(f"expected {count} weights, got {theta.size}")
    if theta.min() < -1e-9:
        raise InvalidWeights(f"negative weight {theta.min():.3e}")
    if abs(theta.sum() - 1.0) > 1e-9:
        raise InvalidWeights(f"weights sum to {theta.sum():.12f}")
    return np.clip(theta, 0.0, None)


def _shared_corridor(waypoints: np.ndarray, knots: KnotVector,
                     config: TrajectoryConfig) -> AffineInequalities:
    """One corridor around the mean polyline, wide enough to contain every
    pair's own corridor.

    Widths per segment grow by the largest perpendicular offset of any
    pair's waypoints from the mean chord, so each basis problem stays
    feasible while all problems share identical inequality rows.
    """
    mean = waypoints.mean(axis=0)
    m = mean.shape[0] - 1
    dim = mean.shape[1]
    widths = np.empty(m)
    for seg in range(m):
        chord = mean[seg + 1] - mean[seg]
        tangent = chord / np.linalg.norm(chord)
        P = np.eye(dim) - np.outer(tangent, tangent)
        offset = 0.0
        for e in (seg, seg + 1):
            deltas = waypoints[:, e, :] - mean[e]       # (q, d)
            offset = max(offset, np.abs(deltas @ P.T).max())
        widths[seg] = config.corridor_width + offset
    spec = CorridorSpec(widths, config.corridor_samples)
    return corridor_constraints(mean, knots, spec, config.order)


def build_tube(pairs: OrderPairSet, obstacles: ObstacleSet,
               rrt_config: RrtConfig, traj_config: TrajectoryConfig
               ) -> OptimalVirtualTube:
    """Plan q homotopic paths and solve q basis QPs sharing one structure.

    The shared knot vector is the normalized mean of the per-pair
    chord-length knots; the equality matrix depends only on knots and
    polynomial settings, so it is assembled once and reused.
    """
    paths = find_homotopic_paths(pairs, obstacles, rrt_config)
    paths = equalize_waypoints(paths, traj_config.m_target)
    waypoints = np.array(paths)
    per_pair = [chord_length_knots(p) for p in paths]
    shared_u = public_knots(per_pair)
    knots = normalize_knots(shared_u)

    order = traj_config.order
    continuity = traj_config.continuity
    dim = pairs.dim
    systems = [assemble_equality(p, knots, order, continuity) for p in paths]
    A = systems[0].A
    basis_b = np.array([s.b for s in systems])
    cost = assemble_cost(knots, traj_config.cost_deriv, order, dim)

    corridor = None
    pair_corridors = None
    if traj_config.corridor_mode == "strict":
        corridor = _shared_corridor(waypoints, knots, traj_config)
    elif traj_config.corridor_mode == "loose":
        spec = CorridorSpec(np.asarray(traj_config.corridor_width),
                            traj_config.corridor_samples)
        pair_corridors = [
            corridor_constraints(p, knots, spec, order) for p in paths]

    solutions = []
    for k, system in enumerate(systems):
        ineq = corridor
        if pair_corridors is not None:
            ineq = pair_corridors[k]
        solutions.append(solve_qp(cost, system, ineq))
    basis_x = np.array([s.x for s in solutions])

    return OptimalVirtualTube(
        pairs=pairs, config=traj_config, knots=knots,
        chord_total=shared_u.total, waypoints=waypoints, A=A,
        blocks=systems[0].blocks, basis_x=basis_x, basis_b=basis_b,
        cost=cost, corridor=corridor, pair_corridors=pair_corridors,
        solutions=solutions, qp_solves=len(solutions))


def combine_rhs(tube: OptimalVirtualTube, theta) -> np.ndarray:
    """Right-hand side of the member problem: the stored basis right-hand
    sides combined with the member weights (never re-derived from paths)."""
    theta = check_weights(theta, tube.count)
    return tube.basis_b.T @ theta


def member_trajectory(tube: OptimalVirtualTube, theta) -> PiecewisePolynomial:
    """Member trajectory for simplex weights theta.

    One (q x n_t) matrix-vector product; no QP solve.
    """
    theta = check_weights(theta, tube.count)
    x = tube.basis_x.T @ theta
    return PiecewisePolynomial(dim=tube.dim, order=tube.config.order,
                               knots=tube.knots, x=x)


def direct_member_solve(tube: OptimalVirtualTube, theta) -> QpSolution:
    """Solve the member's QP from scratch (reference for verification).

    Uses the shared corridor rows in strict mode; loose-mode members have
    no common inequality set, so the direct solve is equality-only there.
    """
    b = combine_rhs(tube, theta)
    eq = EqualitySystem(tube.A, b, tube.blocks)
    return solve_qp(tube.cost, eq, tube.corridor)


@dataclass
class MemberVerification:
    theta: np.ndarray
    eq_residual: float
    corridor_violation: float
    coefficient_error: float
    objective_rel_error: float
    variational_min: float
    active_basis: list
    findings: list
    passed: bool


def verify_member_optimality(tube: OptimalVirtualTube, theta,
                             directions: int = 100, seed: int = 0
                             ) -> MemberVerification:
    """Audit one member: feasibility, agreement with a direct solve, and
    first-order optimality against random feasible perturbations.

    The variational check walks from the member along null-space directions
    of the equality matrix (scaled back by a ratio test to stay inside the
    corridor) and requires 2 x^T H (y - x) >= -1e-8 for every probe y.
    """
    theta = check_weights(theta, tube.count)
    x = tube.basis_x.T @ theta
    b = tube.basis_b.T @ theta
    H = tube.cost.H
    eq_residual = float(np.abs(tube.A @ x - b).max())

    corridor = tube.corridor
    if corridor is not None:
        corridor_violation = float(max(corridor.residuals(x).max(), 0.0))
    else:
        corridor_violation = 0.0

    direct = direct_member_solve(tube, theta)
    coefficient_error = float(np.abs(x - direct.x).max())
    obj = float(x @ H @ x)
    objective_rel_error = abs(obj - direct.objective) / max(
        abs(direct.objective), 1e-12)

    # Feasible probe directions: null space of the equality matrix, also
    # tangent to any corridor rows tight at x (stepping off an active row
    # is infeasible, so only sliding directions are informative).  Probe
    # steps are kept tiny: the inner-product tolerance is absolute, and
    # null-space leakage amplified by the equality multipliers (norm up to
    # ~1e8 on ill-conditioned instances) grows linearly with step size.
    walls = tube.A
    slack = None
    if corridor is not None:
        slack = corridor.h - corridor.G @ x
        tight_rows = slack <= 1e-8 * np.maximum(1.0, np.abs(corridor.h))
        if tight_rows.any():
            walls = np.vstack([walls, corridor.G[tight_rows]])
    _, s, vh = np.linalg.svd(walls)
    rank = int((s > s[0] * 1e-12).sum())
    null = vh[rank:].T
    rng = np.random.default_rng(seed)
    grad = 2.0 * H @ x
    variational_min = np.inf
    scale = 1e-8 * max(1.0, float(np.abs(x).max()))
    for _ in range(directions):
        if null.shape[1] == 0:
            variational_min = 0.0
            break
        step = null @ rng.standard_normal(null.shape[1])
        step *= scale / max(np.linalg.norm(step), 1e-300)
        alpha = 1.0
        if corridor is not None:
            g_step = corridor.G @ step
            room = np.maximum(slack, 0.0)
            tight = g_step > 1e-300
            if tight.any():
                alpha = min(alpha, 0.99 * float(
                    np.min(room[tight] / g_step[tight])))
        if alpha <= 0.0:
            continue
        # y - x is alpha * step by construction; using the exact step
        # avoids the cancellation noise of forming (x + step) - x.
        variational_min = min(variational_min,
                              float(grad @ (alpha * step)))
    if not np.isfinite(variational_min):
        variational_min = 0.0

    active_basis = []
    if tube.corridor is not None:
        for k in range(tube.count):
            if (tube.corridor.residuals(tube.basis_x[k]) >= -1e-8).any():
                active_basis.append(k)
    elif tube.pair_corridors is not None:
        for k, rows in enumerate(tube.pair_corridors):
            if (rows.residuals(tube.basis_x[k]) >= -1e-8).any():
                active_basis.append(k)
    findings = []
    if tube.config.corridor_mode == "loose" and active_basis:
        findings.append(
            "corridor rows active on basis solutions "
            f"{active_basis} but not shared across the bundle; member "
            "optimality may not transfer")
    passed = (eq_residual <= 1e-8 and corridor_violation <= 1e-8
              and coefficient_error <= 1e-6
              and objective_rel_error <= 1e-8
              and variational_min >= -1e-8)
    return MemberVerification(
        theta=theta, eq_residual=eq_residual,
        corridor_violation=corridor_violation,
        coefficient_error=coefficient_error,
        objective_rel_error=objective_rel_error,
        variational_min=variational_min, active_basis=active_basis,
        findings=findings, passed=passed)


@dataclass
class CrossSection:
    t: float
    points: np.ndarray   # (q, d) basis positions; members fill the hull


def cross_section(tube: OptimalVirtualTube, t: float) -> CrossSection:
    """Basis trajectory positions at parameter t."""
    pts = np.array([
        member_trajectory(tube, np.eye(tube.count)[k]).evaluate(t)
        for k in range(tube.count)])
    return CrossSection(float(t), pts)


@dataclass
class BenchmarkRow:
    members: int
    member_seconds: float
    direct_seconds: float
    ratio: float


def combination_benchmark(tube: OptimalVirtualTube, counts=(10, 100, 1000),
                          seed: int = 0) -> list:
    """Wall-clock cost of combining members vs solving them directly.

    member_seconds is the per-member cost of the convex combination;
    direct_seconds is the per-solve cost of a fresh KKT factorization.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for count in counts:
        thetas = rng.dirichlet(np.ones(tube.count), size=count)
        start = time.perf_counter()
        for theta in thetas:
            member_trajectory(tube, theta)
        member_seconds = (time.perf_counter() - start) / count
        n_direct = min(count, 5)
        start = time.perf_counter()
        for theta in thetas[:n_direct]:
            direct_member_solve(tube, theta)
        direct_seconds = (time.perf_counter() - start) / n_direct
        rows.append(BenchmarkRow(count, member_seconds, direct_seconds,
                                 direct_seconds / max(member_seconds, 1e-12)))
    return rows
