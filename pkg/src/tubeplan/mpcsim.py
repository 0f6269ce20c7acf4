"""Swarm tracking of tube members with per-robot horizon QPs.

Each robot is a discrete double integrator tracking its own member
trajectory, time-scaled so the bundle is traversed at a reference speed.
Robots avoid each other through tangent half-spaces of ellipse Minkowski
sums, softened by one shared slack per horizon step, and stay inside the
tube through cross-section constraints.  The horizon problem is posed in
error coordinates, which keeps it a pure quadratic form over affine
constraints and lets it reuse the trajectory QP solver.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .geometry import PointOutsideHull, barycentric_weights
from .trajopt import (AffineInequalities, CostSpec, EqualitySystem,
                      PiecewisePolynomial, solve_qp)
from .tube import OptimalVirtualTube, member_trajectory

# distance-to-facet threshold separating interior from boundary robots
_BOUNDARY_TOL = 1e-6


class CoincidentCenters(RuntimeError):
    """Predicted centers coincide and no fallback normal exists."""


class StartOutsideTerminal(ValueError):
    """A robot start position is not inside the start terminal hull."""


@dataclass(frozen=True)
class DiscreteDynamics:
    """Discrete double integrator x_{k+1} = A x_k + B u_k.

    The state stacks position over velocity.  The velocity row of A is
    zero, so the next velocity is Ts * u_k: the input has direct velocity
    authority and the position row advances by Ts * v_k exactly.
    """

    timestep: float
    dim: int

    @property
    def A(self) -> np.ndarray:
        d = self.dim
        top = np.hstack([np.eye(d), self.timestep * np.eye(d)])
        bottom = np.zeros((d, 2 * d))
        return np.vstack([top, bottom])

    @property
    def B(self) -> np.ndarray:
        d = self.dim
        return np.vstack([np.zeros((d, d)), self.timestep * np.eye(d)])


@dataclass(frozen=True)
class TimeScaling:
    """Linear map from simulation time s to tube parameter t = (v/u) s."""

    total_chord: float
    speed: float

    @property
    def rate(self) -> float:
        return self.speed / self.total_chord

    @property
    def duration(self) -> float:
        return self.total_chord / self.speed

    def param(self, s: float) -> float:
        return self.rate * s


@dataclass
class MpcConfig:
    horizon: int = 10
    timestep: float = 0.1
    position_weight: float = 10.0
    velocity_weight: float = 1.0
    input_weight: float = 0.1
    slack_weight: float = 1000.0
    terminal_weight_scale: float = 10.0
    boundary_tolerance: float = 0.5      # eps_c box half-width, metres
    input_limit: float = 100.0
    reference_speed: float = 2.5


@dataclass(frozen=True)
class AvoidanceModel:
    """Identical ellipses around every robot plus the target separation.

    axes are the per-robot semi-axis lengths in metres.  The Minkowski sum
    of two such ellipses doubles the axes; tangent half-spaces of that sum
    separate robot pairs.
    """

    axes: np.ndarray
    safety_distance: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "axes", np.asarray(self.axes, dtype=float))

    def minkowski_scaling(self) -> np.ndarray:
        """E such that the pair obstacle is { p : ||E (p - c)|| <= 1 }."""
        return np.diag(1.0 / (2.0 * self.axes))


@dataclass
class ReferenceWindow:
    """Desired states/inputs over one horizon, plus the tube parameters."""

    states: np.ndarray    # (N + 1, 2 d)
    inputs: np.ndarray    # (N + 1, d), feedforward accelerations
    params: np.ndarray    # (N + 1,) tube parameter per step, capped at 1
    finished: np.ndarray  # (N + 1,) True where the reference holds the goal


def reference_window(traj: PiecewisePolynomial, scaling: TimeScaling,
                     s_now: float, horizon: int, timestep: float
                     ) -> ReferenceWindow:
    """Sample the member trajectory over the next horizon steps.

    Past the end of the tube the reference holds the goal with zero
    velocity and zero feedforward.
    """
    d = traj.dim
    n = horizon + 1
    states = np.zeros((n, 2 * d))
    inputs = np.zeros((n, d))
    params = np.zeros(n)
    finished = np.zeros(n, dtype=bool)
    rate = scaling.rate
    for k in range(n):
        t = scaling.param(s_now + k * timestep)
        if t >= 1.0:
            params[k] = 1.0
            finished[k] = True
            states[k, :d] = traj.evaluate(1.0)
        else:
            params[k] = t
            states[k, :d] = traj.evaluate(t)
            states[k, d:] = traj.evaluate(t, 1) * rate
            inputs[k] = traj.evaluate(t, 2) * rate * rate
    return ReferenceWindow(states, inputs, params, finished)


@dataclass
class Halfspaces:
    """Exclusion rows per neighbour and horizon step.

    Row (j, k): normals[j, k] . p_k >= offsets[j, k] - s_k keeps robot i
    outside neighbour j's Minkowski ellipse at step k.
    """

    normals: np.ndarray   # (J, N + 1, d)
    offsets: np.ndarray   # (J, N + 1)


def avoidance_halfspaces(self_pred: np.ndarray, neighbor_preds: np.ndarray,
                         model: AvoidanceModel, prev_normals=None
                         ) -> Halfspaces:
    """Tangent half-spaces of the pairwise Minkowski ellipses.

    For each neighbour and step, the half-space is tangent to the ellipse
    around the neighbour's predicted center at the point where the segment
    to our own predicted center exits it.  Coincident centers fall back to
    the previous valid normal for that neighbour (previous step, then
    previous tick); with no fallback at all this raises CoincidentCenters.
    """
    self_pred = np.asarray(self_pred, dtype=float)
    neighbor_preds = np.asarray(neighbor_preds, dtype=float)
    if neighbor_preds.ndim == 2:
        neighbor_preds = neighbor_preds[None]
    J, n, d = neighbor_preds.shape
    E = model.minkowski_scaling()
    EtE = E.T @ E
    normals = np.zeros((J, n, d))
    offsets = np.zeros((J, n))
    for j in range(J):
        last = None if prev_normals is None else prev_normals[j]
        for k in range(n):
            center = neighbor_preds[j, k]
            r = self_pred[k] - center
            dist = np.linalg.norm(E @ r)
            if dist < 1e-9:
                if last is None:
                    raise CoincidentCenters(
                        f"neighbour {j} coincides at step {k}")
                normal = last
                touch = center + normal / np.linalg.norm(E @ normal)
            else:
                touch = center + r / dist
                normal = EtE @ (touch - center)
                normal = normal / np.linalg.norm(normal)
            last = normal
            normals[j, k] = normal
            offsets[j, k] = float(normal @ touch)
    return Halfspaces(normals, offsets)


def hull_inequalities(points: np.ndarray):
    """Outward facet rows (A, b) with A p <= b for a full-dimensional hull.

    Returns None when the points do not span the ambient dimension (flat
    cross-sections have no usable interior).  Rows are normalized so the
    facet margin b - A p is a Euclidean distance.
    """
    pts = np.asarray(points, dtype=float)
    d = pts.shape[1]
    centered = pts - pts.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    if len(s) < d or s[d - 1] <= 1e-9 * max(s[0], 1.0):
        return None
    try:
        hull = ConvexHull(pts)
    except QhullError:
        return None
    eqs = hull.equations          # rows [a, c] with a p + c <= 0, |a| = 1
    return eqs[:, :d], -eqs[:, d]


def boundary_margin(rows, p: np.ndarray) -> float:
    """Distance from p to the nearest hull facet (negative outside)."""
    A, b = rows
    return float((b - A @ p).min())


def mpc_step(state: np.ndarray, window: ReferenceWindow,
             halfspaces: Halfspaces | None, config: MpcConfig,
             position_rows=None):
    """One horizon QP in error coordinates; returns the first input, the
    planned absolute states, and the largest slack.

    position_rows, when given, is a list over steps 1..N of (A, b) rows on
    the absolute position (tube cross-section facets or boundary boxes).
    Avoidance rows share one nonnegative slack per step.
    """
    d = window.inputs.shape[1]
    N = window.states.shape[0] - 1
    dyn = DiscreteDynamics(config.timestep, d)
    nx, nu = 2 * d, d
    n_state = (N + 1) * nx
    n_input = N * nu
    nz = n_state + n_input + (N + 1)

    def xi(k):
        return slice(k * nx, (k + 1) * nx)

    def ui(k):
        return slice(n_state + k * nu, n_state + (k + 1) * nu)

    def si(k):
        return n_state + n_input + k

    H = np.zeros((nz, nz))
    stage = np.concatenate([np.full(d, config.position_weight),
                            np.full(d, config.velocity_weight)])
    for k in range(N):
        H[xi(k), xi(k)] = np.diag(stage)
        H[ui(k), ui(k)] = config.input_weight * np.eye(d)
    H[xi(N), xi(N)] = config.terminal_weight_scale * np.diag(stage)
    for k in range(N + 1):
        H[si(k), si(k)] = config.slack_weight

    A_dyn, B_dyn = dyn.A, dyn.B
    n_eq = (N + 1) * nx
    Aeq = np.zeros((n_eq, nz))
    beq = np.zeros(n_eq)
    Aeq[0:nx, xi(0)] = np.eye(nx)
    beq[0:nx] = window.states[0] - np.asarray(state, dtype=float)
    for k in range(N):
        rows = slice((k + 1) * nx, (k + 2) * nx)
        Aeq[rows, xi(k + 1)] = np.eye(nx)
        Aeq[rows, xi(k)] = -A_dyn
        Aeq[rows, ui(k)] = -B_dyn
        beq[rows] = (window.states[k + 1] - A_dyn @ window.states[k]
                     - B_dyn @ window.inputs[k])

    g_rows, h_rows = [], []
    for k in range(N):          # |u| <= input_limit with u = u_d - u_tilde
        for r in range(d):
            row = np.zeros(nz)
            row[n_state + k * nu + r] = 1.0
            g_rows.append(row)
            h_rows.append(config.input_limit + window.inputs[k, r])
            row = np.zeros(nz)
            row[n_state + k * nu + r] = -1.0
            g_rows.append(row)
            h_rows.append(config.input_limit - window.inputs[k, r])
    for k in range(N + 1):      # slack nonnegative
        row = np.zeros(nz)
        row[si(k)] = -1.0
        g_rows.append(row)
        h_rows.append(0.0)
    if halfspaces is not None:
        J = halfspaces.normals.shape[0]
        for j in range(J):
            for k in range(1, N + 1):
                normal = halfspaces.normals[j, k]
                row = np.zeros(nz)
                row[k * nx:k * nx + d] = normal
                row[si(k)] = -1.0
                g_rows.append(row)
                h_rows.append(float(normal @ window.states[k, :d])
                              - halfspaces.offsets[j, k])
    if position_rows is not None:
        for k in range(1, N + 1):
            rows = position_rows[k - 1]
            if rows is None:
                continue
            A_p, b_p = rows
            for a, bb in zip(A_p, b_p):
                row = np.zeros(nz)
                row[k * nx:k * nx + d] = -a
                g_rows.append(row)
                h_rows.append(float(bb - a @ window.states[k, :d]))

    cost = CostSpec(H, 0)
    eq = EqualitySystem(Aeq, beq)
    ineq = AffineInequalities(np.array(g_rows), np.array(h_rows))
    sol = solve_qp(cost, eq, ineq)
    x_err = sol.x[:n_state].reshape(N + 1, nx)
    u_err0 = sol.x[ui(0)]
    slacks = sol.x[n_state + n_input:]
    u0 = window.inputs[0] - u_err0
    plan = window.states - x_err
    return u0, plan, float(slacks.max())


@dataclass
class SimLog:
    """Full state/input history of one swarm run."""

    times: np.ndarray        # (T + 1,)
    states: np.ndarray       # (T + 1, M, 2 d)
    inputs: np.ndarray       # (T, M, d)
    goals: np.ndarray        # (M, d)
    arrival_times: np.ndarray
    timestep: float
    max_slack: np.ndarray    # (T, M)

    @property
    def robots(self) -> int:
        return self.states.shape[1]

    @property
    def dim(self) -> int:
        return self.goals.shape[1]


@dataclass
class Metrics:
    average_time: float
    arrival_rate: float
    average_speed: float
    min_pairwise_distance: float


def simulate(tube: OptimalVirtualTube, starts, config: MpcConfig,
             avoidance: AvoidanceModel, time_limit: float | None = None,
             goal_radius: float = 0.2, threads: int = 1) -> SimLog:
    """Run the swarm until everyone arrives or the time limit expires.

    Each robot tracks the member whose weights reconstruct its start
    position.  Per tick, every robot solves its horizon QP against a
    snapshot of neighbour plans from the previous tick, so results do not
    depend on robot order (or thread count).
    """
    starts = np.asarray(starts, dtype=float)
    M, d = starts.shape
    thetas = []
    for i, p in enumerate(starts):
        try:
            thetas.append(barycentric_weights(p, tube.pairs.starts))
        except PointOutsideHull as err:
            raise StartOutsideTerminal(f"robot {i}: {err}") from err
    trajs = [member_trajectory(tube, th) for th in thetas]
    goals = np.array([traj.evaluate(1.0) for traj in trajs])
    scaling = TimeScaling(tube.chord_total, config.reference_speed)
    if time_limit is None:
        time_limit = 3.0 * scaling.duration
    Ts = config.timestep
    N = config.horizon
    ticks = int(np.floor(time_limit / Ts + 1e-9))
    dyn = DiscreteDynamics(Ts, d)

    states = np.zeros((ticks + 1, M, 2 * d))
    states[0, :, :d] = starts
    inputs = np.zeros((ticks, M, d))
    max_slack = np.zeros((ticks, M))
    arrival = np.full(M, np.inf)

    # predicted positions per robot, aligned to the *current* tick
    steps = np.arange(N + 1)[:, None] * Ts
    preds = np.array([starts[i] + steps * states[0, i, d:] for i in range(M)])
    prev_normals = [[None] * M for _ in range(M)]

    used = 0
    for tick in range(ticks):
        s_now = tick * Ts
        windows = [reference_window(trajs[i], scaling, s_now, N, Ts)
                   for i in range(M)]
        section_rows = _section_rows(tube, windows[0].params)

        def step_robot(i):
            window = windows[i]
            others = [j for j in range(M) if j != i]
            hs = None
            if others:
                hs = avoidance_halfspaces(
                    preds[i], preds[others], avoidance,
                    [prev_normals[i][j] for j in others])
            pos_rows = _position_rows(section_rows, window, config)
            u0, plan, slack = mpc_step(states[tick, i], window, hs,
                                       config, pos_rows)
            new_normals = None
            if hs is not None:
                new_normals = {j: hs.normals[a, -1]
                               for a, j in enumerate(others)}
            return i, u0, plan, slack, new_normals

        if threads and threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(step_robot, range(M)))
        else:
            results = [step_robot(i) for i in range(M)]

        for i, u0, plan, slack, new_normals in results:
            inputs[tick, i] = u0
            max_slack[tick, i] = slack
            preds[i] = np.vstack([plan[1:, :d], plan[-1:, :d]])
            if new_normals:
                for j, normal in new_normals.items():
                    prev_normals[i][j] = normal
        for i in range(M):
            states[tick + 1, i] = dyn.A @ states[tick, i] + dyn.B @ inputs[tick, i]
        used = tick + 1
        now = (tick + 1) * Ts
        dists = np.linalg.norm(states[tick + 1, :, :d] - goals, axis=1)
        newly = (dists <= goal_radius) & ~np.isfinite(arrival)
        arrival[newly] = now
        if np.all(np.isfinite(arrival)):
            break

    times = np.arange(used + 1) * Ts
    return SimLog(times=times, states=states[:used + 1],
                  inputs=inputs[:used], goals=goals, arrival_times=arrival,
                  timestep=Ts, max_slack=max_slack[:used])


def _section_rows(tube: OptimalVirtualTube, params: np.ndarray):
    """Cross-section facet rows per horizon step (None when flat)."""
    from .tube import cross_section
    rows = []
    for k in range(1, params.size):
        section = cross_section(tube, float(params[k]))
        rows.append(hull_inequalities(section.points))
    return rows


def _position_rows(section_rows, window: ReferenceWindow, config: MpcConfig):
    """Tube constraint per step: hull facets for interior references,
    a +-eps_c box around the reference for boundary references."""
    d = window.inputs.shape[1]
    eye = np.eye(d)
    box_A = np.vstack([eye, -eye])
    out = []
    for k in range(1, window.states.shape[0]):
        ref = window.states[k, :d]
        rows = section_rows[k - 1]
        if rows is not None and boundary_margin(rows, ref) > _BOUNDARY_TOL:
            out.append(rows)
        else:
            box_b = np.concatenate([ref + config.boundary_tolerance,
                                    -(ref - config.boundary_tolerance)])
            out.append((box_A, box_b))
    return out


def compute_metrics(log: SimLog, time_limit: float,
                    goal_radius: float) -> Metrics:
    """Swarm metrics recomputed from the log.

    average_time is infinite if any robot misses the goal within the time
    limit.  Over an empty swarm the arrival rate is 1 by convention.
    """
    M = log.robots
    if M == 0:
        return Metrics(0.0, 1.0, 0.0, np.inf)
    d = log.dim
    pos = log.states[:, :, :d]
    dists = np.linalg.norm(pos - log.goals[None, :, :], axis=2)
    arrived_mask = dists <= goal_radius
    arrival = np.full(M, np.inf)
    for i in range(M):
        hits = np.flatnonzero(arrived_mask[:, i] & (log.times <= time_limit + 1e-9))
        if hits.size:
            arrival[i] = log.times[hits[0]]
    arrived = np.isfinite(arrival)
    rate = float(arrived.mean())
    if np.all(arrived):
        average_time = float(arrival.mean())
    else:
        average_time = np.inf
    speeds = []
    for i in range(M):
        if not arrived[i]:
            continue
        stop = int(round(arrival[i] / log.timestep))
        if arrival[i] <= 0:
            continue
        travelled = np.linalg.norm(np.diff(pos[:stop + 1, i], axis=0),
                                   axis=1).sum()
        speeds.append(travelled / arrival[i])
    average_speed = float(np.mean(speeds)) if speeds else 0.0
    min_dist = np.inf
    if M >= 2:
        for t in range(pos.shape[0]):
            diff = pos[t, :, None, :] - pos[t, None, :, :]
            pd = np.linalg.norm(diff, axis=2)
            pd[np.arange(M), np.arange(M)] = np.inf
            min_dist = min(min_dist, float(pd.min()))
    return Metrics(average_time=average_time, arrival_rate=rate,
                   average_speed=average_speed,
                   min_pairwise_distance=min_dist)
