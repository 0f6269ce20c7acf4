"""Scenario files, tube serialization, and simulation output writers.

Scenarios are strict JSON: numbers must be JSON numbers (never strings or
booleans), unknown schema versions are rejected, and every default is
materialized on load so the in-memory scenario is fully explicit.  Tubes
round-trip through JSON exactly: floats are written with repr precision
(17 significant digits), which is bit-faithful for IEEE doubles.
"""

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .geometry import (PointOutsideHull, Terminal, barycentric_weights,
                       equispaced_weights, OrderPairSet)
from .knots import KnotVector
from .mpcsim import AvoidanceModel, Metrics, MpcConfig, SimLog
from .pathfinder import ObstacleSet, RrtConfig
from .trajopt import assemble_cost, assemble_equality
from .tube import (OptimalVirtualTube, TrajectoryConfig, _shared_corridor,
                   CORRIDOR_MODES)
from .trajopt import CorridorSpec, corridor_constraints

SCHEMA_VERSION = 1


class ParseError(ValueError):
    """The file is not valid JSON."""


class ValidationError(ValueError):
    """The document violates the schema or a semantic invariant."""


class VersionError(ValueError):
    """Unsupported schema_version."""


class IoError(OSError):
    """Wraps filesystem errors from reads and writes."""


def _read_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise IoError(f"cannot read {path}: {err}") from err
    try:
        return json.loads(text)
    except json.JSONDecodeError as err:
        raise ParseError(
            f"{path}: invalid JSON at line {err.lineno}, column {err.colno}: "
            f"{err.msg}") from err


def _write_json(doc, path):
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as err:
        raise IoError(f"cannot write {path}: {err}") from err


def _number(val, path):
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ValidationError(f"{path}: expected a number")
    if not math.isfinite(val):
        raise ValidationError(f"{path}: number must be finite")
    return float(val)


def _integer(val, path):
    if isinstance(val, bool) or not isinstance(val, int):
        raise ValidationError(f"{path}: expected an integer")
    return int(val)


def _points(val, path, dim):
    if not isinstance(val, list) or not val:
        raise ValidationError(f"{path}: expected a non-empty list of points")
    out = []
    for i, row in enumerate(val):
        if not isinstance(row, list) or len(row) != dim:
            raise ValidationError(f"{path}[{i}]: expected {dim} coordinates")
        out.append([_number(x, f"{path}[{i}][{j}]")
                    for j, x in enumerate(row)])
    return np.array(out)


def _section(doc, key):
    val = doc.get(key, {})
    if not isinstance(val, dict):
        raise ValidationError(f"{key}: expected an object")
    return val


@dataclass
class Scenario:
    """A fully materialized planning + simulation problem."""

    dim: int
    rng_seed: int
    obstacles: ObstacleSet
    start_terminal: Terminal
    goal_terminal: Terminal
    robot_starts: np.ndarray
    variance_weight: float
    rrt: RrtConfig
    traj: TrajectoryConfig
    mpc: MpcConfig
    avoidance: AvoidanceModel
    time_limit: float | None
    goal_radius: float


def _hulls_intersect(U: np.ndarray, W: np.ndarray) -> bool:
    """Feasibility LP: is any point a convex combination of both vertex
    sets?"""
    qu, d = U.shape
    qw = W.shape[0]
    A_eq = np.zeros((d + 2, qu + qw))
    A_eq[:d, :qu] = U.T
    A_eq[:d, qu:] = -W.T
    A_eq[d, :qu] = 1.0
    A_eq[d + 1, qu:] = 1.0
    b_eq = np.concatenate([np.zeros(d), [1.0, 1.0]])
    res = linprog(np.zeros(qu + qw), A_eq=A_eq, b_eq=b_eq,
                  bounds=(0, None), method="highs")
    return res.status == 0


def load_scenario(path) -> Scenario:
    """Parse, validate, and materialize a scenario file."""
    doc = _read_json(path)
    if not isinstance(doc, dict):
        raise ValidationError("top level must be an object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise VersionError(f"schema_version {version!r} unsupported "
                           f"(expected {SCHEMA_VERSION})")
    dim = _integer(doc.get("dimension", 2), "dimension")
    if dim not in (2, 3):
        raise ValidationError("dimension must be 2 or 3")
    rng_seed = _integer(doc.get("rng_seed", 0), "rng_seed")

    obs_doc = _section(doc, "obstacles")
    inflation = _number(obs_doc.get("inflation", 0.0), "obstacles.inflation")
    if inflation < 0:
        raise ValidationError("obstacles.inflation must be nonnegative")
    boxes = []
    raw_boxes = obs_doc.get("boxes", [])
    if not isinstance(raw_boxes, list):
        raise ValidationError("obstacles.boxes: expected a list")
    for i, box in enumerate(raw_boxes):
        if not isinstance(box, dict) or "min" not in box or "max" not in box:
            raise ValidationError(
                f"obstacles.boxes[{i}]: expected an object with min and max")
        lo = _points([box["min"]], f"obstacles.boxes[{i}].min", dim)[0]
        hi = _points([box["max"]], f"obstacles.boxes[{i}].max", dim)[0]
        if np.any(hi <= lo):
            raise ValidationError(
                f"obstacles.boxes[{i}]: min must be strictly below max")
        boxes.append((lo, hi))
    obstacles = ObstacleSet(tuple(boxes), inflation)

    for key in ("start_terminal", "goal_terminal"):
        if key not in doc:
            raise ValidationError(f"{key} is required")
    try:
        start_terminal = Terminal(_points(doc["start_terminal"],
                                          "start_terminal", dim))
        goal_terminal = Terminal(_points(doc["goal_terminal"],
                                         "goal_terminal", dim))
    except ValueError as err:
        raise ValidationError(f"terminal: {err}") from err
    if start_terminal.count != goal_terminal.count:
        raise ValidationError("terminals must have equal vertex counts")
    if _hulls_intersect(start_terminal.vertices, goal_terminal.vertices):
        raise ValidationError("start and goal terminals are not disjoint")

    robots_doc = doc.get("robots", [])
    if isinstance(robots_doc, dict):
        count = _integer(robots_doc.get("count"), "robots.count")
        if count < 0:
            raise ValidationError("robots.count must be nonnegative")
        weights = equispaced_weights(count, start_terminal.count) \
            if count else np.zeros((0, start_terminal.count))
        robot_starts = weights @ start_terminal.vertices
    else:
        robot_starts = (_points(robots_doc, "robots", dim)
                        if robots_doc else np.zeros((0, dim)))
    for i, p in enumerate(robot_starts):
        try:
            barycentric_weights(p, start_terminal)
        except PointOutsideHull as err:
            raise ValidationError(
                f"robots[{i}] lies outside the start terminal: {err}") from err
    for i in range(len(robot_starts)):
        for j in range(i + 1, len(robot_starts)):
            if np.linalg.norm(robot_starts[i] - robot_starts[j]) < 1e-9:
                raise ValidationError(f"robots[{i}] and robots[{j}] coincide")

    planner = _section(doc, "planner")
    variance_weight = _number(planner.get("variance_weight", 1.0),
                              "planner.variance_weight")
    rrt_doc = _section(planner, "rrt")
    rrt = RrtConfig(
        max_iterations=_integer(rrt_doc.get("max_iterations", 4000),
                                "planner.rrt.max_iterations"),
        step_size=_number(rrt_doc.get("step_size", 1.0),
                          "planner.rrt.step_size"),
        goal_bias=_number(rrt_doc.get("goal_bias", 0.1),
                          "planner.rrt.goal_bias"),
        rewire_radius=_number(rrt_doc.get("rewire_radius", 3.0),
                              "planner.rrt.rewire_radius"),
        corridor_shrink_radius=_number(
            rrt_doc.get("corridor_shrink_radius", 3.0),
            "planner.rrt.corridor_shrink_radius"),
        rng_seed=rng_seed)
    if rrt.max_iterations < 1 or rrt.step_size <= 0:
        raise ValidationError("planner.rrt: iterations and step must be positive")
    if not 0.0 <= rrt.goal_bias < 1.0:
        raise ValidationError("planner.rrt.goal_bias must be in [0, 1)")

    poly = _section(planner, "polynomial")
    corridor = _section(planner, "corridor")
    mode = corridor.get("mode", "strict")
    if mode not in CORRIDOR_MODES:
        raise ValidationError(
            f"planner.corridor.mode must be one of {CORRIDOR_MODES}")
    traj = TrajectoryConfig(
        order=_integer(poly.get("order", 5), "planner.polynomial.order"),
        cost_deriv=_integer(poly.get("cost_derivative", 3),
                            "planner.polynomial.cost_derivative"),
        continuity=_integer(poly.get("continuity", 3),
                            "planner.polynomial.continuity"),
        m_target=_integer(planner.get("segments", 7), "planner.segments"),
        corridor_width=_number(corridor.get("width", 1.0),
                               "planner.corridor.width"),
        corridor_samples=_integer(corridor.get("samples_per_segment", 3),
                                  "planner.corridor.samples_per_segment"),
        corridor_mode=mode)
    if traj.order < 1 or traj.cost_deriv < 1 or traj.cost_deriv > traj.order:
        raise ValidationError("planner.polynomial: invalid order/derivative")
    if traj.m_target < 1 or traj.corridor_width <= 0 or traj.corridor_samples < 1:
        raise ValidationError("planner: invalid segments or corridor settings")

    controller = _section(doc, "controller")
    mpc = MpcConfig(
        horizon=_integer(controller.get("horizon", 10), "controller.horizon"),
        timestep=_number(controller.get("timestep", 0.1),
                         "controller.timestep"),
        position_weight=_number(controller.get("position_weight", 10.0),
                                "controller.position_weight"),
        velocity_weight=_number(controller.get("velocity_weight", 1.0),
                                "controller.velocity_weight"),
        input_weight=_number(controller.get("input_weight", 0.1),
                             "controller.input_weight"),
        slack_weight=_number(controller.get("slack_weight", 1000.0),
                             "controller.slack_weight"),
        terminal_weight_scale=_number(
            controller.get("terminal_weight_scale", 10.0),
            "controller.terminal_weight_scale"),
        boundary_tolerance=_number(
            controller.get("boundary_tolerance", 0.5),
            "controller.boundary_tolerance"),
        input_limit=_number(controller.get("input_limit", 100.0),
                            "controller.input_limit"),
        reference_speed=_number(controller.get("reference_speed", 2.5),
                                "controller.reference_speed"))
    if mpc.horizon < 1 or mpc.timestep <= 0 or mpc.reference_speed <= 0:
        raise ValidationError("controller: horizon, timestep, and "
                              "reference_speed must be positive")

    avoid_doc = _section(controller, "avoidance")
    axes_raw = avoid_doc.get("ellipse_axes", [0.5] * dim)
    if not isinstance(axes_raw, list) or len(axes_raw) != dim:
        raise ValidationError(
            f"controller.avoidance.ellipse_axes: expected {dim} entries")
    axes = np.array([_number(a, f"controller.avoidance.ellipse_axes[{i}]")
                     for i, a in enumerate(axes_raw)])
    if np.any(axes <= 0):
        raise ValidationError("controller.avoidance.ellipse_axes must be "
                              "positive")
    avoidance = AvoidanceModel(
        axes=axes,
        safety_distance=_number(avoid_doc.get("safety_distance", 1.0),
                                "controller.avoidance.safety_distance"))

    time_limit = doc.get("time_limit")
    if time_limit is not None:
        time_limit = _number(time_limit, "time_limit")
        if time_limit < 0:
            raise ValidationError("time_limit must be nonnegative")
    goal_radius = _number(doc.get("goal_radius", 0.2), "goal_radius")
    if goal_radius <= 0:
        raise ValidationError("goal_radius must be positive")

    return Scenario(dim=dim, rng_seed=rng_seed, obstacles=obstacles,
                    start_terminal=start_terminal,
                    goal_terminal=goal_terminal, robot_starts=robot_starts,
                    variance_weight=variance_weight, rrt=rrt, traj=traj,
                    mpc=mpc, avoidance=avoidance, time_limit=time_limit,
                    goal_radius=goal_radius)


def save_tube(tube: OptimalVirtualTube, path) -> None:
    """Serialize a tube to JSON with bit-faithful coefficients."""
    cfg = tube.config
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "virtual-tube",
        "dimension": tube.dim,
        "config": {
            "order": cfg.order,
            "cost_derivative": cfg.cost_deriv,
            "continuity": cfg.continuity,
            "segments": cfg.m_target,
            "corridor_width": cfg.corridor_width,
            "corridor_samples": cfg.corridor_samples,
            "corridor_mode": cfg.corridor_mode,
        },
        "knots": tube.knots.u.tolist(),
        "chord_total": tube.chord_total,
        "start_vertices": tube.pairs.starts.vertices.tolist(),
        "goal_vertices": tube.pairs.goals.vertices.tolist(),
        "pairing": tube.pairs.pairing.tolist(),
        "waypoints": tube.waypoints.tolist(),
        "basis_x": tube.basis_x.tolist(),
        "basis_b": tube.basis_b.tolist(),
        "qp_solves": tube.qp_solves,
    }
    _write_json(doc, path)


def load_tube(path) -> OptimalVirtualTube:
    """Rebuild a tube from JSON; derived matrices are reassembled from the
    stored knots, waypoints, and configuration."""
    doc = _read_json(path)
    if not isinstance(doc, dict):
        raise ValidationError("top level must be an object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise VersionError(f"schema_version {version!r} unsupported "
                           f"(expected {SCHEMA_VERSION})")
    if doc.get("kind") != "virtual-tube":
        raise ValidationError("kind must be 'virtual-tube'")
    try:
        dim = int(doc["dimension"])
        cfg_doc = doc["config"]
        cfg = TrajectoryConfig(
            order=int(cfg_doc["order"]),
            cost_deriv=int(cfg_doc["cost_derivative"]),
            continuity=int(cfg_doc["continuity"]),
            m_target=int(cfg_doc["segments"]),
            corridor_width=float(cfg_doc["corridor_width"]),
            corridor_samples=int(cfg_doc["corridor_samples"]),
            corridor_mode=cfg_doc["corridor_mode"])
        knots = KnotVector(np.array(doc["knots"], dtype=float),
                           normalized=True)
        chord_total = float(doc["chord_total"])
        starts = Terminal(np.array(doc["start_vertices"], dtype=float))
        goals = Terminal(np.array(doc["goal_vertices"], dtype=float))
        pairs = OrderPairSet(starts, goals,
                             np.array(doc["pairing"], dtype=int))
        waypoints = np.array(doc["waypoints"], dtype=float)
        basis_x = np.array(doc["basis_x"], dtype=float)
        basis_b = np.array(doc["basis_b"], dtype=float)
        qp_solves = int(doc.get("qp_solves", 0))
    except (KeyError, TypeError, ValueError) as err:
        raise ValidationError(f"malformed tube document: {err}") from err
    if waypoints.ndim != 3 or waypoints.shape[0] != pairs.count:
        raise ValidationError("waypoints shape mismatch")

    system = assemble_equality(waypoints[0], knots, cfg.order, cfg.continuity)
    cost = assemble_cost(knots, cfg.cost_deriv, cfg.order, dim)
    corridor = None
    pair_corridors = None
    if cfg.corridor_mode == "strict":
        corridor = _shared_corridor(waypoints, knots, cfg)
    elif cfg.corridor_mode == "loose":
        spec = CorridorSpec(np.asarray(cfg.corridor_width),
                            cfg.corridor_samples)
        pair_corridors = [corridor_constraints(w, knots, spec, cfg.order)
                          for w in waypoints]
    expected = (system.A.shape[0], basis_b.shape[1])
    if expected[0] != expected[1] or basis_x.shape[1] != system.A.shape[1]:
        raise ValidationError(
            f"basis arrays inconsistent with configuration: "
            f"A is {system.A.shape}, basis_b rows have {basis_b.shape[1]}")
    return OptimalVirtualTube(
        pairs=pairs, config=cfg, knots=knots, chord_total=chord_total,
        waypoints=waypoints, A=system.A, blocks=system.blocks,
        basis_x=basis_x, basis_b=basis_b, cost=cost, corridor=corridor,
        pair_corridors=pair_corridors, solutions=None, qp_solves=qp_solves)


def save_log(log: SimLog, path) -> None:
    """CSV with one row per (tick, robot); inputs are empty on the final
    tick, which has no applied input."""
    d = log.dim
    axes = "xyz"[:d]
    header = (["tick", "time", "robot"]
              + [f"p{a}" for a in axes] + [f"v{a}" for a in axes]
              + [f"u{a}" for a in axes] + ["slack"])
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            T = log.states.shape[0] - 1
            for tick in range(T + 1):
                for i in range(log.robots):
                    row = [tick, repr(float(log.times[tick])), i]
                    row += [repr(float(v)) for v in log.states[tick, i, :d]]
                    row += [repr(float(v)) for v in log.states[tick, i, d:]]
                    if tick < T:
                        row += [repr(float(v)) for v in log.inputs[tick, i]]
                        row.append(repr(float(log.max_slack[tick, i])))
                    else:
                        row += [""] * (d + 1)
                    writer.writerow(row)
    except OSError as err:
        raise IoError(f"cannot write {path}: {err}") from err


def _json_value(x: float):
    return x if math.isfinite(x) else "inf"


def save_metrics(metrics: Metrics, path) -> None:
    """Metrics as JSON; infinite values serialize as the string \"inf\"."""
    doc = {
        "average_time": _json_value(metrics.average_time),
        "arrival_rate": metrics.arrival_rate,
        "average_speed": metrics.average_speed,
        "min_pairwise_distance": _json_value(metrics.min_pairwise_distance),
    }
    _write_json(doc, path)
