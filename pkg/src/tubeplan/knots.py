"""Chord-length knot vectors shared across a bundle of waypoint paths."""

from dataclasses import dataclass, field

import numpy as np


class ZeroChord(ValueError):
    """Two consecutive waypoints coincide."""


class LengthMismatch(ValueError):
    """Knot vectors being averaged have different lengths."""


class ZeroLength(ValueError):
    """Total chord length is zero, so normalization is undefined."""


@dataclass(frozen=True)
class KnotVector:
    """Strictly increasing knot values, optionally normalized to [0, 1]."""

    u: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        object.__setattr__(self, "u", u)
        if u.ndim != 1 or u.size < 2:
            raise ValueError("knot vector needs at least two values")
        if np.any(np.diff(u) <= 0):
            raise ZeroChord("knots must be strictly increasing")
        if self.normalized and (abs(u[0]) > 1e-12 or abs(u[-1] - 1.0) > 1e-12):
            raise ValueError("normalized knots must start at 0 and end at 1")

    @property
    def segments(self) -> int:
        return self.u.size - 1

    @property
    def total(self) -> float:
        return float(self.u[-1] - self.u[0])


def chord_length_knots(waypoints) -> KnotVector:
    """Cumulative Euclidean chord length of a waypoint sequence.

    u_0 = 0 and u_i = u_{i-1} + ||q_i - q_{i-1}||.
    """
    pts = np.asarray(waypoints, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise ValueError("need at least two waypoints")
    steps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    if np.any(steps < 1e-12):
        raise ZeroChord("consecutive waypoints coincide")
    return KnotVector(np.concatenate([[0.0], np.cumsum(steps)]))


def public_knots(knot_vectors) -> KnotVector:
    """Componentwise arithmetic mean of unnormalized knot vectors."""
    if not knot_vectors:
        raise LengthMismatch("no knot vectors given")
    sizes = {kv.u.size for kv in knot_vectors}
    if len(sizes) != 1:
        raise LengthMismatch(f"knot vectors differ in length: {sorted(sizes)}")
    if any(kv.normalized for kv in knot_vectors):
        raise ValueError("public knots are averaged before normalization")
    mean = np.mean([kv.u for kv in knot_vectors], axis=0)
    return KnotVector(mean)


def normalize_knots(knots: KnotVector) -> KnotVector:
    """Rescale knots onto [0, 1] by total length."""
    total = knots.total
    if total <= 1e-12:
        raise ZeroLength("total knot span is zero")
    return KnotVector((knots.u - knots.u[0]) / total, normalized=True)
