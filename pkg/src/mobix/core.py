"""Domain primitives shared by the indexing, partitioning and simulation layers.

All types here are immutable value types: they can be copied, hashed and
handed between threads freely.  Timestamps are plain non-negative floats
(seconds); positions and velocities are ``(x, y)`` tuples in meters and
meters/second.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Tuple

Vec2 = Tuple[float, float]
Timestamp = float

#: Side length of the default square space domain, meters.
SPACE_SIDE_DEFAULT = 10_000.0

#: Offset of the dummy speed value below the smallest real speed value.
SPEED_EPS = 1e-9

#: Bytes per stored object entry (id + 2 coords + 2 velocities + timestamp,
#: 8-byte scalars, packed); node capacities are derived from this.
ENTRY_BYTES = 40


class TemporalOrderError(ValueError):
    """Raised when a motion primitive is evaluated before its reference time."""


def speed(vel: Vec2) -> float:
    """Scalar speed of a velocity vector (Euclidean norm)."""
    return math.hypot(vel[0], vel[1])


@dataclass(frozen=True, slots=True)
class Mbr:
    """Axis-aligned minimum bounding rectangle, ``lo <= hi`` componentwise."""

    lo: Vec2
    hi: Vec2

    def __post_init__(self) -> None:
        if self.lo[0] > self.hi[0] or self.lo[1] > self.hi[1]:
            raise ValueError(f"invalid Mbr: lo={self.lo} exceeds hi={self.hi}")

    @property
    def width(self) -> float:
        return self.hi[0] - self.lo[0]

    @property
    def height(self) -> float:
        return self.hi[1] - self.lo[1]

    def area(self) -> float:
        return self.width * self.height

    def center(self) -> Vec2:
        return ((self.lo[0] + self.hi[0]) / 2.0, (self.lo[1] + self.hi[1]) / 2.0)

    def contains_point(self, p: Vec2) -> bool:
        """Closed containment: boundary points are inside."""
        return (self.lo[0] <= p[0] <= self.hi[0]
                and self.lo[1] <= p[1] <= self.hi[1])

    def contains(self, other: "Mbr") -> bool:
        return (self.lo[0] <= other.lo[0] and self.lo[1] <= other.lo[1]
                and other.hi[0] <= self.hi[0] and other.hi[1] <= self.hi[1])

    def intersects(self, other: "Mbr") -> bool:
        return not (other.lo[0] > self.hi[0] or other.hi[0] < self.lo[0]
                    or other.lo[1] > self.hi[1] or other.hi[1] < self.lo[1])

    def expand(self, margin: float) -> "Mbr":
        """Grow every side outward by ``margin`` (negative margins shrink)."""
        return Mbr((self.lo[0] - margin, self.lo[1] - margin),
                   (self.hi[0] + margin, self.hi[1] + margin))

    def union(self, other: "Mbr") -> "Mbr":
        return Mbr((min(self.lo[0], other.lo[0]), min(self.lo[1], other.lo[1])),
                   (max(self.hi[0], other.hi[0]), max(self.hi[1], other.hi[1])))


def default_space() -> Mbr:
    """The default square space domain in meters."""
    return Mbr((0.0, 0.0), (SPACE_SIDE_DEFAULT, SPACE_SIDE_DEFAULT))


@dataclass(frozen=True, slots=True)
class MovingObject:
    """A moving object snapshot: linear motion from ``pos`` at ``t_ref``."""

    id: int
    pos: Vec2
    vel: Vec2
    t_ref: Timestamp

    @property
    def speed(self) -> float:
        return speed(self.vel)


def predicted_pos(o: MovingObject, t: Timestamp) -> Vec2:
    """Position of ``o`` extrapolated linearly to time ``t`` (``t >= o.t_ref``)."""
    dt = t - o.t_ref
    if dt < 0:
        raise TemporalOrderError(f"t={t} precedes reference time {o.t_ref}")
    return (o.pos[0] + o.vel[0] * dt, o.pos[1] + o.vel[1] * dt)


@dataclass(frozen=True, slots=True)
class TimeParamRect:
    """An MBR plus per-side velocities, evaluable at any ``t >= t_ref``.

    ``vlo`` moves the low sides and ``vhi`` the high sides; a node shape in a
    time-parameterized tree keeps ``vlo <= vhi`` so the rectangle never
    inverts as it grows.
    """

    rect: Mbr
    vlo: Vec2
    vhi: Vec2
    t_ref: Timestamp


def eval_rect(r: TimeParamRect, t: Timestamp) -> Mbr:
    """The rectangle of ``r`` at time ``t`` (``t >= r.t_ref``)."""
    dt = t - r.t_ref
    if dt < 0:
        raise TemporalOrderError(f"t={t} precedes reference time {r.t_ref}")
    lo = (r.rect.lo[0] + r.vlo[0] * dt, r.rect.lo[1] + r.vlo[1] * dt)
    hi = (r.rect.hi[0] + r.vhi[0] * dt, r.rect.hi[1] + r.vhi[1] * dt)
    return Mbr(lo, hi)


@dataclass(frozen=True, slots=True)
class RangeQuery:
    """Predictive range query: report objects inside ``window`` at ``predict_t``."""

    window: Mbr
    predict_t: Timestamp


@dataclass(frozen=True, slots=True)
class KnnQuery:
    """Predictive kNN query: the ``k`` objects nearest ``center`` at ``predict_t``."""

    center: Vec2
    k: int
    predict_t: Timestamp

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")


@dataclass(frozen=True)
class SpeedDomain:
    """The discretized speed values ``v_1 < ... < v_q`` plus the dummy ``v_0``.

    Raw speeds are mapped onto the domain by rounding *up* to the nearest
    value (each value is the upper edge of its bin), so every non-negative
    speed lands in exactly one right-closed interval ``(v_{i-1}, v_i]``.
    """

    values: Tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.values) < 1:
            raise ValueError("speed domain needs at least one value")
        if any(a >= b for a, b in zip(self.values, self.values[1:])):
            raise ValueError("speed values must be strictly ascending")

    @property
    def q(self) -> int:
        return len(self.values)

    @property
    def v0(self) -> float:
        """Dummy speed just below ``v_1``; never labels a real object."""
        return self.values[0] - SPEED_EPS

    def index_of(self, s: float) -> int:
        """1-based index of the domain value a raw speed discretizes to.

        Speeds above ``v_q`` clamp to ``q`` (callers that care log this).
        """
        idx = bisect.bisect_left(self.values, s) + 1
        return min(idx, len(self.values))

    @classmethod
    def equi_width(cls, max_speed: float, q: int) -> "SpeedDomain":
        """``q`` equi-width bins over ``[0, max_speed]``, labeled by bin upper edges."""
        if q < 1:
            raise ValueError("q must be >= 1")
        if max_speed <= 0.0:
            return cls((0.0,))
        step = max_speed / q
        return cls(tuple(step * i for i in range(1, q + 1)))
