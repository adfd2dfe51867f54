"""Network-based moving-object generator over road networks.

Objects travel along polyline edges, may stop briefly at crossroads, then
continue on a randomly chosen connected segment with a speed drawn from the
segment's category-dependent normal distribution.  Every velocity change
emits an update record; silent objects emit a heartbeat within every
``dt_mu`` window so downstream indexes can rely on bounded update gaps.

Stepping is event-driven per object, so the emitted stream is identical for
any step size at the same seed.

Network file format (plain text, ``#`` comments and blank lines ignored)::

    N <id> <x> <y>
    E <from> <to> <category>

with categories C1 (freeway), C2 (primary), C3 (street/residential).
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .core import MovingObject, Timestamp, Vec2
from .controller import parse_update_line

logger = logging.getLogger(__name__)

#: Per-category range the per-edge mean speed is drawn from, m/s.
CATEGORY_MU = {"C1": (25.0, 40.0), "C2": (5.0, 25.0), "C3": (0.0, 15.0)}

#: Standard deviation of edge speed draws, m/s (all categories).
SPEED_SIGMA = 10.0

#: Physical clamp applied to drawn speeds, m/s.
SPEED_CLAMP = (0.0, 60.0)

#: Probability of stopping at a crossroad.
STOP_PROB = 0.25

#: Stop duration bounds, seconds.
STOP_RANGE = (1.0, 5.0)


@dataclass(frozen=True)
class RoadEdge:
    u: int
    v: int
    category: str
    length: float
    mu: float


@dataclass
class RoadNetwork:
    nodes: Dict[int, Vec2]
    edges: List[RoadEdge]
    adjacency: Dict[int, List[int]]
    main_component: frozenset

    def component_edges(self) -> List[int]:
        """Edge indices within the largest connected component."""
        return [i for i, e in enumerate(self.edges) if e.u in self.main_component]


def gauss_speed(rng: random.Random, mu: float, sigma: float = SPEED_SIGMA) -> float:
    """Raw (unclamped) speed draw for an edge."""
    return rng.gauss(mu, sigma)


def draw_speed(rng: random.Random, mu: float) -> float:
    """Clamped speed draw used by the simulator."""
    lo, hi = SPEED_CLAMP
    return min(max(gauss_speed(rng, mu), lo), hi)


def parse_network(lines: Iterable[str], seed: int = 0,
                  name: str = "<network>") -> RoadNetwork:
    nodes: Dict[int, Vec2] = {}
    raw_edges: List[Tuple[int, int, int, str]] = []   # (line_no, u, v, category)
    for line_no, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        parts = text.split()
        kind = parts[0]
        if kind == "N":
            if len(parts) != 4:
                raise ValueError(f"{name} line {line_no}: malformed node record")
            nodes[int(parts[1])] = (float(parts[2]), float(parts[3]))
        elif kind == "E":
            if len(parts) != 4:
                raise ValueError(f"{name} line {line_no}: malformed edge record")
            raw_edges.append((line_no, int(parts[1]), int(parts[2]), parts[3]))
        else:
            raise ValueError(f"{name} line {line_no}: unknown record type {kind!r}")

    rng = random.Random(seed)
    edges: List[RoadEdge] = []
    adjacency: Dict[int, List[int]] = {nid: [] for nid in nodes}
    for line_no, u, v, category in raw_edges:
        if u not in nodes or v not in nodes:
            missing = u if u not in nodes else v
            raise ValueError(
                f"{name} line {line_no}: edge endpoint {missing} undefined")
        if category not in CATEGORY_MU:
            raise ValueError(
                f"{name} line {line_no}: unknown road category {category!r}")
        ax, ay = nodes[u]
        bx, by = nodes[v]
        length = math.hypot(bx - ax, by - ay)
        if length <= 0.0:
            raise ValueError(f"{name} line {line_no}: zero-length edge {u}-{v}")
        mu = rng.uniform(*CATEGORY_MU[category])
        idx = len(edges)
        edges.append(RoadEdge(u, v, category, length, mu))
        adjacency[u].append(idx)
        adjacency[v].append(idx)

    if not edges:
        raise ValueError(f"{name}: network has no edges")

    component = _largest_component(nodes, edges, adjacency)
    return RoadNetwork(nodes, edges, adjacency, frozenset(component))


def load_network(path: str, seed: int = 0) -> RoadNetwork:
    """Parse a network file; per-edge mean speeds are drawn here, seeded."""
    with open(path) as fh:
        return parse_network(fh, seed=seed, name=path)


def load_update_stream(path: str) -> List[MovingObject]:
    """Ingest a pre-recorded update stream (GPS-trace style CSV)."""
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                out.append(parse_update_line(line))
    return out


def _largest_component(nodes, edges, adjacency) -> set:
    unseen = set(nodes)
    best: set = set()
    while unseen:
        start = unseen.pop()
        comp = {start}
        frontier = [start]
        while frontier:
            nid = frontier.pop()
            for ei in adjacency[nid]:
                e = edges[ei]
                nbr = e.v if e.u == nid else e.u
                if nbr in unseen:
                    unseen.discard(nbr)
                    comp.add(nbr)
                    frontier.append(nbr)
        if len(comp) > len(best):
            best = comp
    return best


def grid_network(n: int = 6, space_side: float = 10_000.0,
                 categories: Sequence[str] = ("C1", "C2", "C3"),
                 seed: int = 0) -> RoadNetwork:
    """Synthetic n x n grid road network with round-robin edge categories."""
    if n < 2:
        raise ValueError("grid needs at least 2 nodes per side")
    spacing = space_side / (n - 1)
    lines = []
    for j in range(n):
        for i in range(n):
            lines.append(f"N {j * n + i} {i * spacing} {j * spacing}")
    count = 0
    for j in range(n):
        for i in range(n):
            nid = j * n + i
            if i + 1 < n:
                lines.append(f"E {nid} {nid + 1} {categories[count % len(categories)]}")
                count += 1
            if j + 1 < n:
                lines.append(f"E {nid} {nid + n} {categories[count % len(categories)]}")
                count += 1
    return parse_network(lines, seed=seed, name=f"<grid {n}x{n}>")


class _SimObject:
    __slots__ = ("id", "edge", "start", "offset", "speed", "stopped_until",
                 "rng", "last_update", "clock")

    def __init__(self, oid: int, edge: int, start: int, offset: float,
                 speed: float, rng: random.Random):
        self.id = oid
        self.edge = edge
        self.start = start          # node the object is moving away from
        self.offset = offset        # meters from the start node
        self.speed = speed
        self.stopped_until: Optional[float] = None
        self.rng = rng
        self.last_update = 0.0
        self.clock = 0.0


class TrafficSim:
    """Seeded, deterministic traffic over a road network.

    Each object owns its own random stream, so emitted update streams are
    byte-identical for a given (network, seed, object count) regardless of
    the step size used to advance the simulation.
    """

    def __init__(self, network: RoadNetwork, n_objects: int, seed: int = 0,
                 dt_mu: float = 120.0,
                 spawn_split: Optional[Dict[str, float]] = None):
        self.network = network
        self.dt_mu = dt_mu
        self.now: Timestamp = 0.0
        self.crossroad_arrivals = 0
        self.crossroad_stops = 0
        spawn_rng = random.Random(seed)
        eligible = network.component_edges()
        if not eligible:
            raise ValueError("network has no usable edges to spawn on")
        assignments = self._spawn_edges(spawn_rng, eligible, n_objects, spawn_split)
        self._objects: List[_SimObject] = []
        for oid, edge_idx in enumerate(assignments):
            rng = random.Random((seed << 20) ^ (oid * 2_654_435_761 & 0xFFFFFFFF))
            edge = network.edges[edge_idx]
            start = edge.u if rng.random() < 0.5 else edge.v
            offset = rng.uniform(0.0, edge.length)
            speed = draw_speed(rng, edge.mu)
            self._objects.append(_SimObject(oid, edge_idx, start, offset, speed, rng))

    def _spawn_edges(self, rng: random.Random, eligible: List[int],
                     n_objects: int,
                     spawn_split: Optional[Dict[str, float]]) -> List[int]:
        """Length-weighted edge choice, optionally constrained per category."""
        def weighted_choice(pool: List[int], count: int) -> List[int]:
            lengths = [self.network.edges[i].length for i in pool]
            return rng.choices(pool, weights=lengths, k=count)

        if not spawn_split:
            return weighted_choice(eligible, n_objects)
        out: List[int] = []
        remaining = n_objects
        items = sorted(spawn_split.items())
        for pos, (category, fraction) in enumerate(items):
            count = remaining if pos == len(items) - 1 else round(n_objects * fraction)
            count = min(count, remaining)
            pool = [i for i in eligible
                    if self.network.edges[i].category == category]
            if not pool:
                raise ValueError(f"no {category} edges available to spawn on")
            out.extend(weighted_choice(pool, count))
            remaining -= count
        return out

    # -- object state ---------------------------------------------------------

    def _position(self, s: _SimObject) -> Vec2:
        e = self.network.edges[s.edge]
        other = e.v if s.start == e.u else e.u
        ax, ay = self.network.nodes[s.start]
        bx, by = self.network.nodes[other]
        f = s.offset / e.length
        return (ax + (bx - ax) * f, ay + (by - ay) * f)

    def _velocity(self, s: _SimObject) -> Vec2:
        if s.stopped_until is not None or s.speed <= 0.0:
            return (0.0, 0.0)
        e = self.network.edges[s.edge]
        other = e.v if s.start == e.u else e.u
        ax, ay = self.network.nodes[s.start]
        bx, by = self.network.nodes[other]
        return ((bx - ax) / e.length * s.speed, (by - ay) / e.length * s.speed)

    def _record(self, s: _SimObject, t: Timestamp) -> MovingObject:
        s.last_update = t
        return MovingObject(s.id, self._position(s), self._velocity(s), t)

    def current_objects(self) -> List[MovingObject]:
        """Current state of every object, without touching update clocks."""
        return [MovingObject(s.id, self._position(s), self._velocity(s), s.clock)
                for s in self._objects]

    def initial_updates(self) -> List[MovingObject]:
        """The t=0 first-sighting records (resets the heartbeat clocks)."""
        return [self._record(s, 0.0) for s in self._objects]

    # -- stepping ---------------------------------------------------------------

    def step(self, dt: float) -> List[MovingObject]:
        """Advance all objects by ``dt`` and return their updates, time-ordered."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        t_end = self.now + dt
        updates: List[MovingObject] = []
        for s in self._objects:
            self._advance(s, t_end, updates)
        self.now = t_end
        updates.sort(key=lambda o: (o.t_ref, o.id))
        return updates

    def _advance(self, s: _SimObject, t_end: float,
                 out: List[MovingObject]) -> None:
        edges = self.network.edges
        while True:
            heartbeat = s.last_update + self.dt_mu
            if s.stopped_until is not None:
                resume = s.stopped_until
                if resume > t_end:
                    if heartbeat <= t_end:
                        out.append(self._record(s, heartbeat))
                        continue
                    s.clock = t_end
                    return
                if heartbeat < resume:
                    out.append(self._record(s, heartbeat))
                    continue
                s.stopped_until = None
                self._turn(s, resume)
                out.append(self._record(s, resume))
                s.clock = resume
                continue
            if s.speed <= 0.0:
                # parked by a zero-speed draw: heartbeats only
                if heartbeat <= t_end:
                    out.append(self._record(s, heartbeat))
                    continue
                s.clock = t_end
                return
            remaining = edges[s.edge].length - s.offset
            arrive = s.clock + remaining / s.speed
            if arrive <= min(heartbeat, t_end):
                s.offset = edges[s.edge].length
                s.clock = arrive
                self.crossroad_arrivals += 1
                if s.rng.random() < STOP_PROB:
                    self.crossroad_stops += 1
                    s.stopped_until = arrive + s.rng.uniform(*STOP_RANGE)
                    out.append(self._record(s, arrive))
                else:
                    self._turn(s, arrive)
                    out.append(self._record(s, arrive))
                continue
            if heartbeat <= t_end:
                s.offset += s.speed * (heartbeat - s.clock)
                s.clock = heartbeat
                out.append(self._record(s, heartbeat))
                continue
            s.offset += s.speed * (t_end - s.clock)
            s.clock = t_end
            return

    def _turn(self, s: _SimObject, t: float) -> None:
        """Pick the next segment at the crossroad the object stands on."""
        e = self.network.edges[s.edge]
        node = e.v if s.start == e.u else e.u
        options = self.network.adjacency[node]
        if len(options) > 1:
            options = [i for i in options if i != s.edge]
        nxt = options[s.rng.randrange(len(options))]
        s.edge = nxt
        s.start = node
        s.offset = 0.0
        s.speed = draw_speed(s.rng, self.network.edges[nxt].mu)
        s.clock = t
