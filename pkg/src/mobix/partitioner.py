"""Optimal speed partitioning of the object population.

The speed domain is cut into contiguous right-closed ranges so that the
summed predicted search-space expansion of the per-range indexes is
minimal.  The number of ranges is an output, not an input: a dynamic
program over range end points finds the optimum among all contiguous
partitionings, with ties broken toward fewer partitions and then toward
lexicographically smaller boundaries (hence smaller first cut).
"""

from __future__ import annotations

import bisect
import json
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

from .core import MovingObject, SpeedDomain, Timestamp, Vec2, Mbr
from .expansion import ExpansionParams, RangeExpansion, expansion_table, range_expansion
from .uniformity import LayerForest, UniformRegion, build_layers, merged_regions

logger = logging.getLogger(__name__)

CostFn = Callable[[int, int], float]


@dataclass(frozen=True)
class PartitionPlan:
    """Boundary indices ``0 = d_0 < ... < d_k = q`` plus per-partition state.

    Partition ``i`` (1-based) covers speeds in ``(v_{d_{i-1}}, v_{d_i}]``;
    ``quadrant_split[i-1]`` marks partitions that are further divided by
    velocity-sign quadrant.
    """

    boundaries: Tuple[int, ...]
    quadrant_split: Tuple[bool, ...]
    predicted_V: float
    created_at: Timestamp = 0.0

    def __post_init__(self) -> None:
        b = self.boundaries
        if len(b) < 2 or b[0] != 0:
            raise ValueError(f"boundaries must start at 0, got {b}")
        if any(x >= y for x, y in zip(b, b[1:])):
            raise ValueError(f"boundaries must be strictly ascending, got {b}")
        if len(self.quadrant_split) != len(b) - 1:
            raise ValueError("need one quadrant_split flag per partition")

    @property
    def k(self) -> int:
        return len(self.boundaries) - 1

    @property
    def q(self) -> int:
        return self.boundaries[-1]


@dataclass
class DpTables:
    """DP state: best expansion per prefix and the chosen last cut."""

    vstar: List[float]
    tstar: List[int]


def _plan_key(value: float, bounds: Tuple[int, ...]) -> Tuple[float, int, Tuple[int, ...]]:
    return (value, len(bounds) - 1, bounds)


def _solve_dp(cost: CostFn, q: int) -> Tuple[Tuple[int, ...], float, DpTables]:
    """Minimize summed range costs over all contiguous partitionings.

    Keeps, per prefix end ``r``, the best (value, partition count,
    boundaries) triple; tuple comparison realizes the tie-break order.
    """
    best: List[Tuple[float, int, Tuple[int, ...]]] = [(0.0, 0, (0,))]
    vstar = [0.0] * (q + 1)
    tstar = [0] * (q + 1)
    for r in range(1, q + 1):
        chosen = None
        chosen_s = 0
        for s in range(r):
            vs, ks, bs = best[s]
            cand = (vs + cost(s, r), ks + 1, bs + (r,))
            if chosen is None or cand < chosen:
                chosen = cand
                chosen_s = s
        best.append(chosen)
        vstar[r] = chosen[0]
        tstar[r] = chosen_s
    # backtrack the cut sequence from the argmin table
    bounds = [q]
    r = q
    while r > 0:
        r = tstar[r]
        bounds.append(r)
    bounds.reverse()
    return tuple(bounds), vstar[q], DpTables(vstar, tstar)


def brute_force_partition(cost: CostFn, q: int,
                          created_at: Timestamp = 0.0) -> PartitionPlan:
    """Exhaustive minimum over all ``2^(q-1)`` contiguous partitionings.

    Test oracle for the DP; uses the identical tie-break order.  Refuses
    ``q > 16``.
    """
    if q > 16:
        raise ValueError(f"brute force limited to q <= 16, got q={q}")
    best_key = None
    for mask in range(1 << (q - 1)):
        bounds = [0]
        bounds += [i for i in range(1, q) if (mask >> (i - 1)) & 1]
        bounds.append(q)
        total = 0.0
        for a, b in zip(bounds, bounds[1:]):
            total += cost(a, b)
        key = _plan_key(total, tuple(bounds))
        if best_key is None or key < best_key:
            best_key = key
    value, _, bounds = best_key
    return PartitionPlan(bounds, (False,) * (len(bounds) - 1), value, created_at)


PlanSource = Union[LayerForest, Sequence[UniformRegion], CostFn]


def optimal_partition(source: PlanSource,
                      dom: Optional[SpeedDomain] = None,
                      params: Optional[ExpansionParams] = None,
                      *,
                      q: Optional[int] = None,
                      created_at: Timestamp = 0.0) -> PartitionPlan:
    """Optimal speed partitioning for a forest, a region tiling, or a cost table.

    * ``LayerForest``: every range is costed over its own merged tiling via
      the vectorized table (the production path).
    * list of ``UniformRegion``: every range is costed over the given tiling
      (``dom`` and ``params`` required).
    * callable ``cost(s, r)``: raw cost table (``q`` required); split flags
      default to False.

    Empty ranges cost zero and the tie-break absorbs them, so an empty
    object population yields the single all-covering partition with
    ``predicted_V == 0``.
    """
    flags_lookup: Callable[[int, int], bool]
    if isinstance(source, LayerForest):
        dom = source.dom
        if params is None:
            raise ValueError("params required when partitioning a LayerForest")
        table, flag_table = expansion_table(source, params)
        cost = lambda s, r: float(table[s, r])
        flags_lookup = lambda s, r: bool(flag_table[s, r])
        nq = dom.q
    elif callable(source):
        if q is None:
            raise ValueError("q required when partitioning a raw cost table")
        cost = source
        flags_lookup = lambda s, r: False
        nq = q
    else:
        if dom is None or params is None:
            raise ValueError("dom and params required when partitioning regions")
        regions = list(source)
        memo: Dict[Tuple[int, int], RangeExpansion] = {}

        def _ranged(s: int, r: int) -> RangeExpansion:
            if (s, r) not in memo:
                memo[(s, r)] = range_expansion(regions, s, r, params, dom)
            return memo[(s, r)]

        cost = lambda s, r: _ranged(s, r).value
        flags_lookup = lambda s, r: _ranged(s, r).quadrant_split
        nq = dom.q

    bounds, value, _tables = _solve_dp(cost, nq)
    flags = tuple(flags_lookup(a, b) for a, b in zip(bounds, bounds[1:]))
    return PartitionPlan(bounds, flags, value, created_at)


def compute_plan(objects: Sequence[MovingObject], q: int,
                 params: ExpansionParams, space: Mbr,
                 now: Timestamp = 0.0
                 ) -> Tuple[PartitionPlan, SpeedDomain, LayerForest]:
    """Full pipeline: discretize speeds, build layers, optimize.

    The speed domain is ``q`` equi-width bins over the observed speeds.
    """
    objs = list(objects)
    max_speed = max((o.speed for o in objs), default=0.0)
    dom = SpeedDomain.equi_width(max_speed, q)
    forest = build_layers(objs, dom, space)
    plan = optimal_partition(forest, params=params, created_at=now)
    return plan, dom, forest


PartitionKey = Tuple[int, Optional[Tuple[int, int]]]


def assign_partition(plan: PartitionPlan, dom: SpeedDomain,
                     o: MovingObject) -> PartitionKey:
    """Partition key of an object: ``(partition index, quadrant or None)``.

    The quadrant sub-id is the velocity sign pair, present only for
    partitions whose split flag is set; zero components resolve positive.
    Speeds above the domain clamp into the top partition (debug-logged).
    """
    s = o.speed
    if s > dom.values[-1]:
        logger.debug("speed %.3f above domain max %.3f: clamped to top partition",
                     s, dom.values[-1])
    u = dom.index_of(s)
    i = bisect.bisect_left(plan.boundaries, u)
    if plan.quadrant_split[i - 1]:
        quad = (1 if o.vel[0] >= 0 else -1, 1 if o.vel[1] >= 0 else -1)
        return (i, quad)
    return (i, None)


def plan_to_json(plan: PartitionPlan, dom: SpeedDomain) -> str:
    """Serialize a plan with boundaries as speed values, for audit and replay."""
    speeds = [dom.v0 if b == 0 else dom.values[b - 1] for b in plan.boundaries]
    return json.dumps({
        "boundaries": speeds,
        "quadrant_split": list(plan.quadrant_split),
        "predicted_V": plan.predicted_V,
        "q": dom.q,
    })


def plan_from_json(text: str, dom: SpeedDomain,
                   created_at: Timestamp = 0.0) -> PartitionPlan:
    """Inverse of :func:`plan_to_json` against the same speed domain."""
    data = json.loads(text)
    if data["q"] != dom.q:
        raise ValueError(f"plan q={data['q']} does not match domain q={dom.q}")
    indices = []
    for v in data["boundaries"]:
        indices.append(0 if v == dom.v0 else dom.values.index(v) + 1)
    return PartitionPlan(tuple(indices), tuple(bool(f) for f in data["quadrant_split"]),
                         float(data["predicted_V"]), created_at)
