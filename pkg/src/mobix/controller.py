"""The partitioned indexing system: routing, refresh, and query fan-out.

A ``PartitionedIndex`` owns one index instance per speed partition (times
four when a partition is quadrant-split), routes object updates to the
partition their speed assigns them to, recomputes the partitioning
periodically, and duplicates queries across partitions, merging results.
Queries run sequentially per partition; the controller is the single
serialization point for writes.

The update and query wire formats (one CSV record per line) live here too:

* update:        ``ts,obj_id,x,y,vx,vy``
* range query:   ``ts,RANGE,xlo,ylo,xhi,yhi,predict_dt``
* kNN query:     ``ts,KNN,x,y,k,predict_dt``
* results:       ``qid,RANGE,id;id;...`` / ``qid,KNN,id:dist;id:dist;...``
"""

from __future__ import annotations

import logging
import time
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple, Union

from .core import (KnnQuery, Mbr, MovingObject, RangeQuery, Timestamp)
from .expansion import ExpansionParams
from .partitioner import (PartitionKey, PartitionPlan, assign_partition,
                          compute_plan)

logger = logging.getLogger(__name__)

Query = Union[RangeQuery, KnnQuery]


class PartitionedIndex:
    """Speed analyzer, index controller and partitioned indexes in one unit.

    ``index_factory`` builds one empty backend instance (Bx or TPR style;
    anything with insert/delete/apply_update/range_query/knn_query works).
    With ``partition_enabled=False`` the system never repartitions and
    behaves exactly like a single unpartitioned index behind the same
    interface.
    """

    def __init__(self, index_factory: Callable[[], object], *,
                 params: ExpansionParams, space: Mbr, q: int = 50,
                 refresh_period: float = 3600.0,
                 partition_enabled: bool = True):
        self.index_factory = index_factory
        self.params = params
        self.space = space
        self.q = q
        self.refresh_period = refresh_period
        self.partition_enabled = partition_enabled
        self.plan: Optional[PartitionPlan] = None
        self.dom = None
        self.partitions: Dict[PartitionKey, object] = {(1, None): index_factory()}
        self.obj_locator: Dict[int, PartitionKey] = {}
        self._objects: Dict[int, MovingObject] = {}
        self.last_refresh: Timestamp = 0.0
        self.last_partition_seconds: float = 0.0

    def __len__(self) -> int:
        return len(self._objects)

    def partition_sizes(self) -> Dict[PartitionKey, int]:
        return {key: len(idx) for key, idx in self.partitions.items()}

    def _assign(self, o: MovingObject) -> PartitionKey:
        if self.plan is None:
            return (1, None)
        return assign_partition(self.plan, self.dom, o)

    # -- updates -------------------------------------------------------------

    def route_update(self, o: MovingObject, now: Timestamp) -> None:
        """Insert or move an object according to its current speed.

        Staying within its partition is an in-place index update; crossing a
        boundary deletes from the old partition and inserts into the new.
        """
        key = self._assign(o)
        prev = self.obj_locator.get(o.id)
        if prev == key:
            self.partitions[key].apply_update(o, now)
        else:
            if prev is not None:
                self.partitions[prev].delete(o.id, now, hint=self._objects[o.id])
            self.partitions[key].insert(o, now)
            self.obj_locator[o.id] = key
        self._objects[o.id] = o

    # -- partition refresh ----------------------------------------------------

    def maybe_refresh(self, now: Timestamp) -> Optional[PartitionPlan]:
        if now - self.last_refresh >= self.refresh_period:
            return self.refresh_partitions(now)
        return None

    def refresh_partitions(self, now: Timestamp,
                           objects: Optional[Sequence[MovingObject]] = None,
                           force: bool = False) -> Optional[PartitionPlan]:
        """Recompute the optimal plan; rebuild all partitions if it changed.

        A refresh before the period has elapsed is a no-op unless forced.
        An unchanged snapshot reproduces the identical plan and leaves the
        index instances untouched.
        """
        if not force and now - self.last_refresh < self.refresh_period:
            return None
        self.last_refresh = now
        if not self.partition_enabled:
            return None
        snapshot = list(objects) if objects is not None else list(self._objects.values())
        t0 = time.perf_counter()
        plan, dom, _forest = compute_plan(snapshot, self.q, self.params,
                                          self.space, now)
        self.last_partition_seconds = time.perf_counter() - t0
        new_sig = (dom.values, plan.boundaries, plan.quadrant_split)
        old_sig = (None if self.plan is None else
                   (self.dom.values, self.plan.boundaries, self.plan.quadrant_split))
        if new_sig == old_sig:
            self.plan = plan    # same routing; indexes stay untouched
            return plan
        self.plan = plan
        self.dom = dom
        self._rebuild(now)
        return plan

    def _plan_keys(self) -> List[PartitionKey]:
        keys: List[PartitionKey] = []
        for i, split in enumerate(self.plan.quadrant_split, start=1):
            if split:
                keys.extend((i, (sx, sy)) for sx in (1, -1) for sy in (1, -1))
            else:
                keys.append((i, None))
        return keys

    def _rebuild(self, now: Timestamp) -> None:
        """Bulk re-route every live object into fresh partition indexes."""
        self.partitions = {key: self.index_factory() for key in self._plan_keys()}
        self.obj_locator = {}
        for o in self._objects.values():
            key = assign_partition(self.plan, self.dom, o)
            self.partitions[key].insert(o, now)
            self.obj_locator[o.id] = key

    # -- queries ---------------------------------------------------------------

    def query_range(self, q: RangeQuery, now: Timestamp) -> Set[int]:
        """The query duplicated into every partition sequentially, results unioned."""
        partials = [idx.range_query(q, now) for idx in self.partitions.values()]
        out: Set[int] = set().union(*partials) if partials else set()
        assert sum(len(p) for p in partials) == len(out), \
            "partitions are not disjoint"
        return out

    def query_knn(self, q: KnnQuery, now: Timestamp) -> List[Tuple[int, float]]:
        """Global top-k merged from per-partition top-k lists."""
        if q.k > len(self._objects):
            logger.debug("knn short: k=%d exceeds population %d",
                         q.k, len(self._objects))
        merged: List[Tuple[float, int]] = []
        for idx in self.partitions.values():
            merged.extend((d, oid) for oid, d in idx.knn_query(q, now))
        merged.sort()
        return [(oid, d) for d, oid in merged[:q.k]]


# -- wire formats --------------------------------------------------------------


def format_update_line(o: MovingObject) -> str:
    return (f"{o.t_ref!r},{o.id},{o.pos[0]!r},{o.pos[1]!r},"
            f"{o.vel[0]!r},{o.vel[1]!r}")


def parse_update_line(line: str) -> MovingObject:
    parts = line.strip().split(",")
    if len(parts) != 6:
        raise ValueError(f"malformed update record: {line!r}")
    ts, oid, x, y, vx, vy = parts
    return MovingObject(int(oid), (float(x), float(y)), (float(vx), float(vy)),
                        float(ts))


def format_query_line(ts: Timestamp, query: Query) -> str:
    if isinstance(query, RangeQuery):
        (xlo, ylo), (xhi, yhi) = query.window.lo, query.window.hi
        dt = query.predict_t - ts
        return f"{ts!r},RANGE,{xlo!r},{ylo!r},{xhi!r},{yhi!r},{dt!r}"
    dt = query.predict_t - ts
    return f"{ts!r},KNN,{query.center[0]!r},{query.center[1]!r},{query.k},{dt!r}"


def parse_query_line(line: str) -> Tuple[Timestamp, Query]:
    parts = line.strip().split(",")
    if len(parts) < 2:
        raise ValueError(f"malformed query record: {line!r}")
    ts = float(parts[0])
    kind = parts[1]
    if kind == "RANGE":
        if len(parts) != 7:
            raise ValueError(f"malformed range query: {line!r}")
        xlo, ylo, xhi, yhi, dt = map(float, parts[2:])
        return ts, RangeQuery(Mbr((xlo, ylo), (xhi, yhi)), ts + dt)
    if kind == "KNN":
        if len(parts) != 6:
            raise ValueError(f"malformed knn query: {line!r}")
        x, y = float(parts[2]), float(parts[3])
        k = int(parts[4])
        dt = float(parts[5])
        return ts, KnnQuery((x, y), k, ts + dt)
    raise ValueError(f"unknown query kind {kind!r} in {line!r}")


def format_result_line(qid: int, query: Query, result) -> str:
    if isinstance(query, RangeQuery):
        ids = ";".join(str(i) for i in sorted(result))
        return f"{qid},RANGE,{ids}"
    pairs = ";".join(f"{oid}:{dist:.6f}" for oid, dist in result)
    return f"{qid},KNN,{pairs}"
