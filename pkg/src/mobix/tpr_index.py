"""TPR-style time-parameterized R-tree.

Node shapes are rectangles with per-side velocities that conservatively
bound all descendants at any future time.  Insertion descends by least
increase of the time-integrated area over the horizon; overflow is handled
R*-style (one forced reinsertion pass per level per insertion, then a split
that searches distributions along both space and velocity axes for the
least total integrated area).  Deletion locates entries by predicted
position descent and dissolves underfull nodes by reinsertion.

Writers must be serialized externally; concurrent readers are fine.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Set, Tuple, Union

from .core import (ENTRY_BYTES, KnnQuery, Mbr, MovingObject, RangeQuery,
                   TimeParamRect, Timestamp, predicted_pos)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TprConfig:
    """Horizon and node geometry; fanout derives from the node byte size."""

    horizon: float = 120.0
    node_bytes: int = 4096
    reinsert_fraction: float = 0.3

    def __post_init__(self) -> None:
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if not 0.0 <= self.reinsert_fraction < 1.0:
            raise ValueError("reinsert_fraction must be in [0, 1)")

    @property
    def fanout(self) -> int:
        return max(4, self.node_bytes // ENTRY_BYTES)

    @property
    def min_fill(self) -> int:
        return max(2, int(0.4 * self.fanout))


def _clamped_integral(w0: float, h0: float, dw: float, dh: float,
                      span: float) -> float:
    """Integral of ``max(w,0) * max(h,0)`` with linear sides over ``[0, span]``.

    A side that crosses zero contributes area only on its positive part,
    so the integration window shrinks to where both sides are positive.
    """
    a, b = 0.0, span
    for v0, dv in ((w0, dw), (h0, dh)):
        if dv == 0.0:
            if v0 <= 0.0:
                return 0.0
        else:
            root = -v0 / dv
            if dv > 0.0:
                a = max(a, root)
            else:
                b = min(b, root)
    if b <= a:
        return 0.0

    def anti(t: float) -> float:
        return (w0 * h0 * t + (w0 * dh + h0 * dw) * t * t / 2.0
                + dw * dh * t * t * t / 3.0)

    return anti(b) - anti(a)


def integral_area(shape: TimeParamRect, t_l: Timestamp, H: float) -> float:
    """Time integral of the shape's area over ``[t_l, t_l + H]``.

    Degenerate sides (shrinking through zero) are clamped at zero area.
    """
    dt = t_l - shape.t_ref
    w0 = shape.rect.width + (shape.vhi[0] - shape.vlo[0]) * dt
    h0 = shape.rect.height + (shape.vhi[1] - shape.vlo[1]) * dt
    dw = shape.vhi[0] - shape.vlo[0]
    dh = shape.vhi[1] - shape.vlo[1]
    return _clamped_integral(w0, h0, dw, dh, H)


#: Flat shape tuple: (lx, ly, hx, hy, vlx, vly, vhx, vhy), all at a common time.
_Params = Tuple[float, float, float, float, float, float, float, float]

Entry = Union[MovingObject, "_Node"]


class _Node:
    __slots__ = ("level", "entries", "parent",
                 "lx", "ly", "hx", "hy", "vlx", "vly", "vhx", "vhy", "tref")

    def __init__(self, level: int, entries: Optional[List[Entry]] = None):
        self.level = level
        self.entries: List[Entry] = entries if entries is not None else []
        self.parent: Optional["_Node"] = None
        self.lx = self.ly = self.hx = self.hy = 0.0
        self.vlx = self.vly = self.vhx = self.vhy = 0.0
        self.tref = 0.0

    def box_at(self, t: Timestamp) -> Tuple[float, float, float, float]:
        dt = t - self.tref
        return (self.lx + self.vlx * dt, self.ly + self.vly * dt,
                self.hx + self.vhx * dt, self.hy + self.vhy * dt)

    def shape(self) -> TimeParamRect:
        return TimeParamRect(Mbr((self.lx, self.ly), (self.hx, self.hy)),
                             (self.vlx, self.vly), (self.vhx, self.vhy), self.tref)


def _entry_params(e: Entry, t: Timestamp) -> _Params:
    if isinstance(e, _Node):
        lx, ly, hx, hy = e.box_at(t)
        return (lx, ly, hx, hy, e.vlx, e.vly, e.vhx, e.vhy)
    px, py = predicted_pos(e, t)
    vx, vy = e.vel
    return (px, py, px, py, vx, vy, vx, vy)


def _union(a: _Params, b: _Params) -> _Params:
    return (min(a[0], b[0]), min(a[1], b[1]), max(a[2], b[2]), max(a[3], b[3]),
            min(a[4], b[4]), min(a[5], b[5]), max(a[6], b[6]), max(a[7], b[7]))


def _params_integral(p: _Params, span: float) -> float:
    return _clamped_integral(p[2] - p[0], p[3] - p[1],
                             p[6] - p[4], p[7] - p[5], span)


def _overlap_integral(a: _Params, b: _Params, span: float) -> float:
    w0 = min(a[2], b[2]) - max(a[0], b[0])
    h0 = min(a[3], b[3]) - max(a[1], b[1])
    dw = min(a[6], b[6]) - max(a[4], b[4])
    dh = min(a[7], b[7]) - max(a[5], b[5])
    return _clamped_integral(w0, h0, dw, dh, span)


class TprTree:
    """One TPR-style index partition.

    ``max_speed`` mirrors the Bx partition bound: maximum speed seen among
    stored objects, tightened only on rebuild.
    """

    def __init__(self, cfg: TprConfig):
        self.cfg = cfg
        self.root = _Node(0)
        self.max_speed = 0.0
        self._objs: Dict[int, MovingObject] = {}

    def __len__(self) -> int:
        return len(self._objs)

    # -- update path -------------------------------------------------------

    def insert(self, o: MovingObject, now: Timestamp) -> None:
        """Insert an object; an existing entry with the same id is replaced."""
        if o.id in self._objs:
            self.delete(o.id, now)
        self._objs[o.id] = o
        self._insert_entry(o, 0, now, set())
        sp = o.speed
        if sp > self.max_speed:
            self.max_speed = sp

    def apply_update(self, o: MovingObject, now: Timestamp) -> None:
        self.insert(o, now)

    def delete(self, oid: int, now: Timestamp,
               hint: Optional[MovingObject] = None) -> None:
        """Remove an object located by predicted-position descent.

        ``hint`` may carry the last known state; the stored state wins when
        both exist.  Raises ``KeyError`` when the id is absent.
        """
        obj = self._objs.get(oid, hint)
        if oid not in self._objs:
            raise KeyError(oid)
        pos = predicted_pos(obj, now)
        leaf = self._find_leaf(self.root, oid, pos, now)
        assert leaf is not None, f"entry {oid} not reachable by descent"
        leaf.entries = [e for e in leaf.entries if e.id != oid]
        del self._objs[oid]
        self._condense(leaf, now)
        if not self._objs:
            self.max_speed = 0.0

    def _find_leaf(self, node: _Node, oid: int, pos, now: Timestamp,
                   eps: float = 1e-6) -> Optional[_Node]:
        if node.level == 0:
            for e in node.entries:
                if e.id == oid:
                    return node
            return None
        x, y = pos
        for child in node.entries:
            lx, ly, hx, hy = child.box_at(now)
            if lx - eps <= x <= hx + eps and ly - eps <= y <= hy + eps:
                found = self._find_leaf(child, oid, pos, now, eps)
                if found is not None:
                    return found
        return None

    def _tighten(self, node: _Node, now: Timestamp) -> None:
        """Recompute the node shape to exactly bound its entries at ``now``."""
        if not node.entries:
            node.lx = node.ly = node.hx = node.hy = 0.0
            node.vlx = node.vly = node.vhx = node.vhy = 0.0
            node.tref = now
            return
        lx = ly = math.inf
        hx = hy = -math.inf
        vlx = vly = math.inf
        vhx = vhy = -math.inf
        if node.level == 0:
            for o in node.entries:
                dt = now - o.t_ref
                px = o.pos[0] + o.vel[0] * dt
                py = o.pos[1] + o.vel[1] * dt
                vx, vy = o.vel
                if px < lx: lx = px
                if px > hx: hx = px
                if py < ly: ly = py
                if py > hy: hy = py
                if vx < vlx: vlx = vx
                if vx > vhx: vhx = vx
                if vy < vly: vly = vy
                if vy > vhy: vhy = vy
        else:
            for c in node.entries:
                dt = now - c.tref
                a = c.lx + c.vlx * dt
                b = c.ly + c.vly * dt
                d = c.hx + c.vhx * dt
                e = c.hy + c.vhy * dt
                if a < lx: lx = a
                if b < ly: ly = b
                if d > hx: hx = d
                if e > hy: hy = e
                if c.vlx < vlx: vlx = c.vlx
                if c.vly < vly: vly = c.vly
                if c.vhx > vhx: vhx = c.vhx
                if c.vhy > vhy: vhy = c.vhy
        node.lx, node.ly, node.hx, node.hy = lx, ly, hx, hy
        node.vlx, node.vly, node.vhx, node.vhy = vlx, vly, vhx, vhy
        node.tref = now

    def _choose_node(self, target_level: int, entry: Entry,
                     now: Timestamp) -> _Node:
        """Descend by least integral-area enlargement over the horizon.

        Ties prefer the smaller union area at ``now``, then the emptier
        child.  In-tree shapes never shrink, so the positive-branch closed
        form of the integral applies directly.
        """
        span = self.cfg.horizon
        half = span * 0.5
        third = span / 3.0
        elx, ely, ehx, ehy, evlx, evly, evhx, evhy = _entry_params(entry, now)
        node = self.root
        while node.level > target_level:
            best_d = best_a = math.inf
            best_n = 0
            best_child = None
            for child in node.entries:
                dt = now - child.tref
                clx = child.lx + child.vlx * dt
                cly = child.ly + child.vly * dt
                chx = child.hx + child.vhx * dt
                chy = child.hy + child.vhy * dt
                w0 = chx - clx
                h0 = chy - cly
                dw = child.vhx - child.vlx
                dh = child.vhy - child.vly
                ic = w0 * h0 + (w0 * dh + h0 * dw) * half + dw * dh * third * span
                ulx = clx if clx < elx else elx
                uly = cly if cly < ely else ely
                uhx = chx if chx > ehx else ehx
                uhy = chy if chy > ehy else ehy
                uvlx = child.vlx if child.vlx < evlx else evlx
                uvly = child.vly if child.vly < evly else evly
                uvhx = child.vhx if child.vhx > evhx else evhx
                uvhy = child.vhy if child.vhy > evhy else evhy
                w0u = uhx - ulx
                h0u = uhy - uly
                dwu = uvhx - uvlx
                dhu = uvhy - uvly
                iu = (w0u * h0u + (w0u * dhu + h0u * dwu) * half
                      + dwu * dhu * third * span)
                delta = iu - ic
                if delta > best_d:
                    continue
                area = w0u * h0u
                if (delta < best_d or area < best_a
                        or (area == best_a and len(child.entries) < best_n)):
                    best_d = delta
                    best_a = area
                    best_n = len(child.entries)
                    best_child = child
            node = best_child
        return node

    def _insert_entry(self, entry: Entry, target_level: int, now: Timestamp,
                      reinserted: Set[int]) -> None:
        node = self._choose_node(target_level, entry, now)
        node.entries.append(entry)
        if isinstance(entry, _Node):
            entry.parent = node
        walker: Optional[_Node] = node
        while walker is not None:
            self._tighten(walker, now)
            if len(walker.entries) > self.cfg.fanout:
                self._handle_overflow(walker, now, reinserted)
            walker = walker.parent

    def _handle_overflow(self, node: _Node, now: Timestamp,
                         reinserted: Set[int]) -> None:
        if node is not self.root and node.level not in reinserted:
            reinserted.add(node.level)
            self._force_reinsert(node, now, reinserted)
        else:
            self._split(node, now)

    def _force_reinsert(self, node: _Node, now: Timestamp,
                        reinserted: Set[int]) -> None:
        p = max(1, int(self.cfg.reinsert_fraction * self.cfg.fanout))
        cx = (node.lx + node.hx) / 2.0
        cy = (node.ly + node.hy) / 2.0

        def dist(e: Entry) -> float:
            ep = _entry_params(e, now)
            ex = (ep[0] + ep[2]) / 2.0
            ey = (ep[1] + ep[3]) / 2.0
            return math.hypot(ex - cx, ey - cy)

        ranked = sorted(node.entries, key=dist)
        node.entries = ranked[:-p]
        evicted = ranked[-p:]   # ascending distance: reinsertion runs close-first
        walker: Optional[_Node] = node
        while walker is not None:
            self._tighten(walker, now)
            walker = walker.parent
        for e in evicted:
            self._insert_entry(e, node.level, now, reinserted)

    def _split(self, node: _Node, now: Timestamp) -> None:
        group1, group2 = self._split_entries(node.entries, now)
        node.entries = group1
        self._tighten(node, now)
        sibling = _Node(node.level, group2)
        if node.level > 0:
            for child in group2:
                child.parent = sibling
        self._tighten(sibling, now)
        if node is self.root:
            new_root = _Node(node.level + 1, [node, sibling])
            node.parent = new_root
            sibling.parent = new_root
            self._tighten(new_root, now)
            self.root = new_root
        else:
            sibling.parent = node.parent
            node.parent.entries.append(sibling)
            # the caller's upward walk re-tightens the parent and handles
            # any cascading overflow

    def _split_entries(self, entries: List[Entry], now: Timestamp
                       ) -> Tuple[List[Entry], List[Entry]]:
        """Distribution with least total integrated area over the horizon.

        Candidate distributions come from sorting along each space axis and
        each velocity axis; ties prefer the least integrated overlap.
        """
        span = self.cfg.horizon
        m = self.cfg.min_fill
        n = len(entries)
        params = [_entry_params(e, now) for e in entries]
        axis_keys = (lambda i: (params[i][0], params[i][2]),   # space x
                     lambda i: (params[i][1], params[i][3]),   # space y
                     lambda i: (params[i][4], params[i][6]),   # velocity x
                     lambda i: (params[i][5], params[i][7]))   # velocity y
        best = None
        best_groups = None
        for key in axis_keys:
            order = sorted(range(n), key=key)
            prefix = [params[order[0]]]
            for i in order[1:]:
                prefix.append(_union(prefix[-1], params[i]))
            suffix = [params[order[-1]]]
            for i in reversed(order[:-1]):
                suffix.append(_union(suffix[-1], params[i]))
            suffix.reverse()
            for k in range(m, n - m + 1):
                g1, g2 = prefix[k - 1], suffix[k]
                cost = _params_integral(g1, span) + _params_integral(g2, span)
                tie = _overlap_integral(g1, g2, span)
                if best is None or (cost, tie) < best:
                    best = (cost, tie)
                    best_groups = ([entries[i] for i in order[:k]],
                                   [entries[i] for i in order[k:]])
        return best_groups

    def _condense(self, leaf: _Node, now: Timestamp) -> None:
        pending: List[Tuple[Entry, int]] = []
        node = leaf
        while node.parent is not None:
            parent = node.parent
            if len(node.entries) < self.cfg.min_fill:
                parent.entries.remove(node)
                pending.extend((e, node.level) for e in node.entries)
            else:
                self._tighten(node, now)
            node = parent
        self._tighten(self.root, now)
        for entry, level in pending:
            self._insert_entry(entry, level, now, set())
        while self.root.level > 0 and len(self.root.entries) == 1:
            self.root = self.root.entries[0]
            self.root.parent = None
        if self.root.level > 0 and not self.root.entries:
            self.root = _Node(0)

    # -- query path --------------------------------------------------------

    def range_query(self, q: RangeQuery, now: Timestamp) -> Set[int]:
        """Exactly the objects whose predicted positions fall in the window."""
        out: Set[int] = set()
        if not self._objs:
            return out
        (wlx, wly), (whx, why) = q.window.lo, q.window.hi
        t = q.predict_t
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.level == 0:
                for o in node.entries:
                    px, py = predicted_pos(o, t)
                    if wlx <= px <= whx and wly <= py <= why:
                        out.add(o.id)
            else:
                for child in node.entries:
                    lx, ly, hx, hy = child.box_at(t)
                    if not (lx > whx or hx < wlx or ly > why or hy < wly):
                        stack.append(child)
        return out

    def knn_query(self, q: KnnQuery, now: Timestamp) -> List[Tuple[int, float]]:
        """Best-first k nearest at predict time, distance ties broken by id."""
        n = len(self._objs)
        if n == 0:
            return []
        cx, cy = q.center
        t = q.predict_t
        if q.k >= n:
            if q.k > n:
                logger.debug("knn short: k=%d exceeds population %d", q.k, n)
            ranked = []
            for o in self._objs.values():
                px, py = predicted_pos(o, t)
                ranked.append((math.hypot(px - cx, py - cy), o.id))
            ranked.sort()
            return [(oid, d) for d, oid in ranked]

        def mindist(node: _Node) -> float:
            lx, ly, hx, hy = node.box_at(t)
            dx = max(lx - cx, 0.0, cx - hx)
            dy = max(ly - cy, 0.0, cy - hy)
            return math.hypot(dx, dy)

        counter = itertools.count()
        heap = [(mindist(self.root), next(counter), self.root)]
        # worst-kept candidate on top: max-heap over (dist, id) pairs
        topk: List[Tuple[float, float]] = []
        while heap:
            nd, _, node = heapq.heappop(heap)
            if len(topk) == q.k and nd > -topk[0][0]:
                break
            if node.level == 0:
                for o in node.entries:
                    px, py = predicted_pos(o, t)
                    cand = (math.hypot(px - cx, py - cy), o.id)
                    packed = (-cand[0], -cand[1])
                    if len(topk) < q.k:
                        heapq.heappush(topk, packed)
                    elif packed > topk[0]:
                        heapq.heapreplace(topk, packed)
            else:
                for child in node.entries:
                    d = mindist(child)
                    if len(topk) < q.k or d <= -topk[0][0]:
                        heapq.heappush(heap, (d, next(counter), child))
        result = sorted((-d, -oid) for d, oid in topk)
        return [(int(oid), d) for d, oid in result]

    # -- auditing ----------------------------------------------------------

    def validate(self, now: Timestamp, samples: Sequence[float] = ()) -> None:
        """Structural audit; raises AssertionError on any violated invariant.

        ``samples`` are extra horizon offsets at which conservative bounding
        of every descendant object is re-checked.
        """
        seen: Dict[int, MovingObject] = {}
        times = [now] + [now + s for s in samples]

        def walk(node: _Node) -> None:
            if node is not self.root:
                assert node.parent is not None, "missing parent pointer"
                assert node in node.parent.entries, "orphaned node"
                assert len(node.entries) >= self.cfg.min_fill, "underfull node"
            assert len(node.entries) <= self.cfg.fanout, "overfull node"
            if node.level == 0:
                for o in node.entries:
                    assert o.id not in seen, f"duplicate entry {o.id}"
                    seen[o.id] = o
                    assert o.speed <= self.max_speed + 1e-12, \
                        "max_speed not conservative"
            else:
                for child in node.entries:
                    assert child.level == node.level - 1, "level mismatch"
                    assert child.parent is node, "stale parent pointer"
                    walk(child)

        def check_bounds(node: _Node) -> None:
            for t in times:
                lx, ly, hx, hy = node.box_at(t)
                for o in _descendant_objects(node):
                    px, py = predicted_pos(o, t)
                    assert (lx - 1e-6 <= px <= hx + 1e-6
                            and ly - 1e-6 <= py <= hy + 1e-6), \
                        f"object {o.id} escapes node bounds at t={t}"
            if node.level > 0:
                for child in node.entries:
                    check_bounds(child)

        walk(self.root)
        if self.root.level > 0:
            assert len(self.root.entries) >= 2, "internal root below 2 children"
        assert seen == self._objs, "leaf entries do not match the id map"
        if self._objs:
            check_bounds(self.root)


def _descendant_objects(node: _Node):
    if node.level == 0:
        yield from node.entries
    else:
        for child in node.entries:
            yield from _descendant_objects(child)
