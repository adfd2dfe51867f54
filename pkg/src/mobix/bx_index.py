"""Bx-style index: an ordered map over (phase label, Z-order key).

Object positions are snapshotted forward to the nearest future label
timestamp of the phase rotation and keyed by the Z-order value of the
snapshot cell.  Range queries enlarge the window per phase by the
partition's maximum speed times the label distance, scan the Z-key runs
intersecting the enlarged window, and refine candidates by exact predicted
position, so results carry no false negatives and no false hits.

Writers must be serialized externally (the controller does); concurrent
readers are fine.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterator, List, NamedTuple, Optional, Set, Tuple

from sortedcontainers import SortedDict

from .core import (KnnQuery, Mbr, MovingObject, RangeQuery, Timestamp, Vec2,
                   predicted_pos)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BxConfig:
    """Phase rotation and key-grid parameters."""

    dt_mu: float = 120.0
    n_phases: int = 2
    grid_bits: int = 12
    node_bytes: int = 4096

    def __post_init__(self) -> None:
        if self.dt_mu <= 0:
            raise ValueError("dt_mu must be positive")
        if self.n_phases < 1:
            raise ValueError("n_phases must be >= 1")
        if not 8 <= self.grid_bits <= 20:
            raise ValueError("grid_bits must be in [8, 20]")


class BxKey(NamedTuple):
    """Lexicographically ordered index key."""

    phase_label: int
    zvalue: int


def _spread(v: int) -> int:
    """Spread the low 32 bits of ``v`` onto even bit positions."""
    v &= 0xFFFFFFFF
    v = (v | (v << 16)) & 0x0000FFFF0000FFFF
    v = (v | (v << 8)) & 0x00FF00FF00FF00FF
    v = (v | (v << 4)) & 0x0F0F0F0F0F0F0F0F
    v = (v | (v << 2)) & 0x3333333333333333
    v = (v | (v << 1)) & 0x5555555555555555
    return v


def z_interleave(ix: int, iy: int) -> int:
    """Morton code with x on even (lower) bit positions, y on odd."""
    return _spread(ix) | (_spread(iy) << 1)


def z_cell(pos: Vec2, space: Mbr, grid_bits: int) -> Tuple[int, int]:
    """Grid cell of a position; out-of-space positions clamp to the boundary."""
    n = 1 << grid_bits
    ix = int((pos[0] - space.lo[0]) / space.width * n)
    iy = int((pos[1] - space.lo[1]) / space.height * n)
    if not (0 <= ix < n and 0 <= iy < n):
        logger.debug("position %s outside space: clamped to boundary cell", pos)
        ix = min(max(ix, 0), n - 1)
        iy = min(max(iy, 0), n - 1)
    return ix, iy


def z_encode(pos: Vec2, space: Mbr, grid_bits: int) -> int:
    """Z-order key of a position on a ``2^grid_bits`` per axis grid."""
    ix, iy = z_cell(pos, space, grid_bits)
    return z_interleave(ix, iy)


def z_ranges(cx0: int, cy0: int, cx1: int, cy1: int, grid_bits: int,
             coarse: bool = True) -> List[Tuple[int, int]]:
    """Inclusive Z-value runs covering the cell rectangle, ascending, coalesced.

    With ``coarse`` set, blocks much smaller than the rectangle are emitted
    whole even when only partially covered, which caps the run count near
    the rectangle perimeter; the result is then a slight superset, which
    callers must (and do) refine exactly.
    """
    span = max(cx1 - cx0, cy1 - cy0) + 1
    floor_level = max(0, span.bit_length() - 5) if coarse else 0
    out: List[Tuple[int, int]] = []

    def emit(x0: int, y0: int, size: int) -> None:
        zbase = z_interleave(x0, y0)
        zspan = size * size
        if out and out[-1][1] + 1 == zbase:
            out[-1] = (out[-1][0], zbase + zspan - 1)
        else:
            out.append((zbase, zbase + zspan - 1))

    def visit(bx: int, by: int, level: int) -> None:
        size = 1 << level
        x0, y0 = bx * size, by * size
        x1, y1 = x0 + size - 1, y0 + size - 1
        if x1 < cx0 or x0 > cx1 or y1 < cy0 or y0 > cy1:
            return
        if (cx0 <= x0 and x1 <= cx1 and cy0 <= y0 and y1 <= cy1) \
                or level <= floor_level:
            emit(x0, y0, size)
            return
        half = level - 1
        # quadrants in ascending Z order
        visit(bx * 2, by * 2, half)
        visit(bx * 2 + 1, by * 2, half)
        visit(bx * 2, by * 2 + 1, half)
        visit(bx * 2 + 1, by * 2 + 1, half)

    visit(0, 0, grid_bits)
    return out


class BxTree:
    """One Bx-style index partition over an ordered (label, zvalue) map.

    ``max_speed`` is the maximum speed seen among stored objects; it only
    tightens again when the partition is rebuilt, which keeps the query
    enlargement conservative at all times.
    """

    def __init__(self, cfg: BxConfig, space: Mbr):
        self.cfg = cfg
        self.space = space
        self.max_speed = 0.0
        self._phase_len = cfg.dt_mu / cfg.n_phases
        self._map: SortedDict = SortedDict()      # BxKey -> {id: MovingObject}
        self._keys: Dict[int, BxKey] = {}
        self._label_counts: Dict[int, int] = {}

    def __len__(self) -> int:
        return len(self._keys)

    def label_timestamp(self, label: int) -> Timestamp:
        return label * self._phase_len

    def _future_label(self, now: Timestamp) -> int:
        return int(now / self._phase_len) + 1

    def insert(self, o: MovingObject, now: Timestamp) -> None:
        label = self._future_label(now)
        snap = predicted_pos(o, self.label_timestamp(label))
        key = BxKey(label, z_encode(snap, self.space, self.cfg.grid_bits))
        self._map.setdefault(key, {})[o.id] = o
        self._keys[o.id] = key
        self._label_counts[label] = self._label_counts.get(label, 0) + 1
        sp = o.speed
        if sp > self.max_speed:
            self.max_speed = sp

    def delete(self, oid: int, now: Optional[Timestamp] = None,
               hint: Optional[MovingObject] = None) -> bool:
        """Remove an object via its stored key; False when absent.

        ``now`` and ``hint`` exist for interface parity with the TPR backend
        and are not needed here.
        """
        key = self._keys.pop(oid, None)
        if key is None:
            return False
        bucket = self._map[key]
        del bucket[oid]
        if not bucket:
            del self._map[key]
        self._label_counts[key.phase_label] -= 1
        if self._label_counts[key.phase_label] == 0:
            del self._label_counts[key.phase_label]
        if not self._keys:
            self.max_speed = 0.0
        return True

    def apply_update(self, o: MovingObject, now: Timestamp) -> None:
        self.delete(o.id)
        self.insert(o, now)

    def _cell_rect(self, window: Mbr) -> Tuple[int, int, int, int]:
        """Cell bounds of a window clamped into the space domain."""
        sl, sh = self.space.lo, self.space.hi
        x0 = min(max(window.lo[0], sl[0]), sh[0])
        y0 = min(max(window.lo[1], sl[1]), sh[1])
        x1 = min(max(window.hi[0], sl[0]), sh[0])
        y1 = min(max(window.hi[1], sl[1]), sh[1])
        cx0, cy0 = z_cell((x0, y0), self.space, self.cfg.grid_bits)
        cx1, cy1 = z_cell((x1, y1), self.space, self.cfg.grid_bits)
        return cx0, cy0, cx1, cy1

    def _scan(self, label: int, window: Mbr) -> Iterator[MovingObject]:
        """All objects of a phase whose snapshot cell lies under the window."""
        cx0, cy0, cx1, cy1 = self._cell_rect(window)
        for zlo, zhi in z_ranges(cx0, cy0, cx1, cy1, self.cfg.grid_bits):
            for key in self._map.irange(BxKey(label, zlo), BxKey(label, zhi)):
                yield from self._map[key].values()

    def range_query(self, q: RangeQuery, now: Timestamp) -> Set[int]:
        """Exactly the objects whose predicted positions fall in the window."""
        out: Set[int] = set()
        window = q.window
        (wlx, wly), (whx, why) = window.lo, window.hi
        t = q.predict_t
        irange = self._map.irange
        bucket_of = self._map.__getitem__
        for label in list(self._label_counts):
            margin = self.max_speed * abs(t - self.label_timestamp(label))
            cx0, cy0, cx1, cy1 = self._cell_rect(window.expand(margin))
            for zlo, zhi in z_ranges(cx0, cy0, cx1, cy1, self.cfg.grid_bits):
                for key in irange((label, zlo), (label, zhi)):
                    for o in bucket_of(key).values():
                        dt = t - o.t_ref
                        px = o.pos[0] + o.vel[0] * dt
                        if wlx <= px <= whx:
                            py = o.pos[1] + o.vel[1] * dt
                            if wly <= py <= why:
                                out.add(o.id)
        return out

    def _all_with_distance(self, q: KnnQuery) -> List[Tuple[float, int]]:
        cx, cy = q.center
        out = []
        for key, bucket in self._map.items():
            for o in bucket.values():
                px, py = predicted_pos(o, q.predict_t)
                out.append((math.hypot(px - cx, py - cy), o.id))
        return out

    def knn_query(self, q: KnnQuery, now: Timestamp) -> List[Tuple[int, float]]:
        """The k nearest objects at predict time, distance ties broken by id."""
        n = len(self)
        if n == 0:
            if q.k > 0:
                logger.debug("knn on empty index: returning no results")
            return []
        if q.k >= n:
            if q.k > n:
                logger.debug("knn short: k=%d exceeds population %d", q.k, n)
            return [(oid, d) for d, oid in sorted(self._all_with_distance(q))]
        radius = self.space.width * math.sqrt(q.k / n)
        cx, cy = q.center
        while True:
            window = Mbr((cx - radius, cy - radius), (cx + radius, cy + radius))
            verified: List[Tuple[float, int]] = []
            for label in list(self._label_counts):
                margin = self.max_speed * abs(q.predict_t - self.label_timestamp(label))
                for o in self._scan(label, window.expand(margin)):
                    px, py = predicted_pos(o, q.predict_t)
                    d = math.hypot(px - cx, py - cy)
                    if d <= radius:
                        verified.append((d, o.id))
            if len(verified) >= q.k:
                verified.sort()
                return [(oid, d) for d, oid in verified[:q.k]]
            radius *= 2.0

    def validate(self) -> None:
        """Structural audit; raises AssertionError on any violated invariant."""
        keys = list(self._map.keys())
        assert keys == sorted(keys), "key order violated"
        total = 0
        for key, bucket in self._map.items():
            assert bucket, f"empty bucket at {key}"
            for oid, o in bucket.items():
                total += 1
                assert self._keys.get(oid) == key, f"key map stale for id {oid}"
                label_t = self.label_timestamp(key.phase_label)
                assert label_t >= o.t_ref, "label precedes object reference time"
                snap = predicted_pos(o, label_t)
                expect = z_encode(snap, self.space, self.cfg.grid_bits)
                assert key.zvalue == expect, f"stored z stale for id {oid}"
                assert o.speed <= self.max_speed + 1e-12, "max_speed not conservative"
        assert total == len(self._keys), "entry count mismatch"
        assert total == sum(self._label_counts.values()), "label counts mismatch"
