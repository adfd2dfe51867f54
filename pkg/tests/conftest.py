"""Shared oracles and generators for the test suite.

The linear-scan oracles are deliberately independent of every index code
path: they evaluate predicted positions directly over the full object list.
"""

import math
import random
from typing import Dict, Iterable, List, Set, Tuple

import pytest

from mobix.core import KnnQuery, Mbr, MovingObject, RangeQuery, predicted_pos


def linear_scan_range(objects: Iterable[MovingObject], q: RangeQuery) -> Set[int]:
    out = set()
    for o in objects:
        px, py = predicted_pos(o, q.predict_t)
        if (q.window.lo[0] <= px <= q.window.hi[0]
                and q.window.lo[1] <= py <= q.window.hi[1]):
            out.add(o.id)
    return out


def linear_scan_knn(objects: Iterable[MovingObject],
                    q: KnnQuery) -> List[Tuple[int, float]]:
    ranked = []
    for o in objects:
        px, py = predicted_pos(o, q.predict_t)
        ranked.append((math.hypot(px - q.center[0], py - q.center[1]), o.id))
    ranked.sort()
    return [(oid, d) for d, oid in ranked[:q.k]]


def random_objects(rng: random.Random, n: int, space_side: float = 10_000.0,
                   max_speed: float = 60.0, t_ref: float = 0.0,
                   id_base: int = 0) -> List[MovingObject]:
    out = []
    for i in range(n):
        angle = rng.uniform(0.0, 2.0 * math.pi)
        speed = rng.uniform(0.0, max_speed)
        out.append(MovingObject(
            id_base + i,
            (rng.uniform(0.0, space_side), rng.uniform(0.0, space_side)),
            (speed * math.cos(angle), speed * math.sin(angle)),
            t_ref))
    return out


@pytest.fixture
def space() -> Mbr:
    return Mbr((0.0, 0.0), (10_000.0, 10_000.0))
