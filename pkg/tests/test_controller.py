import math
import random

import pytest

from conftest import linear_scan_knn, linear_scan_range, random_objects
from mobix.bx_index import BxConfig, BxTree
from mobix.controller import (PartitionedIndex, format_query_line,
                              format_result_line, format_update_line,
                              parse_query_line, parse_update_line)
from mobix.core import (KnnQuery, Mbr, MovingObject, RangeQuery, SpeedDomain,
                        predicted_pos)
from mobix.expansion import ExpansionParams, expansion_table
from mobix.partitioner import PartitionPlan, assign_partition, compute_plan
from mobix.tpr_index import TprConfig, TprTree

SPACE = Mbr((0.0, 0.0), (10_000.0, 10_000.0))
PARAMS = ExpansionParams.from_node_bytes(4096, 120.0)


def bx_factory():
    return BxTree(BxConfig(), SPACE)

def tpr_factory():
    return TprTree(TprConfig(horizon=120.0, node_bytes=800))


def system_with_plan(factory, boundaries, quadrant_split, dom):
    """A system with an injected plan, for deterministic routing tests."""
    sys_ = PartitionedIndex(factory, params=PARAMS, space=SPACE, q=dom.q)
    sys_.plan = PartitionPlan(boundaries, quadrant_split, 0.0)
    sys_.dom = dom
    sys_._rebuild(0.0)
    return sys_


def bimodal_objects(rng, n, id_base=0):
    objs = []
    for i in range(n):
        speed = rng.uniform(1.0, 8.0) if i % 2 == 0 else rng.uniform(28.0, 42.0)
        angle = rng.uniform(0, 2 * math.pi)
        objs.append(MovingObject(
            id_base + i, (rng.uniform(0, 10_000), rng.uniform(0, 10_000)),
            (speed * math.cos(angle), speed * math.sin(angle)), 0.0))
    return objs


class TestRouting:
    def setup_method(self):
        self.dom = SpeedDomain((10.0, 20.0, 30.0))
        self.sys = system_with_plan(bx_factory, (0, 1, 3), (False, False), self.dom)

    def test_crossing_a_boundary_moves_partitions(self):
        slow = MovingObject(1, (100.0, 100.0), (5.0, 0.0), 0.0)
        self.sys.route_update(slow, 0.0)
        assert self.sys.obj_locator[1] == (1, None)
        fast = MovingObject(1, (120.0, 100.0), (25.0, 0.0), 4.0)
        self.sys.route_update(fast, 4.0)
        assert self.sys.obj_locator[1] == (2, None)
        assert len(self.sys.partitions[(1, None)]) == 0
        assert len(self.sys.partitions[(2, None)]) == 1

    def test_same_partition_update_stays_put(self):
        self.sys.route_update(MovingObject(1, (0.0, 0.0), (4.0, 0.0), 0.0), 0.0)
        self.sys.route_update(MovingObject(1, (10.0, 0.0), (8.0, 0.0), 2.0), 2.0)
        assert self.sys.obj_locator[1] == (1, None)
        assert len(self.sys) == 1

    def test_conservation_over_random_updates(self):
        rng = random.Random(1)
        for step in range(2000):
            oid = rng.randrange(0, 300)
            speed = rng.uniform(0.0, 30.0)
            angle = rng.uniform(0, 2 * math.pi)
            o = MovingObject(oid, (rng.uniform(0, 10_000), rng.uniform(0, 10_000)),
                             (speed * math.cos(angle), speed * math.sin(angle)),
                             step * 0.01)
            self.sys.route_update(o, step * 0.01)
        sizes = self.sys.partition_sizes()
        assert sum(sizes.values()) == len(self.sys)
        for oid, key in self.sys.obj_locator.items():
            assert key == assign_partition(self.sys.plan, self.dom,
                                           self.sys._objects[oid])

    def test_quadrant_split_routing(self):
        dom = SpeedDomain((10.0, 20.0))
        sys_ = system_with_plan(bx_factory, (0, 1, 2), (False, True), dom)
        o = MovingObject(5, (50.0, 50.0), (-12.0, 9.0), 0.0)
        sys_.route_update(o, 0.0)
        assert sys_.obj_locator[5] == (2, (-1, 1))
        assert len(sys_.partitions[(2, (-1, 1))]) == 1


class TestRefresh:
    def test_noop_before_period(self):
        sys_ = PartitionedIndex(bx_factory, params=PARAMS, space=SPACE, q=10,
                                refresh_period=3600.0)
        sys_.route_update(MovingObject(1, (0.0, 0.0), (1.0, 0.0), 0.0), 0.0)
        assert sys_.refresh_partitions(10.0) is None
        assert sys_.plan is None

    def test_unchanged_snapshot_is_idempotent(self):
        rng = random.Random(2)
        sys_ = PartitionedIndex(bx_factory, params=PARAMS, space=SPACE, q=8)
        for o in bimodal_objects(rng, 400):
            sys_.route_update(o, 0.0)
        plan1 = sys_.refresh_partitions(1.0, force=True)
        parts1 = sys_.partitions
        from mobix.partitioner import plan_to_json
        text1 = plan_to_json(plan1, sys_.dom)
        plan2 = sys_.refresh_partitions(2.0, force=True)
        assert plan_to_json(plan2, sys_.dom) == text1
        assert sys_.partitions is parts1      # indexes untouched

    def test_bimodal_population_splits_when_it_pays(self):
        rng = random.Random(3)
        objs = bimodal_objects(rng, 3000)
        plan, dom, forest = compute_plan(objs, 10, PARAMS, SPACE)
        table, _ = expansion_table(forest, PARAMS)
        single = float(table[0, dom.q])
        assert plan.k >= 2
        assert plan.predicted_V < single

    def test_forced_refresh_rebuilds_routing(self):
        rng = random.Random(4)
        sys_ = PartitionedIndex(bx_factory, params=PARAMS, space=SPACE, q=8)
        objs = bimodal_objects(rng, 1000)
        for o in objs:
            sys_.route_update(o, 0.0)
        assert len(sys_.partitions) == 1
        sys_.refresh_partitions(1.0, force=True)
        assert len(sys_.partitions) >= 2
        assert sum(sys_.partition_sizes().values()) == len(objs)
        for oid, key in sys_.obj_locator.items():
            assert key == assign_partition(sys_.plan, sys_.dom, sys_._objects[oid])

    def test_disabled_partitioning_never_splits(self):
        sys_ = PartitionedIndex(bx_factory, params=PARAMS, space=SPACE, q=8,
                                partition_enabled=False)
        rng = random.Random(5)
        for o in bimodal_objects(rng, 500):
            sys_.route_update(o, 0.0)
        sys_.refresh_partitions(1.0, force=True)
        assert sys_.plan is None
        assert list(sys_.partitions) == [(1, None)]


class TestQueryFanout:
    @pytest.mark.parametrize("factory", [bx_factory, tpr_factory],
                             ids=["bx", "tpr"])
    def test_partitioned_equals_bare_index(self, factory):
        rng = random.Random(6)
        objs = bimodal_objects(rng, 600)
        sys_ = PartitionedIndex(factory, params=PARAMS, space=SPACE, q=8)
        bare = factory()
        for o in objs:
            sys_.route_update(o, 0.0)
            bare.insert(o, 0.0)
        sys_.refresh_partitions(0.5, force=True)
        assert len(sys_.partitions) >= 2
        for _ in range(20):
            cx, cy = rng.uniform(0, 10_000), rng.uniform(0, 10_000)
            rq = RangeQuery(Mbr((cx - 400, cy - 400), (cx + 400, cy + 400)),
                            rng.uniform(0, 120))
            assert sys_.query_range(rq, 0.5) == bare.range_query(rq, 0.5)
            assert sys_.query_range(rq, 0.5) == linear_scan_range(objs, rq)
            kq = KnnQuery((cx, cy), 7, rng.uniform(0, 120))
            assert sys_.query_knn(kq, 0.5) == bare.knn_query(kq, 0.5)

    def test_empty_system(self):
        sys_ = PartitionedIndex(bx_factory, params=PARAMS, space=SPACE)
        assert sys_.query_range(RangeQuery(Mbr((0, 0), (1, 1)), 0.0), 0.0) == set()
        assert sys_.query_knn(KnnQuery((0.0, 0.0), 3, 0.0), 0.0) == []

    def test_whole_space_query_returns_all(self):
        rng = random.Random(7)
        sys_ = PartitionedIndex(bx_factory, params=PARAMS, space=SPACE, q=5)
        objs = random_objects(rng, 100, max_speed=0.0)
        for o in objs:
            sys_.route_update(o, 0.0)
        rq = RangeQuery(SPACE, 0.0)
        assert sys_.query_range(rq, 0.0) == set(range(100))

    def test_knn_merge_across_partitions(self):
        dom = SpeedDomain((10.0, 30.0))
        sys_ = system_with_plan(bx_factory, (0, 1, 2), (False, False), dom)
        # top-3 split 2/1 across the two partitions
        near = [MovingObject(1, (5000.0, 5001.0), (1.0, 0.0), 0.0),
                MovingObject(2, (5000.0, 5002.0), (0.0, 1.0), 0.0),
                MovingObject(3, (5000.0, 5001.5), (20.0, 0.0), 0.0),
                MovingObject(4, (5000.0, 5900.0), (15.0, 0.0), 0.0)]
        for o in near:
            sys_.route_update(o, 0.0)
        assert sys_.obj_locator[3] == (2, None)
        out = sys_.query_knn(KnnQuery((5000.0, 5000.0), 3, 0.0), 0.0)
        assert [oid for oid, _ in out] == [1, 3, 2]
        assert out == linear_scan_knn(near, KnnQuery((5000.0, 5000.0), 3, 0.0))


class TestWireFormats:
    def test_update_round_trip(self):
        o = MovingObject(17, (1234.5, 9.25), (-3.125, 60.0), 42.75)
        assert parse_update_line(format_update_line(o)) == o

    def test_update_parse_example(self):
        o = parse_update_line("10.5,3,100.0,200.0,1.5,-2.5\n")
        assert o == MovingObject(3, (100.0, 200.0), (1.5, -2.5), 10.5)

    def test_malformed_update_rejected(self):
        with pytest.raises(ValueError, match="malformed update"):
            parse_update_line("1,2,3")

    def test_range_query_round_trip(self):
        q = RangeQuery(Mbr((1.0, 2.0), (3.0, 4.0)), 70.0)
        ts, back = parse_query_line(format_query_line(10.0, q))
        assert ts == 10.0
        assert back == q

    def test_knn_query_round_trip(self):
        q = KnnQuery((5.5, 6.5), 30, 90.0)
        ts, back = parse_query_line(format_query_line(30.0, q))
        assert ts == 30.0
        assert back == q

    def test_unknown_kind_names_token(self):
        with pytest.raises(ValueError, match="'CUBE'"):
            parse_query_line("0.0,CUBE,1,2,3")

    def test_result_lines(self):
        rq = RangeQuery(Mbr((0, 0), (1, 1)), 0.0)
        assert format_result_line(4, rq, {3, 1, 2}) == "4,RANGE,1;2;3"
        kq = KnnQuery((0.0, 0.0), 2, 0.0)
        line = format_result_line(5, kq, [(9, 1.25), (2, 3.5)])
        assert line == "5,KNN,9:1.250000;2:3.500000"
