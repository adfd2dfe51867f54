import math
import random

import pytest

from conftest import linear_scan_knn, linear_scan_range, random_objects
from mobix.bx_index import (BxConfig, BxKey, BxTree, z_cell, z_encode,
                            z_interleave, z_ranges)
from mobix.core import KnnQuery, Mbr, MovingObject, RangeQuery, predicted_pos

SPACE = Mbr((0.0, 0.0), (10_000.0, 10_000.0))


class TestZEncoding:
    def test_origin(self):
        assert z_interleave(0, 0) == 0

    def test_cell_one_one(self):
        assert z_interleave(1, 1) == 0b11

    def test_cell_two_three(self):
        # x=10b on even bits, y=11b on odd bits -> y1 x1 y0 x0 = 1110b
        assert z_interleave(2, 3) == 14

    def test_encode_via_positions(self):
        space = Mbr((0.0, 0.0), (16.0, 16.0))
        assert z_encode((2.5, 3.5), space, 4) == 14
        assert z_encode((0.0, 0.0), space, 4) == 0

    def test_out_of_space_clamps_to_boundary(self):
        space = Mbr((0.0, 0.0), (16.0, 16.0))
        assert z_cell((-5.0, 20.0), space, 4) == (0, 15)
        assert z_encode((16.0, 16.0), space, 4) == z_interleave(15, 15)

    def test_aligned_blocks_are_consecutive(self):
        # the 4 cells of any aligned 2x2 block hold consecutive key values
        rng = random.Random(1)
        for _ in range(50):
            bx, by = rng.randrange(0, 2048), rng.randrange(0, 2048)
            base = z_interleave(2 * bx, 2 * by)
            keys = {z_interleave(2 * bx + dx, 2 * by + dy)
                    for dx in (0, 1) for dy in (0, 1)}
            assert keys == {base, base + 1, base + 2, base + 3}


class TestZRanges:
    @staticmethod
    def covered(ranges):
        cells = set()
        for lo, hi in ranges:
            cells.update(range(lo, hi + 1))
        return cells

    def test_exact_mode_covers_rectangle_exactly(self):
        rng = random.Random(2)
        for _ in range(25):
            bits = 5
            x0, y0 = rng.randrange(0, 30), rng.randrange(0, 30)
            x1 = rng.randrange(x0, 32)
            y1 = rng.randrange(y0, 32)
            want = {z_interleave(x, y)
                    for x in range(x0, x1 + 1) for y in range(y0, y1 + 1)}
            got = self.covered(z_ranges(x0, y0, x1, y1, bits, coarse=False))
            assert got == want

    def test_coarse_mode_is_a_superset(self):
        rng = random.Random(3)
        for _ in range(25):
            bits = 6
            x0, y0 = rng.randrange(0, 60), rng.randrange(0, 60)
            x1 = rng.randrange(x0, 64)
            y1 = rng.randrange(y0, 64)
            want = {z_interleave(x, y)
                    for x in range(x0, x1 + 1) for y in range(y0, y1 + 1)}
            got = self.covered(z_ranges(x0, y0, x1, y1, bits))
            assert got >= want

    def test_ranges_ascend_and_are_coalesced(self):
        ranges = z_ranges(3, 5, 40, 47, 6)
        for (alo, ahi), (blo, bhi) in zip(ranges, ranges[1:]):
            assert alo <= ahi
            assert blo > ahi + 1     # gaps only, adjacency was merged

    def test_full_grid_is_one_range(self):
        assert z_ranges(0, 0, 63, 63, 6) == [(0, 4095)]


class TestBxTreeUpdates:
    def setup_method(self):
        self.tree = BxTree(BxConfig(), SPACE)

    def test_read_your_write(self):
        o = MovingObject(1, (5000.0, 5000.0), (1.0, 0.0), 0.0)
        self.tree.insert(o, 0.0)
        q = RangeQuery(Mbr((4000, 4000), (6200, 6000)), 60.0)
        assert self.tree.range_query(q, 0.0) == {1}

    def test_double_update_keeps_one_entry(self):
        o = MovingObject(1, (1000.0, 1000.0), (0.0, 0.0), 0.0)
        self.tree.apply_update(o, 0.0)
        self.tree.apply_update(MovingObject(1, (2000.0, 2000.0), (0.0, 0.0), 1.0), 1.0)
        assert len(self.tree) == 1
        q = RangeQuery(Mbr((0, 0), (10_000, 10_000)), 2.0)
        assert self.tree.range_query(q, 1.0) == {1}

    def test_delete_then_absent(self):
        o = MovingObject(7, (1000.0, 1000.0), (0.0, 0.0), 0.0)
        self.tree.insert(o, 0.0)
        assert self.tree.delete(7)
        assert not self.tree.delete(7)
        q = RangeQuery(Mbr((0, 0), (10_000, 10_000)), 0.0)
        assert self.tree.range_query(q, 0.0) == set()

    def test_count_conservation(self):
        rng = random.Random(4)
        live = set()
        for i in range(500):
            oid = rng.randrange(0, 120)
            if oid in live and rng.random() < 0.3:
                self.tree.delete(oid)
                live.discard(oid)
            else:
                o = MovingObject(oid, (rng.uniform(0, 10_000), rng.uniform(0, 10_000)),
                                 (rng.uniform(-30, 30), rng.uniform(-30, 30)),
                                 float(i))
                self.tree.apply_update(o, float(i))
                live.add(oid)
        assert len(self.tree) == len(live)
        self.tree.validate()


class TestBxTreeQueries:
    def test_stationary_object_inside_window(self):
        tree = BxTree(BxConfig(), SPACE)
        tree.insert(MovingObject(1, (5.0, 5.0), (0.0, 0.0), 0.0), 0.0)
        q = RangeQuery(Mbr((0, 0), (10, 10)), 100.0)
        assert tree.range_query(q, 0.0) == {1}

    def test_moving_object_enters_window(self):
        tree = BxTree(BxConfig(), SPACE)
        tree.insert(MovingObject(1, (0.0, 0.0), (1.0, 0.0), 0.0), 0.0)
        q = RangeQuery(Mbr((5.0, -1.0), (5.5, 1.0)), 5.0)
        assert tree.range_query(q, 0.0) == {1}
        q_miss = RangeQuery(Mbr((5.0, -1.0), (5.5, 1.0)), 20.0)
        assert tree.range_query(q_miss, 0.0) == set()

    def test_matches_linear_scan_oracle(self):
        rng = random.Random(5)
        objs = random_objects(rng, 400)
        tree = BxTree(BxConfig(), SPACE)
        for o in objs:
            tree.insert(o, 0.0)
        for _ in range(25):
            cx, cy = rng.uniform(0, 10_000), rng.uniform(0, 10_000)
            q = RangeQuery(Mbr((cx - 300, cy - 300), (cx + 300, cy + 300)),
                           rng.uniform(0, 120))
            assert tree.range_query(q, 0.0) == linear_scan_range(objs, q)

    def test_knn_matches_linear_scan_oracle(self):
        rng = random.Random(6)
        objs = random_objects(rng, 400)
        tree = BxTree(BxConfig(), SPACE)
        for o in objs:
            tree.insert(o, 0.0)
        for _ in range(25):
            q = KnnQuery((rng.uniform(0, 10_000), rng.uniform(0, 10_000)),
                         rng.choice((1, 5, 30)), rng.uniform(0, 120))
            assert tree.knn_query(q, 0.0) == linear_scan_knn(objs, q)

    def test_knn_single_object(self):
        tree = BxTree(BxConfig(), SPACE)
        tree.insert(MovingObject(3, (100.0, 100.0), (0.0, 0.0), 0.0), 0.0)
        out = tree.knn_query(KnnQuery((0.0, 0.0), 1, 0.0), 0.0)
        assert out == [(3, pytest.approx(math.hypot(100, 100)))]

    def test_knn_k_of_n_returns_everything_sorted(self):
        rng = random.Random(7)
        objs = random_objects(rng, 40)
        tree = BxTree(BxConfig(), SPACE)
        for o in objs:
            tree.insert(o, 0.0)
        q = KnnQuery((5000.0, 5000.0), 40, 30.0)
        assert tree.knn_query(q, 0.0) == linear_scan_knn(objs, q)

    def test_knn_short_population(self):
        tree = BxTree(BxConfig(), SPACE)
        tree.insert(MovingObject(1, (10.0, 10.0), (0.0, 0.0), 0.0), 0.0)
        out = tree.knn_query(KnnQuery((0.0, 0.0), 5, 0.0), 0.0)
        assert len(out) == 1

    def test_stale_phase_objects_still_found(self):
        # object never re-updates: later-phase queries must still see it
        tree = BxTree(BxConfig(), SPACE)
        o = MovingObject(1, (1000.0, 1000.0), (10.0, 0.0), 0.0)
        tree.insert(o, 0.0)
        q = RangeQuery(Mbr((2900, 900), (3100, 1100)), 200.0)
        assert tree.range_query(q, 150.0) == {1}


def test_filter_step_has_no_false_negatives():
    # every oracle hit's label-time snapshot lies inside the enlarged window
    rng = random.Random(8)
    objs = random_objects(rng, 300)
    tree = BxTree(BxConfig(), SPACE)
    for o in objs:
        tree.insert(o, rng.uniform(0, 100))
    for _ in range(50):
        cx, cy = rng.uniform(0, 10_000), rng.uniform(0, 10_000)
        q = RangeQuery(Mbr((cx - 500, cy - 500), (cx + 500, cy + 500)),
                       rng.uniform(100, 220))
        hits = linear_scan_range(objs, q)
        assert tree.range_query(q, 100.0) == hits
        for oid in hits:
            key = tree._keys[oid]
            o = tree._map[key][oid]
            label_t = tree.label_timestamp(key.phase_label)
            margin = tree.max_speed * abs(q.predict_t - label_t)
            snap = predicted_pos(o, label_t)
            assert q.window.expand(margin + 1e-9).contains_point(snap)


def test_config_validation():
    with pytest.raises(ValueError, match="dt_mu"):
        BxConfig(dt_mu=0.0)
    with pytest.raises(ValueError, match="n_phases"):
        BxConfig(n_phases=0)
    with pytest.raises(ValueError, match="grid_bits"):
        BxConfig(grid_bits=25)


def test_key_ordering_is_lexicographic():
    assert BxKey(1, 99) < BxKey(2, 0)
    assert BxKey(1, 5) < BxKey(1, 6)
