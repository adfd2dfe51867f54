"""Per-speed quad-tree layers, uniformity testing, and the layer merge.

Objects are bucketed into one layer per discretized speed value.  Each layer
is decomposed by a quad tree until every leaf holds an approximately
uniformly distributed point set (chi-square test at the 5% level) or the
depth cap is hit.  Merging the layers of a speed range yields square
subregions in which *every* merged layer is uniform: the finest division
wins wherever layer divisions conflict.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import chi2

from .core import Mbr, MovingObject, SpeedDomain, Vec2

#: Quad trees never refine past this depth.
MAX_DEPTH = 5

#: Cells per axis of the finest (depth-5) grid.
GRID_SIDE = 1 << MAX_DEPTH

#: Chi-square significance level for the uniformity test.
SIGNIFICANCE = 0.05

#: Regions with fewer points than this are treated as uniform.
MIN_SAMPLE = 8

#: Point count at which the test grid switches from 2x2 to 4x4.
FINE_GRID_MIN = 80

_CRITICAL = {g: float(chi2.ppf(1.0 - SIGNIFICANCE, g * g - 1)) for g in (2, 4)}


def chi_square_uniform(points: np.ndarray, region: Mbr) -> bool:
    """Whether a point set is plausibly uniform over a square region.

    Uses a 4x4 grid for ``len(points) >= 80``, a 2x2 grid otherwise, and
    accepts outright below ``MIN_SAMPLE`` points (too few for the test).
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(pts)
    if n < MIN_SAMPLE:
        return True
    g = 4 if n >= FINE_GRID_MIN else 2
    (x0, y0), (x1, y1) = region.lo, region.hi
    ix = np.clip(((pts[:, 0] - x0) / (x1 - x0) * g).astype(np.int64), 0, g - 1)
    iy = np.clip(((pts[:, 1] - y0) / (y1 - y0) * g).astype(np.int64), 0, g - 1)
    observed = np.bincount(ix * g + iy, minlength=g * g)
    expected = n / (g * g)
    stat = float(((observed - expected) ** 2 / expected).sum())
    return stat <= _CRITICAL[g]


class QuadNode:
    """One quad-tree node: a square region plus this layer's points inside it.

    ``children`` is ``None`` for leaves, else exactly four nodes in
    NW, NE, SW, SE order partitioning the region into equal squares.
    Internal nodes exist precisely because their own test failed, so
    ``is_uniform`` is False for them.
    """

    __slots__ = ("region", "depth", "points", "cells", "is_uniform", "children",
                 "cx0", "cy0")

    def __init__(self, region: Mbr, depth: int, points: np.ndarray,
                 cells: np.ndarray, is_uniform: bool, cx0: int, cy0: int):
        self.region = region
        self.depth = depth
        self.points = points
        self.cells = cells          # depth-5 grid coordinates, one row per point
        self.is_uniform = is_uniform
        self.children: Optional[Tuple["QuadNode", ...]] = None
        self.cx0 = cx0
        self.cy0 = cy0

    def is_leaf(self) -> bool:
        return self.children is None

    def leaves(self) -> Iterable["QuadNode"]:
        if self.children is None:
            yield self
        else:
            for child in self.children:
                yield from child.leaves()


@dataclass(frozen=True)
class UniformRegion:
    """A square region with per-speed-value object counts of the merged layers."""

    region: Mbr
    side: float
    counts: Tuple[int, ...]

    @property
    def total(self) -> int:
        return sum(self.counts)


@dataclass(frozen=True)
class LayerForest:
    """One quad tree per speed value, all sharing the same (square) root region."""

    layers: Tuple[QuadNode, ...]
    dom: SpeedDomain
    square: Mbr


def _child_regions(region: Mbr) -> Tuple[Mbr, Mbr, Mbr, Mbr]:
    (x0, y0), (x1, y1) = region.lo, region.hi
    mx, my = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    return (Mbr((x0, my), (mx, y1)),   # NW
            Mbr((mx, my), (x1, y1)),   # NE
            Mbr((x0, y0), (mx, my)),   # SW
            Mbr((mx, y0), (x1, my)))   # SE


def _quadrant_masks(cells: np.ndarray, cx0: int, cy0: int, depth: int):
    half = (GRID_SIDE >> depth) >> 1
    west = cells[:, 0] < cx0 + half
    north = cells[:, 1] >= cy0 + half
    return (west & north, ~west & north, west & ~north, ~west & ~north)


def _child_origins(cx0: int, cy0: int, depth: int):
    half = (GRID_SIDE >> depth) >> 1
    return ((cx0, cy0 + half), (cx0 + half, cy0 + half),
            (cx0, cy0), (cx0 + half, cy0))


# Layers are built on a finer internal lattice so every chi-square test grid
# (4x4 two levels below a node, 2x2 one level below) aligns with lattice
# cells; a Morton sort then makes every node a contiguous array slice.
_FINE_DEPTH = MAX_DEPTH + 2
_FINE_SIDE = 1 << _FINE_DEPTH


def _spread_bits(v: np.ndarray) -> np.ndarray:
    v = (v | (v << 8)) & 0x00FF00FF
    v = (v | (v << 4)) & 0x0F0F0F0F
    v = (v | (v << 2)) & 0x33333333
    return (v | (v << 1)) & 0x55555555


def _fine_morton(fine_cells: np.ndarray) -> np.ndarray:
    return _spread_bits(fine_cells[:, 0]) | (_spread_bits(fine_cells[:, 1]) << 1)


def _chi_uniform_sorted(morton: np.ndarray, a: int, b: int, depth: int,
                        zbase: int):
    """Chi-square test of a node's slice, binning on the aligned sub-lattice.

    Returns ``(uniform, child_cuts)``: the verdict plus the three array
    offsets that split the slice into its Z-ordered quadrants (reused when
    the node subdivides; None below the minimum sample size).
    """
    n = b - a
    if n < MIN_SAMPLE:
        return True, None
    g = 4 if n >= FINE_GRID_MIN else 2
    sub_depth = depth + (2 if g == 4 else 1)
    zspan = 4 ** (_FINE_DEPTH - sub_depth)
    nbins = g * g
    cuts = zbase + zspan * np.arange(1, nbins)
    idx = np.searchsorted(morton[a:b], cuts)
    observed = np.diff(np.concatenate(([0], idx, [n])))
    expected = n / nbins
    stat = float(((observed - expected) ** 2 / expected).sum())
    child_cuts = idx[3::4] if g == 4 else idx
    return stat <= _CRITICAL[g], child_cuts


class _LayerArrays:
    """One layer's points, Morton-sorted on the fine lattice."""

    __slots__ = ("points", "cells", "morton")

    def __init__(self, points: np.ndarray, square: Mbr):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        side = square.width
        rel = (pts - np.asarray(square.lo)) / side * _FINE_SIDE
        fine = np.clip(rel.astype(np.int64), 0, _FINE_SIDE - 1)
        morton = _fine_morton(fine)
        order = np.argsort(morton, kind="stable")
        self.points = pts[order]
        self.cells = (fine >> (_FINE_DEPTH - MAX_DEPTH))[order]
        self.morton = morton[order]


def _build_node(lay: _LayerArrays, region: Mbr, depth: int, a: int, b: int,
                zbase: int, cx0: int, cy0: int) -> QuadNode:
    uniform, child_cuts = _chi_uniform_sorted(lay.morton, a, b, depth, zbase)
    node = QuadNode(region, depth, lay.points[a:b], lay.cells[a:b],
                    uniform, cx0, cy0)
    if not uniform and depth < MAX_DEPTH:
        zspan = 4 ** (_FINE_DEPTH - depth - 1)
        cuts = (a + child_cuts).tolist()
        # slices arrive in Z order: SW, SE, NW, NE
        zslices = ((a, cuts[0]), (cuts[0], cuts[1]),
                   (cuts[1], cuts[2]), (cuts[2], b))
        regions = _child_regions(region)
        origins = _child_origins(cx0, cy0, depth)
        to_quadrant = (2, 3, 0, 1)   # Z position of NW, NE, SW, SE
        children = []
        for quadrant in range(4):
            zi = to_quadrant[quadrant]
            ca, cb = zslices[zi]
            children.append(_build_node(lay, regions[quadrant], depth + 1,
                                        ca, cb, zbase + zi * zspan,
                                        *origins[quadrant]))
        node.children = tuple(children)
    return node


def quantize_cells(points: np.ndarray, square: Mbr) -> np.ndarray:
    """Map points to their depth-5 grid cells (clamped at the boundary)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    side = square.width
    rel = (pts - np.asarray(square.lo)) / side * GRID_SIDE
    return np.clip(rel.astype(np.int64), 0, GRID_SIDE - 1)


def pad_to_square(space: Mbr) -> Mbr:
    """Smallest enclosing square anchored at the space's low corner."""
    side = max(space.width, space.height)
    return Mbr(space.lo, (space.lo[0] + side, space.lo[1] + side))


def build_layers(objects: Iterable[MovingObject], dom: SpeedDomain,
                 space: Mbr) -> LayerForest:
    """Build one uniformity quad tree per speed value.

    Every tree is refined until each leaf passes the chi-square test or
    reaches depth 5.  An empty layer yields a single uniform leaf.
    """
    square = pad_to_square(space)
    data = np.array([(o.pos[0], o.pos[1], o.speed) for o in objects],
                    dtype=float).reshape(-1, 3)
    values = np.asarray(dom.values)
    bins = np.minimum(np.searchsorted(values, data[:, 2]), dom.q - 1)
    order = np.argsort(bins, kind="stable")
    pts = data[order, :2]
    cuts = np.searchsorted(bins[order], np.arange(1, dom.q))
    starts = np.concatenate(([0], cuts, [len(pts)]))
    roots = []
    for i in range(dom.q):
        lay = _LayerArrays(pts[starts[i]:starts[i + 1]], square)
        roots.append(_build_node(lay, square, 0, 0, len(lay.morton), 0, 0, 0))
    return LayerForest(tuple(roots), dom, square)


class _Cursor:
    """Merge-time view of one layer at the current region.

    Wraps either a real quad-tree node or a virtual uniform leaf (the
    filtered point set of an ancestor leaf whose tree stopped earlier).
    """

    __slots__ = ("points", "cells", "is_uniform", "children")

    def __init__(self, points, cells, is_uniform, children):
        self.points = points
        self.cells = cells
        self.is_uniform = is_uniform
        self.children = children

    @classmethod
    def of(cls, node: QuadNode) -> "_Cursor":
        return cls(node.points, node.cells, node.is_uniform, node.children)

    def descend(self, quadrant: int, cx0: int, cy0: int, depth: int) -> "_Cursor":
        if self.children is not None:
            return _Cursor.of(self.children[quadrant])
        mask = _quadrant_masks(self.cells, cx0, cy0, depth)[quadrant]
        return _Cursor(self.points[mask], self.cells[mask], True, None)


def merge(nodes: Sequence[QuadNode], out: List[UniformRegion], *,
          layer_ids: Optional[Sequence[int]] = None,
          q: Optional[int] = None) -> List[UniformRegion]:
    """Merge aligned per-layer quad trees into uniform subregions.

    If every layer is uniform over the current region, one region is
    emitted with the per-layer counts (by actual point membership);
    otherwise the four aligned child groups are merged recursively, with
    layers whose trees stopped earlier contributing virtual uniform
    leaves.  Emitted regions tile the input region exactly.

    ``layer_ids`` gives the 1-based speed indices of ``nodes`` within a
    ``q``-value domain; by default the nodes are layers ``1..len(nodes)``.
    """
    if not nodes:
        return out
    first = nodes[0]
    for node in nodes[1:]:
        if node.region != first.region or node.depth != first.depth:
            raise ValueError("merge inputs are not aligned: regions/depths differ")
    if layer_ids is None:
        layer_ids = range(1, len(nodes) + 1)
    if q is None:
        q = max(layer_ids)
    slots = [lid - 1 for lid in layer_ids]
    cursors = [_Cursor.of(n) for n in nodes]
    _merge_rec(first.region, first.depth, first.cx0, first.cy0,
               cursors, slots, q, out)
    return out


def _merge_rec(region: Mbr, depth: int, cx0: int, cy0: int,
               cursors: List[_Cursor], slots: List[int], q: int,
               out: List[UniformRegion]) -> None:
    all_uniform = all(c.is_uniform for c in cursors)
    splittable = any(c.children is not None for c in cursors)
    if all_uniform or depth >= MAX_DEPTH or not splittable:
        counts = [0] * q
        for c, slot in zip(cursors, slots):
            counts[slot] = len(c.points)
        out.append(UniformRegion(region, region.width, tuple(counts)))
        return
    regions = _child_regions(region)
    origins = _child_origins(cx0, cy0, depth)
    for quadrant in range(4):
        children = [c.descend(quadrant, cx0, cy0, depth) for c in cursors]
        ox, oy = origins[quadrant]
        _merge_rec(regions[quadrant], depth + 1, ox, oy,
                   children, slots, q, out)


def merged_regions(forest: LayerForest, s: int, r: int) -> List[UniformRegion]:
    """Uniform subregions of the merged layers ``s+1 .. r`` (speed range ``(v_s, v_r]``)."""
    if not 0 <= s < r <= forest.dom.q:
        raise ValueError(f"invalid layer range ({s}, {r}] for q={forest.dom.q}")
    out: List[UniformRegion] = []
    return merge(forest.layers[s:r], out,
                 layer_ids=range(s + 1, r + 1), q=forest.dom.q)


def uniform_depth_grid(root: QuadNode) -> np.ndarray:
    """Per depth-5 cell: depth of the uniform leaf covering it, 6 if none.

    A layer contributes a uniform virtual leaf below its own uniform leaf,
    so this value is the shallowest depth at which the layer stops forcing
    further subdivision in a merge.
    """
    grid = np.full((GRID_SIDE, GRID_SIDE), MAX_DEPTH + 1, dtype=np.int8)
    for leaf in root.leaves():
        if leaf.is_uniform:
            span = GRID_SIDE >> leaf.depth
            grid[leaf.cx0:leaf.cx0 + span, leaf.cy0:leaf.cy0 + span] = leaf.depth
    return grid


def count_grid(root: QuadNode) -> np.ndarray:
    """Per depth-5 cell object count of a layer."""
    grid = np.zeros(GRID_SIDE * GRID_SIDE, dtype=np.int64)
    cells = root.cells
    if len(cells):
        np.add.at(grid, cells[:, 0] * GRID_SIDE + cells[:, 1], 1)
    return grid.reshape(GRID_SIDE, GRID_SIDE)
