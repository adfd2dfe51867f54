"""Predicted search-space expansion of candidate speed ranges.

A tree node holding objects whose fastest member moves at speed ``v`` sweeps
a growing square; the expansion of the node is the time integral of its area
over the query horizon.  Summed over the expected nodes of every uniform
subregion, this is the cost a speed partition pays, and it is what the
partitioner minimizes.

Two evaluation routes are provided: :func:`range_expansion` computes one
speed range over an explicit region list, and :func:`expansion_table`
computes the full ``(s, r]`` cost matrix for a layer forest in one
vectorized pass (same math, used by the optimizer at scale).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy.special import gammaln

from .core import ENTRY_BYTES, SpeedDomain
from .uniformity import (GRID_SIDE, MAX_DEPTH, LayerForest, UniformRegion,
                         count_grid, uniform_depth_grid)


@dataclass(frozen=True)
class ExpansionParams:
    """Node capacity and query horizon used in every expansion estimate."""

    c: int
    t_h: float

    def __post_init__(self) -> None:
        if self.c < 1:
            raise ValueError(f"node capacity c must be >= 1, got {self.c}")
        if self.t_h <= 0:
            raise ValueError(f"horizon t_h must be > 0, got {self.t_h}")

    @classmethod
    def from_node_bytes(cls, node_bytes: int, t_h: float,
                        entry_bytes: int = ENTRY_BYTES) -> "ExpansionParams":
        """Capacity from the storage size of a node (overridable entry size)."""
        return cls(max(1, node_bytes // entry_bytes), t_h)


@dataclass(frozen=True)
class RangeExpansion:
    """Expansion volume of one speed range, and whether the four-quadrant
    second-level split beat the unsplit estimate in aggregate."""

    value: float
    quadrant_split: bool


def node_side(D: float, N: int, c: int) -> float:
    """Expected node side length in a uniform region of side ``D`` with ``N``
    objects at capacity ``c``; one node covers the region when ``N < c``."""
    if D <= 0 or N < 1 or c < 1:
        raise ValueError(f"need D>0, N>=1, c>=1; got D={D}, N={N}, c={c}")
    if N < c:
        return D
    return D * math.sqrt(c / N)


def speed_probs(cum: Sequence[int], c: int) -> List[float]:
    """Distribution of a node's expansion speed over the range's speed values.

    ``cum`` is the ascending cumulative count of objects at or below each
    speed value of the range; the probability that a ``c``-object node's
    maximum speed equals value ``u`` follows from counting node compositions:
    ``p(u) = [C(H_u, c) - C(H_{u-1}, c)] / C(N, c)`` with ``C(a, b) = 0`` for
    ``a < b``.  When fewer than ``c`` objects exist, the single node's
    maximum is the largest speed present, with probability 1.
    """
    if not cum:
        return []
    if any(a > b for a, b in zip(cum, cum[1:])) or cum[0] < 0:
        raise ValueError("cumulative counts must be nonnegative and nondecreasing")
    n = cum[-1]
    if n == 0:
        return [0.0] * len(cum)
    if n < c:
        probs = [0.0] * len(cum)
        last = max(i for i, h in enumerate(cum) if h > (cum[i - 1] if i else 0))
        probs[last] = 1.0
        return probs
    denom = math.comb(n, c)
    probs = []
    prev = 0
    for h in cum:
        num = math.comb(h, c) if h >= c else 0
        probs.append((num - prev) / denom)
        prev = num
    return probs


def nu(d: float, v: float, t_h: float, mode: str = "whole") -> float:
    """Expansion volume of one node of side ``d`` whose content moves at ``v``.

    ``whole`` integrates ``(d + 2vt)^2`` over ``[0, t_h]`` (the node grows in
    all directions); ``quadrant`` integrates ``(2d + vt)^2`` (after the
    four-quadrant direction split the nodes are larger but grow one-sided).
    """
    if mode == "whole":
        return d * d * t_h + 2.0 * d * v * t_h * t_h + (4.0 / 3.0) * v * v * t_h ** 3
    if mode == "quadrant":
        return 4.0 * d * d * t_h + 2.0 * d * v * t_h * t_h + (1.0 / 3.0) * v * v * t_h ** 3
    raise ValueError(f"mode must be 'whole' or 'quadrant', got {mode!r}")


def range_expansion(regions: Sequence[UniformRegion], s: int, r: int,
                    params: ExpansionParams, dom: SpeedDomain) -> RangeExpansion:
    """Predicted expansion of speed range ``(v_s, v_r]`` over uniform regions.

    Per region the node count is ``ceil(N/c)`` and each node contributes the
    smaller of the unsplit and quadrant-split estimates, weighted by the
    expansion-speed distribution.  The split flag records whether the
    quadrant option strictly lowered the total anywhere in the range.
    """
    if not 0 <= s < r <= dom.q:
        raise ValueError(f"invalid speed range ({s}, {r}] for q={dom.q}")
    c, t_h = params.c, params.t_h
    values = dom.values[s:r]
    total_min = 0.0
    total_whole = 0.0
    for reg in regions:
        counts = reg.counts[s:r]
        n = sum(counts)
        if n == 0:
            continue
        cum = []
        acc = 0
        for cnt in counts:
            acc += cnt
            cum.append(acc)
        probs = speed_probs(cum, c)
        d = node_side(reg.side, n, c)
        nodes = -(-n // c)
        vmin = 0.0
        vwhole = 0.0
        for v, p in zip(values, probs):
            if p == 0.0:
                continue
            n1 = nu(d, v, t_h, "whole")
            n2 = nu(d, v, t_h, "quadrant")
            vmin += min(n1, n2) * p
            vwhole += n1 * p
        total_min += nodes * vmin
        total_whole += nodes * vwhole
    return RangeExpansion(total_min, total_min < total_whole)


# --------------------------------------------------------------------------
# Vectorized full cost table
# --------------------------------------------------------------------------

_N_CELLS = GRID_SIDE * GRID_SIDE
_BASES = np.cumsum([0] + [4 ** d for d in range(MAX_DEPTH + 1)])

_lgfact_table = np.zeros(1)


def _lgfact(n_max: int) -> np.ndarray:
    """Cached ``log(n!)`` table; binomial ratios become array gathers."""
    global _lgfact_table
    if len(_lgfact_table) < n_max + 2:
        _lgfact_table = gammaln(np.arange(max(n_max + 2, 1024), dtype=float) + 1.0)
    return _lgfact_table


def _ancestor_ids() -> np.ndarray:
    """(depth, flat cell) -> global region id of the cell's ancestor region."""
    cx, cy = np.meshgrid(np.arange(GRID_SIDE), np.arange(GRID_SIDE), indexing="ij")
    table = np.empty((MAX_DEPTH + 1, _N_CELLS), dtype=np.int64)
    for d in range(MAX_DEPTH + 1):
        shift = MAX_DEPTH - d
        idx = (cx >> shift) * (1 << d) + (cy >> shift)
        table[d] = (_BASES[d] + idx).ravel()
    return table


_ANCESTORS = _ancestor_ids()
_DEPTH_OF_ID = np.concatenate([np.full(4 ** d, d, dtype=np.int64)
                               for d in range(MAX_DEPTH + 1)])


def _region_counts_pyramid(roots) -> np.ndarray:
    """(layer, region id) object counts for every aligned square region."""
    q = len(roots)
    out = np.zeros((q, _BASES[-1]), dtype=np.int64)
    for i, root in enumerate(roots):
        grid = count_grid(root)
        for d in range(MAX_DEPTH + 1):
            side = 1 << d
            block = GRID_SIDE >> d
            sums = grid.reshape(side, block, side, block).sum(axis=(1, 3))
            out[i, _BASES[d]:_BASES[d + 1]] = sums.ravel()
    return out


def expansion_table(forest: LayerForest, params: ExpansionParams
                    ) -> Tuple[np.ndarray, np.ndarray]:
    """Expansion value and split flag for every speed range ``(s, r]``.

    Each range is evaluated over its own merged tiling (the finest division
    of the range's layers); entries match :func:`range_expansion` over
    :func:`mobix.uniformity.merged_regions` up to floating-point noise.
    Returns ``(values, flags)`` arrays of shape ``(q+1, q+1)`` indexed
    ``[s, r]`` with unused entries zero/False.
    """
    dom = forest.dom
    q = dom.q
    c, t_h = params.c, float(params.t_h)
    side = forest.square.width

    udepths = np.stack([uniform_depth_grid(root).ravel() for root in forest.layers])
    rcounts = _region_counts_pyramid(forest.layers)
    d_of_id = side / (1 << _DEPTH_OF_ID).astype(float)
    speeds = np.asarray(dom.values, dtype=float)
    cell_index = np.arange(_N_CELLS)
    lg = _lgfact(int(rcounts[:, 0].sum()))

    values = np.zeros((q + 1, q + 1), dtype=float)
    flags = np.zeros((q + 1, q + 1), dtype=bool)
    t2 = t_h * t_h
    t3 = t2 * t_h

    for s in range(q):
        maxu = None
        for r in range(s + 1, q + 1):
            layer = udepths[r - 1]
            maxu = layer if maxu is None else np.maximum(maxu, layer)
            dstar = np.minimum(maxu, MAX_DEPTH)
            labels = _ANCESTORS[dstar, cell_index]
            ids = np.unique(labels)

            counts = rcounts[s:r, ids]                    # (n_speeds, m)
            n_per = counts.sum(axis=0)
            keep = n_per > 0
            if not keep.any():
                continue
            ids = ids[keep]
            counts = counts[:, keep]
            n_per = n_per[keep]

            big = n_per >= c
            dside = np.where(big, d_of_id[ids] * np.sqrt(c / n_per), d_of_id[ids])
            nodes = -(-n_per // c)

            h = np.cumsum(counts, axis=0)
            probs = np.zeros(h.shape, dtype=float)
            if big.any():
                hb = h[:, big]
                nb = n_per[big]
                logdenom = lg[nb] - lg[nb - c]
                safe = np.maximum(hb, c)
                ratio = np.where(hb >= c,
                                 np.exp(lg[safe] - lg[safe - c] - logdenom), 0.0)
                probs[:, big] = np.diff(ratio, axis=0, prepend=0.0)
            small = ~big
            if small.any():
                csm = counts[:, small]
                last = csm.shape[0] - 1 - np.argmax(csm[::-1] > 0, axis=0)
                psm = np.zeros(csm.shape, dtype=float)
                psm[last, np.arange(csm.shape[1])] = 1.0
                probs[:, small] = psm
            np.clip(probs, 0.0, None, out=probs)

            vs = speeds[s:r, None]
            a = dside * dside * t_h                       # (m,)
            b = 2.0 * t2 * vs * dside[None, :]
            cc = (4.0 / 3.0) * t3 * vs * vs
            nu1 = a[None, :] + b + cc
            nu2 = 4.0 * a[None, :] + b + 0.25 * cc
            numin = np.minimum(nu1, nu2)

            vmin = float((nodes * (numin * probs).sum(axis=0)).sum())
            vwhole = float((nodes * (nu1 * probs).sum(axis=0)).sum())
            values[s, r] = vmin
            flags[s, r] = vmin < vwhole
    return values, flags
