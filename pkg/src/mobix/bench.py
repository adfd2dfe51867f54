"""Benchmark harness: drives the partitioned/unpartitioned systems over
simulated or pre-recorded workloads and reports throughput and latency.

One run is single-threaded end to end so timings stay interpretable.  A
correctness cross-check mode replays all queries through both the
partitioned and the unpartitioned system and demands identical result sets
before any timing is trusted.  The ``MOBIX_THREADS`` environment variable
is reserved for a future parallel fan-out and is currently ignored.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import random
import statistics
import sys
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

from .bx_index import BxConfig, BxTree
from .controller import (PartitionedIndex, Query, format_result_line,
                         parse_query_line, parse_update_line)
from .core import KnnQuery, Mbr, MovingObject, RangeQuery
from .expansion import ExpansionParams
from .tpr_index import TprConfig, TprTree
from .traffic import TrafficSim, grid_network, load_network, load_update_stream

logger = logging.getLogger(__name__)

#: Op stream element: ("u", MovingObject) or ("q", ts, query).
Op = Union[Tuple[str, MovingObject], Tuple[str, float, Query]]


@dataclass
class BenchConfig:
    """One benchmark configuration; defaults follow the experiment table."""

    space_side: float = 10_000.0
    n_objects: int = 100_000
    window_side: float = 400.0
    knn_k: int = 30
    predict_dt: float = 60.0
    node_bytes: int = 4096
    q: int = 50
    t_h: float = 120.0
    index: str = "bx"
    partition: str = "none"
    seed: int = 1
    network: Optional[str] = None
    updates: Optional[str] = None
    queries: Optional[str] = None
    out: Optional[str] = None
    check: bool = False
    dump_latencies: Optional[str] = None
    refresh_period: float = 3600.0
    sim_period: float = 120.0
    query_mix: int = 100          # updates per query
    warmup_frac: float = 0.1
    profile: str = "mixed"        # road-category profile of the generator
    grid_n: int = 6

    def validate(self) -> None:
        if self.index not in ("bx", "tpr"):
            raise ValueError(f"index must be bx or tpr, got {self.index!r}")
        if self.partition not in ("none", "sp"):
            raise ValueError(f"partition must be none or sp, got {self.partition!r}")
        if (self.updates is None) != (self.queries is None):
            raise ValueError("--updates and --queries must be given together")
        if self.updates is not None and self.network is not None:
            raise ValueError("dataset files and the traffic generator are "
                             "mutually exclusive")
        if self.profile not in ("mixed", "bimodal"):
            raise ValueError(f"profile must be mixed or bimodal, got {self.profile!r}")


@dataclass
class MetricsReport:
    """One CSV row worth of results."""

    index: str
    partition: str
    n_objects: int
    seed: int
    updates_applied: int
    throughput_ups: float
    n_range: int
    range_mean: float
    range_median: float
    range_p95: float
    n_knn: int
    knn_mean: float
    knn_median: float
    knn_p95: float
    n_partitions: int
    partition_sizes: str
    predicted_v: float
    partition_seconds: float
    results: Optional[List[object]] = field(default=None, repr=False)

    CSV_FIELDS = ("index,partition,n_objects,seed,updates_applied,throughput_ups,"
                  "n_range,range_mean,range_median,range_p95,"
                  "n_knn,knn_mean,knn_median,knn_p95,"
                  "n_partitions,partition_sizes,predicted_v,partition_seconds")

    def csv_row(self) -> str:
        return (f"{self.index},{self.partition},{self.n_objects},{self.seed},"
                f"{self.updates_applied},{self.throughput_ups:.2f},"
                f"{self.n_range},{self.range_mean:.6g},{self.range_median:.6g},"
                f"{self.range_p95:.6g},{self.n_knn},{self.knn_mean:.6g},"
                f"{self.knn_median:.6g},{self.knn_p95:.6g},{self.n_partitions},"
                f"{self.partition_sizes},{self.predicted_v:.6g},"
                f"{self.partition_seconds:.4f}")


def _p95(samples: Sequence[float]) -> float:
    if not samples:
        return 0.0
    ranked = sorted(samples)
    idx = max(0, math.ceil(0.95 * len(ranked)) - 1)
    return ranked[idx]


def _space(cfg: BenchConfig) -> Mbr:
    return Mbr((0.0, 0.0), (cfg.space_side, cfg.space_side))


def build_system(cfg: BenchConfig, partition: Optional[str] = None) -> PartitionedIndex:
    """A fresh system for the configuration (partition mode overridable)."""
    mode = partition if partition is not None else cfg.partition
    space = _space(cfg)
    if cfg.index == "bx":
        factory = lambda: BxTree(BxConfig(node_bytes=cfg.node_bytes), space)
    else:
        factory = lambda: TprTree(TprConfig(horizon=cfg.t_h,
                                            node_bytes=cfg.node_bytes))
    params = ExpansionParams.from_node_bytes(cfg.node_bytes, cfg.t_h)
    return PartitionedIndex(factory, params=params, space=space, q=cfg.q,
                            refresh_period=cfg.refresh_period,
                            partition_enabled=(mode == "sp"))


def _generate_updates(cfg: BenchConfig) -> List[MovingObject]:
    if cfg.network is not None:
        net = load_network(cfg.network, seed=cfg.seed)
    else:
        categories = ("C1", "C3") if cfg.profile == "bimodal" else ("C1", "C2", "C3")
        net = grid_network(cfg.grid_n, cfg.space_side, categories, seed=cfg.seed)
    split = {"C1": 0.5, "C3": 0.5} if cfg.profile == "bimodal" else None
    sim = TrafficSim(net, cfg.n_objects, seed=cfg.seed, spawn_split=split)
    updates = sim.initial_updates()
    updates.extend(sim.step(cfg.sim_period))
    return updates


def _generate_queries(cfg: BenchConfig, n: int, rng: random.Random,
                      base_ts: List[float]) -> List[Tuple[float, Query]]:
    """Alternating range/kNN queries with seeded geometry."""
    out: List[Tuple[float, Query]] = []
    half = cfg.window_side / 2.0
    for i in range(n):
        ts = base_ts[i]
        cx = rng.uniform(0.0, cfg.space_side)
        cy = rng.uniform(0.0, cfg.space_side)
        if i % 2 == 0:
            window = Mbr((cx - half, cy - half), (cx + half, cy + half))
            out.append((ts, RangeQuery(window, ts + cfg.predict_dt)))
        else:
            out.append((ts, KnnQuery((cx, cy), cfg.knn_k, ts + cfg.predict_dt)))
    return out


def build_ops(cfg: BenchConfig) -> List[Op]:
    """The interleaved op stream: one query per ``query_mix`` updates."""
    if cfg.updates is not None:
        updates = load_update_stream(cfg.updates)
        queries = []
        with open(cfg.queries) as fh:
            for line in fh:
                if line.strip():
                    queries.append(parse_query_line(line))
        ops: List[Op] = [("u", u) for u in updates]
        # splice queries in by timestamp, after updates with equal stamps
        merged: List[Op] = []
        qi = 0
        for op in ops:
            while qi < len(queries) and queries[qi][0] < op[1].t_ref:
                merged.append(("q", queries[qi][0], queries[qi][1]))
                qi += 1
            merged.append(op)
        merged.extend(("q", ts, q) for ts, q in queries[qi:])
        return merged

    updates = _generate_updates(cfg)
    n_queries = max(1, len(updates) // cfg.query_mix)
    positions = [min(len(updates) - 1, (i + 1) * cfg.query_mix - 1)
                 for i in range(n_queries)]
    base_ts = [updates[p].t_ref for p in positions]
    queries = _generate_queries(cfg, n_queries, random.Random(cfg.seed + 1), base_ts)
    ops: List[Op] = []
    qi = 0
    for i, u in enumerate(updates):
        ops.append(("u", u))
        if qi < len(queries) and i == positions[qi]:
            ts, q = queries[qi]
            ops.append(("q", ts, q))
            qi += 1
    return ops


def _warmup_ops(ops: Sequence[Op], frac: float) -> int:
    """Warm-up prefix: at least the initial same-timestamp load burst, so
    partitioning is computed on the fully loaded population."""
    burst_end = 0
    t0 = None
    for i, op in enumerate(ops):
        if op[0] != "u":
            continue
        if t0 is None:
            t0 = op[1].t_ref
        if op[1].t_ref == t0:
            burst_end = i + 1
        else:
            break
    return max(int(len(ops) * frac), burst_end)


def _apply_ops(system: PartitionedIndex, ops: Sequence[Op], cfg: BenchConfig,
               timed: bool, collect: bool):
    """Run the op stream; returns (update_seconds, updates, latencies, results)."""
    warm = _warmup_ops(ops, cfg.warmup_frac)
    update_seconds = 0.0
    n_updates = 0
    latencies: List[Tuple[str, float]] = []
    results: List[object] = []
    now = 0.0
    refreshed = False
    for i, op in enumerate(ops):
        in_warmup = i < warm
        if not in_warmup and not refreshed:
            system.refresh_partitions(now, force=True)
            refreshed = True
        if op[0] == "u":
            o = op[1]
            now = max(now, o.t_ref)
            if timed and not in_warmup:
                t0 = time.perf_counter()
                system.route_update(o, now)
                update_seconds += time.perf_counter() - t0
                n_updates += 1
            else:
                system.route_update(o, now)
                if not in_warmup:
                    n_updates += 1
        else:
            _, ts, q = op
            now = max(now, ts)
            t0 = time.perf_counter()
            if isinstance(q, RangeQuery):
                res = system.query_range(q, now)
            else:
                res = system.query_knn(q, now)
            dt = time.perf_counter() - t0
            if not in_warmup:
                kind = "range" if isinstance(q, RangeQuery) else "knn"
                latencies.append((kind, dt))
            if collect:
                results.append(res)
        system.maybe_refresh(now)
    return update_seconds, n_updates, latencies, results


def cross_check(cfg: BenchConfig, ops: Sequence[Op]) -> int:
    """Replay all queries through sp and none systems; return mismatch count."""
    sp = build_system(cfg, "sp")
    nosp = build_system(cfg, "none")
    _, _, _, res_sp = _apply_ops(sp, ops, cfg, timed=False, collect=True)
    _, _, _, res_no = _apply_ops(nosp, ops, cfg, timed=False, collect=True)
    mismatches = sum(1 for a, b in zip(res_sp, res_no) if a != b)
    if mismatches:
        logger.error("cross-check found %d mismatching query results", mismatches)
    return mismatches


def run_workload(cfg: BenchConfig, collect_results: bool = False) -> MetricsReport:
    """Execute one configuration end to end and report metrics.

    With ``cfg.check`` set, a differential partitioned/unpartitioned replay
    must produce zero result-set differences before the timing run starts.
    """
    cfg.validate()
    ops = build_ops(cfg)
    if cfg.check:
        mismatches = cross_check(cfg, ops)
        if mismatches:
            raise RuntimeError(
                f"correctness cross-check failed: {mismatches} differing results")
    system = build_system(cfg)
    upd_secs, n_updates, latencies, results = _apply_ops(
        system, ops, cfg, timed=True, collect=collect_results)
    rng_lat = [dt for kind, dt in latencies if kind == "range"]
    knn_lat = [dt for kind, dt in latencies if kind == "knn"]
    report = MetricsReport(
        index=cfg.index,
        partition=cfg.partition,
        n_objects=cfg.n_objects,
        seed=cfg.seed,
        updates_applied=n_updates,
        throughput_ups=(n_updates / upd_secs) if upd_secs > 0 else 0.0,
        n_range=len(rng_lat),
        range_mean=statistics.fmean(rng_lat) if rng_lat else 0.0,
        range_median=statistics.median(rng_lat) if rng_lat else 0.0,
        range_p95=_p95(rng_lat),
        n_knn=len(knn_lat),
        knn_mean=statistics.fmean(knn_lat) if knn_lat else 0.0,
        knn_median=statistics.median(knn_lat) if knn_lat else 0.0,
        knn_p95=_p95(knn_lat),
        n_partitions=len(system.partitions),
        partition_sizes="|".join(f"{k[0]}{'' if k[1] is None else k[1]}:{n}"
                                 for k, n in sorted(system.partition_sizes().items(),
                                                    key=lambda kv: str(kv[0]))),
        predicted_v=system.plan.predicted_V if system.plan else 0.0,
        partition_seconds=system.last_partition_seconds,
        results=results if collect_results else None,
    )
    if cfg.dump_latencies:
        with open(cfg.dump_latencies, "w") as fh:
            fh.write("kind,seconds\n")
            for kind, dt in latencies:
                fh.write(f"{kind},{dt:.9f}\n")
    if cfg.out:
        need_header = not os.path.exists(cfg.out) or os.path.getsize(cfg.out) == 0
        with open(cfg.out, "a") as fh:
            if need_header:
                fh.write(MetricsReport.CSV_FIELDS + "\n")
            fh.write(report.csv_row() + "\n")
    return report


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mobix-bench",
        description="Benchmark speed-partitioned moving-object indexes.")
    p.add_argument("--space", type=float, default=10_000.0,
                   help="side of the square space domain, meters")
    p.add_argument("--objects", type=int, default=100_000)
    p.add_argument("--window", type=float, default=400.0,
                   help="range query window side, meters")
    p.add_argument("--knn-k", type=int, default=30)
    p.add_argument("--predict", type=float, default=60.0,
                   help="query predict offset, seconds")
    p.add_argument("--node-size", type=int, default=4096, help="node bytes")
    p.add_argument("--q", type=int, default=50, help="speed domain resolution")
    p.add_argument("--th", type=float, default=120.0, help="max predict time")
    p.add_argument("--index", choices=("bx", "tpr"), default="bx")
    p.add_argument("--partition", choices=("none", "sp"), default="none")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--network", help="road network file for the generator")
    p.add_argument("--updates", help="pre-recorded update stream CSV")
    p.add_argument("--queries", help="pre-recorded query stream CSV")
    p.add_argument("--out", help="append the metrics CSV row to this file")
    p.add_argument("--check", action="store_true",
                   help="differential sp-vs-none correctness gate before timing")
    p.add_argument("--dump-latencies", help="write per-query latencies to this CSV")
    p.add_argument("--refresh-period", type=float, default=3600.0)
    p.add_argument("--sim-period", type=float, default=120.0)
    p.add_argument("--query-mix", type=int, default=100,
                   help="updates per query in the generated stream")
    p.add_argument("--profile", choices=("mixed", "bimodal"), default="mixed")
    p.add_argument("--grid-n", type=int, default=6,
                   help="nodes per side of the synthetic grid network")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    if os.environ.get("MOBIX_THREADS"):
        logger.debug("MOBIX_THREADS is reserved and currently ignored")
    parser = _build_parser()
    args = parser.parse_args(argv)
    cfg = BenchConfig(
        space_side=args.space, n_objects=args.objects, window_side=args.window,
        knn_k=args.knn_k, predict_dt=args.predict, node_bytes=args.node_size,
        q=args.q, t_h=args.th, index=args.index, partition=args.partition,
        seed=args.seed, network=args.network, updates=args.updates,
        queries=args.queries, out=args.out, check=args.check,
        dump_latencies=args.dump_latencies, refresh_period=args.refresh_period,
        sim_period=args.sim_period, query_mix=args.query_mix,
        profile=args.profile, grid_n=args.grid_n)
    try:
        cfg.validate()
    except ValueError as exc:
        parser.error(str(exc))
    report = run_workload(cfg)
    print(MetricsReport.CSV_FIELDS)
    print(report.csv_row())
    return 0


if __name__ == "__main__":
    sys.exit(main())
