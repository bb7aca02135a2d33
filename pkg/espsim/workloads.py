"""
Synthetic workloads and the core-count scaling experiment.

Every workload builder takes the number of active cores and returns a
``{core_id: program}`` mapping; programs are generators so lock loops can
react to the values they read.  All data lives below 64 KiB.
"""

import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, Generator, List, Optional, Sequence

import numpy as np

from espsim.config import MMIO_TRIGGER, REFERENCE_GEOMEAN, WORD_BYTES, ConfigError, EspSimError
from espsim.core import OpKind, Program, TraceOp
from espsim.soc import Soc, SocConfig

logger = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# Memory layout
# ---------------------------------------------------------------------------
COUNTER_ADDR = 0x100
LOCK_ADDR = 0x200
RANDOM_BASE = 0x1000
GRAPH_ADJ_BASE = 0x4000
GRAPH_DIST_BASE = 0x8000
PRIVATE_BASE = 0xA000
PRIVATE_STRIDE = 0x1000

GRAPH_DEGREE = 4
GRAPH_CHUNK = 8


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def random_mixed(n_cores: int, ops_per_core: int = 1000, *, lines: int = 64,
                 line_bytes: int = 16, seed: int = 0) -> Dict[int, Program]:
    """Loads, stores, AMOs and LR/SC pairs over *lines* shared lines."""
    rng = random.Random(seed)
    words_per_line = line_bytes // WORD_BYTES
    programs = {}
    for core in range(n_cores):
        ops: List[TraceOp] = []
        while len(ops) < ops_per_core:
            addr = RANDOM_BASE + rng.randrange(lines) * line_bytes \
                + rng.randrange(words_per_line) * WORD_BYTES
            roll = rng.random()
            if roll < 0.45:
                ops.append(TraceOp(OpKind.LD, addr))
            elif roll < 0.80:
                ops.append(TraceOp(OpKind.ST, addr, rng.randrange(1 << 16)))
            elif roll < 0.92:
                kind = rng.choice((OpKind.AMOADD, OpKind.AMOSWAP, OpKind.AMOOR, OpKind.AMOMAXU))
                ops.append(TraceOp(kind, addr, rng.randrange(1 << 8)))
            else:
                ops.append(TraceOp(OpKind.LR, addr))
                ops.append(TraceOp(OpKind.SC, addr, rng.randrange(1 << 16)))
        programs[core] = ops[:ops_per_core]
    return programs


def amo_counter(n_cores: int, per_core: int = 1000, *, addr: int = COUNTER_ADDR,
                seed: int = 0) -> Dict[int, Program]:
    """Every core adds 1 to one shared word *per_core* times."""
    return {core: [TraceOp(OpKind.AMOADD, addr, 1)] * per_core for core in range(n_cores)}


def _acquire(lock: int) -> Generator:
    """Test-and-test-and-set acquire with LR/SC."""
    while True:
        held = yield TraceOp(OpKind.LD, lock)
        if held:
            continue
        held = yield TraceOp(OpKind.LR, lock)
        if held:
            continue
        failed = yield TraceOp(OpKind.SC, lock, 1)
        if not failed:
            return


def _locked_increments(iterations: int, lock: int, counter: int) -> Generator:
    for _ in range(iterations):
        yield from _acquire(lock)
        value = yield TraceOp(OpKind.LD, counter)
        yield TraceOp(OpKind.ST, counter, value + 1)
        yield TraceOp(OpKind.ST, lock, 0)


def spinlock(n_cores: int, per_core: int = 1000, *, lock: int = LOCK_ADDR,
             counter: int = COUNTER_ADDR, seed: int = 0) -> Dict[int, Program]:
    """A non-atomic increment of *counter* guarded by an LR/SC spinlock."""
    return {core: _locked_increments(per_core, lock, counter) for core in range(n_cores)}


def _graph_worker(n_vertices: int, neighbours: Sequence[Sequence[int]]) -> Generator:
    while True:
        start = yield TraceOp(OpKind.AMOADD, COUNTER_ADDR, GRAPH_CHUNK)
        if start >= n_vertices:
            return
        for v in range(start, min(start + GRAPH_CHUNK, n_vertices)):
            best = 0
            for k in range(GRAPH_DEGREE):
                yield TraceOp(OpKind.LD, GRAPH_ADJ_BASE + (v * GRAPH_DEGREE + k) * WORD_BYTES)
                dist = yield TraceOp(OpKind.LD, GRAPH_DIST_BASE + neighbours[v][k] * WORD_BYTES)
                best = max(best, dist)
            yield TraceOp(OpKind.ST, GRAPH_DIST_BASE + v * WORD_BYTES, best + 1)


def graph_traversal(n_cores: int, vertices: int = 512, *, seed: int = 0) -> Dict[int, Program]:
    """Frontier-style traversal: cores claim vertex chunks from a shared counter
    with AMOADD, read each vertex's neighbour list and their distances, and
    write the vertex's own distance."""
    rng = random.Random(seed)
    neighbours = [[rng.randrange(vertices) for _ in range(GRAPH_DEGREE)] for _ in range(vertices)]
    return {core: _graph_worker(vertices, neighbours) for core in range(n_cores)}


def _private_work(base: int, items: int) -> Generator:
    for i in range(items):
        addr = base + i * WORD_BYTES
        value = yield TraceOp(OpKind.LD, addr)
        yield TraceOp(OpKind.ST, addr, value + i)


def parallel(n_cores: int, work: int = 2048, *, seed: int = 0) -> Dict[int, Program]:
    """*work* items split evenly over private regions; no sharing at all."""
    share = work // n_cores
    return {core: _private_work(PRIVATE_BASE + core * PRIVATE_STRIDE, share)
            for core in range(n_cores)}


def _serial_worker(items: int) -> Generator:
    yield from _acquire(LOCK_ADDR)
    yield from _private_work(PRIVATE_BASE, items)
    yield TraceOp(OpKind.ST, LOCK_ADDR, 0)


def serial(n_cores: int, work: int = 2048, *, seed: int = 0) -> Dict[int, Program]:
    """*work* items on one shared region, each core's share inside one lock."""
    share = work // n_cores
    return {core: _serial_worker(share) for core in range(n_cores)}


WORKLOADS: Dict[str, Callable[..., Dict[int, Program]]] = {
    "random": random_mixed,
    "amo-counter": amo_counter,
    "spinlock": spinlock,
    "graph": graph_traversal,
    "parallel": parallel,
    "serial": serial,
}


def make_workload(name: str, n_cores: int, *, size: Optional[int] = None,
                  seed: int = 0) -> Dict[int, Program]:
    """Build workload *name* for *n_cores*; *size* overrides its default amount of work."""
    try:
        builder = WORKLOADS[name]
    except KeyError:
        raise ConfigError(f"unknown workload {name!r}; choose from {sorted(WORKLOADS)}") from None
    if n_cores < 1:
        raise ConfigError(f"workload needs at least one core, got {n_cores}")
    if size is None:
        return builder(n_cores, seed=seed)
    return builder(n_cores, size, seed=seed)


def flush_ops(cfg: SocConfig, tile: int) -> List[TraceOp]:
    """Ops that flush *tile*'s L1 and L2, then every LLC slice, in that order."""
    ops = [TraceOp(OpKind.ST, cfg.mmio_addr(tile, MMIO_TRIGGER), 1)]
    ops += [TraceOp(OpKind.ST, cfg.mmio_addr(mem, MMIO_TRIGGER), 1) for mem in cfg.memory_tiles]
    return ops


# ---------------------------------------------------------------------------
# Scaling experiment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScaleRow:
    workload: str
    cores: int
    cycles: int
    normalized: float
    reference: Optional[float]

    def to_record(self) -> dict:
        return {
            "workload": self.workload,
            "cores": self.cores,
            "cycles": self.cycles,
            "normalized": f"{self.normalized:.4f}",
            "reference": "" if self.reference is None else f"{self.reference:.2f}",
        }


def _timed_run(cfg: SocConfig, workload: str, n_cores: int, size: Optional[int],
               seed: int) -> int:
    soc = Soc(cfg, make_workload(workload, n_cores, size=size, seed=seed), seed=seed)
    stats = soc.run()
    if soc.violations:
        raise EspSimError(f"{workload} on {n_cores} cores raised {len(soc.violations)} "
                          f"violations; first: {soc.violations[0]}")
    return stats.cycles


def run_scale(cfg: SocConfig, workload: str, core_counts: Sequence[int], *,
              size: Optional[int] = None, seed: int = 0,
              workers: Optional[int] = None) -> List[ScaleRow]:
    """Execution time per core count, normalised to the 1-core run.

    Raises
    ------
    ConfigError
        If a core count exceeds the processor tiles of *cfg*.
    """
    available = len(cfg.processor_tiles)
    counts = sorted(set(core_counts))
    if not counts or counts[0] < 1:
        raise ConfigError(f"core counts must be positive, got {list(core_counts)}")
    if counts[-1] > available:
        raise ConfigError(f"{counts[-1]} cores requested but the config has {available}")
    runs = sorted(set(counts) | {1})
    with ThreadPoolExecutor(max_workers=workers) as pool:
        cycles = dict(zip(runs, pool.map(
            lambda n: _timed_run(cfg, workload, n, size, seed), runs)))
    base = cycles[1]
    rows = [ScaleRow(workload, n, cycles[n], cycles[n] / base, REFERENCE_GEOMEAN.get(n))
            for n in counts]
    for row in rows:
        logger.info("scale %s: %d cores, %d cycles, normalised %.3f", workload, row.cores,
                    row.cycles, row.normalized)
    return rows


def geomean(values: Sequence[float]) -> float:
    return float(np.exp(np.mean(np.log(np.asarray(values, dtype=float)))))


def geomean_rows(rows: Sequence[ScaleRow]) -> List[ScaleRow]:
    """One ``geomean`` row per core count across every workload in *rows*."""
    by_count: Dict[int, List[float]] = {}
    for row in rows:
        by_count.setdefault(row.cores, []).append(row.normalized)
    return [ScaleRow("geomean", n, 0, geomean(values), REFERENCE_GEOMEAN.get(n))
            for n, values in sorted(by_count.items())]
