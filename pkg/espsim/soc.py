"""
SoC assembly and cycle engine.

``build_soc`` turns a :class:`SocConfig` into a :class:`Soc`: one router per
grid slot, an L2 and core per processor tile, an LLC slice and DRAM channel
per memory tile, accelerators, and the auxiliary tile that relays
interrupts.  Each cycle the mesh delivers packets, every tile ticks in raster
order, and new messages are injected through the proxies.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np

from espsim.accelerator import AcceleratorModel, AcceleratorSpec, CoherenceMode
from espsim.coherence import (
    COHERENCE_PLANES,
    CacheGeometry,
    CohMsg,
    LineState,
    MmioStatus,
    MsgKind,
    line_addr,
    plane_of,
    read_word,
    write_word,
)
from espsim.config import (
    DEFAULT_ALU_LATENCY,
    DEFAULT_L1_HIT_LATENCY,
    DEFAULT_L1D_SETS,
    DEFAULT_L1D_WAYS,
    DEFAULT_L2_HIT_LATENCY,
    DEFAULT_L2_SETS,
    DEFAULT_L2_WAYS,
    DEFAULT_LINE_BYTES,
    DEFAULT_LIVENESS_BOUND,
    DEFAULT_LLC_HIT_LATENCY,
    DEFAULT_LLC_SETS,
    DEFAULT_LLC_WAYS,
    DEFAULT_LR_GRACE,
    DEFAULT_MEM_LATENCY,
    DEFAULT_MEM_SIZE,
    DEFAULT_MMIO_BASE,
    DEFAULT_MSHRS,
    DEFAULT_QUEUE_DEPTH,
    FAULT_KINDS,
    MMIO_STATUS,
    MMIO_TRIGGER,
    MMIO_WINDOW,
    NUM_PLANES,
    WORD_BYTES,
    ConfigError,
    EspSimError,
    ProtocolError,
)
from espsim.core import CoreModel, CoreState, Program
from espsim.l2_cache import L2Controller
from espsim.llc_cache import DramChannel, LlcController
from espsim.monitors import LivenessMonitor, MonitorHub, Violation, ViolationKind
from espsim.noc import Mesh, NocProxy, Packet

logger = logging.getLogger(__name__)

Coord = Tuple[int, int]


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

class TileKind(Enum):
    CPU = "cpu"
    MEM = "mem"
    ACC = "acc"
    AUX = "aux"
    EMPTY = "empty"


@dataclass(frozen=True)
class Latencies:
    l1_hit: int = DEFAULT_L1_HIT_LATENCY
    l2_hit: int = DEFAULT_L2_HIT_LATENCY
    llc_hit: int = DEFAULT_LLC_HIT_LATENCY
    memory: int = DEFAULT_MEM_LATENCY
    alu: int = DEFAULT_ALU_LATENCY


@dataclass(frozen=True)
class SocConfig:
    """Grid, tile assignment, cache geometries and timing of one SoC instance."""

    rows: int
    cols: int
    tiles: Mapping[Coord, TileKind]
    l2_geom: CacheGeometry = CacheGeometry(DEFAULT_LINE_BYTES, DEFAULT_L2_SETS, DEFAULT_L2_WAYS)
    llc_geom: CacheGeometry = CacheGeometry(DEFAULT_LINE_BYTES, DEFAULT_LLC_SETS,
                                            DEFAULT_LLC_WAYS)
    l1d_geom: CacheGeometry = CacheGeometry(DEFAULT_LINE_BYTES, DEFAULT_L1D_SETS,
                                            DEFAULT_L1D_WAYS)
    mem_size: int = DEFAULT_MEM_SIZE
    endianness: str = "little"
    mmio_base: int = DEFAULT_MMIO_BASE
    e_grants: bool = True
    mshrs: int = DEFAULT_MSHRS
    lr_grace: int = DEFAULT_LR_GRACE
    queue_depth: int = DEFAULT_QUEUE_DEPTH
    latency: Latencies = Latencies()
    accelerators: Mapping[Coord, AcceleratorSpec] = field(default_factory=dict)

    # ----- Grid helpers -----

    @property
    def line_bytes(self) -> int:
        return self.l2_geom.line_bytes

    def tile_index(self, coord: Coord) -> int:
        return coord[1] * self.cols + coord[0]

    def coord_of(self, index: int) -> Coord:
        return index % self.cols, index // self.cols

    def tiles_of(self, kind: TileKind) -> List[int]:
        return sorted(self.tile_index(c) for c, k in self.tiles.items() if k is kind)

    @property
    def processor_tiles(self) -> List[int]:
        return self.tiles_of(TileKind.CPU)

    @property
    def memory_tiles(self) -> List[int]:
        return self.tiles_of(TileKind.MEM)

    @property
    def aux_tile(self) -> int:
        return self.tiles_of(TileKind.AUX)[0]

    def kind_at(self, index: int) -> TileKind:
        return self.tiles[self.coord_of(index)]

    def mmio_addr(self, tile: int, offset: int = MMIO_TRIGGER) -> int:
        """Address of a register in *tile*'s MMIO window."""
        return self.mmio_base + tile * MMIO_WINDOW + offset

    def partition(self, mem_tile: int) -> Tuple[int, int]:
        tiles = self.memory_tiles
        size = self.mem_size // len(tiles)
        i = tiles.index(mem_tile)
        return i * size, (i + 1) * size

    # ----- Validation -----

    def validate(self) -> None:
        """Raise :class:`ConfigError` describing the first broken rule."""
        if self.rows < 1 or self.cols < 1:
            raise ConfigError(f"grid must be at least 1x1, got {self.rows}x{self.cols}")
        expected = {(x, y) for y in range(self.rows) for x in range(self.cols)}
        missing = sorted(expected - set(self.tiles))
        extra = sorted(set(self.tiles) - expected)
        if missing:
            raise ConfigError(f"grid slots without a tile: {missing}")
        if extra:
            raise ConfigError(f"tiles outside the {self.cols}x{self.rows} grid: {extra}")
        n_mem = len(self.memory_tiles)
        if n_mem < 1:
            raise ConfigError("at least one memory tile is required")
        if n_mem & (n_mem - 1):
            raise ConfigError(f"memory tile count must be a power of two, got {n_mem}")
        n_aux = len(self.tiles_of(TileKind.AUX))
        if n_aux != 1:
            raise ConfigError(f"exactly one auxiliary tile is required, got {n_aux}")
        lines = {self.l1d_geom.line_bytes, self.l2_geom.line_bytes, self.llc_geom.line_bytes}
        if len(lines) != 1:
            raise ConfigError(f"L1D, L2 and LLC line sizes differ: {sorted(lines)}")
        if self.mem_size <= 0 or self.mem_size % (n_mem * self.line_bytes):
            raise ConfigError(
                f"mem_size {self.mem_size:#x} must split into {n_mem} line-aligned partitions"
            )
        if self.mmio_base < self.mem_size:
            raise ConfigError(f"mmio_base {self.mmio_base:#x} overlaps memory")
        if self.endianness not in ("little", "big"):
            raise ConfigError(f"unknown endianness {self.endianness!r}")
        if self.mshrs < 2:
            raise ConfigError(f"at least 2 MSHRs are required, got {self.mshrs}")
        if self.queue_depth < 1:
            raise ConfigError(f"queue_depth must be positive, got {self.queue_depth}")
        if self.lr_grace < 0:
            raise ConfigError(f"lr_grace must be non-negative, got {self.lr_grace}")
        acc_coords = {c for c, k in self.tiles.items() if k is TileKind.ACC}
        if set(self.accelerators) != acc_coords:
            raise ConfigError(
                f"accelerator sections {sorted(self.accelerators)} do not match "
                f"accelerator tiles {sorted(acc_coords)}"
            )
        for spec in self.accelerators.values():
            for desc in spec.job:
                desc.check(self.line_bytes, self.mem_size)


def partition_target(addr: int, mem_tiles: List[int], mem_size: int) -> int:
    """Home memory tile of *addr*: equal contiguous partitions in address order."""
    if not 0 <= addr < mem_size:
        raise ConfigError(f"address {addr:#x} outside memory of {mem_size:#x} bytes")
    return mem_tiles[addr * len(mem_tiles) // mem_size]


# ---------------------------------------------------------------------------
# Tiles
# ---------------------------------------------------------------------------

class _Tile:
    kind = TileKind.EMPTY

    def __init__(self, index: int, cfg: SocConfig) -> None:
        self.index = index
        self.cfg = cfg
        self.outbox: list = []

    def _mmio_offset(self, msg: CohMsg) -> int:
        return (msg.addr - self.cfg.mmio_base) % MMIO_WINDOW

    def _mmio_reply(self, msg: CohMsg, value: int = 0,
                    status: MmioStatus = MmioStatus.OK) -> None:
        self.outbox.append(CohMsg(MsgKind.MMIO_RSP, msg.addr, self.index, msg.src,
                                  value=value, status=status))

    def receive(self, msg: CohMsg, cycle: int) -> None:
        logger.warning("tile %d (%s) dropped %s", self.index, self.kind.value, msg)
        if msg.kind in (MsgKind.MMIO_READ, MsgKind.MMIO_WRITE):
            self._mmio_reply(msg, status=MmioStatus.ERROR)

    def tick(self, cycle: int) -> None:
        pass

    def drain(self, cycle: int) -> list:
        out, self.outbox = self.outbox, []
        return out

    def idle(self) -> bool:
        return not self.outbox


class ProcessorTile(_Tile):
    kind = TileKind.CPU

    def __init__(self, index: int, cfg: SocConfig, l2: L2Controller, core: CoreModel) -> None:
        super().__init__(index, cfg)
        self.l2 = l2
        self.core = core

    def receive(self, msg: CohMsg, cycle: int) -> None:
        self.l2.now = cycle
        kind = msg.kind
        if plane_of(msg) in COHERENCE_PLANES:
            self.l2.handle_message(msg)
        elif kind is MsgKind.MMIO_RSP:
            self.core.mmio_response(msg)
        elif kind is MsgKind.IRQ:
            self.core.interrupt()
        elif kind is MsgKind.MMIO_WRITE and self._mmio_offset(msg) == MMIO_TRIGGER:
            if self.l2.flushing:
                self._mmio_reply(msg, status=MmioStatus.ERROR)
            else:
                self.l2.start_flush(lambda: self._mmio_reply(msg))
        elif kind is MsgKind.MMIO_READ and self._mmio_offset(msg) == MMIO_STATUS:
            self._mmio_reply(msg, value=0 if self.l2.flushing else 1)
        else:
            super().receive(msg, cycle)

    def tick(self, cycle: int) -> None:
        self.l2.tick(cycle)
        self.core.step(cycle)

    def drain(self, cycle: int) -> list:
        return self.l2.drain() + self.core.drain() + super().drain(cycle)

    def idle(self) -> bool:
        return self.core.done and self.l2.idle() and not self.outbox


class MemoryTile(_Tile):
    kind = TileKind.MEM

    def __init__(self, index: int, cfg: SocConfig, llc: LlcController, dram: DramChannel) -> None:
        super().__init__(index, cfg)
        self.llc = llc
        self.dram = dram

    def receive(self, msg: CohMsg, cycle: int) -> None:
        self.llc.now = cycle
        kind = msg.kind
        if kind in (MsgKind.DMA_READ_BURST, MsgKind.DMA_WRITE_BURST) and msg.bypass:
            self.dram.handle_burst(msg, cycle)
        elif kind is MsgKind.MMIO_WRITE and self._mmio_offset(msg) == MMIO_TRIGGER:
            self.llc.start_flush(lambda: self._mmio_reply(msg))
        elif kind is MsgKind.MMIO_READ and self._mmio_offset(msg) == MMIO_STATUS:
            self._mmio_reply(msg, value=0 if self.llc.flush_busy else 1)
        elif kind in (MsgKind.MMIO_READ, MsgKind.MMIO_WRITE):
            super().receive(msg, cycle)
        else:
            self.llc.handle_message(msg)

    def tick(self, cycle: int) -> None:
        self.llc.tick(cycle)

    def drain(self, cycle: int) -> list:
        return self.llc.drain(cycle) + self.dram.drain(cycle) + super().drain(cycle)

    def idle(self) -> bool:
        return self.llc.idle() and not self.dram.outbox and not self.outbox


class AcceleratorTile(_Tile):
    kind = TileKind.ACC

    def __init__(self, index: int, cfg: SocConfig, acc: AcceleratorModel) -> None:
        super().__init__(index, cfg)
        self.acc = acc
        self.l2 = acc.l2

    def receive(self, msg: CohMsg, cycle: int) -> None:
        kind = msg.kind
        if self.l2 is not None:
            self.l2.now = cycle
        if kind is MsgKind.DMA_RSP:
            self.acc.receive(msg, cycle)
        elif plane_of(msg) in COHERENCE_PLANES and self.l2 is not None:
            self.l2.handle_message(msg)
        elif kind is MsgKind.MMIO_WRITE and self._mmio_offset(msg) == MMIO_TRIGGER:
            if self.acc.start(msg.src, cycle):
                self._mmio_reply(msg, status=MmioStatus.WAIT_IRQ)
            else:
                self._mmio_reply(msg, status=MmioStatus.ERROR)
        elif kind is MsgKind.MMIO_READ and self._mmio_offset(msg) == MMIO_STATUS:
            self._mmio_reply(msg, value=0 if self.acc.running else 1)
        else:
            super().receive(msg, cycle)

    def tick(self, cycle: int) -> None:
        if self.l2 is not None:
            self.l2.tick(cycle)
        self.acc.tick(cycle)

    def drain(self, cycle: int) -> list:
        out = self.l2.drain() if self.l2 is not None else []
        return out + self.acc.drain() + super().drain(cycle)

    def idle(self) -> bool:
        l2_idle = self.l2 is None or self.l2.idle()
        return self.acc.idle() and l2_idle and not self.outbox


class AuxTile(_Tile):
    """Relays accelerator completion interrupts to the invoking processor tile."""

    kind = TileKind.AUX

    def __init__(self, index: int, cfg: SocConfig) -> None:
        super().__init__(index, cfg)
        self.irqs = 0

    def receive(self, msg: CohMsg, cycle: int) -> None:
        if msg.kind is MsgKind.IRQ:
            self.irqs += 1
            self.outbox.append(CohMsg(MsgKind.IRQ, 0, self.index, msg.req, req=msg.req))
        else:
            super().receive(msg, cycle)


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------

@dataclass
class SimStats:
    cycles: int
    retired: Tuple[int, ...]
    l1_hits: int
    l1_misses: int
    l2_hits: int
    l2_misses: int
    llc_hits: int
    llc_misses: int
    v_hits: int
    mem_reads: int
    mem_writes: int
    plane_packets: Tuple[int, ...]
    plane_latency: Tuple[float, ...]
    make_invalid_sent: int
    make_invalid_ignored: int
    icache_invals: int
    sc_success: int
    sc_failure: int
    l2_flushes: int
    llc_flushes: int
    irqs: int
    violations: int

    def to_record(self) -> dict:
        """Flat, deterministic record for the stats CSV."""
        record = {"cycles": self.cycles}
        for i, n in enumerate(self.retired):
            record[f"retired_c{i}"] = n
        for name in ("l1_hits", "l1_misses", "l2_hits", "l2_misses", "llc_hits", "llc_misses",
                     "v_hits", "mem_reads", "mem_writes"):
            record[name] = getattr(self, name)
        for plane in range(NUM_PLANES):
            record[f"packets_p{plane}"] = self.plane_packets[plane]
            record[f"latency_p{plane}"] = f"{self.plane_latency[plane]:.3f}"
        for name in ("make_invalid_sent", "make_invalid_ignored", "icache_invals", "sc_success",
                     "sc_failure", "l2_flushes", "llc_flushes", "irqs", "violations"):
            record[name] = getattr(self, name)
        return record


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------

class Soc:
    """A built SoC instance; deterministic given (config, programs, seed)."""

    def __init__(
        self,
        cfg: SocConfig,
        programs: Optional[Mapping[int, Program]] = None,
        *,
        seed: int = 0,
        faults=(),
        start_skew: Optional[Mapping[int, int]] = None,
        initial_memory: Optional[Mapping[int, int]] = None,
        liveness_bound: int = DEFAULT_LIVENESS_BOUND,
        noc_trace: Optional[Callable[[Packet, int], None]] = None,
    ) -> None:
        cfg.validate()
        unknown = set(faults) - set(FAULT_KINDS)
        if unknown:
            raise ConfigError(f"unknown fault kinds {sorted(unknown)}; choose from {FAULT_KINDS}")
        self.cfg = cfg
        self.faults = frozenset(faults)
        self.cycle = 0
        self.liveness = LivenessMonitor(liveness_bound)
        self.stopped: Optional[Violation] = None

        programs = dict(programs or {})
        cpus = cfg.processor_tiles
        if set(programs) - set(range(len(cpus))):
            raise ConfigError(
                f"programs for cores {sorted(set(programs) - set(range(len(cpus))))} "
                f"but only {len(cpus)} processor tiles"
            )
        start_skew = dict(start_skew or {})

        self.memory = np.zeros(cfg.mem_size, dtype=np.uint8)
        initial = {}
        for addr, value in (initial_memory or {}).items():
            word = addr - addr % WORD_BYTES
            self._poke(word, value)
            initial[word] = value & 0xFFFF_FFFF
        self.hub = MonitorHub(initial)

        mem_tiles = cfg.memory_tiles
        self.home_of = lambda addr: partition_target(addr, mem_tiles, cfg.mem_size)
        self.mesh = Mesh(cfg.cols, cfg.rows, depth=cfg.queue_depth, seed=seed,
                         faults=self.faults, trace=noc_trace)
        self.proxy = NocProxy(self.mesh, self.home_of, self.mmio_target)

        self.tiles: Dict[int, _Tile] = {}
        self.cores: List[CoreModel] = []
        self.llcs: List[LlcController] = []
        self.accelerators: List[AcceleratorModel] = []
        lat = cfg.latency
        for index in range(cfg.rows * cfg.cols):
            kind = cfg.kind_at(index)
            if kind is TileKind.CPU:
                core_id = len(self.cores)
                l2 = self._make_l2(index)
                core = CoreModel(
                    core_id, index, programs.get(core_id, []), l2, cfg.l1d_geom,
                    endianness=cfg.endianness, mmio_base=cfg.mmio_base,
                    l1_hit_latency=lat.l1_hit, alu_latency=lat.alu,
                    start=start_skew.get(core_id, 0), observer=self.hub,
                )
                self.cores.append(core)
                self.tiles[index] = ProcessorTile(index, cfg, l2, core)
            elif kind is TileKind.MEM:
                llc = LlcController(
                    index, cfg.llc_geom, self.memory, cfg.partition(index),
                    endianness=cfg.endianness, mem_latency=lat.memory,
                    hit_latency=lat.llc_hit, e_grants=cfg.e_grants,
                    faults=self.faults, observer=self.hub,
                )
                dram = DramChannel(index, self.memory, llc, cfg.line_bytes, cfg.endianness,
                                   lat.memory, self.hub)
                self.llcs.append(llc)
                self.tiles[index] = MemoryTile(index, cfg, llc, dram)
            elif kind is TileKind.ACC:
                spec = cfg.accelerators[cfg.coord_of(index)]
                l2 = self._make_l2(index) if spec.mode is CoherenceMode.FULLY_COHERENT else None
                acc = AcceleratorModel(index, spec, cfg.line_bytes, self.home_of, cfg.aux_tile,
                                       l2=l2, endianness=cfg.endianness, observer=self.hub)
                self.accelerators.append(acc)
                self.tiles[index] = AcceleratorTile(index, cfg, acc)
            elif kind is TileKind.AUX:
                self.tiles[index] = AuxTile(index, cfg)
        # Empty slots are router-only pass-through tiles.
        self._order = [self.tiles[i] for i in sorted(self.tiles)]
        self._inject: Dict[int, deque] = {i: deque() for i in self.tiles}
        logger.info("built %dx%d SoC: %d cores, %d memory tiles, %d accelerators",
                    cfg.cols, cfg.rows, len(self.cores), len(self.llcs), len(self.accelerators))

    def _make_l2(self, index: int) -> L2Controller:
        cfg = self.cfg
        return L2Controller(index, cfg.l2_geom, self.home_of, mshrs=cfg.mshrs,
                            endianness=cfg.endianness, lr_grace=cfg.lr_grace,
                            hit_latency=cfg.latency.l2_hit, observer=self.hub)

    # ------------------------------------------------------------------
    # Address maps
    # ------------------------------------------------------------------

    def mmio_target(self, addr: int) -> Optional[int]:
        """Tile owning the MMIO register at *addr*, or None if unmapped."""
        cfg = self.cfg
        rel = addr - cfg.mmio_base
        if rel < 0 or rel >= cfg.rows * cfg.cols * MMIO_WINDOW:
            return None
        tile, offset = divmod(rel, MMIO_WINDOW)
        if offset not in (MMIO_TRIGGER, MMIO_STATUS):
            return None
        if cfg.kind_at(tile) not in (TileKind.CPU, TileKind.MEM, TileKind.ACC):
            return None
        return tile

    # ------------------------------------------------------------------
    # Running
    # ------------------------------------------------------------------

    @property
    def violations(self) -> List[Violation]:
        return self.hub.violations

    def quiescent(self) -> bool:
        return (all(t.idle() for t in self._order) and self.mesh.idle()
                and not any(self._inject.values()))

    def step(self) -> None:
        """Advance one cycle."""
        cycle = self.cycle
        for pkt in self.mesh.step(cycle):
            msg = NocProxy.eject(pkt)
            self.tiles[msg.dst].receive(msg, cycle)
        for tile in self._order:
            tile.tick(cycle)
        for tile in self._order:
            queue = self._inject[tile.index]
            queue.extend(tile.drain(cycle))
            while queue:
                if not self.mesh.inject(self.proxy.inject(queue[0], cycle)):
                    break
                queue.popleft()
        self.cycle += 1

    def _check_liveness(self) -> Optional[Violation]:
        progress = {}
        for core in self.cores:
            if core.done or core.state is CoreState.WAIT_IRQ or self.cycle < core.start:
                continue
            progress[f"core{core.core_id}"] = core.last_progress
        for acc in self.accelerators:
            if acc.running:
                progress[f"acc@{acc.tile}"] = acc.last_progress
        stuck = self.liveness.stuck(progress, self.cycle)
        if not stuck:
            return None
        awaiting = any(
            m.pending is not LineState.XMW
            for tile in self._order if getattr(tile, "l2", None) is not None
            for m in tile.l2.mshrs.values()
        ) or any(not llc.idle() for llc in self.llcs)
        return self.liveness.classify(awaiting, self.cycle, stuck)

    def run(self, max_cycles: Optional[int] = None) -> "SimStats":
        """Run to quiescence, a fatal violation, or *max_cycles*."""
        while True:
            try:
                self.step()
            except ProtocolError as exc:
                self._stop(Violation(ViolationKind.PROTOCOL, self.cycle, exc.addr, str(exc)))
                break
            if self.quiescent():
                break
            if self.cycle % 64 == 0:
                stalled = self._check_liveness()
                if stalled is not None:
                    self._stop(stalled)
                    break
            if max_cycles is not None and self.cycle >= max_cycles:
                logger.warning("stopped at max_cycles=%d before quiescence", max_cycles)
                break
        stats = self.stats()
        logger.info("run finished at cycle %d with %d violations", self.cycle, stats.violations)
        return stats

    def _stop(self, violation: Violation) -> None:
        self.stopped = violation
        self.hub.add(violation)

    # ------------------------------------------------------------------
    # Debug views
    # ------------------------------------------------------------------

    def _poke(self, addr: int, value: int) -> None:
        lb = self.cfg.line_bytes
        line = line_addr(addr, lb)
        data = write_word(self.memory[line:line + lb].tobytes(), addr - line, value,
                          self.cfg.endianness)
        self.memory[line:line + lb] = np.frombuffer(data, dtype=np.uint8)

    def dram_word(self, addr: int) -> int:
        lb = self.cfg.line_bytes
        line = line_addr(addr, lb)
        return read_word(self.memory[line:line + lb].tobytes(), addr - line, self.cfg.endianness)

    def peek_word(self, addr: int) -> int:
        """Coherent value of a word: owning L2, then writeback in flight, then LLC, then DRAM."""
        lb = self.cfg.line_bytes
        line = line_addr(addr, lb)
        offset = addr - line
        l2s = [t.l2 for t in self._order if getattr(t, "l2", None) is not None]
        for l2 in l2s:
            entry = l2.lookup(line)
            if entry is not None and entry.state in (LineState.E, LineState.M):
                return read_word(entry.data, offset, self.cfg.endianness)
        for l2 in l2s:
            mshr = l2.mshrs.get(line)
            if mshr is not None and mshr.pending is LineState.MI_A and mshr.dirty \
                    and not mshr.surrendered:
                return read_word(mshr.data, offset, self.cfg.endianness)
        llc = self.llcs[self.cfg.memory_tiles.index(self.home_of(line))]
        data = llc.line_data(line)
        if data is not None:
            return read_word(data, offset, self.cfg.endianness)
        return self.dram_word(addr)

    def stats(self) -> SimStats:
        l1 = [c.l1.stats for c in self.cores]
        l2s = [t.l2.stats for t in self._order if getattr(t, "l2", None) is not None]
        llc = [x.stats for x in self.llcs]
        dram = [t.dram.stats for t in self._order if isinstance(t, MemoryTile)]
        noc = self.mesh.stats
        return SimStats(
            cycles=self.cycle,
            retired=tuple(c.retired for c in self.cores),
            l1_hits=sum(s.hits for s in l1),
            l1_misses=sum(s.misses for s in l1),
            l2_hits=sum(s.hits for s in l2s),
            l2_misses=sum(s.misses for s in l2s),
            llc_hits=sum(s.hits for s in llc),
            llc_misses=sum(s.misses for s in llc),
            v_hits=sum(s.v_hits for s in llc),
            mem_reads=sum(s.mem_reads for s in llc) + sum(d.reads for d in dram),
            mem_writes=sum(s.mem_writes for s in llc) + sum(d.writes for d in dram),
            plane_packets=tuple(int(n) for n in noc.packets),
            plane_latency=tuple(float(x) for x in noc.mean_latency()),
            make_invalid_sent=sum(s.make_invalid for s in l2s),
            make_invalid_ignored=sum(s.inval_ignored for s in l1),
            icache_invals=sum(s.icache_invals for s in l1),
            sc_success=sum(c.stats.sc_success for c in self.cores),
            sc_failure=sum(c.stats.sc_failure for c in self.cores),
            l2_flushes=sum(s.flushes for s in l2s),
            llc_flushes=sum(s.flushes for s in llc),
            irqs=sum(t.irqs for t in self._order if isinstance(t, AuxTile)),
            violations=len(self.violations),
        )


def build_soc(cfg: SocConfig, programs: Optional[Mapping[int, Program]] = None,
              **options) -> Soc:
    """Validate *cfg* and instantiate the simulator; options go to :class:`Soc`."""
    try:
        return Soc(cfg, programs, **options)
    except ConfigError:
        raise
    except EspSimError as exc:
        raise ConfigError(str(exc)) from exc
