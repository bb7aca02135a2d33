"""
LLC slice and directory controller of a memory tile, plus the tile's DRAM
channel for non-coherent DMA.

The directory is blocking: while a line has an open transaction (invalidation
round, owner forward, recall or memory fetch) further requests for it queue
in arrival order.  DMA bursts are accepted whole and processed one line per
cycle; every line they touch is left in V.
"""

import heapq
import logging
from collections import OrderedDict, deque
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Callable, Dict, FrozenSet, Optional, Tuple

import numpy as np

from espsim.coherence import (
    CacheGeometry,
    CohMsg,
    DirEntry,
    DirState,
    LineState,
    MsgKind,
    read_word,
    set_index,
)
from espsim.config import (
    DEFAULT_LLC_HIT_LATENCY,
    DEFAULT_MEM_LATENCY,
    WORD_BYTES,
    ProtocolError,
)
from espsim.monitors import Observer

logger = logging.getLogger(__name__)


class TxnKind(Enum):
    MEM = "mem"
    GET_S = "GetS"
    GET_M = "GetM"
    RECALL_DMA = "recall-dma"
    RECALL_EVICT = "recall-evict"


@dataclass
class LlcTxn:
    kind: TxnKind
    requester: int
    acks: int = 0
    owner: Optional[int] = None
    request: Optional[MsgKind] = None

    def snapshot(self) -> tuple:
        return (self.kind, self.requester, self.acks, self.owner, self.request)


@dataclass
class LlcLine:
    dir: DirEntry
    data: bytes


@dataclass
class DmaJob:
    msg: CohMsg
    lines: list
    index: int = 0
    ready: int = 0

    @property
    def is_write(self) -> bool:
        return self.msg.kind is MsgKind.DMA_WRITE_BURST


@dataclass
class LlcStats:
    hits: int = 0
    misses: int = 0
    v_hits: int = 0
    mem_reads: int = 0
    mem_writes: int = 0
    forwards: int = 0
    invalidations: int = 0
    recalls: int = 0
    evictions: int = 0
    stale_puts: int = 0
    dma_lines: int = 0
    flushes: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def dma_lines(base: int, length: int, line_bytes: int) -> list:
    return list(range(base, base + length, line_bytes))


class LlcController:
    """One LLC slice with its directory.

    Parameters
    ----------
    tile : int
        Raster index of the memory tile.
    geom : CacheGeometry
        Slice geometry.
    memory : numpy.ndarray
        The whole backing store (``uint8``); this slice only touches its
        partition.
    partition : (int, int)
        Half-open address range served by this slice.
    faults : frozenset of str
        Seeded protocol faults: ``duplicate-m`` and ``skip-invack``.
    """

    def __init__(
        self,
        tile: int,
        geom: CacheGeometry,
        memory: np.ndarray,
        partition: Tuple[int, int],
        *,
        endianness: str = "little",
        mem_latency: int = DEFAULT_MEM_LATENCY,
        hit_latency: int = DEFAULT_LLC_HIT_LATENCY,
        e_grants: bool = True,
        faults: FrozenSet[str] = frozenset(),
        observer: Optional[Observer] = None,
    ) -> None:
        self.tile = tile
        self.geom = geom
        self.memory = memory
        self.partition = partition
        self.endianness = endianness
        self.mem_latency = mem_latency
        self.hit_latency = hit_latency
        self.e_grants = e_grants
        self.faults = frozenset(faults)
        self.observer = observer or Observer()

        self.lines: Dict[int, LlcLine] = {}
        self.sets: Dict[int, OrderedDict] = {}
        self.outbox: list = []
        self.stats = LlcStats()
        self.now = 0

        self._queues: Dict[int, deque] = {}
        self._txns: Dict[int, LlcTxn] = {}
        self._mem_waits: list = []
        self._alloc_wait: list = []
        self._dma: deque = deque()
        self._flush_waits: list = []
        self._stray_acks: Dict[tuple, int] = {}
        self._seq = 0

    # ------------------------------------------------------------------
    # Inspection
    # ------------------------------------------------------------------

    def dir_state(self, addr: int) -> DirState:
        entry = self.lines.get(addr - addr % self.geom.line_bytes)
        return entry.dir.effective if entry else DirState.I

    def line_data(self, addr: int) -> Optional[bytes]:
        entry = self.lines.get(addr - addr % self.geom.line_bytes)
        return entry.data if entry else None

    def idle(self) -> bool:
        return not (self._txns or self._queues or self._dma or self._mem_waits
                    or self._flush_waits or self._alloc_wait or self.outbox)

    @property
    def flush_busy(self) -> bool:
        return bool(self._flush_waits)

    def check_directory(self) -> list:
        """Structural invariant failures as ``(line, description)`` pairs."""
        bad = []
        for line, entry in self.lines.items():
            problem = entry.dir.check()
            if problem:
                bad.append((line, problem))
        return bad

    def snapshot(self) -> tuple:
        return (
            tuple((line, e.dir.snapshot(), e.data) for line, e in sorted(self.lines.items())),
            tuple((line, tuple(q)) for line, q in sorted(self._queues.items())),
            tuple((line, t.snapshot()) for line, t in sorted(self._txns.items())),
            tuple(sorted(self._stray_acks.items())),
            tuple(self._alloc_wait),
            tuple(msg for _, _, msg in self.outbox),
        )

    def drain(self, cycle: Optional[int] = None) -> list:
        """Messages whose delay has elapsed by *cycle* (all of them if None)."""
        if cycle is None:
            out = [msg for _, _, msg in sorted(self.outbox, key=lambda t: (t[0], t[1]))]
            self.outbox = []
            return out
        ready = sorted((t for t in self.outbox if t[0] <= cycle), key=lambda t: (t[0], t[1]))
        self.outbox = [t for t in self.outbox if t[0] > cycle]
        return [msg for _, _, msg in ready]

    # ------------------------------------------------------------------
    # Per-cycle housekeeping
    # ------------------------------------------------------------------

    def tick(self, cycle: int) -> None:
        self.now = cycle
        while self._mem_waits and self._mem_waits[0][0] <= cycle:
            _, line = heapq.heappop(self._mem_waits)
            self._fetch_complete(line)
        waiting, self._alloc_wait = self._alloc_wait, []
        for line in waiting:
            self._kick(line)
        self._advance_dma()
        done = [w for w in self._flush_waits if w[0] <= cycle]
        self._flush_waits = [w for w in self._flush_waits if w[0] > cycle]
        for _, on_done in done:
            if on_done is not None:
                on_done()

    # ------------------------------------------------------------------
    # Message entry
    # ------------------------------------------------------------------

    def handle_message(self, msg: CohMsg) -> None:
        kind = msg.kind
        if kind in (MsgKind.GET_S, MsgKind.GET_M, MsgKind.PUT_S, MsgKind.PUT_M):
            self._check_partition(msg.addr)
            self._queues.setdefault(msg.addr, deque()).append(msg)
            self._kick(msg.addr)
        elif kind in (MsgKind.INV_ACK, MsgKind.DATA_RSP):
            self._handle_response(msg)
        elif kind in (MsgKind.DMA_READ_BURST, MsgKind.DMA_WRITE_BURST) and not msg.bypass:
            self._check_partition(msg.addr)
            self._check_partition(msg.addr + msg.value - 1)
            self._dma.append(DmaJob(msg, dma_lines(msg.addr, msg.value, self.geom.line_bytes)))
        else:
            raise ProtocolError(f"LLC cannot handle {kind.value}", addr=msg.addr, tile=self.tile)

    def _check_partition(self, addr: int) -> None:
        lo, hi = self.partition
        if not lo <= addr < hi:
            raise ProtocolError(
                f"address {addr:#x} routed to slice [{lo:#x}, {hi:#x})", addr=addr, tile=self.tile
            )

    def _kick(self, line: int) -> None:
        queue = self._queues.get(line)
        while queue and line not in self._txns:
            if not self._process(queue[0]):
                if line not in self._alloc_wait:
                    self._alloc_wait.append(line)
                return
            queue.popleft()
        if queue is not None and not queue:
            del self._queues[line]

    # ------------------------------------------------------------------
    # Requests
    # ------------------------------------------------------------------

    def _process(self, msg: CohMsg) -> bool:
        line, src, kind = msg.addr, msg.src, msg.kind
        entry = self.lines.get(line)
        if kind in (MsgKind.PUT_S, MsgKind.PUT_M):
            self._handle_put(msg, entry)
            return True

        if entry is None:
            entry = self._allocate(line)
            if entry is None:
                return False
            self.stats.misses += 1
            self._fetch(line, entry, kind, src)
            return True

        self._touch(line)
        self.stats.hits += 1
        d = entry.dir
        if d.state is DirState.V:
            self.stats.v_hits += 1
            self._grant(line, entry, kind, src)
        elif d.state is DirState.S:
            if kind is MsgKind.GET_S:
                d.sharers.add(src)
                self._data(line, entry, src, LineState.S)
                return True
            others = sorted(d.sharers - {src})
            if not others:
                self._grant(line, entry, kind, src)
                return True
            for tile in others:
                self._send(MsgKind.INV, line, tile, req=src)
            self.stats.invalidations += len(others)
            if "skip-invack" in self.faults:
                logger.warning("fault skip-invack: granting %#x to %d before acks", line, src)
                for tile in others:
                    self._stray_acks[(line, tile)] = self._stray_acks.get((line, tile), 0) + 1
                self._grant(line, entry, kind, src)
            else:
                self._txns[line] = LlcTxn(TxnKind.GET_M, src, acks=len(others))
                d.busy = DirState.BUSY_RECALL
        else:
            owner = d.owner
            if owner == src:
                raise ProtocolError("request from the current owner", addr=line,
                                    tile=self.tile, state=d.state)
            if kind is MsgKind.GET_M and "duplicate-m" in self.faults:
                logger.warning("fault duplicate-m: granting %#x to %d while %d owns it",
                               line, src, owner)
                d.owner = src
                d.state = DirState.M
                self._data(line, entry, src, LineState.M)
                return True
            fwd = MsgKind.FWD_GET_S if kind is MsgKind.GET_S else MsgKind.FWD_GET_M
            self._send(fwd, line, owner, req=src)
            self.stats.forwards += 1
            txn_kind = TxnKind.GET_S if kind is MsgKind.GET_S else TxnKind.GET_M
            self._txns[line] = LlcTxn(txn_kind, src, owner=owner)
            d.busy = DirState.BUSY_RECALL
        return True

    def _handle_put(self, msg: CohMsg, entry: Optional[LlcLine]) -> None:
        src = msg.src
        d = entry.dir if entry else None
        if d is not None and d.state in (DirState.E, DirState.M) and d.owner == src:
            if msg.kind is MsgKind.PUT_M:
                entry.data = msg.data
                d.dirty = d.dirty or msg.dirty
            d.owner = None
            d.state = DirState.V
        elif d is not None and src in d.sharers:
            d.sharers.discard(src)
            if not d.sharers:
                d.state = DirState.V
        else:
            self.stats.stale_puts += 1
        self._send(MsgKind.WB_ACK, msg.addr, src)

    def _fetch(self, line: int, entry: LlcLine, kind: MsgKind, src: int) -> None:
        entry.data = self._mem_read(line)
        if self.mem_latency > 0:
            entry.dir.busy = DirState.BUSY_MEM
            self._txns[line] = LlcTxn(TxnKind.MEM, src, request=kind)
            heapq.heappush(self._mem_waits, (self.now + self.mem_latency, line))
        else:
            entry.dir.state = DirState.V
            self._grant(line, entry, kind, src)

    def _fetch_complete(self, line: int) -> None:
        txn = self._txns.pop(line)
        entry = self.lines[line]
        entry.dir.busy = None
        entry.dir.state = DirState.V
        self._grant(line, entry, txn.request, txn.requester)
        self._kick(line)

    def _grant(self, line: int, entry: LlcLine, kind: MsgKind, src: int) -> None:
        d = entry.dir
        if kind is MsgKind.GET_S:
            if self.e_grants and not d.sharers and d.owner is None:
                d.state, d.owner, grant = DirState.E, src, LineState.E
            else:
                d.state, grant = DirState.S, LineState.S
                d.sharers.add(src)
        else:
            d.state, d.owner, grant = DirState.M, src, LineState.M
            d.sharers.clear()
        self._data(line, entry, src, grant)

    # ------------------------------------------------------------------
    # Responses
    # ------------------------------------------------------------------

    def _handle_response(self, msg: CohMsg) -> None:
        line = msg.addr
        key = (line, msg.src)
        if msg.kind is MsgKind.INV_ACK and self._stray_acks.get(key):
            self._stray_acks[key] -= 1
            if not self._stray_acks[key]:
                del self._stray_acks[key]
            return
        txn = self._txns.get(line)
        if txn is None or txn.kind is TxnKind.MEM:
            raise ProtocolError(f"unexpected {msg.kind.value}", addr=line, tile=self.tile,
                                state=self.dir_state(line))
        entry = self.lines[line]
        d = entry.dir

        if txn.owner is not None:
            if msg.src != txn.owner:
                raise ProtocolError(f"{msg.kind.value} from non-owner {msg.src}", addr=line,
                                    tile=self.tile)
            supplied = msg.kind is MsgKind.DATA_RSP
            if supplied:
                entry.data = msg.data
                d.dirty = d.dirty or msg.dirty
            self._finish(line, entry, txn, supplied)
            return

        if msg.kind is not MsgKind.INV_ACK:
            raise ProtocolError("data during an invalidation round", addr=line, tile=self.tile)
        txn.acks -= 1
        if txn.acks == 0:
            self._finish(line, entry, txn, supplied=False)

    def _finish(self, line: int, entry: LlcLine, txn: LlcTxn, supplied: bool) -> None:
        d = entry.dir
        del self._txns[line]
        d.busy = None
        if txn.kind is TxnKind.GET_S:
            d.owner = None
            d.state = DirState.S
            d.sharers = {txn.owner, txn.requester} if supplied else {txn.requester}
            if not supplied:
                self._data(line, entry, txn.requester, LineState.S)
        elif txn.kind is TxnKind.GET_M:
            d.state, d.owner = DirState.M, txn.requester
            d.sharers = set()
            if not supplied:
                self._data(line, entry, txn.requester, LineState.M)
        else:
            d.state, d.owner = DirState.V, None
            d.sharers = set()
            if txn.kind is TxnKind.RECALL_EVICT:
                self._drop_line(line)
        self._kick(line)

    # ------------------------------------------------------------------
    # Allocation and eviction
    # ------------------------------------------------------------------

    def _touch(self, line: int) -> None:
        self.sets[set_index(line, self.geom)].move_to_end(line)

    def _allocate(self, line: int) -> Optional[LlcLine]:
        """Entry for a new line, or None while the set has no evictable way."""
        order = self.sets.setdefault(set_index(line, self.geom), OrderedDict())
        if len(order) >= self.geom.ways:
            candidates = [v for v in order if v not in self._txns]
            unheld = [v for v in candidates
                      if self.lines[v].dir.owner is None and not self.lines[v].dir.sharers]
            if unheld:
                self._drop_line(unheld[0])
            else:
                recalling = any(self._txns.get(v) and self._txns[v].kind is TxnKind.RECALL_EVICT
                                for v in order)
                if candidates and not recalling:
                    self._recall(candidates[0], TxnKind.RECALL_EVICT)
                return None
        entry = LlcLine(DirEntry(), bytes(self.geom.line_bytes))
        self.lines[line] = entry
        order[line] = None
        return entry

    def _recall(self, line: int, kind: TxnKind) -> None:
        entry = self.lines[line]
        d = entry.dir
        self.stats.recalls += 1
        if d.owner is not None:
            self._send(MsgKind.FWD_GET_M, line, d.owner, req=self.tile)
            self._txns[line] = LlcTxn(kind, self.tile, owner=d.owner)
        else:
            for tile in sorted(d.sharers):
                self._send(MsgKind.INV, line, tile, req=self.tile)
            self.stats.invalidations += len(d.sharers)
            self._txns[line] = LlcTxn(kind, self.tile, acks=len(d.sharers))
        d.busy = DirState.BUSY_RECALL

    def _drop_line(self, line: int) -> None:
        entry = self.lines.pop(line)
        del self.sets[set_index(line, self.geom)][line]
        self.stats.evictions += 1
        if entry.dir.dirty:
            self._mem_write(line, entry.data)

    def discard_clean(self, line: int) -> bool:
        """Drop an unheld clean copy; used when DRAM is written behind the LLC."""
        entry = self.lines.get(line)
        if entry is None:
            return True
        d = entry.dir
        if line in self._txns or d.owner is not None or d.sharers or d.dirty:
            return False
        self._drop_line(line)
        return True

    # ------------------------------------------------------------------
    # DMA
    # ------------------------------------------------------------------

    def _advance_dma(self) -> None:
        while self._dma and self._dma[0].index >= len(self._dma[0].lines):
            job = self._dma.popleft()
            if job.is_write:
                self._send(MsgKind.DMA_RSP, job.msg.addr, job.msg.src,
                           delay=self._dma_delay(job), value=job.msg.value)
        if not self._dma:
            return
        job = self._dma[0]
        line = job.lines[job.index]
        if line in self._txns or line in self._queues:
            return
        entry = self.lines.get(line)
        fresh = entry is None
        if fresh:
            entry = self._allocate(line)
            if entry is None:
                return
            self.stats.misses += 1
            if not job.is_write:
                entry.data = self._mem_read(line)
                job.ready = max(job.ready, self.now + self.mem_latency)
            entry.dir.state = DirState.V
        else:
            self._touch(line)
        d = entry.dir
        if d.owner is not None or d.sharers:
            self._recall(line, TxnKind.RECALL_DMA)
            return
        if not fresh and d.state is DirState.V:
            self.stats.v_hits += 1
        d.state = DirState.V

        lb = self.geom.line_bytes
        if job.is_write:
            start = line - job.msg.addr
            entry.data = job.msg.data[start:start + lb]
            d.dirty = True
            for off in range(0, lb, WORD_BYTES):
                value = read_word(entry.data, off, self.endianness)
                self.observer.word_written(line + off, value, self.now, job.msg.src, None)
        else:
            for off in range(0, lb, WORD_BYTES):
                value = read_word(entry.data, off, self.endianness)
                self.observer.word_read(line + off, value, self.now, self.now, job.msg.src)
            self._send(MsgKind.DMA_RSP, line, job.msg.src, delay=self._dma_delay(job),
                       data=entry.data)
        self.stats.dma_lines += 1
        job.index += 1

    def _dma_delay(self, job: DmaJob) -> int:
        return max(0, job.ready - self.now) + self.hit_latency

    # ------------------------------------------------------------------
    # Flush
    # ------------------------------------------------------------------

    def start_flush(self, on_done: Optional[Callable[[], None]] = None) -> int:
        """Write every dirty unowned line to memory; lines stay in V (or S).

        Returns the number of memory writes issued.  Completion is signalled
        through *on_done* once the writes have had memory latency to land.
        """
        count = 0
        for line, entry in sorted(self.lines.items()):
            d = entry.dir
            if d.dirty and d.busy is None and d.state in (DirState.V, DirState.S):
                self._mem_write(line, entry.data)
                d.dirty = False
                count += 1
        self.stats.flushes += 1
        delay = self.mem_latency if count else 0
        self._flush_waits.append((self.now + delay, on_done))
        logger.debug("tile %d: LLC flush wrote %d lines", self.tile, count)
        return count

    # ------------------------------------------------------------------
    # Helpers
    # ------------------------------------------------------------------

    def _mem_read(self, line: int) -> bytes:
        self.stats.mem_reads += 1
        return self.memory[line:line + self.geom.line_bytes].tobytes()

    def _mem_write(self, line: int, data: bytes) -> None:
        self.stats.mem_writes += 1
        self.memory[line:line + self.geom.line_bytes] = np.frombuffer(data, dtype=np.uint8)

    def _data(self, line: int, entry: LlcLine, dst: int, grant: LineState) -> None:
        self._send(MsgKind.DATA_RSP, line, dst, delay=self.hit_latency, data=entry.data,
                   grant=grant)

    def _send(self, kind: MsgKind, addr: int, dst: int, delay: int = 0, **fields) -> None:
        msg = CohMsg(kind, addr, self.tile, dst, **fields)
        logger.debug("tile %d LLC -> %s", self.tile, msg)
        self._seq += 1
        self.outbox.append((self.now + delay, self._seq, msg))


@dataclass
class DramStats:
    reads: int = 0
    writes: int = 0


@dataclass
class DramChannel:
    """Backing-memory port used by non-coherent DMA bursts (LLC bypassed)."""

    tile: int
    memory: np.ndarray
    llc: LlcController
    line_bytes: int
    endianness: str = "little"
    latency: int = DEFAULT_MEM_LATENCY
    observer: Observer = field(default_factory=Observer)
    stats: DramStats = field(default_factory=DramStats)
    outbox: list = field(default_factory=list)

    def handle_burst(self, msg: CohMsg, now: int) -> None:
        lb = self.line_bytes
        ready = now + self.latency
        for line in dma_lines(msg.addr, msg.value, lb):
            if msg.kind is MsgKind.DMA_WRITE_BURST:
                start = line - msg.addr
                chunk = msg.data[start:start + lb]
                if not self.llc.discard_clean(line):
                    logger.warning("non-coherent write to %#x while the LLC holds it", line)
                self.memory[line:line + lb] = np.frombuffer(chunk, dtype=np.uint8)
                self.stats.writes += 1
                for off in range(0, lb, WORD_BYTES):
                    value = read_word(chunk, off, self.endianness)
                    self.observer.word_written(line + off, value, now, msg.src, None)
            else:
                data = self.memory[line:line + lb].tobytes()
                self.stats.reads += 1
                for off in range(0, lb, WORD_BYTES):
                    value = read_word(data, off, self.endianness)
                    self.observer.word_read(line + off, value, now, now, msg.src, noncoherent=True)
                self.outbox.append((ready, CohMsg(MsgKind.DMA_RSP, line, self.tile, msg.src,
                                                  data=data, bypass=True)))
        if msg.kind is MsgKind.DMA_WRITE_BURST:
            self.outbox.append((ready, CohMsg(MsgKind.DMA_RSP, msg.addr, self.tile, msg.src,
                                              value=msg.value, bypass=True)))

    def drain(self, cycle: int) -> list:
        ready = [m for t, m in self.outbox if t <= cycle]
        self.outbox = [(t, m) for t, m in self.outbox if t > cycle]
        return ready
