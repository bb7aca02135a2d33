"""
Private L2 cache controller for processor and fully-coherent accelerator tiles.

The controller owns the line store, a small set of MSHRs, the core-side
request port (one outstanding request, blocking cores), the forward/response
handlers, the atomic (XMW) window used by AMOs and LR/SC, and the flush
handshake with the L1.  Messages it emits collect in ``outbox``; responses to
the core collect in ``responses``.
"""

import logging
from collections import OrderedDict, deque
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Callable, Dict, Optional

from espsim.coherence import (
    CacheGeometry,
    CohMsg,
    LineState,
    MsgKind,
    MsgMeta,
    Perm,
    line_addr,
    read_word,
    set_index,
    write_word,
)
from espsim.config import (
    DEFAULT_L2_HIT_LATENCY,
    DEFAULT_LR_GRACE,
    DEFAULT_MSHRS,
    WORD_BYTES,
    ProtocolError,
)
from espsim.monitors import Observer

logger = logging.getLogger(__name__)


class CoreOp(Enum):
    LOAD = "Load"
    STORE = "Store"
    IFETCH = "Ifetch"
    AMO_READ = "AmoRead"
    AMO_WRITE = "AmoWrite"
    LR_READ = "LrRead"
    SC_WRITE = "ScWrite"
    FLUSH_L2 = "FlushL2"


_LOCKED_OPS = (CoreOp.AMO_READ, CoreOp.AMO_WRITE, CoreOp.LR_READ, CoreOp.SC_WRITE)
_WRITE_OPS = (CoreOp.STORE, CoreOp.AMO_WRITE, CoreOp.SC_WRITE)


@dataclass(frozen=True)
class CoreSideReq:
    op: CoreOp
    addr: int
    data: Optional[int] = None
    lock: bool = False
    atop: int = 0
    user: int = 0

    def __post_init__(self) -> None:
        if self.op in _LOCKED_OPS and not self.lock:
            raise ProtocolError(f"{self.op.value} must carry lock=1", addr=self.addr)
        if self.op in (CoreOp.LR_READ, CoreOp.SC_WRITE) and self.atop != 0:
            raise ProtocolError(f"{self.op.value} must carry atop=0", addr=self.addr)
        if self.op in (CoreOp.AMO_READ, CoreOp.AMO_WRITE) and self.atop == 0:
            raise ProtocolError(f"{self.op.value} needs a non-zero atop", addr=self.addr)
        if self.op in _WRITE_OPS and self.data is None:
            raise ProtocolError(f"{self.op.value} needs data", addr=self.addr)


class WriteResp(Enum):
    EXOKAY = "EXOKAY"
    OKAY = "OKAY"


@dataclass
class CoreResp:
    req: CoreSideReq
    ready: int
    value: Optional[int] = None
    line: Optional[bytes] = None
    code: Optional[WriteResp] = None
    cacheable: bool = True


class MshrKind(Enum):
    READ = "read"
    WRITE = "write"
    ATOMIC_AMO = "atomic-amo"
    ATOMIC_LRSC = "atomic-lrsc"
    WRITEBACK = "writeback"


@dataclass
class MshrEntry:
    addr: int
    kind: MshrKind
    pending: LineState
    stalled: deque = field(default_factory=deque)
    atomic_open: bool = False
    req: Optional[CoreSideReq] = None
    invalidate_on_fill: bool = False
    # Writeback entries keep the evicted data to answer forwards until WbAck.
    data: Optional[bytes] = None
    dirty: bool = False
    surrendered: bool = False
    opened: int = 0
    rmw_old: Optional[int] = None

    def snapshot(self) -> tuple:
        return (self.addr, self.kind, self.pending, tuple(self.stalled), self.atomic_open,
                self.req, self.invalidate_on_fill, self.data, self.dirty, self.surrendered,
                self.rmw_old)


@dataclass
class L2Line:
    state: LineState
    data: bytes
    perm: Perm = Perm.NONE


@dataclass
class L2Stats:
    hits: int = 0
    misses: int = 0
    upgrades: int = 0
    evictions: int = 0
    writebacks: int = 0
    fwd_served: int = 0
    fwd_stalled: int = 0
    make_invalid: int = 0
    sc_success: int = 0
    sc_failure: int = 0
    reservations_killed: int = 0
    flushes: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class _FlushJob:
    on_done: Optional[Callable[[], None]]
    phase: str = "quiesce"


class L2Controller:
    """Private L2 with MESI states, MSHRs and the XMW atomic window.

    Parameters
    ----------
    tile : int
        Raster index of the owning tile (message source).
    geom : CacheGeometry
        Line store geometry.
    home_of : callable
        Maps a line address to the tile id of its home LLC slice.
    mshrs : int
        MSHR capacity.
    lr_grace : int
        Cycles after an LR fill during which forwards to the reserved line, and
        a requested flush, are held back.  Zero serves them immediately.
    """

    def __init__(
        self,
        tile: int,
        geom: CacheGeometry,
        home_of: Callable[[int], int],
        *,
        mshrs: int = DEFAULT_MSHRS,
        endianness: str = "little",
        lr_grace: int = DEFAULT_LR_GRACE,
        hit_latency: int = DEFAULT_L2_HIT_LATENCY,
        observer: Optional[Observer] = None,
    ) -> None:
        self.tile = tile
        self.geom = geom
        self.home_of = home_of
        self.capacity = mshrs
        self.endianness = endianness
        self.lr_grace = lr_grace
        self.hit_latency = hit_latency
        self.observer = observer or Observer()

        self.sets: Dict[int, OrderedDict] = {}
        self.mshrs: Dict[int, MshrEntry] = {}
        self.outbox: list = []
        self.responses: deque = deque()
        self.stats = L2Stats()
        self.now = 0
        self.flush_log: list = []

        # Set by the owning tile: L1 MakeInvalid snoop and L1 flush handshake.
        self.snoop: Optional[Callable[[int, Perm], None]] = None
        self.l1_flush: Optional[Callable[[Callable[[], None]], None]] = None

        self._pending: Optional[CoreSideReq] = None
        self._atomic: Optional[MshrEntry] = None
        self._flush: Optional[_FlushJob] = None

    # ------------------------------------------------------------------
    # Inspection
    # ------------------------------------------------------------------

    def _line(self, addr: int) -> int:
        return line_addr(addr, self.geom.line_bytes)

    def _ways(self, line: int) -> OrderedDict:
        return self.sets.setdefault(set_index(line, self.geom), OrderedDict())

    def lookup(self, addr: int) -> Optional[L2Line]:
        line = self._line(addr)
        ways = self.sets.get(set_index(line, self.geom))
        return ways.get(line) if ways else None

    def state_of(self, addr: int) -> LineState:
        """Effective state: the MSHR's pending state if one exists."""
        line = self._line(addr)
        mshr = self.mshrs.get(line)
        if mshr is not None:
            return mshr.pending
        entry = self.lookup(line)
        return entry.state if entry else LineState.I

    def resident_lines(self) -> list:
        return sorted(line for ways in self.sets.values() for line in ways)

    def idle(self) -> bool:
        return not self.mshrs and self._pending is None and self._flush is None

    @property
    def flushing(self) -> bool:
        return self._flush is not None

    def snapshot(self) -> tuple:
        lines = tuple(
            (line, e.state, e.data, e.perm)
            for ways in self.sets.values() for line, e in ways.items()
        )
        return (
            tuple(sorted(lines, key=lambda t: t[0])),
            tuple(m.snapshot() for _, m in sorted(self.mshrs.items())),
            self._pending,
            tuple((r.req, r.value, r.code, r.cacheable) for r in self.responses),
            self._atomic.addr if self._atomic else None,
            tuple(self.outbox),
        )

    def drain(self) -> list:
        out, self.outbox = self.outbox, []
        return out

    def pop_response(self, cycle: Optional[int] = None) -> Optional[CoreResp]:
        if self.responses and (cycle is None or self.responses[0].ready <= cycle):
            return self.responses.popleft()
        return None

    # ------------------------------------------------------------------
    # Per-cycle housekeeping
    # ------------------------------------------------------------------

    def tick(self, cycle: int) -> None:
        self.now = cycle
        atomic = self._atomic
        # A pending flush waits on a reservation the same way a stalled forward does.
        if (atomic is not None and atomic.kind is MshrKind.ATOMIC_LRSC
                and (atomic.stalled or self._flush is not None)
                and cycle - atomic.opened >= self.lr_grace):
            self._kill_reservation("grace window expired")
        if self._pending is not None and self._try_core(self._pending):
            self._pending = None
        self._advance_flush()

    # ------------------------------------------------------------------
    # Core side
    # ------------------------------------------------------------------

    def request(self, req: CoreSideReq) -> None:
        """Accept a core-side request; it is serviced now or retried each tick."""
        if self._pending is not None:
            raise ProtocolError("core already has an outstanding L2 request",
                                addr=req.addr, tile=self.tile)
        if req.op is CoreOp.FLUSH_L2:
            self.start_flush(lambda: self._respond(req))
            return
        if not self._try_core(req):
            self._pending = req

    def _try_core(self, req: CoreSideReq) -> bool:
        op = req.op
        line = self._line(req.addr)
        atomic = self._atomic
        if self._flush is not None and not self._closes_atomic(op, line):
            return False

        # Instruction fetches are served alongside an open atomic.
        if atomic is not None and op is not CoreOp.IFETCH:
            if atomic.kind is MshrKind.ATOMIC_AMO:
                if op is not CoreOp.AMO_WRITE:
                    return False
            elif op is not CoreOp.SC_WRITE:
                self._kill_reservation(f"own {op.value}")

        if op is CoreOp.AMO_WRITE:
            return self._amo_write(req, line)
        if op is CoreOp.SC_WRITE:
            return self._sc_write(req, line)

        mshr = self.mshrs.get(line)
        if mshr is not None and not (op is CoreOp.IFETCH and mshr.pending is LineState.XMW):
            return False

        entry = self.lookup(line)
        state = entry.state if entry else LineState.I

        if op in (CoreOp.LOAD, CoreOp.IFETCH):
            perm = Perm.INSTR if op is CoreOp.IFETCH else Perm.DATA
            if entry is not None:
                self.stats.hits += 1
                self._touch(line)
                entry.perm |= perm
                self._respond(req, self._word(entry.data, req.addr), line=entry.data)
                return True
            return self._miss(line, MshrKind.READ, LineState.IS_A, req)

        if op is CoreOp.STORE:
            if state in (LineState.M, LineState.E):
                self.stats.hits += 1
                self._touch(line)
                self._set_state(line, entry, LineState.M)
                self._store(entry, req.addr, req.data)
                self._respond(req)
                return True
            if state is LineState.S:
                return self._upgrade(line, MshrKind.WRITE, req)
            return self._miss(line, MshrKind.WRITE, LineState.IM_A, req)

        # AmoRead / LrRead
        kind = MshrKind.ATOMIC_AMO if op is CoreOp.AMO_READ else MshrKind.ATOMIC_LRSC
        if state in (LineState.M, LineState.E):
            if len(self.mshrs) >= self.capacity:
                return False
            self.stats.hits += 1
            self._touch(line)
            self._set_state(line, entry, LineState.M)
            mshr = MshrEntry(line, kind, LineState.M, req=req)
            self.mshrs[line] = mshr
            self._open_xmw(mshr, entry)
            return True
        if state is LineState.S:
            return self._upgrade(line, kind, req)
        return self._miss(line, kind, LineState.IM_A, req)

    def _closes_atomic(self, op: CoreOp, line: int) -> bool:
        """Requests a pending flush still admits: the write ending the open
        atomic window and the instruction fetches served alongside it."""
        atomic = self._atomic
        if atomic is None:
            return False
        if op is CoreOp.IFETCH:
            return True
        return op in (CoreOp.AMO_WRITE, CoreOp.SC_WRITE) and atomic.addr == line

    def _amo_write(self, req: CoreSideReq, line: int) -> bool:
        atomic = self._atomic
        if atomic is None or atomic.kind is not MshrKind.ATOMIC_AMO or atomic.addr != line:
            raise ProtocolError("AmoWrite without an open AMO on the line",
                                addr=req.addr, tile=self.tile, state=self.state_of(line))
        entry = self.lookup(line)
        self._store(entry, req.addr, req.data, rmw_old=atomic.rmw_old)
        self._close_atomic()
        self._respond(req, code=WriteResp.EXOKAY)
        return True

    def _sc_write(self, req: CoreSideReq, line: int) -> bool:
        atomic = self._atomic
        if (atomic is not None and atomic.kind is MshrKind.ATOMIC_LRSC
                and atomic.addr == line and atomic.req.user == req.user):
            self._store(self.lookup(line), req.addr, req.data)
            self._close_atomic()
            self.stats.sc_success += 1
            self._respond(req, code=WriteResp.EXOKAY)
            return True
        if atomic is not None and atomic.kind is MshrKind.ATOMIC_LRSC:
            self._kill_reservation("SC to another line")
        self.stats.sc_failure += 1
        self._respond(req, code=WriteResp.OKAY)
        return True

    def _upgrade(self, line: int, kind: MshrKind, req: CoreSideReq) -> bool:
        if len(self.mshrs) >= self.capacity:
            return False
        self.stats.upgrades += 1
        self.mshrs[line] = MshrEntry(line, kind, LineState.SM_A, req=req)
        self._notify(line, LineState.SM_A)
        self._send(MsgKind.GET_M, line, self.home_of(line), meta=self._meta(req))
        return True

    def _miss(self, line: int, kind: MshrKind, pending: LineState, req: CoreSideReq) -> bool:
        if not self._reserve_way(line):
            return False
        self.stats.misses += 1
        self.mshrs[line] = MshrEntry(line, kind, pending, req=req)
        self._notify(line, pending)
        msg_kind = MsgKind.GET_S if pending is LineState.IS_A else MsgKind.GET_M
        self._send(msg_kind, line, self.home_of(line), meta=self._meta(req))
        return True

    def _reserve_way(self, line: int) -> bool:
        """Make room for a fill of *line*, evicting a victim when the set is full."""
        ways = self._ways(line)
        s = set_index(line, self.geom)
        reserved = sum(
            1 for m in self.mshrs.values()
            if m.pending in (LineState.IS_A, LineState.IM_A)
            and m.addr not in ways and set_index(m.addr, self.geom) == s
        )
        if len(ways) + reserved < self.geom.ways:
            return len(self.mshrs) < self.capacity
        if len(self.mshrs) + 2 > self.capacity:
            return False
        victim = next((v for v in ways if v not in self.mshrs), None)
        atomic = self._atomic
        if victim is None and atomic is not None and atomic.kind is MshrKind.ATOMIC_LRSC \
                and atomic.addr in ways:
            self._kill_reservation("reserved line evicted")
            victim = atomic.addr
        if victim is None:
            return False
        self._evict(victim)
        return True

    def _open_xmw(self, mshr: MshrEntry, entry: L2Line) -> None:
        req = mshr.req
        value = self._word(entry.data, req.addr)
        mshr.pending = LineState.XMW
        mshr.atomic_open = True
        mshr.opened = self.now
        mshr.rmw_old = value
        self._atomic = mshr
        self._notify(mshr.addr, LineState.XMW)
        self._respond(req, value)

    def _close_atomic(self) -> None:
        mshr = self._atomic
        self._atomic = None
        del self.mshrs[mshr.addr]
        self._notify(mshr.addr, LineState.M)
        self._replay(mshr)

    def _kill_reservation(self, reason: str) -> None:
        logger.debug("tile %d: reservation on %#x ended (%s)", self.tile, self._atomic.addr, reason)
        self.stats.reservations_killed += 1
        self._close_atomic()

    # ------------------------------------------------------------------
    # Network side
    # ------------------------------------------------------------------

    def handle_message(self, msg: CohMsg) -> None:
        kind = msg.kind
        if kind in (MsgKind.FWD_GET_S, MsgKind.FWD_GET_M, MsgKind.INV):
            self._handle_forward(msg)
        elif kind is MsgKind.DATA_RSP:
            self._handle_data(msg)
        elif kind is MsgKind.WB_ACK:
            self._handle_wb_ack(msg)
        else:
            raise ProtocolError(f"L2 cannot handle {kind.value}", addr=msg.addr, tile=self.tile)

    def _handle_data(self, msg: CohMsg) -> None:
        line = msg.addr
        mshr = self.mshrs.get(line)
        if mshr is None or mshr.pending not in (LineState.IS_A, LineState.IM_A, LineState.SM_A):
            raise ProtocolError("unexpected DataRsp", addr=line, tile=self.tile,
                                state=self.state_of(line))
        req = mshr.req

        if mshr.pending is LineState.IS_A:
            del self.mshrs[line]
            value = self._word(msg.data, req.addr)
            if mshr.invalidate_on_fill:
                # Used once for this load; never installed.
                self._notify(line, LineState.I)
                self._respond(req, value, line=msg.data, cacheable=False)
            else:
                grant = msg.grant or LineState.S
                perm = Perm.INSTR if req.op is CoreOp.IFETCH else Perm.DATA
                self._ways(line)[line] = L2Line(grant, msg.data, perm)
                self._notify(line, grant)
                self._respond(req, value, line=msg.data)
            self._replay(mshr)
            return

        if msg.grant is not LineState.M:
            raise ProtocolError("GetM answered without an M grant", addr=line, tile=self.tile)
        ways = self._ways(line)
        entry = ways.get(line)
        if entry is None:
            entry = ways[line] = L2Line(LineState.M, msg.data, Perm.NONE)
        else:
            entry.state, entry.data = LineState.M, msg.data
            ways.move_to_end(line)

        if mshr.kind is MshrKind.WRITE:
            del self.mshrs[line]
            self._notify(line, LineState.M)
            self._store(entry, req.addr, req.data)
            self._respond(req)
            self._replay(mshr)
        else:
            self._open_xmw(mshr, entry)

    def _handle_wb_ack(self, msg: CohMsg) -> None:
        line = msg.addr
        mshr = self.mshrs.get(line)
        if mshr is None or mshr.pending is not LineState.MI_A:
            raise ProtocolError("WbAck without a writeback", addr=line, tile=self.tile)
        del self.mshrs[line]
        self._notify(line, LineState.I)
        self._replay(mshr)

    def _handle_forward(self, msg: CohMsg) -> None:
        line = msg.addr
        mshr = self.mshrs.get(line)
        if mshr is not None:
            pending = mshr.pending
            if pending is LineState.MI_A:
                self._forward_from_writeback(msg, mshr)
                return
            if pending is LineState.XMW:
                if mshr.kind is MshrKind.ATOMIC_LRSC and self.now - mshr.opened >= self.lr_grace:
                    self._kill_reservation(f"{msg.kind.value} served")
                    self._handle_forward(msg)
                    return
            elif msg.kind is MsgKind.INV and pending is LineState.IS_A:
                mshr.invalidate_on_fill = True
                self._send(MsgKind.INV_ACK, line, msg.src)
                return
            elif msg.kind is MsgKind.INV and pending is LineState.SM_A:
                entry = self._ways(line).pop(line)
                self._make_invalid(line, entry.perm)
                mshr.pending = LineState.IM_A
                self._notify(line, LineState.IM_A)
                self._send(MsgKind.INV_ACK, line, msg.src)
                return
            elif msg.kind is MsgKind.INV:
                self._send(MsgKind.INV_ACK, line, msg.src)
                return
            mshr.stalled.append(msg)
            self.stats.fwd_stalled += 1
            return

        entry = self.lookup(line)
        state = entry.state if entry else LineState.I

        if msg.kind is MsgKind.INV:
            if state in (LineState.E, LineState.M):
                raise ProtocolError("Inv for an owned line", addr=line, tile=self.tile, state=state)
            if entry is not None:
                self._drop(line, entry)
            self._send(MsgKind.INV_ACK, line, msg.src)
            return

        if entry is None:
            logger.debug("tile %d: %s for absent line, acking", self.tile, msg)
            self._send(MsgKind.INV_ACK, line, msg.src)
            return

        self.stats.fwd_served += 1
        if state is LineState.S and msg.kind is MsgKind.FWD_GET_M:
            self._drop(line, entry)
            self._send(MsgKind.INV_ACK, line, msg.src)
            return
        grant = LineState.S if msg.kind is MsgKind.FWD_GET_S else LineState.M
        self._supply(msg, entry.data, grant, dirty=state is LineState.M)
        if grant is LineState.S:
            self._set_state(line, entry, LineState.S)
        else:
            self._drop(line, entry)

    def _forward_from_writeback(self, msg: CohMsg, mshr: MshrEntry) -> None:
        if msg.kind is MsgKind.INV or mshr.surrendered:
            self._send(MsgKind.INV_ACK, msg.addr, msg.src)
            return
        grant = LineState.S if msg.kind is MsgKind.FWD_GET_S else LineState.M
        self._supply(msg, mshr.data, grant, dirty=mshr.dirty)
        mshr.surrendered = True
        self.stats.fwd_served += 1

    def _supply(self, fwd: CohMsg, data: bytes, grant: LineState, dirty: bool) -> None:
        """Owner reply: data to the requester plus a copy to the LLC."""
        if fwd.req is not None and fwd.req != fwd.src:
            self._send(MsgKind.DATA_RSP, fwd.addr, fwd.req, data=data, grant=grant)
        self._send(MsgKind.DATA_RSP, fwd.addr, fwd.src, data=data, dirty=dirty, req=fwd.req)

    def _replay(self, mshr: MshrEntry) -> None:
        stalled, mshr.stalled = mshr.stalled, deque()
        for msg in stalled:
            self._handle_forward(msg)

    # ------------------------------------------------------------------
    # Flush
    # ------------------------------------------------------------------

    def start_flush(self, on_done: Optional[Callable[[], None]] = None) -> None:
        if self._flush is not None:
            raise ProtocolError("flush already in progress", tile=self.tile)
        self._flush = _FlushJob(on_done)
        self.flush_log.append(("flush", self.now))
        self._advance_flush()

    def flush_done(self) -> None:
        """L1 handshake: called once the L1 has finished flushing."""
        self.flush_log.append(("flush_done", self.now))
        self._flush.phase = "writeback"
        self._advance_flush()

    def _advance_flush(self) -> None:
        job = self._flush
        if job is None:
            return
        if job.phase == "quiesce":
            if any(m.kind is not MshrKind.WRITEBACK for m in self.mshrs.values()):
                return
            job.phase = "l1"
            self.flush_log.append(("l1_flush", self.now))
            if self.l1_flush is not None:
                self.l1_flush(self.flush_done)
            else:
                self.flush_done()
            return
        if job.phase == "writeback":
            for line in self.resident_lines():
                if len(self.mshrs) >= self.capacity:
                    return
                self._evict(line)
            job.phase = "drain"
        if job.phase == "drain" and not self.mshrs:
            self._flush = None
            self.stats.flushes += 1
            self.flush_log.append(("flush_complete", self.now))
            logger.debug("tile %d: L2 flush complete at cycle %d", self.tile, self.now)
            if job.on_done is not None:
                job.on_done()

    # ------------------------------------------------------------------
    # Helpers
    # ------------------------------------------------------------------

    def _evict(self, line: int) -> None:
        entry = self._ways(line).pop(line)
        dirty = entry.state is LineState.M
        self.mshrs[line] = MshrEntry(line, MshrKind.WRITEBACK, LineState.MI_A,
                                     data=entry.data, dirty=dirty)
        self.stats.evictions += 1
        if dirty:
            self.stats.writebacks += 1
            self._send(MsgKind.PUT_M, line, self.home_of(line), data=entry.data, dirty=True)
        else:
            self._send(MsgKind.PUT_S, line, self.home_of(line))
        if self._flush is not None:
            self.flush_log.append(("PutM" if dirty else "PutS", self.now))
        self._make_invalid(line, entry.perm)
        self._notify(line, LineState.MI_A)

    def _drop(self, line: int, entry: L2Line) -> None:
        self._ways(line).pop(line)
        self._make_invalid(line, entry.perm)
        self._notify(line, LineState.I)

    def _make_invalid(self, line: int, perm: Perm) -> None:
        if self.snoop is not None and perm:
            self.stats.make_invalid += 1
            self.snoop(line, perm)

    def _touch(self, line: int) -> None:
        self._ways(line).move_to_end(line)

    def _set_state(self, line: int, entry: L2Line, state: LineState) -> None:
        if entry.state is not state:
            entry.state = state
            self._notify(line, state)

    def _store(self, entry: L2Line, addr: int, value: int, rmw_old: Optional[int] = None) -> None:
        offset = addr % self.geom.line_bytes
        entry.data = write_word(entry.data, offset, value, self.endianness)
        word = addr - addr % WORD_BYTES
        self.observer.word_written(word, value & 0xFFFF_FFFF, self.now, self.tile, rmw_old)

    def _word(self, data: bytes, addr: int) -> int:
        return read_word(data, addr % self.geom.line_bytes, self.endianness)

    def _respond(self, req: CoreSideReq, value: Optional[int] = None, *,
                 line: Optional[bytes] = None, code: Optional[WriteResp] = None,
                 cacheable: bool = True) -> None:
        self.responses.append(
            CoreResp(req, self.now + self.hit_latency, value, line, code, cacheable)
        )

    def _notify(self, line: int, state: LineState) -> None:
        self.observer.state_changed(self.tile, line, state, self.now)

    @staticmethod
    def _meta(req: CoreSideReq) -> MsgMeta:
        perm = Perm.INSTR if req.op is CoreOp.IFETCH else Perm.DATA
        return MsgMeta(lock=req.lock, atop=req.atop, user=req.user, perm=perm)

    def _send(self, kind: MsgKind, addr: int, dst: int, **fields) -> None:
        msg = CohMsg(kind, addr, self.tile, dst, **fields)
        logger.debug("tile %d L2 -> %s", self.tile, msg)
        self.outbox.append(msg)
