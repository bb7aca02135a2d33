"""
In-order blocking core model standing in for a CVA6 processor tile.

Each core runs a *program*: a generator that yields :class:`TraceOp` items
and receives each op's result, so spin loops and LR/SC retry loops can be
expressed.  A plain list of ops is wrapped as a linear program.

The core has a write-through, no-write-allocate L1D that the L2 invalidates
with MakeInvalid snoops, a presence-only L1I, and an AMO adapter that splits
atomics into a locked read and write toward the L2.
"""

import logging
from collections import OrderedDict
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Callable, Generator, Iterable, List, Optional, Union

from espsim.coherence import (
    AmoOp,
    CacheGeometry,
    CohMsg,
    MmioStatus,
    MsgKind,
    Perm,
    line_addr,
    read_word,
    set_index,
    write_word,
)
from espsim.config import (
    DEFAULT_ALU_LATENCY,
    DEFAULT_L1_HIT_LATENCY,
    DEFAULT_MMIO_BASE,
    WORD_BYTES,
    WORD_MASK,
    ProtocolError,
)
from espsim.l2_cache import CoreOp, CoreSideReq, L2Controller, WriteResp
from espsim.monitors import Observer

logger = logging.getLogger(__name__)


class OpKind(Enum):
    LD = "LD"
    ST = "ST"
    AMOADD = "AMOADD"
    AMOSWAP = "AMOSWAP"
    AMOAND = "AMOAND"
    AMOOR = "AMOOR"
    AMOXOR = "AMOXOR"
    AMOMIN = "AMOMIN"
    AMOMAX = "AMOMAX"
    AMOMINU = "AMOMINU"
    AMOMAXU = "AMOMAXU"
    LR = "LR"
    SC = "SC"
    IF = "IF"
    FENCE = "FENCE"


AMO_KINDS = {
    OpKind.AMOADD: AmoOp.ADD,
    OpKind.AMOSWAP: AmoOp.SWAP,
    OpKind.AMOAND: AmoOp.AND,
    OpKind.AMOOR: AmoOp.OR,
    OpKind.AMOXOR: AmoOp.XOR,
    OpKind.AMOMIN: AmoOp.MIN,
    OpKind.AMOMAX: AmoOp.MAX,
    OpKind.AMOMINU: AmoOp.MINU,
    OpKind.AMOMAXU: AmoOp.MAXU,
}

# Ops that carry a value operand.
VALUE_KINDS = frozenset(AMO_KINDS) | {OpKind.ST, OpKind.SC}


@dataclass(frozen=True)
class TraceOp:
    kind: OpKind
    addr: int = 0
    value: Optional[int] = None

    def __str__(self) -> str:
        text = f"{self.kind.value} {self.addr:#x}"
        return text if self.value is None else f"{text} {self.value}"


Program = Union[Iterable[TraceOp], Generator]


def linear_program(ops: Iterable[TraceOp]) -> Generator:
    """A program that ignores results and issues *ops* in order."""
    for op in ops:
        yield op


# ---------------------------------------------------------------------------
# AMO ALU and adapter
# ---------------------------------------------------------------------------

def _signed(value: int) -> int:
    value &= WORD_MASK
    return value - (1 << 32) if value & 0x8000_0000 else value


def amo_alu(atop: Union[AmoOp, int], mem: int, operand: int) -> int:
    """32-bit RISC-V AMO result for memory value *mem* and *operand*."""
    try:
        op = AmoOp(atop) if not isinstance(atop, AmoOp) else atop
    except ValueError:
        raise ProtocolError(f"unsupported atop code {atop}") from None
    mem &= WORD_MASK
    operand &= WORD_MASK
    if op is AmoOp.ADD:
        result = mem + operand
    elif op is AmoOp.SWAP:
        result = operand
    elif op is AmoOp.AND:
        result = mem & operand
    elif op is AmoOp.OR:
        result = mem | operand
    elif op is AmoOp.XOR:
        result = mem ^ operand
    elif op is AmoOp.MIN:
        result = mem if _signed(mem) <= _signed(operand) else operand
    elif op is AmoOp.MAX:
        result = mem if _signed(mem) >= _signed(operand) else operand
    elif op is AmoOp.MINU:
        result = min(mem, operand)
    else:
        result = max(mem, operand)
    return result & WORD_MASK


class AmoAdapter:
    """Splits core atomics into the locked L2 transactions.

    AMOs become an AmoRead/AmoWrite pair carrying the atop code; LR/SC become
    LrRead/ScWrite with atop 0 and the reservation tag in ``user``.
    """

    @staticmethod
    def read(op: TraceOp, tag: int = 0) -> CoreSideReq:
        if op.kind in AMO_KINDS:
            return CoreSideReq(CoreOp.AMO_READ, op.addr, lock=True, atop=AMO_KINDS[op.kind].value)
        if op.kind is OpKind.LR:
            return CoreSideReq(CoreOp.LR_READ, op.addr, lock=True, atop=0, user=tag)
        if op.kind is OpKind.SC:
            return CoreSideReq(CoreOp.SC_WRITE, op.addr, data=op.value & WORD_MASK,
                               lock=True, atop=0, user=tag)
        raise ProtocolError(f"{op.kind.value} is not an atomic op", addr=op.addr)

    @staticmethod
    def write(op: TraceOp, old: int) -> CoreSideReq:
        atop = AMO_KINDS[op.kind]
        return CoreSideReq(CoreOp.AMO_WRITE, op.addr, data=amo_alu(atop, old, op.value),
                           lock=True, atop=atop.value)


# ---------------------------------------------------------------------------
# L1 data cache
# ---------------------------------------------------------------------------

@dataclass
class L1Stats:
    hits: int = 0
    misses: int = 0
    inval_hits: int = 0
    inval_ignored: int = 0
    icache_invals: int = 0
    flushes: int = 0


class L1Cache:
    """Write-through, no-write-allocate L1D holding read-only line copies."""

    def __init__(self, geom: CacheGeometry, endianness: str = "little") -> None:
        self.geom = geom
        self.endianness = endianness
        self.sets: dict = {}
        self.stats = L1Stats()

    def _ways(self, line: int) -> OrderedDict:
        return self.sets.setdefault(set_index(line, self.geom), OrderedDict())

    def __contains__(self, addr: int) -> bool:
        line = line_addr(addr, self.geom.line_bytes)
        return line in self._ways(line)

    def __len__(self) -> int:
        return sum(len(ways) for ways in self.sets.values())

    def read(self, addr: int) -> Optional[int]:
        line = line_addr(addr, self.geom.line_bytes)
        ways = self._ways(line)
        data = ways.get(line)
        if data is None:
            self.stats.misses += 1
            return None
        self.stats.hits += 1
        ways.move_to_end(line)
        return read_word(data, addr % self.geom.line_bytes, self.endianness)

    def fill(self, line: int, data: bytes) -> None:
        ways = self._ways(line)
        if line not in ways and len(ways) >= self.geom.ways:
            ways.popitem(last=False)
        ways[line] = data
        ways.move_to_end(line)

    def update(self, addr: int, value: int) -> None:
        line = line_addr(addr, self.geom.line_bytes)
        ways = self._ways(line)
        if line in ways:
            ways[line] = write_word(ways[line], addr % self.geom.line_bytes, value,
                                    self.endianness)

    def invalidate(self, line: int) -> bool:
        return self._ways(line).pop(line, None) is not None

    def snoop(self, line: int, perm: Perm) -> None:
        """MakeInvalid from the L2: data lookups invalidate on a hit; the
        instruction side is only counted."""
        if Perm.DATA in perm:
            if self.invalidate(line):
                self.stats.inval_hits += 1
            else:
                self.stats.inval_ignored += 1
        if Perm.INSTR in perm:
            self.stats.icache_invals += 1

    def flush(self) -> int:
        count = len(self)
        self.sets.clear()
        self.stats.flushes += 1
        return count


# ---------------------------------------------------------------------------
# Core
# ---------------------------------------------------------------------------

class CoreState(Enum):
    IDLE = "idle"
    WAIT_L1 = "wait-l1"
    WAIT_L2 = "wait-l2"
    WAIT_AMO_READ = "wait-amo-read"
    WAIT_ALU = "wait-alu"
    WAIT_AMO_WRITE = "wait-amo-write"
    WAIT_MMIO = "wait-mmio"
    WAIT_IRQ = "wait-irq"
    DONE = "done"


@dataclass
class CoreStats:
    loads: int = 0
    stores: int = 0
    atomics: int = 0
    ifetches: int = 0
    mmio: int = 0
    sc_success: int = 0
    sc_failure: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


class CoreModel:
    """Blocking in-order core: one memory operation outstanding at a time.

    Parameters
    ----------
    core_id : int
        Architectural core number (raster order of processor tiles).
    tile : int
        Raster index of the processor tile.
    program : list of TraceOp or generator
        The op stream; generators receive each op's result.
    l2 : L2Controller
        The tile's private L2.
    start : int
        First cycle at which the core may issue.
    """

    def __init__(
        self,
        core_id: int,
        tile: int,
        program: Program,
        l2: L2Controller,
        l1_geom: CacheGeometry,
        *,
        endianness: str = "little",
        mmio_base: int = DEFAULT_MMIO_BASE,
        l1_hit_latency: int = DEFAULT_L1_HIT_LATENCY,
        alu_latency: int = DEFAULT_ALU_LATENCY,
        start: int = 0,
        observer: Optional[Observer] = None,
    ) -> None:
        self.core_id = core_id
        self.tile = tile
        self.l2 = l2
        self.l1 = L1Cache(l1_geom, endianness)
        self.l1i: set = set()
        self.mmio_base = mmio_base
        self.l1_hit_latency = l1_hit_latency
        self.alu_latency = alu_latency
        self.start = start
        self.observer = observer or Observer()
        self.stats = CoreStats()

        self.results: List[Optional[int]] = []
        self.retired = 0
        self.last_progress = start
        self.outbox: list = []
        self.state = CoreState.IDLE

        self._gen = program if hasattr(program, "send") else linear_program(program)
        self._started = False
        self._op: Optional[TraceOp] = None
        self._next_issue = start
        self._issue = 0
        self._ready = 0
        self._value: Optional[int] = None
        self._amo_old = 0
        self._amo_new = 0
        self._tag = (core_id + 1) << 16
        self._lr_open = False
        self._mmio_rsp: Optional[CohMsg] = None
        self._irqs = 0

        l2.snoop = self.l1.snoop
        l2.l1_flush = self.l1_flush

    @property
    def done(self) -> bool:
        return self.state is CoreState.DONE

    @property
    def current_op(self) -> Optional[TraceOp]:
        return self._op

    # ------------------------------------------------------------------
    # Events from the tile
    # ------------------------------------------------------------------

    def mmio_response(self, msg: CohMsg) -> None:
        self._mmio_rsp = msg

    def interrupt(self) -> None:
        self._irqs += 1

    def l1_flush(self, flush_done: Callable[[], None]) -> None:
        """Flush the L1D and raise flush_done.  Write-through, so nothing to write back."""
        self.l1.flush()
        flush_done()

    def drain(self) -> list:
        out, self.outbox = self.outbox, []
        return out

    # ------------------------------------------------------------------
    # Cycle
    # ------------------------------------------------------------------

    def step(self, cycle: int) -> None:
        if self.done or cycle < self.start:
            return
        if not self._started:
            self._started = True
            self._advance(None)
            if self.done:
                return
        self._complete(cycle)
        if self.state is CoreState.IDLE and cycle >= self._next_issue:
            self._issue_op(cycle)

    def _advance(self, result: Optional[int]) -> None:
        try:
            self._op = self._gen.send(result) if self._op is not None else next(self._gen)
        except StopIteration:
            self._op = None
            self.state = CoreState.DONE

    def _retire(self, cycle: int, value: Optional[int]) -> None:
        self.results.append(value)
        self.retired += 1
        self.last_progress = cycle
        self.state = CoreState.IDLE
        self._next_issue = cycle + 1
        self._advance(value)

    def _complete(self, cycle: int) -> None:
        st = self.state
        if st in (CoreState.WAIT_L1, CoreState.WAIT_ALU):
            if cycle < self._ready:
                return
            if st is CoreState.WAIT_L1:
                self._retire(cycle, self._value)
            else:
                self.l2.request(AmoAdapter.write(self._op, self._amo_old))
                self.state = CoreState.WAIT_AMO_WRITE
            return
        if st is CoreState.WAIT_MMIO:
            msg, self._mmio_rsp = self._mmio_rsp, None
            if msg is None:
                return
            if msg.status is MmioStatus.WAIT_IRQ:
                self.state = CoreState.WAIT_IRQ
            else:
                if msg.status is MmioStatus.ERROR:
                    logger.warning("core %d: MMIO error at %#x", self.core_id, msg.addr)
                value = msg.value if self._op.kind is OpKind.LD else None
                self._retire(cycle, value)
                return
        if self.state is CoreState.WAIT_IRQ:
            if self._irqs:
                self._irqs -= 1
                self._retire(cycle, None)
            return
        if st not in (CoreState.WAIT_L2, CoreState.WAIT_AMO_READ, CoreState.WAIT_AMO_WRITE):
            return
        resp = self.l2.pop_response(cycle)
        if resp is None:
            return
        op = resp.req.op
        word = resp.req.addr - resp.req.addr % WORD_BYTES
        if st is CoreState.WAIT_AMO_READ:
            self._amo_old = resp.value
            self.observer.word_read(word, resp.value, self._issue, cycle, self.tile)
            self.state = CoreState.WAIT_ALU
            self._ready = cycle + self.alu_latency
            return
        if st is CoreState.WAIT_AMO_WRITE:
            self._retire(cycle, self._amo_old)
            return
        if op is CoreOp.LOAD:
            self.observer.word_read(word, resp.value, self._issue, cycle, self.tile)
            if resp.cacheable and resp.line is not None:
                line = line_addr(resp.req.addr, self.l1.geom.line_bytes)
                held = self.l2.lookup(line)
                if held is not None and held.data == resp.line:
                    self.l1.fill(line, resp.line)
            self._retire(cycle, resp.value)
        elif op is CoreOp.STORE:
            self.l1.update(resp.req.addr, resp.req.data)
            self._retire(cycle, None)
        elif op is CoreOp.IFETCH:
            self.l1i.add(line_addr(resp.req.addr, self.l1.geom.line_bytes))
            self._retire(cycle, None)
        elif op is CoreOp.LR_READ:
            self.observer.word_read(word, resp.value, self._issue, cycle, self.tile)
            self._lr_open = True
            self._retire(cycle, resp.value)
        elif op is CoreOp.SC_WRITE:
            self._lr_open = False
            if resp.code is WriteResp.EXOKAY:
                self.stats.sc_success += 1
                self._retire(cycle, 0)
            else:
                self.stats.sc_failure += 1
                self._retire(cycle, 1)
        else:
            raise ProtocolError(f"unexpected L2 response to {op.value}", tile=self.tile)

    def _issue_op(self, cycle: int) -> None:
        op = self._op
        self._issue = cycle
        kind = op.kind
        line = line_addr(op.addr, self.l1.geom.line_bytes)

        if kind is OpKind.FENCE:
            self._retire(cycle, None)
            return
        if kind in (OpKind.LD, OpKind.ST) and op.addr >= self.mmio_base:
            self.stats.mmio += 1
            msg_kind = MsgKind.MMIO_READ if kind is OpKind.LD else MsgKind.MMIO_WRITE
            self.outbox.append(CohMsg(msg_kind, op.addr, self.tile,
                                      value=(op.value or 0) & WORD_MASK))
            self.state = CoreState.WAIT_MMIO
            return

        if kind is OpKind.LD:
            self.stats.loads += 1
            if not self._lr_open:
                value = self.l1.read(op.addr)
                if value is not None:
                    word = op.addr - op.addr % WORD_BYTES
                    self._ready = cycle + self.l1_hit_latency
                    self.observer.word_read(word, value, cycle, self._ready, self.tile)
                    self._value = value
                    self.state = CoreState.WAIT_L1
                    return
            self._lr_open = False
            self.l2.request(CoreSideReq(CoreOp.LOAD, op.addr))
            self.state = CoreState.WAIT_L2
        elif kind is OpKind.ST:
            self.stats.stores += 1
            self._lr_open = False
            self.l2.request(CoreSideReq(CoreOp.STORE, op.addr, data=op.value & WORD_MASK))
            self.state = CoreState.WAIT_L2
        elif kind is OpKind.IF:
            self.stats.ifetches += 1
            if line in self.l1i:
                self._value = None
                self._ready = cycle + self.l1_hit_latency
                self.state = CoreState.WAIT_L1
                return
            self.l2.request(CoreSideReq(CoreOp.IFETCH, op.addr))
            self.state = CoreState.WAIT_L2
        else:
            self.stats.atomics += 1
            self.l1.invalidate(line)
            if kind is OpKind.LR:
                self._tag += 1
            self._lr_open = False
            self.l2.request(AmoAdapter.read(op, self._tag))
            self.state = CoreState.WAIT_AMO_READ if kind in AMO_KINDS else CoreState.WAIT_L2
