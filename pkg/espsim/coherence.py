"""
Shared coherence vocabulary: cache geometry, line and directory states,
message kinds, the NoC plane mapping, and word access on line payloads.

Everything here is a value type or a pure function.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum, Flag, auto
from typing import Optional, Tuple

from espsim.config import DEFAULT_MEM_SIZE, WORD_BYTES, WORD_MASK, ConfigError

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


@dataclass(frozen=True)
class CacheGeometry:
    """Set-associative cache shape.  ``capacity`` is derived."""

    line_bytes: int
    sets: int
    ways: int

    def __post_init__(self) -> None:
        if not _is_pow2(self.line_bytes) or self.line_bytes < 8:
            raise ConfigError(f"line_bytes must be a power of two >= 8, got {self.line_bytes}")
        if not _is_pow2(self.sets):
            raise ConfigError(f"sets must be a power of two, got {self.sets}")
        if self.ways < 1:
            raise ConfigError(f"ways must be positive, got {self.ways}")

    @property
    def capacity(self) -> int:
        return self.line_bytes * self.sets * self.ways

    @classmethod
    def from_capacity(cls, capacity: int, line_bytes: int, ways: int) -> "CacheGeometry":
        if capacity % (line_bytes * ways):
            raise ConfigError(
                f"capacity {capacity} is not a multiple of line_bytes*ways ({line_bytes * ways})"
            )
        return cls(line_bytes, capacity // (line_bytes * ways), ways)


def line_split(addr: int, geom: CacheGeometry,
               mem_size: int = DEFAULT_MEM_SIZE) -> Tuple[int, int, int]:
    """Split *addr* into ``(tag, set_index, offset)``.

    Parameters
    ----------
    addr : int
        Physical byte address.
    geom : CacheGeometry
        Geometry of the cache doing the lookup.
    mem_size : int
        Size of physical memory; addresses at or beyond it are rejected.

    Raises
    ------
    ConfigError
        If the address is negative or outside the memory range.
    """
    if not 0 <= addr < mem_size:
        raise ConfigError(f"address {addr:#x} outside memory range [0, {mem_size:#x})")
    offset = addr % geom.line_bytes
    line_no = addr // geom.line_bytes
    return line_no // geom.sets, line_no % geom.sets, offset


def line_compose(tag: int, set_index: int, offset: int, geom: CacheGeometry) -> int:
    return (tag * geom.sets + set_index) * geom.line_bytes + offset


def line_addr(addr: int, line_bytes: int) -> int:
    """Line-aligned base of *addr*."""
    return addr - addr % line_bytes


def set_index(addr: int, geom: CacheGeometry) -> int:
    return (addr // geom.line_bytes) % geom.sets


# ---------------------------------------------------------------------------
# States
# ---------------------------------------------------------------------------

class LineState(Enum):
    """L2 line state.  The L2 never holds V; that state exists only at the LLC."""

    I = "I"  # noqa: E741
    S = "S"
    E = "E"
    M = "M"
    IS_A = "IS_A"
    IM_A = "IM_A"
    SM_A = "SM_A"
    MI_A = "MI_A"
    XMW = "XMW"

    @property
    def stable(self) -> bool:
        return self in (LineState.I, LineState.S, LineState.E, LineState.M)

    @property
    def writable(self) -> bool:
        return self in (LineState.E, LineState.M, LineState.XMW)

    @property
    def readable(self) -> bool:
        # SM_A still holds the S copy until an Inv or the upgrade arrives.
        return self in (LineState.S, LineState.SM_A)


class DirState(Enum):
    I = "I"  # noqa: E741
    V = "V"
    S = "S"
    E = "E"
    M = "M"
    BUSY_RECALL = "Busy-Recall"
    BUSY_MEM = "Busy-Mem"


@dataclass
class DirEntry:
    """Directory metadata for one LLC line.

    ``state`` is always the stable state; ``busy`` is set while a transaction
    (recall, invalidation round or memory fetch) is open on the line.
    """

    state: DirState = DirState.I
    owner: Optional[int] = None
    sharers: set = field(default_factory=set)
    dirty: bool = False
    busy: Optional[DirState] = None

    @property
    def effective(self) -> DirState:
        return self.busy or self.state

    def check(self) -> Optional[str]:
        """Return a description of the broken structural invariant, or None."""
        if self.state in (DirState.E, DirState.M):
            if self.owner is None or self.sharers:
                return f"{self.state.value} needs one owner and no sharers"
        elif self.state is DirState.S:
            if not self.sharers or self.owner is not None:
                return "S needs sharers and no owner"
        elif self.owner is not None or self.sharers:
            return f"{self.state.value} must have no owner and no sharers"
        return None

    def snapshot(self) -> tuple:
        return (self.state, self.owner, tuple(sorted(self.sharers)), self.dirty, self.busy)


# ---------------------------------------------------------------------------
# Messages
# ---------------------------------------------------------------------------

class MsgKind(Enum):
    GET_S = "GetS"
    GET_M = "GetM"
    PUT_S = "PutS"
    PUT_M = "PutM"
    FWD_GET_S = "FwdGetS"
    FWD_GET_M = "FwdGetM"
    INV = "Inv"
    INV_ACK = "InvAck"
    DATA_RSP = "DataRsp"
    WB_ACK = "WbAck"
    DMA_READ_BURST = "DmaReadBurst"
    DMA_WRITE_BURST = "DmaWriteBurst"
    DMA_RSP = "DmaRsp"
    MMIO_READ = "MmioRead"
    MMIO_WRITE = "MmioWrite"
    MMIO_RSP = "MmioRsp"
    IRQ = "Irq"


REQUEST_PLANE = 0
FORWARD_PLANE = 1
RESPONSE_PLANE = 2
DMA_REQUEST_PLANE = 3
DMA_RESPONSE_PLANE = 4
MMIO_PLANE = 5

_PLANES = {
    MsgKind.GET_S: REQUEST_PLANE,
    MsgKind.GET_M: REQUEST_PLANE,
    MsgKind.PUT_S: REQUEST_PLANE,
    MsgKind.PUT_M: REQUEST_PLANE,
    MsgKind.FWD_GET_S: FORWARD_PLANE,
    MsgKind.FWD_GET_M: FORWARD_PLANE,
    MsgKind.INV: FORWARD_PLANE,
    MsgKind.INV_ACK: RESPONSE_PLANE,
    MsgKind.DATA_RSP: RESPONSE_PLANE,
    MsgKind.WB_ACK: RESPONSE_PLANE,
    MsgKind.DMA_READ_BURST: DMA_REQUEST_PLANE,
    MsgKind.DMA_WRITE_BURST: DMA_REQUEST_PLANE,
    MsgKind.DMA_RSP: DMA_RESPONSE_PLANE,
    MsgKind.MMIO_READ: MMIO_PLANE,
    MsgKind.MMIO_WRITE: MMIO_PLANE,
    MsgKind.MMIO_RSP: MMIO_PLANE,
    MsgKind.IRQ: MMIO_PLANE,
}

COHERENCE_PLANES = (REQUEST_PLANE, FORWARD_PLANE, RESPONSE_PLANE)


class Perm(Flag):
    NONE = 0
    INSTR = auto()
    DATA = auto()


class AmoOp(Enum):
    """Non-zero atop codes; LR/SC travel with atop 0."""

    ADD = 1
    SWAP = 2
    AND = 3
    OR = 4
    XOR = 5
    MIN = 6
    MAX = 7
    MINU = 8
    MAXU = 9


class MmioStatus(Enum):
    OK = "ok"
    ERROR = "error"
    WAIT_IRQ = "wait-irq"


@dataclass(frozen=True)
class MsgMeta:
    lock: bool = False
    atop: int = 0
    user: int = 0
    perm: Perm = Perm.NONE


@dataclass(frozen=True)
class CohMsg:
    """One coherence, DMA or MMIO message.

    ``dst`` may be None on the sending side; the NoC proxy resolves it from the
    address (home memory tile or MMIO register map).
    """

    kind: MsgKind
    addr: int
    src: int
    dst: Optional[int] = None
    req: Optional[int] = None
    data: Optional[bytes] = None
    meta: MsgMeta = MsgMeta()
    grant: Optional[LineState] = None
    dirty: bool = False
    value: int = 0
    bypass: bool = False
    status: MmioStatus = MmioStatus.OK

    def __str__(self) -> str:
        dst = "?" if self.dst is None else self.dst
        return f"{self.kind.value}[{self.addr:#x} {self.src}->{dst}]"


def plane_of(msg: CohMsg) -> int:
    """NoC plane carrying *msg*: 0 requests, 1 forwards, 2 responses,
    3 DMA requests, 4 DMA responses, 5 MMIO and interrupts."""
    return _PLANES[msg.kind]


# ---------------------------------------------------------------------------
# Word access on line payloads
# ---------------------------------------------------------------------------

def _byteorder(endianness: str) -> str:
    if endianness not in ("little", "big"):
        raise ConfigError(f"unknown endianness {endianness!r}")
    return endianness


def read_word(line: bytes, offset: int, endianness: str = "little") -> int:
    """Read the 32-bit word at byte *offset* (word aligned) of a line."""
    offset -= offset % WORD_BYTES
    return int.from_bytes(line[offset:offset + WORD_BYTES], _byteorder(endianness))


def write_word(line: bytes, offset: int, value: int, endianness: str = "little") -> bytes:
    """Return a copy of *line* with the word at *offset* replaced."""
    offset -= offset % WORD_BYTES
    word = (value & WORD_MASK).to_bytes(WORD_BYTES, _byteorder(endianness))
    return line[:offset] + word + line[offset + WORD_BYTES:]
