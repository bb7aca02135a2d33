"""
Accelerator tiles.

An accelerator runs a job, a list of DMA descriptors, in one of three
coherence modes:

* ``fully-coherent``: word loads/stores through the tile's private L2.
* ``llc-coherent``: DMA bursts to the home LLC slices, which recall owned
  lines and leave every touched line in V.
* ``non-coherent``: DMA bursts straight to backing memory; the caches must
  have been flushed beforehand.

On completion the accelerator posts an interrupt to the auxiliary tile,
naming the tile that started it.
"""

import logging
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Optional, Tuple

from espsim.coherence import CohMsg, MsgKind, read_word, write_word
from espsim.config import WORD_BYTES, WORD_MASK, ConfigError
from espsim.l2_cache import CoreOp, CoreSideReq, L2Controller
from espsim.monitors import Observer

logger = logging.getLogger(__name__)


class CoherenceMode(Enum):
    FULLY_COHERENT = "fully-coherent"
    LLC_COHERENT = "llc-coherent"
    NON_COHERENT = "non-coherent"


@dataclass(frozen=True)
class DmaDescriptor:
    """One DMA step.  Write descriptors store ``fill + i`` into word *i*."""

    direction: str
    base: int
    length: int
    fill: int = 0
    compute_delay: int = 0

    def __post_init__(self) -> None:
        if self.direction not in ("read", "write"):
            raise ConfigError(f"DMA direction must be read or write, got {self.direction!r}")
        if self.length <= 0:
            raise ConfigError(f"DMA length must be positive, got {self.length}")

    def check(self, line_bytes: int, mem_size: int) -> None:
        if self.base % line_bytes or self.length % line_bytes:
            raise ConfigError(
                f"DMA {self.direction} {self.base:#x}+{self.length} is not line aligned"
            )
        if self.base + self.length > mem_size:
            raise ConfigError(f"DMA {self.direction} {self.base:#x}+{self.length} past memory")

    def payload(self, endianness: str = "little") -> bytes:
        data = bytes(self.length)
        for i in range(self.length // WORD_BYTES):
            data = write_word(data, i * WORD_BYTES, (self.fill + i) & WORD_MASK, endianness)
        return data


@dataclass(frozen=True)
class AcceleratorSpec:
    mode: CoherenceMode
    job: Tuple[DmaDescriptor, ...] = ()


def split_burst(base: int, length: int, line_bytes: int,
                home_of: Callable[[int], int]) -> List[Tuple[int, int, int]]:
    """Split a burst at partition boundaries.

    Returns ``(home_tile, base, length)`` chunks in address order.
    """
    chunks: List[list] = []
    for line in range(base, base + length, line_bytes):
        home = home_of(line)
        if chunks and chunks[-1][0] == home:
            chunks[-1][2] += line_bytes
        else:
            chunks.append([home, line, line_bytes])
    return [tuple(c) for c in chunks]


class AcceleratorModel:
    """One accelerator instance and its DMA engine.

    Parameters
    ----------
    tile : int
        Raster index of the accelerator tile.
    spec : AcceleratorSpec
        Mode and job.
    aux_tile : int
        Tile receiving the completion interrupt.
    l2 : L2Controller, optional
        Private L2, required in fully-coherent mode.
    """

    def __init__(
        self,
        tile: int,
        spec: AcceleratorSpec,
        line_bytes: int,
        home_of: Callable[[int], int],
        aux_tile: int,
        *,
        l2: Optional[L2Controller] = None,
        endianness: str = "little",
        observer: Optional[Observer] = None,
    ) -> None:
        if spec.mode is CoherenceMode.FULLY_COHERENT and l2 is None:
            raise ConfigError(f"fully-coherent accelerator at tile {tile} needs an L2")
        self.tile = tile
        self.spec = spec
        self.line_bytes = line_bytes
        self.home_of = home_of
        self.aux_tile = aux_tile
        self.l2 = l2
        self.endianness = endianness
        self.observer = observer or Observer()

        self.running = False
        self.invoker: Optional[int] = None
        self.jobs_done = 0
        self.read_buffer: List[int] = []
        self.outbox: list = []
        self.last_progress = 0

        self._phase = "idle"
        self._step = 0
        self._ready = 0
        self._outstanding = 0
        self._lines: dict = {}
        self._words: deque = deque()
        self._word_busy = False
        self._issue = 0

    # ------------------------------------------------------------------
    # Control
    # ------------------------------------------------------------------

    def start(self, invoker: int, cycle: int) -> bool:
        """Begin the job; False if a job is already running."""
        if self.running:
            return False
        logger.debug("accelerator %d started by tile %d at cycle %d", self.tile, invoker, cycle)
        self.running = True
        self.invoker = invoker
        self.read_buffer = []
        self._step = 0
        self._ready = cycle
        self._outstanding = 0
        self._phase = "issue"
        self.last_progress = cycle
        return True

    def idle(self) -> bool:
        return not self.running and not self.outbox

    def drain(self) -> list:
        out, self.outbox = self.outbox, []
        return out

    # ------------------------------------------------------------------
    # Job sequencing
    # ------------------------------------------------------------------

    def _begin_step(self, cycle: int) -> None:
        job = self.spec.job
        if self._step >= len(job):
            self._finish(cycle)
            return
        desc = job[self._step]
        if self.spec.mode is CoherenceMode.FULLY_COHERENT:
            for i in range(desc.length // WORD_BYTES):
                addr = desc.base + i * WORD_BYTES
                if desc.direction == "read":
                    self._words.append(CoreSideReq(CoreOp.LOAD, addr))
                else:
                    self._words.append(
                        CoreSideReq(CoreOp.STORE, addr, data=(desc.fill + i) & WORD_MASK))
            return
        bypass = self.spec.mode is CoherenceMode.NON_COHERENT
        payload = desc.payload(self.endianness) if desc.direction == "write" else None
        self._lines = {}
        for home, base, length in split_burst(desc.base, desc.length, self.line_bytes,
                                              self.home_of):
            if desc.direction == "read":
                kind = MsgKind.DMA_READ_BURST
                self._outstanding += length // self.line_bytes
                data = None
            else:
                kind = MsgKind.DMA_WRITE_BURST
                self._outstanding += 1
                data = payload[base - desc.base:base - desc.base + length]
            self.outbox.append(CohMsg(kind, base, self.tile, home, data=data, value=length,
                                      bypass=bypass))

    def _end_step(self, cycle: int) -> None:
        desc = self.spec.job[self._step]
        if desc.direction == "read" and self.spec.mode is not CoherenceMode.FULLY_COHERENT:
            for line in sorted(self._lines):
                data = self._lines[line]
                self.read_buffer.extend(
                    read_word(data, off, self.endianness)
                    for off in range(0, self.line_bytes, WORD_BYTES)
                )
        self._step += 1
        self._ready = cycle + desc.compute_delay
        self._phase = "issue"

    def _finish(self, cycle: int) -> None:
        self.running = False
        self._phase = "idle"
        self.jobs_done += 1
        logger.debug("accelerator %d done at cycle %d", self.tile, cycle)
        self.outbox.append(CohMsg(MsgKind.IRQ, 0, self.tile, self.aux_tile, req=self.invoker))

    def tick(self, cycle: int) -> None:
        if not self.running:
            return
        if self.spec.mode is CoherenceMode.FULLY_COHERENT and self._word_busy:
            self._collect_word(cycle)
        if cycle < self._ready:
            return
        if self._phase == "issue":
            self._phase = "wait"
            self._begin_step(cycle)
        if (self._phase == "wait" and self.spec.mode is CoherenceMode.FULLY_COHERENT
                and not self._word_busy and self._words):
            self._issue = cycle
            self._word_busy = True
            self.l2.request(self._words.popleft())

    def _collect_word(self, cycle: int) -> None:
        resp = self.l2.pop_response(cycle)
        if resp is None:
            return
        self._word_busy = False
        self.last_progress = cycle
        if resp.req.op is CoreOp.LOAD:
            self.read_buffer.append(resp.value)
            self.observer.word_read(resp.req.addr, resp.value, self._issue, cycle, self.tile)
        if not self._words:
            self._end_step(cycle)

    def receive(self, msg: CohMsg, cycle: int) -> None:
        if msg.kind is not MsgKind.DMA_RSP or not self.running:
            logger.warning("accelerator %d ignored %s", self.tile, msg)
            return
        self.last_progress = cycle
        if msg.data is not None:
            self._lines[msg.addr] = msg.data
        self._outstanding -= 1
        if self._outstanding == 0:
            self._end_step(cycle)
