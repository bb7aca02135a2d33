"""
Sequential-consistency reference model for litmus tests.

``sc_oracle`` enumerates every interleaving of the per-core programs over a
flat, atomic word memory and collects the observed outcomes.  Interleavings
reaching the same (program counters, memory, reservations) state share their
futures, so the enumeration is memoised on that state.
"""

import logging
import re
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Dict, FrozenSet, Mapping, Optional, Tuple

from espsim.config import (
    DEFAULT_LINE_BYTES,
    DEFAULT_MMIO_BASE,
    ORACLE_MAX_OPS,
    WORD_BYTES,
    WORD_MASK,
    ConfigError,
    OracleBoundError,
)
from espsim.core import AMO_KINDS, OpKind, TraceOp, amo_alu

logger = logging.getLogger(__name__)

Outcome = Tuple[int, ...]

# Ops whose result register can be observed.
RESULT_KINDS = frozenset(AMO_KINDS) | {OpKind.LD, OpKind.LR, OpKind.SC}
_DATA_KINDS = frozenset(AMO_KINDS) | {OpKind.LD, OpKind.ST, OpKind.LR, OpKind.SC}

_REG_PATTERN = re.compile(r"^c(\d+)\.(\d+)$")
_MEM_PATTERN = re.compile(r"^mem\[(0x[0-9a-fA-F]+|\d+)\]$")


@dataclass(frozen=True)
class Observation:
    """An observed quantity: core *core*'s *index*-th op result, or the final
    value of the word at *addr* when *core* is None."""

    core: Optional[int] = None
    index: int = 0
    addr: int = 0

    @classmethod
    def parse(cls, text: str) -> "Observation":
        text = text.strip()
        match = _REG_PATTERN.match(text)
        if match:
            return cls(core=int(match.group(1)), index=int(match.group(2)))
        match = _MEM_PATTERN.match(text)
        if match:
            return cls(addr=int(match.group(1), 0))
        raise ConfigError(f"bad observation {text!r}; expected cN.K or mem[ADDR]")

    @property
    def is_memory(self) -> bool:
        return self.core is None

    def __str__(self) -> str:
        return f"mem[{self.addr:#x}]" if self.is_memory else f"c{self.core}.{self.index}"


@dataclass(frozen=True)
class LitmusTest:
    """A small multi-core program plus the quantities it observes.

    The allowed outcomes are never authored: :attr:`allowed` runs the oracle.
    """

    name: str
    programs: Tuple[Tuple[TraceOp, ...], ...]
    observe: Tuple[Observation, ...]
    init: Mapping[int, int] = field(default_factory=dict)
    line_bytes: int = DEFAULT_LINE_BYTES
    mmio_base: int = DEFAULT_MMIO_BASE

    def __post_init__(self) -> None:
        if not self.programs:
            raise ConfigError(f"litmus test {self.name!r} has no cores")
        if not self.observe:
            raise ConfigError(f"litmus test {self.name!r} observes nothing")
        for obs in self.observe:
            if obs.is_memory:
                continue
            if obs.core >= len(self.programs) or obs.index >= len(self.programs[obs.core]):
                raise ConfigError(f"litmus test {self.name!r}: {obs} names no op")
            op = self.programs[obs.core][obs.index]
            kind = op.kind
            if kind not in RESULT_KINDS or op.addr >= self.mmio_base:
                raise ConfigError(f"litmus test {self.name!r}: {obs} is a {kind.value}, "
                                  "which has no observable result")
        data_lines = {self._line(op.addr) for prog in self.programs for op in prog
                      if op.kind in _DATA_KINDS and op.addr < self.mmio_base}
        fetch_lines = {self._line(op.addr) for prog in self.programs for op in prog
                       if op.kind is OpKind.IF}
        if data_lines & fetch_lines:
            raise ConfigError(f"litmus test {self.name!r}: instruction fetches share a line "
                              "with data accesses")

    def _line(self, addr: int) -> int:
        return addr - addr % self.line_bytes

    @property
    def total_ops(self) -> int:
        return sum(len(p) for p in self.programs)

    @cached_property
    def allowed(self) -> FrozenSet[Outcome]:
        return sc_oracle(self)

    def outcome_str(self, outcome: Outcome) -> str:
        return " ".join(f"{obs}={value}" for obs, value in zip(self.observe, outcome))


def _word(addr: int) -> int:
    return addr - addr % WORD_BYTES


def sc_oracle(test: LitmusTest, max_ops: int = ORACLE_MAX_OPS) -> FrozenSet[Outcome]:
    """All outcomes of *test* permitted under sequential consistency.

    Reservations follow the hardware: an open LR ends at the core's next data
    access and at any other core's access to the reserved line (a successful SC
    included).  MMIO and instruction fetches do not touch memory.

    Raises
    ------
    OracleBoundError
        When the test has more than *max_ops* operations.
    """
    if test.total_ops > max_ops:
        raise OracleBoundError(
            f"litmus test {test.name!r} has {test.total_ops} ops; the oracle handles {max_ops}"
        )
    programs = test.programs
    n_cores = len(programs)
    slots: Dict[Tuple[int, int], int] = {
        (obs.core, obs.index): i for i, obs in enumerate(test.observe) if not obs.is_memory
    }
    mem_obs = [(i, _word(obs.addr)) for i, obs in enumerate(test.observe) if obs.is_memory]
    width = len(test.observe)
    initial = tuple(sorted((_word(a), v & WORD_MASK) for a, v in test.init.items()))

    @lru_cache(maxsize=None)
    def explore(pcs: tuple, memory: tuple, resv: tuple) -> FrozenSet[tuple]:
        if all(pc == len(prog) for pc, prog in zip(pcs, programs)):
            final = dict(memory)
            out = [None] * width
            for i, addr in mem_obs:
                out[i] = final.get(addr, 0)
            return frozenset([tuple(out)])
        found = set()
        for core in range(n_cores):
            pc = pcs[core]
            if pc == len(programs[core]):
                continue
            result, mem2, resv2 = _execute(programs[core][pc], core, dict(memory), list(resv),
                                           test.line_bytes, test.mmio_base)
            pcs2 = pcs[:core] + (pc + 1,) + pcs[core + 1:]
            slot = slots.get((core, pc))
            for future in explore(pcs2, tuple(sorted(mem2.items())), tuple(resv2)):
                if slot is not None:
                    future = future[:slot] + (result,) + future[slot + 1:]
                found.add(future)
        return frozenset(found)

    allowed = explore((0,) * n_cores, initial, (None,) * n_cores)
    logger.debug("oracle %s: %d allowed outcomes (%s states)", test.name, len(allowed),
                 explore.cache_info().currsize)
    return allowed


def _execute(op: TraceOp, core: int, memory: dict, resv: list, line_bytes: int,
             mmio_base: int = DEFAULT_MMIO_BASE):
    """Perform *op* atomically; returns (result, memory, reservations)."""
    kind = op.kind
    if kind in (OpKind.FENCE, OpKind.IF) or op.addr >= mmio_base:
        return None, memory, resv
    addr = _word(op.addr)
    line = op.addr - op.addr % line_bytes

    def touch(by_other_only: bool = False) -> None:
        for other in range(len(resv)):
            if resv[other] == line and (other != core or not by_other_only):
                resv[other] = None

    result = None
    if kind is OpKind.SC:
        if resv[core] == line:
            memory[addr] = op.value & WORD_MASK
            resv[core] = None
            touch(by_other_only=True)
            result = 0
        else:
            resv[core] = None
            result = 1
        return result, memory, resv

    # Any other data access ends this core's own reservation, wherever it is.
    resv[core] = None
    touch()
    old = memory.get(addr, 0)
    if kind is OpKind.LD:
        result = old
    elif kind is OpKind.ST:
        memory[addr] = op.value & WORD_MASK
    elif kind is OpKind.LR:
        result = old
        resv[core] = line
    else:
        memory[addr] = amo_alu(AMO_KINDS[kind], old, op.value)
        result = old
    return result, memory, resv
