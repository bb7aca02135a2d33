"""
Exhaustive state-space exploration of a tiny configuration.

Two private L2 controllers (tiles 0 and 1) and one LLC slice (tile 2) are
driven by abstract cores that issue their ops straight into the L2.  Every
message sits in a FIFO per (source, destination, plane); any non-empty
channel may deliver its head next, and any core with a response waiting may
consume it.  Time is frozen at cycle 0 with all latencies and the LR grace
window set to zero, so the search covers message orderings rather than
timing.

Every reached state is checked for SWMR and directory structure.  States
with no enabled move but unfinished work are deadlocks; finished states are
checked for directory accuracy and for an outcome the SC oracle allows.
"""

import copy
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from espsim.coherence import CacheGeometry, DirState, LineState, line_addr, plane_of, read_word
from espsim.config import (
    DEFAULT_LINE_BYTES,
    EXPLORE_MAX_STATES,
    FAULT_KINDS,
    ORACLE_MAX_OPS,
    WORD_BYTES,
    ConfigError,
    ProtocolError,
)
from espsim.core import AMO_KINDS, AmoAdapter, OpKind, TraceOp
from espsim.l2_cache import CoreOp, CoreSideReq, L2Controller, MshrKind, WriteResp
from espsim.llc_cache import LlcController
from espsim.oracle import RESULT_KINDS, LitmusTest, Observation

logger = logging.getLogger(__name__)

LLC_TILE = 2
# Operand values are abstracted to this set to keep the space small.
VALUE_DOMAIN = (0, 1, 2)
_ALLOWED_KINDS = frozenset(AMO_KINDS) | {OpKind.LD, OpKind.ST, OpKind.LR, OpKind.SC,
                                         OpKind.FENCE}
_MAX_REPORTED = 20


@dataclass
class ExploreReport:
    states: int = 0
    transitions: int = 0
    terminal: int = 0
    deadlocks: int = 0
    frontier: int = 0
    stalled_forward_states: int = 0
    complete: bool = True
    violations: List[str] = field(default_factory=list)
    violation_count: int = 0
    outcomes: Set[tuple] = field(default_factory=set)

    @property
    def ok(self) -> bool:
        return self.complete and not self.deadlocks and not self.violation_count

    def add_violation(self, text: str) -> None:
        self.violation_count += 1
        if len(self.violations) < _MAX_REPORTED:
            self.violations.append(text)

    def summary(self) -> str:
        status = "complete" if self.complete else f"bound hit, frontier {self.frontier}"
        return (f"{self.states} states, {self.transitions} transitions, {self.terminal} "
                f"terminal, {self.deadlocks} deadlocks, {self.violation_count} violations "
                f"({status})")


@dataclass
class _AbstractCore:
    ops: Tuple[TraceOp, ...]
    core_id: int
    pc: int = 0
    waiting: bool = False
    old: Optional[int] = None
    tag: int = 0
    results: Tuple[Optional[int], ...] = ()

    @property
    def done(self) -> bool:
        return self.pc == len(self.ops)

    def snapshot(self) -> tuple:
        return (self.pc, self.waiting, self.old, self.tag, self.results)


@dataclass
class _World:
    l2s: List[L2Controller]
    llc: LlcController
    cores: List[_AbstractCore]
    channels: Dict[tuple, deque] = field(default_factory=dict)

    def key(self) -> tuple:
        return (
            tuple(l2.snapshot() for l2 in self.l2s),
            self.llc.snapshot(),
            self.llc.memory.tobytes(),
            tuple((k, tuple(q)) for k, q in sorted(self.channels.items()) if q),
            tuple(c.snapshot() for c in self.cores),
        )

    def settle(self) -> None:
        """Run the controllers' housekeeping and post their output to the channels."""
        self.llc.tick(0)
        for l2 in self.l2s:
            l2.tick(0)
        for agent in (*self.l2s, self.llc):
            for msg in agent.drain():
                key = (msg.src, msg.dst, plane_of(msg))
                self.channels.setdefault(key, deque()).append(msg)

    def moves(self) -> List[tuple]:
        found = [("deliver", k) for k, q in sorted(self.channels.items()) if q]
        for i, core in enumerate(self.cores):
            if core.done:
                continue
            if not core.waiting or self.l2s[i].responses:
                found.append(("core", i))
        return found

    def apply(self, move: tuple) -> None:
        kind, arg = move
        if kind == "deliver":
            queue = self.channels[arg]
            msg = queue.popleft()
            if not queue:
                del self.channels[arg]
            target = self.llc if msg.dst == LLC_TILE else self.l2s[msg.dst]
            target.handle_message(msg)
        else:
            self._core_move(arg)
        self.settle()

    def _core_move(self, i: int) -> None:
        core, l2 = self.cores[i], self.l2s[i]
        op = core.ops[core.pc]
        if not core.waiting:
            if op.kind is OpKind.FENCE:
                self._retire(core, None)
                return
            if op.kind is OpKind.LD:
                req = CoreSideReq(CoreOp.LOAD, op.addr)
            elif op.kind is OpKind.ST:
                req = CoreSideReq(CoreOp.STORE, op.addr, data=op.value)
            else:
                if op.kind is OpKind.LR:
                    core.tag += 1
                req = AmoAdapter.read(op, ((core.core_id + 1) << 16) + core.tag)
            l2.request(req)
            core.waiting = True
            return
        resp = l2.pop_response()
        if resp.req.op is CoreOp.AMO_READ:
            core.old = resp.value
            l2.request(AmoAdapter.write(op, resp.value))
            return
        if resp.req.op is CoreOp.AMO_WRITE:
            value, core.old = core.old, None
        elif resp.req.op is CoreOp.SC_WRITE:
            value = 0 if resp.code is WriteResp.EXOKAY else 1
        elif resp.req.op is CoreOp.STORE:
            value = None
        else:
            value = resp.value
        self._retire(core, value)

    @staticmethod
    def _retire(core: _AbstractCore, value: Optional[int]) -> None:
        core.results = core.results + (value,)
        core.pc += 1
        core.waiting = False

    def busy(self) -> bool:
        return (any(not c.done for c in self.cores) or any(self.channels.values())
                or any(not l2.idle() for l2 in self.l2s) or not self.llc.idle())

    def coherent_word(self, addr: int, line_bytes: int) -> int:
        line = line_addr(addr, line_bytes)
        for l2 in self.l2s:
            entry = l2.lookup(line)
            if entry is not None and entry.state in (LineState.E, LineState.M):
                return read_word(entry.data, addr - line)
        data = self.llc.line_data(line)
        if data is None:
            data = self.llc.memory[line:line + line_bytes].tobytes()
        return read_word(data, addr - line)


def _check_state(world: _World, lines: Sequence[int]) -> List[str]:
    problems = []
    for line in lines:
        states = [l2.state_of(line) for l2 in world.l2s]
        writers = [t for t, s in enumerate(states) if s.writable]
        readers = [t for t, s in enumerate(states) if s.readable]
        if len(writers) > 1 or (writers and readers):
            problems.append(f"SWMR on {line:#x}: L2 states {[s.value for s in states]}")
    for line, text in world.llc.check_directory():
        problems.append(f"directory {line:#x}: {text}")
    return problems


def _check_terminal(world: _World, lines: Sequence[int]) -> List[str]:
    """Directory accuracy once every transaction has drained."""
    problems = []
    for line in lines:
        states = [l2.state_of(line) for l2 in world.l2s]
        holders = {t for t, s in enumerate(states) if s is not LineState.I}
        dstate = world.llc.dir_state(line)
        entry = world.llc.lines.get(line)
        if dstate in (DirState.E, DirState.M):
            ok = holders == {entry.dir.owner} and states[entry.dir.owner] in (LineState.E,
                                                                               LineState.M)
        elif dstate is DirState.S:
            ok = holders == set(entry.dir.sharers) and all(
                states[t] is LineState.S for t in holders)
        else:
            ok = not holders
        if not ok:
            problems.append(f"directory {line:#x} says {dstate.value} but L2 states are "
                            f"{[s.value for s in states]}")
    return problems


def _oracle_test(programs: Sequence[Sequence[TraceOp]], words: Sequence[int],
                 init: Mapping[int, int], line_bytes: int) -> LitmusTest:
    observe = [Observation(core=c, index=k)
               for c, prog in enumerate(programs) for k, op in enumerate(prog)
               if op.kind in RESULT_KINDS]
    observe += [Observation(addr=w) for w in words]
    return LitmusTest("explore", tuple(tuple(p) for p in programs), tuple(observe), dict(init),
                      line_bytes=line_bytes)


def explore(
    programs: Sequence[Sequence[TraceOp]],
    *,
    init: Optional[Mapping[int, int]] = None,
    e_grants: bool = True,
    faults=(),
    line_bytes: int = DEFAULT_LINE_BYTES,
    l2_ways: int = 2,
    max_states: int = EXPLORE_MAX_STATES,
) -> ExploreReport:
    """Breadth-first search over every message-delivery order.

    Parameters
    ----------
    programs : sequence of op sequences
        One or two per-core programs over at most two lines.  Operand values
        must come from ``VALUE_DOMAIN``.
    e_grants : bool
        Whether the LLC grants E on a GetS to an unshared line.
    faults : iterable of str
        LLC protocol faults to seed (``duplicate-m``, ``skip-invack``).
    l2_ways : int
        L2 associativity (one set); 1 forces writebacks when two lines are used.
    max_states : int
        Stop with a partial report once this many states have been seen.
    """
    init = dict(init or {})
    if not 1 <= len(programs) <= 2:
        raise ConfigError(f"the explorer drives one or two cores, got {len(programs)}")
    lines = sorted({line_addr(op.addr, line_bytes) for prog in programs for op in prog
                    if op.kind is not OpKind.FENCE})
    if len(lines) > 2:
        raise ConfigError(f"the explorer handles at most two lines, got {len(lines)}")
    for prog in programs:
        for op in prog:
            if op.kind not in _ALLOWED_KINDS:
                raise ConfigError(f"the explorer does not model {op.kind.value}")
            if op.value is not None and op.value not in VALUE_DOMAIN:
                raise ConfigError(f"operand {op.value} outside the value domain {VALUE_DOMAIN}")
    unknown = set(faults) - set(FAULT_KINDS)
    if unknown:
        raise ConfigError(f"unknown fault kinds {sorted(unknown)}")

    mem_size = max(4 * line_bytes, (max(lines, default=0) // line_bytes + 1) * line_bytes)
    memory = np.zeros(mem_size, dtype=np.uint8)
    for addr, value in init.items():
        memory[addr:addr + WORD_BYTES] = np.frombuffer(
            (value & 0xFFFF_FFFF).to_bytes(WORD_BYTES, "little"), dtype=np.uint8)
    home_of = lambda addr: LLC_TILE  # noqa: E731
    l2s = [
        L2Controller(t, CacheGeometry(line_bytes, 1, l2_ways), home_of, mshrs=4,
                     lr_grace=0, hit_latency=0)
        for t in range(len(programs))
    ]
    llc = LlcController(LLC_TILE, CacheGeometry(line_bytes, 1, 4), memory, (0, mem_size),
                        mem_latency=0, hit_latency=0, e_grants=e_grants,
                        faults=frozenset(f for f in faults if f != "drop-response"))
    cores = [_AbstractCore(tuple(p), i) for i, p in enumerate(programs)]
    root = _World(l2s, llc, cores)

    words = sorted({op.addr - op.addr % WORD_BYTES for prog in programs for op in prog
                    if op.kind is not OpKind.FENCE})
    test = _oracle_test(programs, words, init, line_bytes)
    allowed = test.allowed if test.total_ops <= ORACLE_MAX_OPS else None
    result_slots = [(o.core, o.index) for o in test.observe if not o.is_memory]

    report = ExploreReport()
    seen = {root.key()}
    queue = deque([root])
    while queue:
        if len(seen) >= max_states:
            report.complete = False
            report.frontier = len(queue)
            logger.warning("exploration bound of %d states reached, frontier %d",
                           max_states, len(queue))
            break
        world = queue.popleft()
        for problem in _check_state(world, lines):
            report.add_violation(problem)
        if any(m.pending is LineState.XMW and m.stalled for l2 in world.l2s
               for m in l2.mshrs.values() if m.kind is MshrKind.ATOMIC_AMO):
            report.stalled_forward_states += 1

        moves = world.moves()
        if not moves:
            if world.busy():
                report.deadlocks += 1
                report.add_violation(f"deadlock: cores at {[c.pc for c in world.cores]}, "
                                     f"L2 MSHRs {[sorted(l2.mshrs) for l2 in world.l2s]}")
                continue
            report.terminal += 1
            for problem in _check_terminal(world, lines):
                report.add_violation(problem)
            outcome = tuple(world.cores[c].results[k] for c, k in result_slots) + tuple(
                world.coherent_word(w, line_bytes) for w in words)
            report.outcomes.add(outcome)
            if allowed is not None and outcome not in allowed:
                report.add_violation(f"outcome {test.outcome_str(outcome)} is not "
                                     "sequentially consistent")
            continue

        for move in moves:
            nxt = copy.deepcopy(world)
            try:
                nxt.apply(move)
            except ProtocolError as exc:
                report.add_violation(f"protocol error after {move}: {exc}")
                continue
            report.transitions += 1
            key = nxt.key()
            if key in seen:
                continue
            seen.add(key)
            queue.append(nxt)

    report.states = len(seen)
    logger.info("exploration: %s", report.summary())
    return report
