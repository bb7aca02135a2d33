"""
Global correctness monitors.

Controllers report three kinds of events through an :class:`Observer`:
line-state changes (for SWMR), word writes at their perform cycle and word
reads with their issue/complete interval (for data values).  The monitors turn
these into :class:`Violation` records.
"""

import bisect
import logging
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Optional

from espsim.coherence import LineState

logger = logging.getLogger(__name__)


class ViolationKind(Enum):
    SWMR = "SWMR"
    DATA_VALUE = "DataValue"
    ATOMICITY = "Atomicity"
    LOST_MESSAGE = "LostMessage"
    DEADLOCK = "Deadlock"
    STALE_DMA = "StaleDma"
    PROTOCOL = "Protocol"


@dataclass(frozen=True)
class Violation:
    kind: ViolationKind
    cycle: int
    addr: Optional[int]
    narrative: str

    def to_record(self) -> dict:
        return {
            "kind": self.kind.value,
            "cycle": self.cycle,
            "addr": "" if self.addr is None else f"{self.addr:#x}",
            "narrative": self.narrative,
        }

    def __str__(self) -> str:
        where = "" if self.addr is None else f" @ {self.addr:#x}"
        return f"{self.kind.value}{where} cycle {self.cycle}: {self.narrative}"


class Observer:
    """No-op event sink; controllers call these hooks unconditionally."""

    def state_changed(self, tile: int, line: int, state: LineState, cycle: int) -> None:
        pass

    def word_written(self, addr: int, value: int, cycle: int, who: int,
                     rmw_old: Optional[int] = None) -> None:
        pass

    def word_read(self, addr: int, value: int, issue: int, complete: int, who: int,
                  noncoherent: bool = False) -> None:
        pass


# ---------------------------------------------------------------------------
# SWMR
# ---------------------------------------------------------------------------

_NOT_HELD = (LineState.I, LineState.IS_A, LineState.IM_A, LineState.MI_A)


class SwmrMonitor:
    """Tracks every private cache's state per line.

    One violation is reported per episode: a line that breaks SWMR is
    reported again only after it has been legal in between.
    """

    def __init__(self) -> None:
        self.holders: Dict[int, Dict[int, LineState]] = {}
        self.violations: List[Violation] = []
        self._flagged: set = set()

    def update(self, tile: int, line: int, state: LineState, cycle: int) -> Optional[Violation]:
        holders = self.holders.setdefault(line, {})
        if state in _NOT_HELD:
            holders.pop(tile, None)
        else:
            holders[tile] = state
        writers = sorted(t for t, s in holders.items() if s.writable)
        readers = sorted(t for t, s in holders.items() if s.readable)
        if len(writers) > 1 or (writers and readers):
            if line in self._flagged:
                return None
            self._flagged.add(line)
            v = Violation(ViolationKind.SWMR, cycle, line,
                          f"writable at tiles {writers}, readable at tiles {readers}")
            self.violations.append(v)
            return v
        self._flagged.discard(line)
        return None


def check_swmr(events: Iterable[tuple]) -> List[Violation]:
    """Run a ``(cycle, tile, line, state)`` event stream through a fresh monitor."""
    monitor = SwmrMonitor()
    for cycle, tile, line, state in events:
        monitor.update(tile, line, state, cycle)
    return monitor.violations


# ---------------------------------------------------------------------------
# Data values
# ---------------------------------------------------------------------------

class DataValueMonitor:
    """Per-word shadow history of performed writes.

    A read with interval [issue, complete] is correct when its value was the
    word's value at some cycle in that interval.
    """

    def __init__(self, initial: Optional[Dict[int, int]] = None) -> None:
        self._cycles: Dict[int, list] = {}
        self._values: Dict[int, list] = {}
        self.violations: List[Violation] = []
        for addr, value in (initial or {}).items():
            self.seed(addr, value)

    def seed(self, addr: int, value: int) -> None:
        self._cycles[addr] = [-1]
        self._values[addr] = [value]

    def _history(self, addr: int):
        if addr not in self._cycles:
            self.seed(addr, 0)
        return self._cycles[addr], self._values[addr]

    def current(self, addr: int) -> int:
        return self._history(addr)[1][-1]

    def write(self, addr: int, value: int, cycle: int, who: int,
              rmw_old: Optional[int] = None) -> Optional[Violation]:
        cycles, values = self._history(addr)
        violation = None
        if rmw_old is not None and values[-1] != rmw_old:
            violation = Violation(
                ViolationKind.ATOMICITY, cycle, addr,
                f"tile {who} atomic read {rmw_old} but word was {values[-1]} at its write",
            )
            self.violations.append(violation)
        cycles.append(cycle)
        values.append(value)
        return violation

    def read(self, addr: int, value: int, issue: int, complete: int, who: int,
             noncoherent: bool = False) -> Optional[Violation]:
        cycles, values = self._history(addr)
        lo = max(bisect.bisect_left(cycles, issue) - 1, 0)
        hi = bisect.bisect_right(cycles, complete)
        if value in values[lo:hi]:
            return None
        kind = ViolationKind.STALE_DMA if noncoherent else ViolationKind.DATA_VALUE
        violation = Violation(
            kind, complete, addr,
            f"tile {who} read {value} in [{issue}, {complete}], legal {sorted(set(values[lo:hi]))}",
        )
        self.violations.append(violation)
        return violation


def check_data_value(events: Iterable[tuple]) -> List[Violation]:
    """Check a stream of ``("write", addr, value, cycle)`` and
    ``("read", addr, value, issue, complete)`` events, in order."""
    monitor = DataValueMonitor()
    for event in events:
        if event[0] == "write":
            _, addr, value, cycle = event
            monitor.write(addr, value, cycle, who=-1)
        else:
            _, addr, value, issue, complete = event
            monitor.read(addr, value, issue, complete, who=-1)
    return monitor.violations


# ---------------------------------------------------------------------------
# Liveness
# ---------------------------------------------------------------------------

class LivenessMonitor:
    """Flags agents that have pending work but made no progress for ``bound`` cycles."""

    def __init__(self, bound: int) -> None:
        self.bound = bound

    def stuck(self, last_progress: Dict[object, int], cycle: int) -> list:
        """Agents whose last progress is more than ``bound`` cycles ago."""
        return [a for a, since in last_progress.items() if cycle - since > self.bound]

    @staticmethod
    def classify(awaiting_response: bool, cycle: int, agents: list) -> Violation:
        kind = ViolationKind.LOST_MESSAGE if awaiting_response else ViolationKind.DEADLOCK
        return Violation(kind, cycle, None, f"no progress from {agents}")


# ---------------------------------------------------------------------------
# Fan-out
# ---------------------------------------------------------------------------

class MonitorHub(Observer):
    """Observer feeding the SWMR and data-value monitors and keeping a short
    event history used as violation narrative."""

    def __init__(self, initial: Optional[Dict[int, int]] = None, history: int = 24) -> None:
        self.swmr = SwmrMonitor()
        self.data = DataValueMonitor(initial)
        self.extra: List[Violation] = []
        self._recent: deque = deque(maxlen=history)

    @property
    def violations(self) -> List[Violation]:
        found = self.swmr.violations + self.data.violations + self.extra
        return sorted(found, key=lambda v: (v.cycle, v.kind.value))

    def add(self, violation: Violation) -> None:
        logger.error("%s", violation)
        self.extra.append(violation)

    def _excerpt(self, addr: Optional[int]) -> str:
        lines = [
            " ".join(str(x) for x in event)
            for event in self._recent
            if addr is None or event[2] == addr
        ]
        return "; ".join(lines[-8:])

    def _report(self, violation: Optional[Violation], bucket: list) -> None:
        if violation is None:
            return
        bucket[-1] = Violation(violation.kind, violation.cycle, violation.addr,
                               f"{violation.narrative} | {self._excerpt(violation.addr)}")
        logger.error("%s", bucket[-1])

    def state_changed(self, tile, line, state, cycle):
        self._recent.append((cycle, "state", line, tile, state.value))
        self._report(self.swmr.update(tile, line, state, cycle), self.swmr.violations)

    def word_written(self, addr, value, cycle, who, rmw_old=None):
        self._recent.append((cycle, "write", addr, who, value))
        self._report(self.data.write(addr, value, cycle, who, rmw_old), self.data.violations)

    def word_read(self, addr, value, issue, complete, who, noncoherent=False):
        self._recent.append((complete, "read", addr, who, value))
        self._report(self.data.read(addr, value, issue, complete, who, noncoherent),
                     self.data.violations)
