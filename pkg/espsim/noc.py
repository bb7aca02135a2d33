"""
Six-plane 2D-mesh NoC.

One input-queued router per tile; each plane has its own queues and links.
Routing is X-then-Y dimension order with the next output port computed when a
packet enters a router queue, so a packet reaching its destination router is
ejected in the same cycle and an uncontended d-hop packet takes d cycles.
Same-tile traffic uses the tile's local bus and is delivered next cycle.
"""

import logging
import random
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from espsim.coherence import CohMsg, MmioStatus, MsgKind, plane_of
from espsim.config import DEFAULT_QUEUE_DEPTH, DROP_RESPONSE_AFTER, NUM_PLANES, ConfigError

logger = logging.getLogger(__name__)

Coord = Tuple[int, int]


class Port(Enum):
    NORTH = "N"
    SOUTH = "S"
    EAST = "E"
    WEST = "W"
    LOCAL = "L"


# Input ports in round-robin order.
IN_PORTS = (Port.NORTH, Port.SOUTH, Port.EAST, Port.WEST, Port.LOCAL)
OUT_PORTS = (Port.NORTH, Port.SOUTH, Port.EAST, Port.WEST)

_STEP = {Port.NORTH: (0, -1), Port.SOUTH: (0, 1), Port.EAST: (1, 0), Port.WEST: (-1, 0)}
_OPPOSITE = {Port.NORTH: Port.SOUTH, Port.SOUTH: Port.NORTH,
             Port.EAST: Port.WEST, Port.WEST: Port.EAST}


def route_next(cur: Coord, dst: Coord) -> Port:
    """Dimension-order output port at *cur* for a packet headed to *dst*.

    Rows grow southwards: a smaller y is north.
    """
    if cur[0] != dst[0]:
        return Port.EAST if dst[0] > cur[0] else Port.WEST
    if cur[1] != dst[1]:
        return Port.SOUTH if dst[1] > cur[1] else Port.NORTH
    return Port.LOCAL


def neighbour(cur: Coord, port: Port) -> Coord:
    dx, dy = _STEP[port]
    return cur[0] + dx, cur[1] + dy


@dataclass
class Packet:
    msg: CohMsg
    src: Coord
    dst: Coord
    plane: int
    injected: int
    next_port: Port = Port.LOCAL
    hops: int = 0


@dataclass
class Router:
    coord: Coord
    depth: int
    # (plane, input port) -> FIFO of packets
    queues: Dict[tuple, deque] = field(default_factory=dict)
    occupancy: int = 0

    def queue(self, plane: int, port: Port) -> deque:
        return self.queues.setdefault((plane, port), deque())


@dataclass
class NocStats:
    packets: np.ndarray = field(default_factory=lambda: np.zeros(NUM_PLANES, dtype=np.int64))
    latency: np.ndarray = field(default_factory=lambda: np.zeros(NUM_PLANES, dtype=np.int64))
    local: int = 0
    dropped: int = 0

    def mean_latency(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            means = self.latency / self.packets
        return np.nan_to_num(means)


class Mesh:
    """The six-plane mesh.

    ``step(cycle)`` advances every plane by one cycle and returns the packets
    ejected at their destination during that cycle.
    """

    def __init__(self, cols: int, rows: int, *, depth: int = DEFAULT_QUEUE_DEPTH,
                 seed: int = 0, faults=frozenset(),
                 trace: Optional[Callable[[Packet, int], None]] = None) -> None:
        if cols < 1 or rows < 1:
            raise ConfigError(f"mesh must be at least 1x1, got {cols}x{rows}")
        self.cols = cols
        self.rows = rows
        self.depth = depth
        self.faults = frozenset(faults)
        self.trace = trace
        self.routers = {(x, y): Router((x, y), depth) for y in range(rows) for x in range(cols)}
        self.stats = NocStats()
        self._loopback: deque = deque()
        rng = random.Random(seed)
        # Seeded starting points for the round-robin pointers.
        self._rr = {
            (coord, plane, port): rng.randrange(len(IN_PORTS))
            for coord in self.routers for plane in range(NUM_PLANES) for port in OUT_PORTS
        }
        self._dropped_once = False

    def coord_of(self, tile: int) -> Coord:
        return tile % self.cols, tile // self.cols

    def tile_of(self, coord: Coord) -> int:
        return coord[1] * self.cols + coord[0]

    def in_grid(self, coord: Coord) -> bool:
        return 0 <= coord[0] < self.cols and 0 <= coord[1] < self.rows

    def idle(self) -> bool:
        return not self._loopback and all(r.occupancy == 0 for r in self.routers.values())

    def in_flight(self) -> int:
        return len(self._loopback) + sum(r.occupancy for r in self.routers.values())

    # ------------------------------------------------------------------
    # Injection
    # ------------------------------------------------------------------

    def inject(self, packet: Packet) -> bool:
        """Place *packet* in its source router's local queue.

        Returns False (the caller keeps the packet) when that queue is full.
        """
        if not self.in_grid(packet.dst):
            raise ConfigError(f"packet destination {packet.dst} outside the grid")
        if packet.src == packet.dst:
            self._loopback.append(packet)
            return True
        router = self.routers[packet.src]
        q = router.queue(packet.plane, Port.LOCAL)
        if len(q) >= self.depth:
            return False
        packet.next_port = route_next(packet.src, packet.dst)
        q.append(packet)
        router.occupancy += 1
        return True

    # ------------------------------------------------------------------
    # One cycle
    # ------------------------------------------------------------------

    def step(self, cycle: int) -> List[Packet]:
        delivered: List[Packet] = []
        while self._loopback:
            pkt = self._loopback.popleft()
            self.stats.local += 1
            self._deliver(pkt, cycle, delivered, counted=False)

        # Decide all moves on start-of-cycle queue contents, then apply them.
        moves = []
        for coord, router in self.routers.items():
            if router.occupancy == 0:
                continue
            for plane in range(NUM_PLANES):
                heads = {}
                for port in IN_PORTS:
                    q = router.queues.get((plane, port))
                    if q:
                        heads[port] = q[0]
                if not heads:
                    continue
                for out in OUT_PORTS:
                    candidates = [p for p in IN_PORTS if p in heads and heads[p].next_port is out]
                    if not candidates:
                        continue
                    nxt = neighbour(coord, out)
                    start = self._rr[(coord, plane, out)]
                    order = sorted(candidates, key=lambda p: (IN_PORTS.index(p) - start) % len(IN_PORTS))
                    chosen = order[0]
                    pkt_dst = heads[chosen].dst
                    if nxt != pkt_dst:
                        downstream = self.routers[nxt].queues.get((plane, _OPPOSITE[out]))
                        if downstream is not None and len(downstream) >= self.depth:
                            continue
                    self._rr[(coord, plane, out)] = (IN_PORTS.index(chosen) + 1) % len(IN_PORTS)
                    moves.append((router, plane, chosen, out, nxt))

        for router, plane, in_port, out, nxt in moves:
            pkt = router.queues[(plane, in_port)].popleft()
            router.occupancy -= 1
            pkt.hops += 1
            if nxt == pkt.dst:
                self._deliver(pkt, cycle, delivered, counted=True)
                continue
            downstream = self.routers[nxt]
            pkt.next_port = route_next(nxt, pkt.dst)
            downstream.queue(plane, _OPPOSITE[out]).append(pkt)
            downstream.occupancy += 1
        return delivered

    def _deliver(self, pkt: Packet, cycle: int, delivered: list, counted: bool) -> None:
        if ("drop-response" in self.faults and not self._dropped_once
                and pkt.msg.kind is MsgKind.DATA_RSP and cycle > DROP_RESPONSE_AFTER):
            self._dropped_once = True
            self.stats.dropped += 1
            logger.warning("fault drop-response: dropped %s at cycle %d", pkt.msg, cycle)
            return
        if counted:
            self.stats.packets[pkt.plane] += 1
            self.stats.latency[pkt.plane] += cycle - pkt.injected
        if self.trace is not None:
            self.trace(pkt, cycle)
        delivered.append(pkt)


# ---------------------------------------------------------------------------
# Bus <-> NoC proxies
# ---------------------------------------------------------------------------

class NocProxy:
    """Converts tile-bus messages into packets and back.

    Messages without a destination are resolved by address: coherence and DMA
    traffic goes to the home memory tile, MMIO to the tile owning the
    register window.  An unmapped MMIO access is answered locally with an
    error response.
    """

    def __init__(self, mesh: Mesh, home_of: Callable[[int], int],
                 mmio_target: Callable[[int], Optional[int]]) -> None:
        self.mesh = mesh
        self.home_of = home_of
        self.mmio_target = mmio_target

    def resolve(self, msg: CohMsg) -> CohMsg:
        if msg.dst is not None:
            return msg
        if msg.kind in (MsgKind.MMIO_READ, MsgKind.MMIO_WRITE):
            target = self.mmio_target(msg.addr)
            if target is None:
                logger.warning("unmapped MMIO address %#x from tile %d", msg.addr, msg.src)
                return CohMsg(MsgKind.MMIO_RSP, msg.addr, msg.src, msg.src,
                              status=MmioStatus.ERROR)
            return replace(msg, dst=target)
        return replace(msg, dst=self.home_of(msg.addr))

    def inject(self, msg: CohMsg, cycle: int) -> Packet:
        """proxy_inject: wrap a bus message in a packet bound for its target tile."""
        msg = self.resolve(msg)
        return Packet(msg, self.mesh.coord_of(msg.src), self.mesh.coord_of(msg.dst),
                      plane_of(msg), cycle)

    @staticmethod
    def eject(packet: Packet) -> CohMsg:
        """proxy_eject: the bus message carried by *packet*."""
        return packet.msg
