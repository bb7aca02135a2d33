"""Tests for espsim.llc_cache — directory transitions, recalls, DMA and flush."""

import numpy as np
import pytest

from espsim.coherence import CacheGeometry, CohMsg, DirState, LineState, MsgKind, read_word, write_word
from espsim.config import ProtocolError
from espsim.llc_cache import DramChannel, LlcController

LLC = 9
ACC = 3
A = 0x40
B = 0x80


def _make_llc(sets: int = 4, ways: int = 2, **options) -> LlcController:
    memory = np.zeros(0x1000, dtype=np.uint8)
    options.setdefault("mem_latency", 0)
    options.setdefault("hit_latency", 0)
    return LlcController(LLC, CacheGeometry(16, sets, ways), memory, (0, 0x1000), **options)


def _payload(n_bytes: int, first: int = 1) -> bytes:
    data = bytes(n_bytes)
    for i in range(n_bytes // 4):
        data = write_word(data, i * 4, first + i)
    return data


def _req(kind: MsgKind, addr: int, src: int, **fields) -> CohMsg:
    return CohMsg(kind, addr, src, LLC, **fields)


def _kinds(msgs) -> list:
    return [(m.kind, m.dst) for m in msgs]


def _own(llc: LlcController, addr: int, tile: int) -> None:
    llc.handle_message(_req(MsgKind.GET_M, addr, tile))
    llc.drain()


# ---------------------------------------------------------------------------
# Requests
# ---------------------------------------------------------------------------

class TestRequests:
    def test_cold_gets_grants_exclusive(self):
        llc = _make_llc()
        llc.memory[A:A + 4] = [5, 0, 0, 0]
        llc.handle_message(_req(MsgKind.GET_S, A, 0))
        out = llc.drain()
        assert _kinds(out) == [(MsgKind.DATA_RSP, 0)]
        assert out[0].grant is LineState.E
        assert read_word(out[0].data, 0) == 5
        assert llc.dir_state(A) is DirState.E
        assert llc.stats.mem_reads == 1

    def test_gets_without_e_grants(self):
        llc = _make_llc(e_grants=False)
        llc.handle_message(_req(MsgKind.GET_S, A, 0))
        assert llc.drain()[0].grant is LineState.S
        assert llc.lines[A].dir.sharers == {0}

    def test_second_reader_shares(self):
        llc = _make_llc(e_grants=False)
        llc.handle_message(_req(MsgKind.GET_S, A, 0))
        llc.handle_message(_req(MsgKind.GET_S, A, 1))
        llc.drain()
        assert llc.lines[A].dir.sharers == {0, 1}

    def test_memory_latency(self):
        llc = _make_llc(mem_latency=5, hit_latency=2)
        llc.handle_message(_req(MsgKind.GET_S, A, 0))
        assert llc.dir_state(A) is DirState.BUSY_MEM
        llc.tick(4)
        assert llc.drain(4) == []
        llc.tick(5)
        assert llc.drain(6) == []
        assert _kinds(llc.drain(7)) == [(MsgKind.DATA_RSP, 0)]

    def test_getm_invalidates_sharers(self):
        llc = _make_llc(e_grants=False)
        llc.handle_message(_req(MsgKind.GET_S, A, 1))
        llc.handle_message(_req(MsgKind.GET_S, A, 2))
        llc.drain()
        llc.handle_message(_req(MsgKind.GET_M, A, 0))
        assert _kinds(llc.drain()) == [(MsgKind.INV, 1), (MsgKind.INV, 2)]
        assert llc.dir_state(A) is DirState.BUSY_RECALL
        llc.handle_message(CohMsg(MsgKind.INV_ACK, A, 1, LLC))
        assert llc.drain() == []
        llc.handle_message(CohMsg(MsgKind.INV_ACK, A, 2, LLC))
        out = llc.drain()
        assert _kinds(out) == [(MsgKind.DATA_RSP, 0)]
        assert out[0].grant is LineState.M
        assert llc.lines[A].dir.owner == 0

    def test_sole_sharer_upgrade(self):
        llc = _make_llc(e_grants=False)
        llc.handle_message(_req(MsgKind.GET_S, A, 0))
        llc.drain()
        llc.handle_message(_req(MsgKind.GET_M, A, 0))
        assert llc.drain()[0].grant is LineState.M

    def test_gets_forwarded_to_owner(self):
        llc = _make_llc()
        _own(llc, A, 0)
        llc.handle_message(_req(MsgKind.GET_S, A, 1))
        out = llc.drain()
        assert _kinds(out) == [(MsgKind.FWD_GET_S, 0)]
        assert out[0].req == 1
        llc.handle_message(CohMsg(MsgKind.DATA_RSP, A, 0, LLC, data=_payload(16), dirty=True))
        assert llc.drain() == []
        d = llc.lines[A].dir
        assert d.state is DirState.S
        assert d.sharers == {0, 1}
        assert d.dirty

    def test_owner_without_data_falls_back_to_llc(self):
        llc = _make_llc()
        _own(llc, A, 0)
        llc.handle_message(_req(MsgKind.GET_S, A, 1))
        llc.drain()
        llc.handle_message(CohMsg(MsgKind.INV_ACK, A, 0, LLC))
        assert _kinds(llc.drain()) == [(MsgKind.DATA_RSP, 1)]
        assert llc.lines[A].dir.sharers == {1}

    def test_getm_forwarded_to_owner(self):
        llc = _make_llc()
        _own(llc, A, 0)
        llc.handle_message(_req(MsgKind.GET_M, A, 1))
        assert _kinds(llc.drain()) == [(MsgKind.FWD_GET_M, 0)]
        llc.handle_message(CohMsg(MsgKind.DATA_RSP, A, 0, LLC, data=_payload(16)))
        assert llc.lines[A].dir.owner == 1
        assert llc.dir_state(A) is DirState.M

    def test_requests_queue_behind_open_transaction(self):
        llc = _make_llc()
        _own(llc, A, 0)
        llc.handle_message(_req(MsgKind.GET_M, A, 1))
        llc.handle_message(_req(MsgKind.GET_M, A, 2))
        assert _kinds(llc.drain()) == [(MsgKind.FWD_GET_M, 0)]
        llc.handle_message(CohMsg(MsgKind.DATA_RSP, A, 0, LLC, data=_payload(16)))
        assert _kinds(llc.drain()) == [(MsgKind.FWD_GET_M, 1)]
        assert not llc.idle()

    def test_request_from_owner_is_a_protocol_error(self):
        llc = _make_llc()
        _own(llc, A, 0)
        with pytest.raises(ProtocolError):
            llc.handle_message(_req(MsgKind.GET_S, A, 0))

    def test_unexpected_ack(self):
        llc = _make_llc()
        with pytest.raises(ProtocolError):
            llc.handle_message(CohMsg(MsgKind.INV_ACK, A, 0, LLC))

    def test_address_outside_partition(self):
        llc = _make_llc()
        with pytest.raises(ProtocolError):
            llc.handle_message(_req(MsgKind.GET_S, 0x2000, 0))

    def test_directory_stays_consistent(self):
        llc = _make_llc()
        _own(llc, A, 0)
        llc.handle_message(_req(MsgKind.GET_S, B, 1))
        llc.drain()
        assert llc.check_directory() == []


# ---------------------------------------------------------------------------
# Puts
# ---------------------------------------------------------------------------

class TestPuts:
    def test_putm_from_owner(self):
        llc = _make_llc()
        _own(llc, A, 0)
        llc.handle_message(_req(MsgKind.PUT_M, A, 0, data=_payload(16, 7), dirty=True))
        assert _kinds(llc.drain()) == [(MsgKind.WB_ACK, 0)]
        assert llc.dir_state(A) is DirState.V
        assert read_word(llc.line_data(A), 0) == 7

    def test_last_puts_leaves_valid(self):
        llc = _make_llc(e_grants=False)
        llc.handle_message(_req(MsgKind.GET_S, A, 0))
        llc.handle_message(_req(MsgKind.PUT_S, A, 0))
        assert _kinds(llc.drain())[-1] == (MsgKind.WB_ACK, 0)
        assert llc.dir_state(A) is DirState.V

    def test_stale_put_is_acked(self):
        llc = _make_llc()
        _own(llc, A, 0)
        llc.handle_message(_req(MsgKind.PUT_M, A, 1, data=bytes(16), dirty=True))
        assert _kinds(llc.drain()) == [(MsgKind.WB_ACK, 1)]
        assert llc.stats.stale_puts == 1
        assert llc.lines[A].dir.owner == 0


# ---------------------------------------------------------------------------
# Eviction
# ---------------------------------------------------------------------------

class TestEviction:
    def test_unheld_line_dropped(self):
        llc = _make_llc(sets=1, ways=1)
        _own(llc, A, 0)
        llc.handle_message(_req(MsgKind.PUT_M, A, 0, data=_payload(16, 3), dirty=True))
        llc.handle_message(_req(MsgKind.GET_S, B, 1))
        llc.drain()
        assert llc.line_data(A) is None
        assert llc.memory[A] == 3
        assert llc.stats.evictions == 1

    def test_owned_line_recalled(self):
        llc = _make_llc(sets=1, ways=1)
        _own(llc, A, 0)
        llc.handle_message(_req(MsgKind.GET_S, B, 1))
        out = llc.drain()
        assert _kinds(out) == [(MsgKind.FWD_GET_M, 0)]
        assert out[0].req == LLC
        llc.handle_message(CohMsg(MsgKind.DATA_RSP, A, 0, LLC, data=_payload(16, 4), dirty=True))
        assert llc.memory[A] == 4
        llc.tick(1)
        assert _kinds(llc.drain()) == [(MsgKind.DATA_RSP, 1)]
        assert llc.stats.recalls == 1


# ---------------------------------------------------------------------------
# Faults
# ---------------------------------------------------------------------------

class TestFaults:
    def test_duplicate_m(self):
        llc = _make_llc(faults={"duplicate-m"})
        _own(llc, A, 0)
        llc.handle_message(_req(MsgKind.GET_M, A, 1))
        out = llc.drain()
        assert _kinds(out) == [(MsgKind.DATA_RSP, 1)]
        assert out[0].grant is LineState.M

    def test_skip_invack(self):
        llc = _make_llc(e_grants=False, faults={"skip-invack"})
        llc.handle_message(_req(MsgKind.GET_S, A, 1))
        llc.drain()
        llc.handle_message(_req(MsgKind.GET_M, A, 0))
        assert _kinds(llc.drain()) == [(MsgKind.INV, 1), (MsgKind.DATA_RSP, 0)]
        # The late ack is absorbed.
        llc.handle_message(CohMsg(MsgKind.INV_ACK, A, 1, LLC))
        assert llc.idle()


# ---------------------------------------------------------------------------
# DMA and flush
# ---------------------------------------------------------------------------

def _run(llc: LlcController, cycles: int) -> list:
    out = []
    for cycle in range(cycles):
        llc.tick(cycle)
        out += llc.drain()
    return out


class TestDma:
    def test_read_burst(self):
        llc = _make_llc()
        llc.memory[0x100:0x120] = np.frombuffer(_payload(32), dtype=np.uint8)
        llc.handle_message(CohMsg(MsgKind.DMA_READ_BURST, 0x100, ACC, LLC, value=32))
        out = _run(llc, 3)
        assert [m.addr for m in out] == [0x100, 0x110]
        assert read_word(out[1].data, 0) == 5
        assert llc.dir_state(0x100) is DirState.V
        assert llc.stats.dma_lines == 2
        assert llc.idle()

    def test_write_burst_then_flush(self):
        llc = _make_llc()
        llc.handle_message(CohMsg(MsgKind.DMA_WRITE_BURST, 0x100, ACC, LLC,
                                  data=_payload(32, 10), value=32))
        out = _run(llc, 3)
        assert _kinds(out) == [(MsgKind.DMA_RSP, ACC)]
        assert out[0].value == 32
        assert llc.lines[0x110].dir.dirty
        assert llc.memory[0x110] == 0
        done = []
        assert llc.start_flush(lambda: done.append(True)) == 2
        assert llc.memory[0x110] == 14
        assert not llc.lines[0x110].dir.dirty
        llc.tick(3)
        assert done == [True]
        assert not llc.flush_busy

    def test_read_burst_recalls_owner(self):
        llc = _make_llc()
        _own(llc, 0x100, 0)
        llc.handle_message(CohMsg(MsgKind.DMA_READ_BURST, 0x100, ACC, LLC, value=16))
        llc.tick(0)
        assert _kinds(llc.drain()) == [(MsgKind.FWD_GET_M, 0)]
        llc.handle_message(CohMsg(MsgKind.DATA_RSP, 0x100, 0, LLC, data=_payload(16, 8),
                                  dirty=True))
        out = _run(llc, 2)
        assert read_word(out[0].data, 0) == 8
        assert llc.dir_state(0x100) is DirState.V
        assert llc.lines[0x100].dir.owner is None

    def test_flush_waits_for_memory(self):
        llc = _make_llc(mem_latency=10)
        llc.handle_message(CohMsg(MsgKind.DMA_WRITE_BURST, 0x100, ACC, LLC,
                                  data=_payload(16), value=16))
        _run(llc, 2)
        llc.now = 2
        llc.start_flush()
        llc.tick(11)
        assert llc.flush_busy
        llc.tick(12)
        assert not llc.flush_busy


class TestDramChannel:
    def _make(self, latency: int = 5):
        llc = _make_llc()
        return DramChannel(7, llc.memory, llc, 16, latency=latency), llc

    def test_write_burst(self):
        dram, llc = self._make()
        dram.handle_burst(CohMsg(MsgKind.DMA_WRITE_BURST, 0x200, ACC, 7, data=_payload(32),
                                 value=32, bypass=True), 0)
        assert llc.memory[0x210] == 5
        assert dram.drain(4) == []
        out = dram.drain(5)
        assert _kinds(out) == [(MsgKind.DMA_RSP, ACC)]
        assert out[0].bypass
        assert dram.stats.writes == 2

    def test_read_burst(self):
        dram, llc = self._make(latency=0)
        llc.memory[0x200:0x210] = np.frombuffer(_payload(16, 9), dtype=np.uint8)
        dram.handle_burst(CohMsg(MsgKind.DMA_READ_BURST, 0x200, ACC, 7, value=16, bypass=True), 0)
        out = dram.drain(0)
        assert read_word(out[0].data, 0) == 9

    def test_write_discards_clean_llc_copy(self):
        dram, llc = self._make()
        llc.handle_message(CohMsg(MsgKind.DMA_READ_BURST, 0x200, ACC, LLC, value=16))
        _run(llc, 2)
        assert llc.line_data(0x200) is not None
        dram.handle_burst(CohMsg(MsgKind.DMA_WRITE_BURST, 0x200, ACC, 7, data=_payload(16),
                                 value=16, bypass=True), 2)
        assert llc.line_data(0x200) is None
