"""Tests for espsim.l2_cache — MESI transitions, MSHRs, atomics and flush."""

import pytest

from espsim.coherence import CacheGeometry, CohMsg, LineState, MsgKind, read_word, write_word
from espsim.config import ProtocolError
from espsim.l2_cache import CoreOp, CoreSideReq, L2Controller, MshrKind, WriteResp

HOME = 9
REQ = 5
A = 0x40
B = 0x80


def _make_l2(sets: int = 4, ways: int = 2, **options) -> L2Controller:
    return L2Controller(0, CacheGeometry(16, sets, ways), lambda addr: HOME, **options)


def _line(*words: int) -> bytes:
    data = bytes(16)
    for i, w in enumerate(words):
        data = write_word(data, i * 4, w)
    return data


def _data(addr: int, grant: LineState, payload: bytes = bytes(16)) -> CohMsg:
    return CohMsg(MsgKind.DATA_RSP, addr, HOME, 0, data=payload, grant=grant)


def _fwd(kind: MsgKind, addr: int, req: int = REQ) -> CohMsg:
    return CohMsg(kind, addr, HOME, 0, req=req)


def _load(addr: int) -> CoreSideReq:
    return CoreSideReq(CoreOp.LOAD, addr)


def _store(addr: int, value: int) -> CoreSideReq:
    return CoreSideReq(CoreOp.STORE, addr, data=value)


def _install(l2: L2Controller, addr: int, grant: LineState, payload: bytes = bytes(16)) -> None:
    """Bring *addr* in with *grant* and clear the side effects."""
    if grant is LineState.M:
        l2.request(_store(addr, read_word(payload, addr % 16)))
    else:
        l2.request(_load(addr))
    l2.handle_message(_data(addr, grant, payload))
    l2.drain()
    l2.responses.clear()


def _kinds(msgs) -> list:
    return [(m.kind, m.dst) for m in msgs]


# ---------------------------------------------------------------------------
# Core-side requests
# ---------------------------------------------------------------------------

class TestCoreSideReq:
    def test_amo_needs_lock(self):
        with pytest.raises(ProtocolError):
            CoreSideReq(CoreOp.AMO_READ, A, atop=1)

    def test_lr_must_not_carry_atop(self):
        with pytest.raises(ProtocolError):
            CoreSideReq(CoreOp.LR_READ, A, lock=True, atop=1)

    def test_amo_needs_atop(self):
        with pytest.raises(ProtocolError):
            CoreSideReq(CoreOp.AMO_READ, A, lock=True)

    def test_store_needs_data(self):
        with pytest.raises(ProtocolError):
            CoreSideReq(CoreOp.STORE, A)


class TestLoadsAndStores:
    def test_load_miss_sends_gets(self):
        l2 = _make_l2()
        l2.request(_load(A + 4))
        assert _kinds(l2.drain()) == [(MsgKind.GET_S, HOME)]
        assert l2.state_of(A) is LineState.IS_A
        l2.handle_message(_data(A, LineState.E, _line(1, 2)))
        assert l2.state_of(A) is LineState.E
        resp = l2.pop_response()
        assert resp.value == 2
        assert l2.idle()

    def test_load_hit(self):
        l2 = _make_l2()
        _install(l2, A, LineState.S, _line(7))
        l2.request(_load(A))
        assert l2.drain() == []
        assert l2.pop_response().value == 7
        assert l2.stats.hits == 1

    def test_store_on_exclusive_is_silent(self):
        l2 = _make_l2()
        _install(l2, A, LineState.E)
        l2.request(_store(A, 3))
        assert l2.drain() == []
        assert l2.state_of(A) is LineState.M
        assert read_word(l2.lookup(A).data, 0) == 3

    def test_store_on_shared_upgrades(self):
        l2 = _make_l2()
        _install(l2, A, LineState.S)
        l2.request(_store(A, 3))
        assert _kinds(l2.drain()) == [(MsgKind.GET_M, HOME)]
        assert l2.state_of(A) is LineState.SM_A
        assert l2.stats.upgrades == 1
        l2.handle_message(_data(A, LineState.M))
        assert l2.state_of(A) is LineState.M
        assert read_word(l2.lookup(A).data, 0) == 3

    def test_getm_without_m_grant(self):
        l2 = _make_l2()
        l2.request(_store(A, 1))
        with pytest.raises(ProtocolError):
            l2.handle_message(_data(A, LineState.S))

    def test_unexpected_data(self):
        l2 = _make_l2()
        with pytest.raises(ProtocolError):
            l2.handle_message(_data(A, LineState.S))

    def test_second_request_rejected(self):
        l2 = _make_l2(mshrs=2)
        l2.request(_load(A))
        l2.request(_load(A))  # same line is held back while the miss is open
        with pytest.raises(ProtocolError):
            l2.request(_load(B))

    def test_response_ready_after_hit_latency(self):
        l2 = _make_l2(hit_latency=3)
        _install(l2, A, LineState.S)
        l2.now = 10
        l2.request(_load(A))
        assert l2.pop_response(12) is None
        assert l2.pop_response(13) is not None


# ---------------------------------------------------------------------------
# Forwards and invalidations
# ---------------------------------------------------------------------------

class TestForwards:
    def test_fwd_gets_on_modified(self):
        l2 = _make_l2()
        _install(l2, A, LineState.M, _line(9))
        l2.handle_message(_fwd(MsgKind.FWD_GET_S, A))
        out = l2.drain()
        assert _kinds(out) == [(MsgKind.DATA_RSP, REQ), (MsgKind.DATA_RSP, HOME)]
        assert out[0].grant is LineState.S
        assert out[1].dirty
        assert l2.state_of(A) is LineState.S

    def test_fwd_getm_on_exclusive(self):
        l2 = _make_l2()
        _install(l2, A, LineState.E)
        l2.handle_message(_fwd(MsgKind.FWD_GET_M, A))
        out = l2.drain()
        assert out[0].grant is LineState.M
        assert not out[1].dirty
        assert l2.state_of(A) is LineState.I

    def test_inv_on_shared(self):
        l2 = _make_l2()
        _install(l2, A, LineState.S)
        l2.handle_message(CohMsg(MsgKind.INV, A, HOME, 0, req=REQ))
        assert _kinds(l2.drain()) == [(MsgKind.INV_ACK, HOME)]
        assert l2.lookup(A) is None

    def test_inv_on_owned_line_is_a_protocol_error(self):
        l2 = _make_l2()
        _install(l2, A, LineState.M)
        with pytest.raises(ProtocolError):
            l2.handle_message(CohMsg(MsgKind.INV, A, HOME, 0))

    def test_inv_racing_a_fill_uses_data_once(self):
        l2 = _make_l2()
        l2.request(_load(A))
        l2.drain()
        l2.handle_message(CohMsg(MsgKind.INV, A, HOME, 0))
        assert _kinds(l2.drain()) == [(MsgKind.INV_ACK, HOME)]
        l2.handle_message(_data(A, LineState.S, _line(4)))
        resp = l2.pop_response()
        assert resp.value == 4
        assert not resp.cacheable
        assert l2.lookup(A) is None

    def test_inv_during_upgrade_turns_into_miss(self):
        l2 = _make_l2()
        _install(l2, A, LineState.S)
        l2.request(_store(A, 1))
        l2.drain()
        l2.handle_message(CohMsg(MsgKind.INV, A, HOME, 0))
        assert l2.state_of(A) is LineState.IM_A
        l2.handle_message(_data(A, LineState.M, _line(0, 5)))
        entry = l2.lookup(A)
        assert entry.state is LineState.M
        assert read_word(entry.data, 0) == 1
        assert read_word(entry.data, 4) == 5

    def test_forward_stalls_behind_pending_miss(self):
        l2 = _make_l2()
        l2.request(_store(A, 1))
        l2.drain()
        l2.handle_message(_fwd(MsgKind.FWD_GET_S, A))
        assert l2.stats.fwd_stalled == 1
        assert l2.drain() == []
        l2.handle_message(_data(A, LineState.M))
        out = l2.drain()
        assert _kinds(out) == [(MsgKind.DATA_RSP, REQ), (MsgKind.DATA_RSP, HOME)]
        assert read_word(out[0].data, 0) == 1


# ---------------------------------------------------------------------------
# Eviction and writeback
# ---------------------------------------------------------------------------

class TestEviction:
    def test_clean_eviction_sends_puts(self):
        l2 = _make_l2(sets=1, ways=1)
        _install(l2, A, LineState.S)
        l2.request(_load(B))
        assert _kinds(l2.drain()) == [(MsgKind.PUT_S, HOME), (MsgKind.GET_S, HOME)]
        assert l2.state_of(A) is LineState.MI_A
        l2.handle_message(CohMsg(MsgKind.WB_ACK, A, HOME, 0))
        assert l2.state_of(A) is LineState.I

    def test_dirty_eviction_sends_putm(self):
        l2 = _make_l2(sets=1, ways=1)
        _install(l2, A, LineState.M, _line(6))
        l2.request(_load(B))
        put = l2.drain()[0]
        assert put.kind is MsgKind.PUT_M
        assert read_word(put.data, 0) == 6
        assert l2.stats.writebacks == 1

    def test_forward_served_from_writeback(self):
        l2 = _make_l2(sets=1, ways=1)
        _install(l2, A, LineState.M, _line(6))
        l2.request(_load(B))
        l2.drain()
        l2.handle_message(_fwd(MsgKind.FWD_GET_M, A))
        out = l2.drain()
        assert read_word(out[0].data, 0) == 6
        assert l2.mshrs[A].surrendered
        # A second forward is acked without data.
        l2.handle_message(_fwd(MsgKind.FWD_GET_S, A))
        assert _kinds(l2.drain()) == [(MsgKind.INV_ACK, HOME)]

    def test_wb_ack_without_writeback(self):
        l2 = _make_l2()
        with pytest.raises(ProtocolError):
            l2.handle_message(CohMsg(MsgKind.WB_ACK, A, HOME, 0))


# ---------------------------------------------------------------------------
# Atomics
# ---------------------------------------------------------------------------

class TestAtomics:
    def test_amo_on_owned_line(self):
        l2 = _make_l2()
        _install(l2, A, LineState.M, _line(10))
        l2.request(CoreSideReq(CoreOp.AMO_READ, A, lock=True, atop=1))
        assert l2.pop_response().value == 10
        assert l2.state_of(A) is LineState.XMW
        assert l2.mshrs[A].kind is MshrKind.ATOMIC_AMO
        l2.request(CoreSideReq(CoreOp.AMO_WRITE, A, data=11, lock=True, atop=1))
        assert l2.pop_response().code is WriteResp.EXOKAY
        assert l2.state_of(A) is LineState.M
        assert read_word(l2.lookup(A).data, 0) == 11

    def test_amo_on_shared_line_upgrades(self):
        l2 = _make_l2()
        _install(l2, A, LineState.S)
        l2.request(CoreSideReq(CoreOp.AMO_READ, A, lock=True, atop=1))
        assert _kinds(l2.drain()) == [(MsgKind.GET_M, HOME)]
        l2.handle_message(_data(A, LineState.M, _line(3)))
        assert l2.state_of(A) is LineState.XMW
        assert l2.pop_response().value == 3

    def test_amo_write_without_read(self):
        l2 = _make_l2()
        with pytest.raises(ProtocolError):
            l2.request(CoreSideReq(CoreOp.AMO_WRITE, A, data=1, lock=True, atop=1))

    def test_lr_sc_success(self):
        l2 = _make_l2()
        _install(l2, A, LineState.M)
        l2.request(CoreSideReq(CoreOp.LR_READ, A, lock=True))
        l2.pop_response()
        l2.request(CoreSideReq(CoreOp.SC_WRITE, A, data=5, lock=True))
        assert l2.pop_response().code is WriteResp.EXOKAY
        assert l2.stats.sc_success == 1
        assert read_word(l2.lookup(A).data, 0) == 5

    def test_sc_without_reservation_fails(self):
        l2 = _make_l2()
        l2.request(CoreSideReq(CoreOp.SC_WRITE, A, data=5, lock=True))
        assert l2.pop_response().code is WriteResp.OKAY
        assert l2.stats.sc_failure == 1
        assert l2.drain() == []

    def test_own_load_kills_reservation(self):
        l2 = _make_l2()
        _install(l2, A, LineState.M)
        l2.request(CoreSideReq(CoreOp.LR_READ, A, lock=True))
        l2.pop_response()
        l2.request(_load(A))
        l2.pop_response()
        assert l2.stats.reservations_killed == 1
        l2.request(CoreSideReq(CoreOp.SC_WRITE, A, data=5, lock=True))
        assert l2.pop_response().code is WriteResp.OKAY

    def test_forward_held_for_grace_window(self):
        l2 = _make_l2(lr_grace=4)
        _install(l2, A, LineState.M)
        l2.request(CoreSideReq(CoreOp.LR_READ, A, lock=True))
        l2.handle_message(_fwd(MsgKind.FWD_GET_M, A))
        assert l2.drain() == []
        l2.tick(3)
        assert l2.drain() == []
        l2.tick(4)
        assert _kinds(l2.drain()) == [(MsgKind.DATA_RSP, REQ), (MsgKind.DATA_RSP, HOME)]
        assert l2.state_of(A) is LineState.I
        l2.request(CoreSideReq(CoreOp.SC_WRITE, A, data=5, lock=True))
        assert l2.responses[-1].code is WriteResp.OKAY

    def test_zero_grace_serves_forward_immediately(self):
        l2 = _make_l2(lr_grace=0)
        _install(l2, A, LineState.M)
        l2.request(CoreSideReq(CoreOp.LR_READ, A, lock=True))
        l2.handle_message(_fwd(MsgKind.FWD_GET_S, A))
        assert len(l2.drain()) == 2
        assert l2.state_of(A) is LineState.S


# ---------------------------------------------------------------------------
# Flush
# ---------------------------------------------------------------------------

class TestFlush:
    def test_flush_writes_back_and_completes(self):
        l2 = _make_l2()
        _install(l2, A, LineState.M, _line(8))
        _install(l2, B, LineState.S)
        done = []
        l2.start_flush(lambda: done.append(True))
        out = l2.drain()
        assert sorted(m.kind.value for m in out) == ["PutM", "PutS"]
        assert l2.flushing
        for msg in out:
            l2.handle_message(CohMsg(MsgKind.WB_ACK, msg.addr, HOME, 0))
        l2.tick(1)
        assert done == [True]
        assert not l2.flushing
        assert l2.resident_lines() == []
        events = [e for e, _ in l2.flush_log]
        assert events[:3] == ["flush", "l1_flush", "flush_done"]
        assert events[-1] == "flush_complete"

    def test_flush_waits_for_open_miss(self):
        l2 = _make_l2()
        l2.request(_load(A))
        l2.drain()
        l2.start_flush()
        assert [e for e, _ in l2.flush_log] == ["flush"]
        l2.handle_message(_data(A, LineState.S))
        l2.tick(1)
        assert _kinds(l2.drain()) == [(MsgKind.PUT_S, HOME)]

    def test_l1_handshake(self):
        l2 = _make_l2()
        calls = []
        l2.l1_flush = lambda done: (calls.append("l1"), done())
        l2.start_flush()
        assert calls == ["l1"]
        l2.tick(1)
        assert not l2.flushing
        assert l2.stats.flushes == 1

    def test_double_flush_rejected(self):
        l2 = _make_l2()
        l2.request(_load(A))
        l2.start_flush()
        with pytest.raises(ProtocolError):
            l2.start_flush()

    def test_flush_admits_write_closing_open_amo(self):
        l2 = _make_l2()
        _install(l2, A, LineState.M, _line(10))
        l2.request(CoreSideReq(CoreOp.AMO_READ, A, lock=True, atop=1))
        l2.pop_response()
        done = []
        l2.start_flush(lambda: done.append(True))
        assert [e for e, _ in l2.flush_log] == ["flush"]
        l2.request(CoreSideReq(CoreOp.AMO_WRITE, A, data=11, lock=True, atop=1))
        assert l2.pop_response().code is WriteResp.EXOKAY
        l2.tick(1)
        out = l2.drain()
        assert _kinds(out) == [(MsgKind.PUT_M, HOME)]
        assert read_word(out[0].data, 0) == 11
        l2.handle_message(CohMsg(MsgKind.WB_ACK, A, HOME, 0))
        l2.tick(2)
        assert done == [True]
        assert l2.idle()

    def test_flush_blocks_new_amo_until_complete(self):
        l2 = _make_l2()
        _install(l2, A, LineState.M)
        l2.start_flush()
        l2.request(CoreSideReq(CoreOp.AMO_READ, A, lock=True, atop=1))
        assert l2.pop_response() is None
        l2.handle_message(CohMsg(MsgKind.WB_ACK, A, HOME, 0))
        l2.tick(1)
        assert not l2.flushing
        l2.tick(2)
        assert _kinds(l2.drain())[-1] == (MsgKind.GET_M, HOME)

    def test_flush_admits_sc_inside_grace_window(self):
        l2 = _make_l2(lr_grace=4)
        _install(l2, A, LineState.M)
        l2.request(CoreSideReq(CoreOp.LR_READ, A, lock=True))
        l2.pop_response()
        l2.start_flush()
        l2.request(CoreSideReq(CoreOp.IFETCH, B))
        assert _kinds(l2.drain()) == [(MsgKind.GET_S, HOME)]
        l2.handle_message(_data(B, LineState.S))
        l2.pop_response()
        l2.request(CoreSideReq(CoreOp.SC_WRITE, A, data=5, lock=True))
        assert l2.pop_response().code is WriteResp.EXOKAY
        assert l2.stats.reservations_killed == 0
        l2.tick(1)
        out = l2.drain()
        assert sorted(m.kind.value for m in out) == ["PutM", "PutS"]
        assert read_word(next(m for m in out if m.kind is MsgKind.PUT_M).data, 0) == 5

    def test_flush_ends_reservation_after_grace_window(self):
        l2 = _make_l2(lr_grace=4)
        _install(l2, A, LineState.M)
        l2.request(CoreSideReq(CoreOp.LR_READ, A, lock=True))
        l2.pop_response()
        l2.start_flush()
        l2.tick(3)
        assert l2.stats.reservations_killed == 0
        assert "l1_flush" not in [e for e, _ in l2.flush_log]
        l2.tick(4)
        assert l2.stats.reservations_killed == 1
        assert _kinds(l2.drain()) == [(MsgKind.PUT_M, HOME)]
        l2.handle_message(CohMsg(MsgKind.WB_ACK, A, HOME, 0))
        l2.tick(5)
        assert not l2.flushing
        l2.request(CoreSideReq(CoreOp.SC_WRITE, A, data=5, lock=True))
        assert l2.pop_response().code is WriteResp.OKAY
        assert l2.stats.sc_failure == 1
