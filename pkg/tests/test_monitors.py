"""Tests for espsim.monitors — SWMR, data-value and liveness checking."""

from espsim.coherence import LineState
from espsim.monitors import (
    DataValueMonitor,
    LivenessMonitor,
    MonitorHub,
    SwmrMonitor,
    Violation,
    ViolationKind,
    check_data_value,
    check_swmr,
)

A = 0x40


class TestSwmr:
    def test_shared_readers_allowed(self):
        events = [(0, 0, A, LineState.S), (1, 1, A, LineState.S)]
        assert check_swmr(events) == []

    def test_two_writers(self):
        events = [(0, 0, A, LineState.M), (3, 1, A, LineState.M)]
        violations = check_swmr(events)
        assert len(violations) == 1
        assert violations[0].kind is ViolationKind.SWMR
        assert violations[0].cycle == 3
        assert violations[0].addr == A

    def test_writer_and_reader(self):
        events = [(0, 0, A, LineState.S), (1, 1, A, LineState.E)]
        assert len(check_swmr(events)) == 1

    def test_handover_is_legal(self):
        events = [
            (0, 0, A, LineState.M),
            (1, 0, A, LineState.I),
            (2, 1, A, LineState.M),
            (3, 1, A, LineState.MI_A),
            (4, 0, A, LineState.XMW),
        ]
        assert check_swmr(events) == []

    def test_pending_states_hold_nothing(self):
        events = [(0, 0, A, LineState.M), (1, 1, A, LineState.IM_A), (2, 2, A, LineState.IS_A)]
        assert check_swmr(events) == []

    def test_upgrade_still_reads(self):
        events = [(0, 0, A, LineState.SM_A), (1, 1, A, LineState.M)]
        assert len(check_swmr(events)) == 1

    def test_reported_once_per_episode(self):
        monitor = SwmrMonitor()
        monitor.update(0, A, LineState.M, 0)
        assert monitor.update(1, A, LineState.M, 1) is not None
        assert monitor.update(2, A, LineState.S, 2) is None
        monitor.update(1, A, LineState.I, 3)
        monitor.update(2, A, LineState.I, 3)
        assert monitor.update(3, A, LineState.E, 4) is not None
        assert len(monitor.violations) == 2


class TestDataValue:
    def test_initial_value(self):
        assert check_data_value([("read", A, 0, 0, 5)]) == []

    def test_stale_read(self):
        events = [("write", A, 1, 2), ("read", A, 0, 5, 6)]
        violations = check_data_value(events)
        assert len(violations) == 1
        assert violations[0].kind is ViolationKind.DATA_VALUE

    def test_read_overlapping_write(self):
        events = [("write", A, 1, 5), ("read", A, 0, 3, 7), ("read", A, 1, 3, 7)]
        assert check_data_value(events) == []

    def test_value_never_written(self):
        assert len(check_data_value([("write", A, 1, 0), ("read", A, 9, 1, 2)])) == 1

    def test_atomicity(self):
        monitor = DataValueMonitor({A: 4})
        monitor.write(A, 6, 3, who=1)
        v = monitor.write(A, 5, 4, who=0, rmw_old=4)
        assert v.kind is ViolationKind.ATOMICITY
        assert monitor.current(A) == 5

    def test_noncoherent_read_is_stale_dma(self):
        monitor = DataValueMonitor()
        monitor.write(A, 1, 0, who=0)
        v = monitor.read(A, 0, 5, 5, who=3, noncoherent=True)
        assert v.kind is ViolationKind.STALE_DMA


class TestLiveness:
    def test_stuck_agents(self):
        monitor = LivenessMonitor(100)
        assert monitor.stuck({"core0": 10, "core1": 150}, 200) == ["core0"]
        assert monitor.stuck({"core0": 100}, 200) == []

    def test_classify(self):
        assert LivenessMonitor.classify(True, 9, ["core0"]).kind is ViolationKind.LOST_MESSAGE
        assert LivenessMonitor.classify(False, 9, ["core0"]).kind is ViolationKind.DEADLOCK


class TestMonitorHub:
    def test_narrative_includes_history(self):
        hub = MonitorHub()
        hub.word_written(A, 1, 2, who=0)
        hub.word_read(A, 7, 3, 4, who=1)
        [v] = hub.violations
        assert "write" in v.narrative
        assert v.kind is ViolationKind.DATA_VALUE

    def test_violations_sorted_by_cycle(self):
        hub = MonitorHub()
        hub.add(Violation(ViolationKind.DEADLOCK, 50, None, "stuck"))
        hub.state_changed(0, A, LineState.M, 1)
        hub.state_changed(1, A, LineState.M, 2)
        assert [v.kind for v in hub.violations] == [ViolationKind.SWMR, ViolationKind.DEADLOCK]

    def test_record(self):
        v = Violation(ViolationKind.SWMR, 3, A, "two writers")
        assert v.to_record() == {"kind": "SWMR", "cycle": 3, "addr": "0x40",
                                 "narrative": "two writers"}
        assert str(v) == "SWMR @ 0x40 cycle 3: two writers"
