"""Tests for espsim.soc — config validation, address maps and whole-SoC runs."""

import dataclasses

import numpy as np
import pytest

from espsim.accelerator import AcceleratorSpec, CoherenceMode, DmaDescriptor
from espsim.coherence import CacheGeometry
from espsim.config import ConfigError
from espsim.core import OpKind, TraceOp
from espsim.monitors import ViolationKind
from espsim.oracle import LitmusTest, Observation
from espsim.soc import Latencies, SocConfig, TileKind, build_soc, partition_target
from espsim.workloads import flush_ops

CPU, MEM, ACC, AUX, EMPTY = (TileKind.CPU, TileKind.MEM, TileKind.ACC, TileKind.AUX,
                             TileKind.EMPTY)

SMALL = dict(
    mem_size=0x1000,
    l2_geom=CacheGeometry(16, 8, 2),
    llc_geom=CacheGeometry(16, 16, 4),
    l1d_geom=CacheGeometry(16, 4, 1),
    latency=Latencies(memory=8),
)


def _make_cfg(tiles=None, **overrides) -> SocConfig:
    """2x2 SoC: cores at tiles 0 and 2, memory at 1, auxiliary at 3."""
    tiles = tiles or {(0, 0): CPU, (1, 0): MEM, (0, 1): CPU, (1, 1): AUX}
    options = dict(SMALL)
    options.update(overrides)
    return SocConfig(rows=2, cols=2, tiles=tiles, **options)


def _make_acc_cfg(*job: DmaDescriptor, mode=CoherenceMode.LLC_COHERENT) -> SocConfig:
    """2x2 SoC with one core (tile 0) and an accelerator at tile 2."""
    tiles = {(0, 0): CPU, (1, 0): MEM, (0, 1): ACC, (1, 1): AUX}
    return _make_cfg(tiles, accelerators={(0, 1): AcceleratorSpec(mode, tuple(job))})


def _op(kind: OpKind, addr: int = 0, value=None) -> TraceOp:
    return TraceOp(kind, addr, value)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

class TestValidate:
    def test_valid(self):
        _make_cfg().validate()

    def test_missing_slot(self):
        cfg = _make_cfg({(0, 0): CPU, (1, 0): MEM, (1, 1): AUX})
        with pytest.raises(ConfigError, match="without a tile"):
            cfg.validate()

    def test_two_aux_tiles(self):
        cfg = _make_cfg({(0, 0): CPU, (1, 0): MEM, (0, 1): AUX, (1, 1): AUX})
        with pytest.raises(ConfigError, match="auxiliary"):
            cfg.validate()

    def test_memory_tiles_power_of_two(self):
        tiles = {(0, 0): MEM, (1, 0): MEM, (0, 1): MEM, (1, 1): AUX}
        with pytest.raises(ConfigError, match="power of two"):
            _make_cfg(tiles).validate()

    def test_line_sizes_match(self):
        with pytest.raises(ConfigError, match="line sizes"):
            _make_cfg(l1d_geom=CacheGeometry(32, 4, 1)).validate()

    def test_mmio_overlaps_memory(self):
        with pytest.raises(ConfigError, match="overlaps"):
            _make_cfg(mmio_base=0x800).validate()

    def test_accelerator_needs_section(self):
        tiles = {(0, 0): CPU, (1, 0): MEM, (0, 1): ACC, (1, 1): AUX}
        with pytest.raises(ConfigError, match="accelerator sections"):
            _make_cfg(tiles).validate()

    def test_dma_past_memory(self):
        cfg = _make_acc_cfg(DmaDescriptor("read", 0xFF0, 32))
        with pytest.raises(ConfigError, match="past memory"):
            cfg.validate()

    def test_too_few_mshrs(self):
        with pytest.raises(ConfigError, match="MSHRs"):
            _make_cfg(mshrs=1).validate()


class TestAddressMaps:
    def test_partition_target(self):
        assert partition_target(0x7FC, [1, 5], 0x1000) == 1
        assert partition_target(0x800, [1, 5], 0x1000) == 5

    def test_partition_target_outside_memory(self):
        with pytest.raises(ConfigError):
            partition_target(0x1000, [1], 0x1000)

    def test_grid_helpers(self):
        cfg = _make_cfg()
        assert cfg.processor_tiles == [0, 2]
        assert cfg.memory_tiles == [1]
        assert cfg.aux_tile == 3
        assert cfg.coord_of(2) == (0, 1)
        assert cfg.partition(1) == (0, 0x1000)
        assert cfg.mmio_addr(2, 0x8) == 0xF0000208

    def test_mmio_target(self):
        soc = build_soc(_make_cfg())
        assert soc.mmio_target(0xF0000000) == 0
        assert soc.mmio_target(0xF0000108) == 1
        assert soc.mmio_target(0xF0000004) is None
        assert soc.mmio_target(0xF0000300) is None  # auxiliary tile
        assert soc.mmio_target(0xF0000400) is None  # past the grid

    def test_unknown_fault(self):
        with pytest.raises(ConfigError, match="fault"):
            build_soc(_make_cfg(), faults=("flip-bits",))

    def test_program_for_missing_core(self):
        with pytest.raises(ConfigError, match="processor tiles"):
            build_soc(_make_cfg(), {5: []})


# ---------------------------------------------------------------------------
# Whole-SoC runs
# ---------------------------------------------------------------------------

class TestRun:
    def test_store_then_load(self):
        soc = build_soc(_make_cfg(), {0: [_op(OpKind.ST, 0x40, 5), _op(OpKind.LD, 0x40)]})
        stats = soc.run(max_cycles=2000)
        assert soc.quiescent()
        assert soc.cores[0].results == [None, 5]
        assert soc.peek_word(0x40) == 5
        assert soc.violations == []
        assert stats.retired == (2, 0)

    def test_value_crosses_cores(self):
        programs = {0: [_op(OpKind.ST, 0x40, 5)], 1: [_op(OpKind.LD, 0x40)]}
        soc = build_soc(_make_cfg(), programs, start_skew={1: 400})
        soc.run(max_cycles=3000)
        assert soc.cores[1].results == [5]
        assert soc.violations == []

    def test_initial_memory(self):
        soc = build_soc(_make_cfg(), {1: [_op(OpKind.LD, 0x84)]}, initial_memory={0x84: 9})
        soc.run(max_cycles=2000)
        assert soc.dram_word(0x84) == 9
        assert soc.cores[1].results == [9]

    def test_amo_counts_across_cores(self):
        programs = {c: [_op(OpKind.AMOADD, 0x40, 1)] * 3 for c in (0, 1)}
        soc = build_soc(_make_cfg(), programs, seed=3)
        soc.run(max_cycles=5000)
        assert soc.peek_word(0x40) == 6
        assert soc.violations == []

    def test_flush_reaches_dram(self):
        cfg = _make_cfg()
        program = [
            _op(OpKind.ST, 0x40, 7),
            _op(OpKind.ST, cfg.mmio_addr(0), 1),
            _op(OpKind.ST, cfg.mmio_addr(1), 1),
            _op(OpKind.LD, cfg.mmio_addr(1, 0x8)),
        ]
        soc = build_soc(cfg, {0: program})
        stats = soc.run(max_cycles=3000)
        assert soc.dram_word(0x40) == 7
        assert soc.cores[0].results[-1] == 1
        assert stats.l2_flushes == 1
        assert stats.llc_flushes == 1

    def test_unmapped_mmio_load_reads_zero(self):
        soc = build_soc(_make_cfg(), {0: [_op(OpKind.LD, 0xF0000304)]})
        soc.run(max_cycles=1000)
        assert soc.cores[0].results == [0]

    def test_accelerator_interrupt(self):
        cfg = _make_acc_cfg(DmaDescriptor("write", 0x100, 16, fill=3))
        program = [_op(OpKind.ST, cfg.mmio_addr(2), 1), _op(OpKind.LD, 0x104)]
        soc = build_soc(cfg, {0: program})
        stats = soc.run(max_cycles=3000)
        assert soc.cores[0].results == [None, 4]
        assert soc.accelerators[0].jobs_done == 1
        assert stats.irqs == 1

    def test_fully_coherent_accelerator_reads_core_data(self):
        cfg = _make_acc_cfg(DmaDescriptor("read", 0x100, 16),
                            mode=CoherenceMode.FULLY_COHERENT)
        program = [_op(OpKind.ST, 0x108, 11), _op(OpKind.ST, cfg.mmio_addr(2), 1)]
        soc = build_soc(cfg, {0: program})
        soc.run(max_cycles=3000)
        assert soc.accelerators[0].read_buffer == [0, 0, 11, 0]
        assert soc.violations == []

    def test_duplicate_m_fault_breaks_swmr(self):
        programs = {0: [_op(OpKind.ST, 0x40, 1)], 1: [_op(OpKind.ST, 0x40, 2)]}
        soc = build_soc(_make_cfg(), programs, faults=("duplicate-m",), start_skew={1: 300})
        soc.run(max_cycles=3000)
        assert ViolationKind.SWMR in {v.kind for v in soc.violations}

    def test_stats_record(self):
        soc = build_soc(_make_cfg(), {0: [_op(OpKind.LD, 0x40)]})
        record = soc.run(max_cycles=1000).to_record()
        assert record["retired_c0"] == 1
        assert record["llc_misses"] == 1
        assert record["violations"] == 0
        assert "packets_p5" in record

    def test_deterministic(self):
        def run():
            programs = {c: [_op(OpKind.AMOADD, 0x40, 1), _op(OpKind.LD, 0x80)] for c in (0, 1)}
            soc = build_soc(_make_cfg(), programs, seed=11)
            return dataclasses.asdict(soc.run(max_cycles=3000))

        assert run() == run()


# ---------------------------------------------------------------------------
# Remote flushes racing atomics
# ---------------------------------------------------------------------------

def _flush_core1_program(cfg: SocConfig) -> list:
    return [_op(OpKind.ST, cfg.mmio_addr(2), 1), _op(OpKind.LD, cfg.mmio_addr(2, 0x8))]


class TestFlushDuringAtomics:
    @pytest.mark.parametrize("skew", range(0, 200, 3))
    def test_flush_during_lr_sc_window(self, skew):
        cfg = _make_cfg()
        lr_sc = [_op(OpKind.LR, 0x40)] + [_op(OpKind.IF, 0x200)] * 8 + [_op(OpKind.SC, 0x40, 5)]
        programs = {0: _flush_core1_program(cfg), 1: lr_sc}
        soc = build_soc(cfg, programs, start_skew={0: skew})
        stats = soc.run(max_cycles=20000)
        assert soc.quiescent()
        assert soc.violations == []
        assert stats.l2_flushes == 1
        assert soc.cores[0].results[-1] == 1

    @pytest.mark.parametrize("skew", range(0, 200, 3))
    def test_flush_during_amo_stream(self, skew):
        cfg = _make_cfg()
        programs = {0: _flush_core1_program(cfg), 1: [_op(OpKind.AMOADD, 0x40, 1)] * 20}
        soc = build_soc(cfg, programs, start_skew={0: skew})
        stats = soc.run(max_cycles=20000)
        assert soc.quiescent()
        assert soc.violations == []
        assert stats.l2_flushes == 1
        assert soc.peek_word(0x40) == 20


# ---------------------------------------------------------------------------
# DMA coherence modes and flush ordering
# ---------------------------------------------------------------------------

class TestDmaAndFlush:
    def test_noncoherent_read_without_flush_is_stale(self):
        cfg = _make_acc_cfg(DmaDescriptor("read", 0x100, 16), mode=CoherenceMode.NON_COHERENT)
        program = [_op(OpKind.ST, 0x108, 11), _op(OpKind.ST, cfg.mmio_addr(2), 1)]
        soc = build_soc(cfg, {0: program})
        soc.run(max_cycles=3000)
        assert soc.accelerators[0].read_buffer == [0, 0, 0, 0]
        stale = [v for v in soc.violations if v.kind is ViolationKind.STALE_DMA]
        assert [v.addr for v in stale] == [0x108]

    def test_noncoherent_read_after_flush_sees_data(self):
        cfg = _make_acc_cfg(DmaDescriptor("read", 0x100, 16), mode=CoherenceMode.NON_COHERENT)
        program = ([_op(OpKind.ST, 0x108, 11)] + flush_ops(cfg, 0)
                   + [_op(OpKind.ST, cfg.mmio_addr(2), 1)])
        soc = build_soc(cfg, {0: program})
        soc.run(max_cycles=5000)
        assert soc.accelerators[0].read_buffer == [0, 0, 11, 0]
        assert soc.violations == []

    def test_core_read_hits_line_left_valid_by_dma(self):
        cfg = _make_acc_cfg(DmaDescriptor("read", 0x100, 16))
        program = [_op(OpKind.ST, cfg.mmio_addr(2), 1), _op(OpKind.LD, 0x104)]
        soc = build_soc(cfg, {0: program})
        stats = soc.run(max_cycles=3000)
        assert soc.cores[0].results == [None, 0]
        assert stats.mem_reads == 1
        assert stats.v_hits == 1
        assert soc.violations == []

    def test_flushed_memory_image_matches_oracle(self):
        cfg = _make_cfg()
        data_ops = [
            _op(OpKind.ST, 0x40, 7),
            _op(OpKind.ST, 0x44, 8),
            _op(OpKind.AMOADD, 0x80, 5),
            _op(OpKind.ST, 0x2C0, 9),
            _op(OpKind.LD, 0x40),
        ]
        program = data_ops + flush_ops(cfg, 0)
        addrs = (0x40, 0x44, 0x80, 0x2C0)
        litmus = LitmusTest("flush-image", (tuple(program),),
                            tuple(Observation(addr=a) for a in addrs))
        (final,) = litmus.allowed
        assert final == (7, 8, 5, 9)

        soc = build_soc(cfg, {0: program})
        stats = soc.run(max_cycles=5000)
        assert soc.quiescent()
        assert soc.violations == []
        assert stats.l2_flushes == 1
        assert stats.llc_flushes == 1

        expected = np.zeros(cfg.mem_size, dtype=np.uint8)
        for addr, value in zip(addrs, final):
            expected[addr:addr + 4] = np.frombuffer(value.to_bytes(4, "little"), dtype=np.uint8)
        np.testing.assert_array_equal(soc.memory, expected)

        log = soc.tiles[0].l2.flush_log
        events = [e for e, _ in log]
        assert events == ["flush", "l1_flush", "flush_done", "PutM", "PutM", "PutM",
                          "flush_complete"]
        cycles = [c for _, c in log]
        assert cycles == sorted(cycles)


# ---------------------------------------------------------------------------
# Injected NoC faults
# ---------------------------------------------------------------------------

class TestDroppedResponse:
    def test_dropped_data_response_is_lost_message(self):
        soc = build_soc(_make_cfg(), {0: [_op(OpKind.LD, 0x40)]}, faults=("drop-response",),
                        start_skew={0: 150}, liveness_bound=500)
        soc.run(max_cycles=5000)
        assert soc.mesh.stats.dropped == 1
        assert not soc.quiescent()
        assert [v.kind for v in soc.violations] == [ViolationKind.LOST_MESSAGE]

    def test_drop_before_threshold_has_no_effect(self):
        soc = build_soc(_make_cfg(), {0: [_op(OpKind.LD, 0x40)]}, faults=("drop-response",),
                        liveness_bound=500)
        soc.run(max_cycles=5000)
        assert soc.mesh.stats.dropped == 0
        assert soc.cores[0].results == [0]
