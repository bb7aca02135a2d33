"""
Centralised configuration for the espsim package.

Defaults, protocol constants, the MMIO register map, the exception hierarchy,
and logging setup used across all modules.
"""

import logging
import os
from typing import Optional

# ---------------------------------------------------------------------------
# Cache and memory defaults
# ---------------------------------------------------------------------------
DEFAULT_LINE_BYTES = 16
DEFAULT_MEM_SIZE = 1 << 20  # 1 MiB
WORD_BYTES = 4
WORD_MASK = 0xFFFF_FFFF

# Capacities follow the evaluation SoC: 64KB L2 per processor tile and a
# 512KB LLC slice per memory tile.  Set/way split is our own choice.
DEFAULT_L2_SETS = 1024
DEFAULT_L2_WAYS = 4
DEFAULT_LLC_SETS = 4096
DEFAULT_LLC_WAYS = 8
DEFAULT_L1D_SETS = 64
DEFAULT_L1D_WAYS = 2

DEFAULT_MSHRS = 4
# Cycles an LR fill holds off forwards to its line before serving them.
DEFAULT_LR_GRACE = 16

# ---------------------------------------------------------------------------
# Latencies (cycles)
# ---------------------------------------------------------------------------
DEFAULT_L1_HIT_LATENCY = 1
DEFAULT_L2_HIT_LATENCY = 2
DEFAULT_LLC_HIT_LATENCY = 4
DEFAULT_MEM_LATENCY = 30
DEFAULT_ALU_LATENCY = 1

# ---------------------------------------------------------------------------
# NoC
# ---------------------------------------------------------------------------
NUM_PLANES = 6
DEFAULT_QUEUE_DEPTH = 4
# A DataRsp delivered after this cycle is eligible for the drop-response fault.
DROP_RESPONSE_AFTER = 100

# ---------------------------------------------------------------------------
# MMIO register map
# ---------------------------------------------------------------------------
# Tile with raster index i owns [MMIO_BASE + i*MMIO_WINDOW, ... + MMIO_WINDOW).
DEFAULT_MMIO_BASE = 0xF000_0000
MMIO_WINDOW = 0x100
MMIO_TRIGGER = 0x0  # write 1: flush (memory/processor tiles) or start (accelerator)
MMIO_STATUS = 0x8   # read: 0 busy, 1 done/idle

# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------
DEFAULT_LIVENESS_BOUND = 10_000
LITMUS_SKEW_CYCLES = 16
ORACLE_MAX_OPS = 12
EXPLORE_MAX_STATES = 10_000_000

FAULT_KINDS = ("duplicate-m", "drop-response", "skip-invack")

# Normalised execution time geomeans reported for the 4-core evaluation SoC.
# Annotations only, never asserted.
REFERENCE_GEOMEAN = {1: 1.0, 2: 0.58, 4: 0.34}

# ---------------------------------------------------------------------------
# Exceptions
# ---------------------------------------------------------------------------


class EspSimError(Exception):
    """Base class for all espsim errors."""


class ConfigError(EspSimError):
    """Invalid SoC configuration, geometry, or out-of-range address."""


class ParseError(ConfigError):
    """A config, trace, or litmus file could not be parsed."""

    def __init__(self, message: str, path=None, lineno: Optional[int] = None) -> None:
        self.path = path
        self.lineno = lineno
        where = f"{path or '<text>'}:{lineno}: " if lineno is not None else ""
        super().__init__(f"{where}{message}")


class ProtocolError(EspSimError):
    """A coherence controller received a message it cannot legally handle."""

    def __init__(self, message: str, addr: Optional[int] = None,
                 tile: Optional[int] = None, state=None) -> None:
        self.addr = addr
        self.tile = tile
        self.state = state
        super().__init__(message)


class OracleBoundError(EspSimError):
    """The SC oracle refused a test larger than its enumeration bound."""


# ---------------------------------------------------------------------------
# Logging helper
# ---------------------------------------------------------------------------
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_ENV_VAR = "ESPSIM_LOG"


def _level_from_env() -> int:
    raw = os.environ.get(LOG_ENV_VAR, "").strip()
    if not raw:
        return logging.WARNING
    if raw.isdigit():
        return int(raw)
    level = logging.getLevelName(raw.upper())
    return level if isinstance(level, int) else logging.WARNING


def setup_logging(level: Optional[int] = None) -> None:
    """Configure root logging for espsim; ``ESPSIM_LOG`` sets the default level."""
    if level is None:
        level = _level_from_env()
    logging.basicConfig(level=level, format=LOG_FORMAT)
