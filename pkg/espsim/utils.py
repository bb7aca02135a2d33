"""
Text parsers for SoC configs, core traces and litmus tests.

All three formats are line oriented: ``#`` starts a comment, blank lines are
ignored.  Parsing is done with regular expressions line by line so that every
error can name its line; see ``Docs/file_formats.md`` for examples.
"""

import logging
import re
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from espsim.accelerator import AcceleratorSpec, CoherenceMode, DmaDescriptor
from espsim.coherence import CacheGeometry
from espsim.config import ConfigError, EspSimError, ParseError
from espsim.core import VALUE_KINDS, OpKind, TraceOp
from espsim.oracle import LitmusTest, Observation
from espsim.soc import Latencies, SocConfig, TileKind

logger = logging.getLogger(__name__)

_SECTION = re.compile(r"^\[\s*(\w+)(?:\s+(\d+)\s*,\s*(\d+))?\s*\]$")
_KEY_VALUE = re.compile(r"^(\w+)\s*=\s*(.+)$")
_TILE = re.compile(r"^(\d+)\s*,\s*(\d+)\s*=\s*(\w+)$")
_TRACE_OP = re.compile(
    r"^core\s+(\d+)\s*:\s*([A-Za-z]+)(?:\s+(-?(?:0x[0-9a-fA-F]+|\d+)))?"
    r"(?:\s+(-?(?:0x[0-9a-fA-F]+|\d+)))?$"
)
_DIRECTIVE = re.compile(r"^(name|expect|observe|init)\s*:\s*(.*)$")
_INIT = re.compile(r"^(0x[0-9a-fA-F]+|\d+)\s*=\s*(-?(?:0x[0-9a-fA-F]+|\d+))$")
_DMA = re.compile(
    r"^(read|write)\s+(0x[0-9a-fA-F]+|\d+)\s+(0x[0-9a-fA-F]+|\d+)"
    r"((?:\s+(?:fill|delay)=(?:0x[0-9a-fA-F]+|\d+))*)$"
)
_DMA_OPTION = re.compile(r"(fill|delay)=(0x[0-9a-fA-F]+|\d+)")

_TRUE = {"1", "yes", "true", "on"}
_FALSE = {"0", "no", "false", "off"}


def _clean_lines(text: str):
    """Yield ``(lineno, stripped line)`` for every non-blank, non-comment line."""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def _int(value: str, path, lineno: int) -> int:
    try:
        return int(value.strip(), 0)
    except ValueError:
        raise ParseError(f"expected an integer, got {value.strip()!r}", path, lineno) from None


def _bool(value: str, path, lineno: int) -> bool:
    word = value.strip().lower()
    if word in _TRUE:
        return True
    if word in _FALSE:
        return False
    raise ParseError(f"expected yes/no, got {value.strip()!r}", path, lineno)


# ---------------------------------------------------------------------------
# SoC configuration files
# ---------------------------------------------------------------------------

_SOC_KEYS = {"rows", "cols", "mem_size", "endianness", "mmio_base", "e_grants"}
_GEOM_KEYS = {"line_bytes", "sets", "ways"}
_LATENCY_KEYS = {"l1_hit", "l2_hit", "llc_hit", "memory", "alu"}
_POLICY_KEYS = {"mshrs", "lr_grace"}
_ACC_KEYS = {"mode", "dma", "compute_delay"}


def _parse_dma(value: str, compute_delay: int, path, lineno: int) -> List[DmaDescriptor]:
    descriptors = []
    for part in value.split(";"):
        part = part.strip()
        if not part:
            continue
        match = _DMA.match(part)
        if not match:
            raise ParseError(f"bad DMA descriptor {part!r}; expected "
                             "'read|write BASE LENGTH [fill=N] [delay=N]'", path, lineno)
        options = dict(_DMA_OPTION.findall(match.group(4)))
        try:
            descriptors.append(DmaDescriptor(
                match.group(1),
                int(match.group(2), 0),
                int(match.group(3), 0),
                fill=int(options.get("fill", "0"), 0),
                compute_delay=int(options.get("delay", str(compute_delay)), 0),
            ))
        except ConfigError as exc:
            raise ParseError(str(exc), path, lineno) from exc
    return descriptors


def parse_config_text(text: str, path=None) -> SocConfig:
    """Parse SoC config text into a validated :class:`SocConfig`.

    Parameters
    ----------
    text : str
        File contents.
    path : str or Path, optional
        Used only in error messages.

    Raises
    ------
    ParseError
        On a malformed line (with its line number) or a failed validation.
    """
    section: Optional[str] = None
    acc_coord: Optional[Tuple[int, int]] = None
    soc: Dict[str, object] = {}
    geoms: Dict[str, Dict[str, int]] = {"l2": {}, "llc": {}, "l1d": {}}
    latency: Dict[str, int] = {}
    policy: Dict[str, int] = {}
    noc: Dict[str, int] = {}
    tiles: Dict[Tuple[int, int], TileKind] = {}
    acc_raw: Dict[Tuple[int, int], Dict[str, Tuple[str, int]]] = {}

    for lineno, line in _clean_lines(text):
        match = _SECTION.match(line)
        if match:
            section = match.group(1).lower()
            acc_coord = None
            if section == "acc":
                if match.group(2) is None:
                    raise ParseError("accelerator section needs a tile: [acc X,Y]", path, lineno)
                acc_coord = (int(match.group(2)), int(match.group(3)))
                acc_raw.setdefault(acc_coord, {})
            elif match.group(2) is not None or section not in (
                    "soc", "tiles", "l2", "llc", "l1d", "noc", "latency", "l2_policy"):
                raise ParseError(f"unknown section [{match.group(0)[1:-1].strip()}]", path, lineno)
            continue
        if section is None:
            raise ParseError("key outside any section", path, lineno)

        if section == "tiles":
            match = _TILE.match(line)
            if not match:
                raise ParseError(f"expected 'X,Y = kind', got {line!r}", path, lineno)
            coord = (int(match.group(1)), int(match.group(2)))
            try:
                kind = TileKind(match.group(3).lower())
            except ValueError:
                raise ParseError(f"unknown tile kind {match.group(3)!r}", path, lineno) from None
            if coord in tiles:
                raise ParseError(f"tile {coord} assigned twice", path, lineno)
            tiles[coord] = kind
            continue

        match = _KEY_VALUE.match(line)
        if not match:
            raise ParseError(f"expected 'key = value', got {line!r}", path, lineno)
        key, value = match.group(1).lower(), match.group(2).strip()

        if section == "soc":
            if key not in _SOC_KEYS:
                raise ParseError(f"unknown [soc] key {key!r}", path, lineno)
            if key == "endianness":
                soc[key] = value.lower()
            elif key == "e_grants":
                soc[key] = _bool(value, path, lineno)
            else:
                soc[key] = _int(value, path, lineno)
        elif section in geoms:
            if key not in _GEOM_KEYS:
                raise ParseError(f"unknown [{section}] key {key!r}", path, lineno)
            geoms[section][key] = _int(value, path, lineno)
        elif section == "latency":
            if key not in _LATENCY_KEYS:
                raise ParseError(f"unknown [latency] key {key!r}", path, lineno)
            latency[key] = _int(value, path, lineno)
        elif section == "l2_policy":
            if key not in _POLICY_KEYS:
                raise ParseError(f"unknown [l2_policy] key {key!r}", path, lineno)
            policy[key] = _int(value, path, lineno)
        elif section == "noc":
            if key != "queue_depth":
                raise ParseError(f"unknown [noc] key {key!r}", path, lineno)
            noc[key] = _int(value, path, lineno)
        else:
            if key not in _ACC_KEYS:
                raise ParseError(f"unknown [acc] key {key!r}", path, lineno)
            acc_raw[acc_coord][key] = (value, lineno)

    for key in ("rows", "cols"):
        if key not in soc:
            raise ParseError(f"[soc] is missing {key!r}", path)

    try:
        defaults = SocConfig(rows=1, cols=1, tiles={})
        geometry = {}
        for name, default in (("l2", defaults.l2_geom), ("llc", defaults.llc_geom),
                              ("l1d", defaults.l1d_geom)):
            values = geoms[name]
            geometry[name] = CacheGeometry(
                values.get("line_bytes", default.line_bytes),
                values.get("sets", default.sets),
                values.get("ways", default.ways),
            )

        accelerators = {}
        for coord, raw in acc_raw.items():
            mode_text, mode_line = raw.get("mode", ("llc-coherent", None))
            try:
                mode = CoherenceMode(mode_text.lower())
            except ValueError:
                raise ParseError(f"unknown accelerator mode {mode_text!r}", path,
                                 mode_line) from None
            delay = 0
            if "compute_delay" in raw:
                delay = _int(raw["compute_delay"][0], path, raw["compute_delay"][1])
            job: List[DmaDescriptor] = []
            if "dma" in raw:
                job = _parse_dma(raw["dma"][0], delay, path, raw["dma"][1])
            accelerators[coord] = AcceleratorSpec(mode, tuple(job))

        cfg = SocConfig(
            rows=soc["rows"],
            cols=soc["cols"],
            tiles=tiles,
            l2_geom=geometry["l2"],
            llc_geom=geometry["llc"],
            l1d_geom=geometry["l1d"],
            latency=Latencies(**latency),
            accelerators=accelerators,
            **{k: v for k, v in soc.items() if k not in ("rows", "cols")},
            **policy,
            **noc,
        )
        cfg.validate()
    except ParseError:
        raise
    except EspSimError as exc:
        raise ParseError(str(exc), path) from exc
    return cfg


def load_config(path) -> SocConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read config: {exc}", path) from exc
    cfg = parse_config_text(text, path)
    logger.info("loaded %dx%d config from %s", cfg.cols, cfg.rows, path)
    return cfg


# ---------------------------------------------------------------------------
# Core traces
# ---------------------------------------------------------------------------

def parse_trace_line(line: str, path=None, lineno: Optional[int] = None) -> Tuple[int, TraceOp]:
    """Parse ``core N: OP [addr] [value]`` into ``(core, TraceOp)``.

    ``NOP`` is accepted as a synonym for ``FENCE``.
    """
    match = _TRACE_OP.match(line)
    if not match:
        raise ParseError(f"expected 'core N: OP [addr] [value]', got {line!r}", path, lineno)
    core = int(match.group(1))
    name = match.group(2).upper()
    if name == "NOP":
        name = "FENCE"
    try:
        kind = OpKind(name)
    except ValueError:
        raise ParseError(f"unknown op {match.group(2)!r}", path, lineno) from None
    addr_text, value_text = match.group(3), match.group(4)
    if kind is OpKind.FENCE:
        if addr_text is not None:
            raise ParseError(f"{name} takes no operands", path, lineno)
        return core, TraceOp(kind)
    if addr_text is None:
        raise ParseError(f"{name} needs an address", path, lineno)
    addr = int(addr_text, 0)
    if addr < 0:
        raise ParseError(f"negative address {addr_text}", path, lineno)
    if kind in VALUE_KINDS:
        if value_text is None:
            raise ParseError(f"{name} needs a value", path, lineno)
        return core, TraceOp(kind, addr, int(value_text, 0))
    if value_text is not None:
        raise ParseError(f"{name} takes no value", path, lineno)
    return core, TraceOp(kind, addr)


def parse_trace_text(text: str, path=None) -> Dict[int, List[TraceOp]]:
    """Per-core op lists, in file order."""
    programs: Dict[int, List[TraceOp]] = {}
    for lineno, line in _clean_lines(text):
        core, op = parse_trace_line(line, path, lineno)
        programs.setdefault(core, []).append(op)
    return programs


def load_trace(path) -> Dict[int, List[TraceOp]]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read trace: {exc}", path) from exc
    return parse_trace_text(text, path)


# ---------------------------------------------------------------------------
# Litmus tests
# ---------------------------------------------------------------------------

def parse_litmus_text(text: str, path=None, *, line_bytes: Optional[int] = None,
                      mmio_base: Optional[int] = None) -> LitmusTest:
    """Parse a litmus file: trace lines plus ``name:``, ``expect: oracle``,
    ``observe:`` and ``init:`` directives."""
    name = Path(path).stem if path is not None else "litmus"
    observe: List[Observation] = []
    init: Dict[int, int] = {}
    programs: Dict[int, List[TraceOp]] = {}
    expect_seen = False
    for lineno, line in _clean_lines(text):
        match = _DIRECTIVE.match(line)
        if match is None:
            core, op = parse_trace_line(line, path, lineno)
            programs.setdefault(core, []).append(op)
            continue
        key, value = match.group(1), match.group(2).strip()
        if key == "name":
            if not value:
                raise ParseError("empty test name", path, lineno)
            name = value
        elif key == "expect":
            if value.lower() != "oracle":
                raise ParseError(f"only 'expect: oracle' is supported, got {value!r}",
                                 path, lineno)
            expect_seen = True
        elif key == "observe":
            try:
                observe.extend(Observation.parse(tok) for tok in value.split())
            except ConfigError as exc:
                raise ParseError(str(exc), path, lineno) from exc
        else:
            for tok in value.split():
                m = _INIT.match(tok)
                if not m:
                    raise ParseError(f"expected ADDR=VALUE, got {tok!r}", path, lineno)
                init[int(m.group(1), 0)] = int(m.group(2), 0)
    if not expect_seen:
        raise ParseError("missing 'expect: oracle' directive", path)
    if not programs:
        raise ParseError("litmus test has no ops", path)
    n_cores = max(programs) + 1
    extra = {}
    if line_bytes is not None:
        extra["line_bytes"] = line_bytes
    if mmio_base is not None:
        extra["mmio_base"] = mmio_base
    try:
        return LitmusTest(
            name,
            tuple(tuple(programs.get(c, ())) for c in range(n_cores)),
            tuple(observe),
            init,
            **extra,
        )
    except ConfigError as exc:
        raise ParseError(str(exc), path) from exc


def load_litmus(path, **options) -> LitmusTest:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read litmus test: {exc}", path) from exc
    return parse_litmus_text(text, path, **options)
