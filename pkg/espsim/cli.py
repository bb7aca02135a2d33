"""
Command-line entry point.

    espsim run      --config CFG (--trace FILE | --workload NAME) [--seed N] [--out DIR]
    espsim litmus   --config CFG [--corpus DIR] [--test NAME] [--seeds N] [--out DIR]
    espsim explore  [--ops PRESET | --trace FILE] [--no-e-grants] [--out DIR]
    espsim scale    --config CFG --workload NAME [--cores 1,2,4] [--out DIR]

Exit codes: 0 clean, 1 violations or failing tests, 2 usage or parse errors.
"""

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

from espsim import __version__
from espsim.config import (
    DEFAULT_LIVENESS_BOUND,
    EXPLORE_MAX_STATES,
    FAULT_KINDS,
    ConfigError,
    EspSimError,
    setup_logging,
)
from espsim.core import OpKind, TraceOp
from espsim.explore import explore
from espsim.litmus import load_corpus, run_litmus
from espsim.noc import Packet
from espsim.soc import Soc
from espsim.utils import load_config, load_trace
from espsim.workloads import WORKLOADS, geomean_rows, make_workload, run_scale

logger = logging.getLogger(__name__)

EXIT_CLEAN = 0
EXIT_VIOLATIONS = 1
EXIT_USAGE = 2

VIOLATION_HEADERS = ["kind", "cycle", "addr", "narrative"]
NOC_TRACE_HEADERS = ["cycle", "plane", "kind", "addr", "src", "dst", "injected", "hops"]

_X, _Y = 0x40, 0x80
EXPLORE_PRESETS = {
    "load-store": [
        [TraceOp(OpKind.ST, _X, 1), TraceOp(OpKind.LD, _X)],
        [TraceOp(OpKind.ST, _X, 2), TraceOp(OpKind.LD, _X)],
    ],
    "amo": [
        [TraceOp(OpKind.AMOADD, _X, 1), TraceOp(OpKind.LD, _X)],
        [TraceOp(OpKind.AMOADD, _X, 1), TraceOp(OpKind.ST, _X, 2)],
    ],
    "lrsc": [
        [TraceOp(OpKind.LR, _X), TraceOp(OpKind.SC, _X, 1)],
        [TraceOp(OpKind.ST, _X, 2), TraceOp(OpKind.LD, _X)],
    ],
    "message-passing": [
        [TraceOp(OpKind.ST, _X, 1), TraceOp(OpKind.ST, _Y, 1)],
        [TraceOp(OpKind.LD, _Y), TraceOp(OpKind.LD, _X)],
    ],
}


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------

def write_csv(path: Path, rows: Iterable[dict], headers: Optional[Sequence[str]] = None) -> int:
    """Write *rows* as CSV; headers default to the first row's keys."""
    rows = list(rows)
    if headers is None:
        headers = list(rows[0]) if rows else []
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(headers))
        writer.writeheader()
        writer.writerows(rows)
    logger.info("Wrote %d rows to %s", len(rows), path)
    return len(rows)


class _NocTraceWriter:
    def __init__(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = path.open("w", newline="", encoding="utf-8")
        self._writer = csv.DictWriter(self._fh, fieldnames=NOC_TRACE_HEADERS)
        self._writer.writeheader()

    def __call__(self, pkt: Packet, cycle: int) -> None:
        self._writer.writerow({
            "cycle": cycle,
            "plane": pkt.plane,
            "kind": pkt.msg.kind.value,
            "addr": f"{pkt.msg.addr:#x}",
            "src": pkt.msg.src,
            "dst": pkt.msg.dst,
            "injected": pkt.injected,
            "hops": pkt.hops,
        })

    def close(self) -> None:
        self._fh.close()


def _faults(args) -> List[str]:
    return sorted(set(args.inject_fault or ()))


def _core_counts(text: str) -> List[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.trace is not None:
        programs = load_trace(args.trace)
    else:
        n_cores = args.cores or len(cfg.processor_tiles)
        if n_cores > len(cfg.processor_tiles):
            raise ConfigError(f"{n_cores} cores requested but the config has "
                              f"{len(cfg.processor_tiles)}")
        programs = make_workload(args.workload, n_cores, size=args.size, seed=args.seed)

    trace = _NocTraceWriter(args.out / "noc_trace.csv") if args.noc_trace else None
    try:
        soc = Soc(cfg, programs, seed=args.seed, faults=_faults(args), noc_trace=trace,
                  liveness_bound=args.liveness_bound)
        stats = soc.run(args.max_cycles)
    finally:
        if trace is not None:
            trace.close()

    write_csv(args.out / "stats.csv", [stats.to_record()])
    violations = soc.violations
    write_csv(args.out / "violations.csv", [v.to_record() for v in violations],
              VIOLATION_HEADERS)
    print(f"{stats.cycles} cycles, {sum(stats.retired)} ops retired, "
          f"{len(violations)} violations -> {args.out}")
    for v in violations[:10]:
        print(f"  {v}")
    return EXIT_VIOLATIONS if violations else EXIT_CLEAN


def cmd_litmus(args) -> int:
    cfg = load_config(args.config)
    tests = load_corpus(args.corpus, cfg=cfg, only=args.test)
    results = [
        run_litmus(t, cfg, args.seeds, base_seed=args.seed, workers=args.workers,
                   faults=_faults(args))
        for t in tests
    ]
    write_csv(args.out / "litmus.csv", [r.to_record() for r in results])
    failed = [r for r in results if not r.passed]
    if failed:
        write_csv(
            args.out / "violations.csv",
            [{"test": r.name, "seed": seed, **v.to_record()}
             for r in failed for seed, v in r.violations],
            ["test", "seed", *VIOLATION_HEADERS],
        )
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  {r.verdict}  {len(r.observed)}/{len(r.allowed)} outcomes")
    print(f"{len(results) - len(failed)}/{len(results)} tests passed")
    return EXIT_VIOLATIONS if failed else EXIT_CLEAN


def cmd_explore(args) -> int:
    if args.trace is not None:
        traced = load_trace(args.trace)
        programs = [traced.get(c, []) for c in range(max(traced) + 1)]
    else:
        programs = EXPLORE_PRESETS[args.ops]
    report = explore(programs, e_grants=not args.no_e_grants, faults=_faults(args),
                     l2_ways=args.l2_ways, max_states=args.max_states)
    write_csv(args.out / "explore.csv", [{
        "states": report.states,
        "transitions": report.transitions,
        "terminal": report.terminal,
        "deadlocks": report.deadlocks,
        "violations": report.violation_count,
        "complete": report.complete,
        "frontier": report.frontier,
    }])
    print(report.summary())
    for text in report.violations:
        print(f"  {text}")
    return EXIT_CLEAN if report.ok else EXIT_VIOLATIONS


def cmd_scale(args) -> int:
    cfg = load_config(args.config)
    rows = []
    for workload in args.workload:
        rows += run_scale(cfg, workload, args.cores, size=args.size, seed=args.seed,
                          workers=args.workers)
    if len(args.workload) > 1:
        rows += geomean_rows(rows)
    write_csv(args.out / "scale.csv", [r.to_record() for r in rows])
    for r in rows:
        ref = "" if r.reference is None else f"  (reference {r.reference:.2f})"
        print(f"{r.workload:<12} {r.cores} cores  {r.normalized:.3f}{ref}")
    return EXIT_CLEAN


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="espsim",
        description="Cycle-level model of a coherent tiled SoC with verification tools.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--log-level",
        default=None,
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level (default: $ESPSIM_LOG or WARNING)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, config: bool = True) -> None:
        if config:
            p.add_argument("--config", type=Path, required=True, help="SoC config file")
        p.add_argument("--seed", type=int, default=0, help="Base seed (default: 0)")
        p.add_argument("--out", type=Path, default=Path("out"),
                       help="Output directory (default: out)")

    def faults(p) -> None:
        p.add_argument("--inject-fault", action="append", choices=FAULT_KINDS,
                       help="Seed a protocol fault (repeatable)")

    run = sub.add_parser("run", help="Simulate one trace or synthetic workload")
    common(run)
    source = run.add_mutually_exclusive_group(required=True)
    source.add_argument("--trace", type=Path, help="Core trace file")
    source.add_argument("--workload", choices=sorted(WORKLOADS), help="Synthetic workload")
    run.add_argument("--cores", type=int, default=None,
                     help="Active cores for --workload (default: all processor tiles)")
    run.add_argument("--size", type=int, default=None, help="Workload size override")
    run.add_argument("--max-cycles", type=int, default=None, help="Stop after this many cycles")
    run.add_argument("--liveness-bound", type=int, default=DEFAULT_LIVENESS_BOUND,
                     help="Cycles without progress before a liveness violation")
    run.add_argument("--noc-trace", action="store_true", help="Write OUT/noc_trace.csv")
    faults(run)
    run.set_defaults(func=cmd_run)

    lit = sub.add_parser("litmus", help="Run the litmus corpus against the SC oracle")
    common(lit)
    lit.add_argument("--corpus", type=Path, default=Path("litmus"),
                     help="Directory of .litmus files (default: litmus)")
    lit.add_argument("--test", default=None, help="Run only the test with this name")
    lit.add_argument("--seeds", type=int, default=1000, help="Runs per test (default: 1000)")
    lit.add_argument("--workers", type=int, default=None, help="Worker threads")
    faults(lit)
    lit.set_defaults(func=cmd_litmus)

    exp = sub.add_parser("explore", help="Exhaustively explore a tiny configuration")
    common(exp, config=False)
    ops = exp.add_mutually_exclusive_group()
    ops.add_argument("--ops", choices=sorted(EXPLORE_PRESETS), default="load-store",
                     help="Built-in op set (default: load-store)")
    ops.add_argument("--trace", type=Path, help="Trace file with one or two cores")
    exp.add_argument("--no-e-grants", action="store_true", help="Grant S instead of E")
    exp.add_argument("--l2-ways", type=int, default=2, help="L2 associativity (default: 2)")
    exp.add_argument("--max-states", type=int, default=EXPLORE_MAX_STATES, help="State bound")
    faults(exp)
    exp.set_defaults(func=cmd_explore)

    scale = sub.add_parser("scale", help="Normalised execution time versus core count")
    common(scale)
    scale.add_argument("--workload", action="append", choices=sorted(WORKLOADS),
                       required=True, help="Workload (repeatable)")
    scale.add_argument("--cores", type=_core_counts, default=[1, 2, 4],
                       help="Comma-separated core counts (default: 1,2,4)")
    scale.add_argument("--size", type=int, default=None, help="Workload size override")
    scale.add_argument("--workers", type=int, default=None, help="Worker threads")
    scale.set_defaults(func=cmd_scale)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(level=getattr(logging, args.log_level) if args.log_level else None)
    try:
        return args.func(args)
    except ConfigError as exc:
        # ParseError included: file and line are part of the message.
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EspSimError as exc:
        logger.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VIOLATIONS


if __name__ == "__main__":
    raise SystemExit(main())
