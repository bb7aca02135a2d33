"""
espsim — cycle-level model of a tiled SoC with a MESI directory protocol.

Processor, memory, accelerator and auxiliary tiles sit on a 2-D mesh with
six physical planes.  The package runs traces and synthetic workloads on
that model, checks litmus tests against a sequentially consistent oracle
and exhaustively explores a two-cache configuration for protocol bugs.
"""

__version__ = "0.1.0"
