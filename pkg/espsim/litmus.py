"""
Litmus-test runner.

Each seed runs the full simulator once with a seeded start skew per core and
a seeded NoC arbitration order.  A test passes when every observed outcome is
in the oracle's allowed set and the monitors stayed silent.
"""

import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Tuple

from espsim.config import DEFAULT_LIVENESS_BOUND, LITMUS_SKEW_CYCLES, ConfigError
from espsim.monitors import Violation, ViolationKind
from espsim.oracle import LitmusTest, Outcome
from espsim.soc import Soc, SocConfig
from espsim.utils import load_litmus

logger = logging.getLogger(__name__)


@dataclass
class LitmusResult:
    name: str
    seeds: int
    allowed: FrozenSet[Outcome]
    observed: Dict[Outcome, int] = field(default_factory=dict)
    violations: List[Tuple[int, Violation]] = field(default_factory=list)

    @property
    def forbidden(self) -> List[Outcome]:
        return sorted((o for o in self.observed if o not in self.allowed), key=str)

    @property
    def passed(self) -> bool:
        return not self.forbidden and not self.violations

    @property
    def verdict(self) -> str:
        return "PASS" if self.passed else "FAIL"

    def to_record(self) -> dict:
        return {
            "test": self.name,
            "verdict": self.verdict,
            "seeds": self.seeds,
            "allowed": len(self.allowed),
            "observed": len(self.observed),
            "forbidden": len(self.forbidden),
            "violations": len(self.violations),
        }


def start_skew(seed: int, n_cores: int) -> Dict[int, int]:
    """Per-core start offsets in ``[0, LITMUS_SKEW_CYCLES)`` for *seed*."""
    rng = random.Random(seed)
    return {core: rng.randrange(LITMUS_SKEW_CYCLES) for core in range(n_cores)}


def run_once(test: LitmusTest, cfg: SocConfig, seed: int, *, faults=(),
             liveness_bound: int = DEFAULT_LIVENESS_BOUND) -> Tuple[Outcome, List[Violation]]:
    """One simulator run of *test*; returns the outcome and any violations."""
    n_cores = len(test.programs)
    if n_cores > len(cfg.processor_tiles):
        raise ConfigError(f"litmus test {test.name!r} needs {n_cores} cores, config has "
                          f"{len(cfg.processor_tiles)}")
    soc = Soc(
        cfg,
        {core: list(prog) for core, prog in enumerate(test.programs)},
        seed=seed,
        faults=faults,
        start_skew=start_skew(seed, n_cores),
        initial_memory=test.init,
        liveness_bound=liveness_bound,
    )
    soc.run()
    violations = list(soc.violations)
    outcome = []
    for obs in test.observe:
        if obs.is_memory:
            outcome.append(soc.peek_word(obs.addr))
            continue
        results = soc.cores[obs.core].results
        if obs.index >= len(results):
            # The run stopped early; a liveness violation is already recorded.
            outcome.append(None)
        else:
            outcome.append(results[obs.index])
    return tuple(outcome), violations


def run_litmus(test: LitmusTest, cfg: SocConfig, seeds: int, *, base_seed: int = 0,
               workers: Optional[int] = None, faults=()) -> LitmusResult:
    """Run *test* under ``seeds`` perturbed timings.

    Parameters
    ----------
    test : LitmusTest
        The test; its allowed set is computed here if it was not already.
    cfg : SocConfig
        SoC to run on; must have enough processor tiles.
    seeds : int
        Number of runs; seed values are ``base_seed .. base_seed + seeds - 1``.
    workers : int, optional
        Worker threads; each owns its simulator instance.

    Returns
    -------
    LitmusResult
        Observed outcome counts, the allowed set and the verdict.
    """
    if seeds < 1:
        raise ConfigError(f"need at least one seed, got {seeds}")
    allowed = test.allowed
    result = LitmusResult(test.name, seeds, allowed)
    seed_list = range(base_seed, base_seed + seeds)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        runs = pool.map(lambda s: (s, run_once(test, cfg, s, faults=faults)), seed_list)
        for seed, (outcome, violations) in runs:
            result.observed[outcome] = result.observed.get(outcome, 0) + 1
            if outcome not in allowed and not violations:
                violations = [Violation(
                    ViolationKind.DATA_VALUE, 0, None,
                    f"seed {seed}: outcome {test.outcome_str(outcome)} is not sequentially "
                    "consistent",
                )]
            result.violations.extend((seed, v) for v in violations)
    if result.passed:
        logger.info("litmus %s: PASS (%d seeds, %d/%d outcomes seen)", test.name, seeds,
                    len(result.observed), len(allowed))
    else:
        logger.error("litmus %s: FAIL, forbidden outcomes %s", test.name,
                     [test.outcome_str(o) for o in result.forbidden])
    return result


def load_corpus(directory, *, cfg: Optional[SocConfig] = None,
                only: Optional[str] = None) -> List[LitmusTest]:
    """Load every ``*.litmus`` file under *directory*, sorted by file name.

    *only* selects a single test by name.  An empty selection is an error.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError(f"litmus corpus {directory} is not a directory")
    options = {}
    if cfg is not None:
        options = {"line_bytes": cfg.line_bytes, "mmio_base": cfg.mmio_base}
    tests = [load_litmus(p, **options) for p in sorted(directory.glob("*.litmus"))]
    if only is not None:
        tests = [t for t in tests if t.name == only]
        if not tests:
            raise ConfigError(f"no litmus test named {only!r} in {directory}")
    if not tests:
        raise ConfigError(f"litmus corpus {directory} is empty")
    logger.info("loaded %d litmus tests from %s", len(tests), directory)
    return tests
