"""
Accelerator Simulation Module
Cycle-level model of the multi-engine classification accelerator.

Each engine is a two-stage pipeline: a Tree Traverser walking internal
nodes and a Leaf Node Searcher comparing leaf rule words. Engines share a
phased memory, so each gets exactly one access per cycle. Packets leave a
FIFO buffer tagged with their arrival slot and results are put back in
arrival order by a reorder sorter.
"""

import logging
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

from .classification_engine import ClassificationEngine, MatchResult
from .exceptions import SorterOverflowError
from .memory_layout import MemoryImage
from .ruleset import PacketHeader

logger = logging.getLogger(__name__)


@dataclass
class AcceleratorConfig:
    """Accelerator shape and clock."""

    engines: int = 4
    reorder_depth: int = 16
    clock_mhz: float = 110.0

    def __post_init__(self):
        if not self.validate():
            raise ValueError(
                f"invalid accelerator config: engines={self.engines} "
                f"reorder_depth={self.reorder_depth} clock_mhz={self.clock_mhz} "
                f"(need engines>=1, reorder_depth>=engines, clock_mhz>0)"
            )

    def validate(self) -> bool:
        return (self.engines >= 1 and self.reorder_depth >= self.engines
                and self.clock_mhz > 0)

    @property
    def tag_bits(self) -> int:
        return (self.reorder_depth - 1).bit_length()


@dataclass
class PacketJob:
    tag: int
    header: PacketHeader
    arrival: int
    result: MatchResult
    dispatch_cycle: int = -1
    remaining: int = 0


@dataclass
class SimStats:
    cycles: int = 0
    packets: int = 0
    memory_accesses: int = 0
    engine_busy: List[float] = field(default_factory=list)
    packets_per_cycle: float = 0.0
    mpps: float = 0.0
    clock_mhz: float = 0.0
    max_in_flight: int = 0
    mean_latency: float = 0.0
    max_latency: int = 0
    first_emission_cycle: Optional[int] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


class ReorderSorter:
    """
    Tag-indexed result registers restoring arrival order.

    A result with arrival index a lands in register a mod depth; the register
    holding the next expected arrival is drained whenever it fills.
    """

    def __init__(self, depth: int):
        if depth < 1:
            raise ValueError(f"reorder depth must be >= 1, got {depth}")
        self.depth = depth
        self.slots: List[Optional[Tuple[int, Any]]] = [None] * depth
        self.next_arrival = 0
        self.outstanding = 0

    def insert(self, tag: int, arrival: int, result: Any = None) -> None:
        if not self.next_arrival <= arrival < self.next_arrival + self.depth:
            raise SorterOverflowError(
                f"arrival {arrival} outside sorter window "
                f"[{self.next_arrival}, {self.next_arrival + self.depth})"
            )
        if tag != arrival % self.depth:
            raise SorterOverflowError(
                f"tag {tag} does not match arrival {arrival} (expected {arrival % self.depth})"
            )
        if self.slots[tag] is not None:
            raise SorterOverflowError(f"tag {tag} already holds a pending result")
        self.slots[tag] = (arrival, result)
        self.outstanding += 1

    def drain(self) -> List[Tuple[int, Any]]:
        """Emit every result that is next in arrival order."""
        emitted = []
        while True:
            tag = self.next_arrival % self.depth
            entry = self.slots[tag]
            if entry is None:
                return emitted
            self.slots[tag] = None
            self.outstanding -= 1
            self.next_arrival += 1
            emitted.append(entry)


def sorter_check(completion_order: Sequence[int], depth: int = 16) -> List[int]:
    """
    Feed completions (arrival indices) through a sorter, draining after each.

    Returns:
        Arrival indices in emission order

    Raises:
        SorterOverflowError: A completion arrives more than depth places
            ahead of the oldest unemitted packet
    """
    sorter = ReorderSorter(depth)
    emitted: List[int] = []
    for arrival in completion_order:
        sorter.insert(arrival % depth, arrival, None)
        emitted.extend(a for a, _ in sorter.drain())
    return emitted


class _Engine:
    def __init__(self, number: int):
        self.number = number
        self.traverser: Optional[PacketJob] = None
        self.searcher: Optional[PacketJob] = None
        self.busy_cycles = 0


class AcceleratorSimulator:
    """Deterministic cycle loop over one trace."""

    def __init__(self, engine: ClassificationEngine, config: Optional[AcceleratorConfig] = None):
        self.engine = engine
        self.config = config or AcceleratorConfig()

    def run(self, headers: Sequence[PacketHeader]) -> Tuple[List[MatchResult], SimStats]:
        cfg = self.config
        fifo = deque(
            PacketJob(i % cfg.reorder_depth, header, i, self.engine.classify(header))
            for i, header in enumerate(headers)
        )
        engines = [_Engine(n) for n in range(cfg.engines)]
        sorter = ReorderSorter(cfg.reorder_depth)
        stats = SimStats(packets=len(fifo), clock_mhz=cfg.clock_mhz)
        results: List[MatchResult] = []
        latencies: List[int] = []
        in_flight = 0
        cycle = 0

        while len(results) < stats.packets:
            for eng in engines:
                if not fifo or in_flight >= cfg.reorder_depth:
                    break
                if eng.traverser is None:
                    job = fifo.popleft()
                    job.dispatch_cycle = cycle
                    job.remaining = job.result.traverser_accesses
                    eng.traverser = job
                    in_flight += 1
            stats.max_in_flight = max(stats.max_in_flight, in_flight)

            for eng in engines:
                if eng.traverser is not None or eng.searcher is not None:
                    eng.busy_cycles += 1
                if eng.searcher is not None and eng.searcher.remaining:
                    eng.searcher.remaining -= 1
                    stats.memory_accesses += 1
                elif eng.traverser is not None and eng.traverser.remaining:
                    eng.traverser.remaining -= 1
                    stats.memory_accesses += 1

            for eng in engines:
                if eng.searcher is not None and not eng.searcher.remaining:
                    job = eng.searcher
                    sorter.insert(job.tag, job.arrival, job)
                    eng.searcher = None
                job = eng.traverser
                if job is not None and not job.remaining:
                    if not job.result.searcher_accesses:
                        sorter.insert(job.tag, job.arrival, job)
                        eng.traverser = None
                    elif eng.searcher is None:
                        job.remaining = job.result.searcher_accesses
                        eng.searcher = job
                        eng.traverser = None

            for arrival, job in sorter.drain():
                if stats.first_emission_cycle is None:
                    stats.first_emission_cycle = cycle
                results.append(job.result)
                latencies.append(cycle - job.dispatch_cycle + 1)
                in_flight -= 1
            cycle += 1

        stats.cycles = cycle
        stats.engine_busy = [eng.busy_cycles / cycle if cycle else 0.0 for eng in engines]
        if cycle:
            stats.packets_per_cycle = stats.packets / cycle
            stats.mpps = stats.packets_per_cycle * cfg.clock_mhz
        if latencies:
            stats.mean_latency = sum(latencies) / len(latencies)
            stats.max_latency = max(latencies)

        logger.info(
            f"Simulated {stats.packets} packets on {cfg.engines} engines in "
            f"{stats.cycles} cycles ({stats.mpps:.1f} Mpps at {cfg.clock_mhz} MHz)"
        )
        return results, stats


def simulate(image: MemoryImage, headers: Sequence[PacketHeader],
             config: Optional[AcceleratorConfig] = None) -> Tuple[List[MatchResult], SimStats]:
    """
    Run a trace through the accelerator model.

    Args:
        image: Memory image, validated before the run
        headers: Packets in arrival order
        config: Accelerator shape; defaults to 4 engines, depth 16, 110 MHz

    Returns:
        (per-packet results in arrival order, SimStats)
    """
    return AcceleratorSimulator(ClassificationEngine(image), config).run(headers)
