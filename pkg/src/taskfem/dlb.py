"""Lend-when-idle load balancing between virtual ranks sharing one node.

A virtual rank is an in-process stand-in for an MPI process: a thread that
owns a disjoint set of elements and a :class:`~taskfem.scheduler.LanePool`.
Ranks on the same node share a fixed number of lane tokens, recorded in a
:class:`CoreLedger`. After its element loop a rank enters a simulated
blocking call. With balancing enabled it lends every token it holds to the
co-located rank that still has the most items left, whose pool grows at
once. When all ranks of the node have arrived the barrier releases them and
every token returns to its owner.

Reclamation is not preemptive: a borrowed lane finishes its current chunk
before it retires. In practice the borrower has already finished its loop
when the barrier opens, since it must arrive there too.
"""

import csv
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .assembly import AssemblyConfig, RankAssembly, Strategy, assemble, subgrid_loop
from .scheduler import LanePool

__all__ = [
    "NodeConfig", "CoreLedger", "LedgerEvent", "PhaseTiming", "NodeRendezvous",
    "RankResult", "HybridStepResult", "ConfigurationError", "ProtocolError",
    "run_hybrid_step", "run_synthetic_step", "simulated_blocking_call", "barrier",
    "replay_ledger",
]

PHASES = ("assembly", "subgrid")


class ConfigurationError(ValueError):
    """A node configuration that cannot be run as requested."""


class ProtocolError(RuntimeError):
    """The blocking-call / barrier protocol was violated."""


@dataclass(frozen=True)
class NodeConfig:
    ranks_per_node: int
    lanes_per_rank: int
    dlb_enabled: bool = False

    def __post_init__(self):
        if self.ranks_per_node < 1 or self.lanes_per_rank < 1:
            raise ConfigurationError("ranks_per_node and lanes_per_rank must be >= 1")

    @property
    def capacity(self):
        return self.ranks_per_node * self.lanes_per_rank

    @property
    def label(self):
        return f"{self.ranks_per_node}x{self.lanes_per_rank}"


@dataclass(frozen=True)
class LedgerEvent:
    t_ns: int
    event: str
    from_rank: int
    to_rank: int
    tokens: int


class CoreLedger:
    """Lane tokens of one node: who owns each and who currently holds it.

    Parameters
    ----------
    ranks : sequence of int
        Global ids of the node's ranks.
    lanes_per_rank : int
        Tokens owned by each rank.
    """

    def __init__(self, ranks, lanes_per_rank):
        self.ranks = [int(r) for r in ranks]
        self.capacity = len(self.ranks) * lanes_per_rank
        self.owner = np.repeat(self.ranks, lanes_per_rank)
        self.holder = self.owner.copy()
        self.events = []
        self._lock = threading.Lock()
        for r in self.ranks:
            self._log("init", -1, r, lanes_per_rank)

    def _log(self, event, src, dst, n):
        self.events.append(LedgerEvent(time.perf_counter_ns(), event, src, dst, int(n)))

    def held(self, rank):
        return int(np.count_nonzero(self.holder == rank))

    def held_counts(self):
        return {r: self.held(r) for r in self.ranks}

    def lend(self, src, dst):
        """Move every token held by ``src`` to ``dst``; returns how many moved."""
        with self._lock:
            mask = self.holder == src
            n = int(mask.sum())
            if n and src != dst:
                self.holder[mask] = dst
                self._log("lend", src, dst, n)
            self.check()
            return n if src != dst else 0

    def reclaim_all(self):
        """Return every token to its owner; one ``retrieve`` event per (holder, owner) pair."""
        with self._lock:
            away = self.holder != self.owner
            pairs = {}
            for h, o in zip(self.holder[away].tolist(), self.owner[away].tolist()):
                pairs[(h, o)] = pairs.get((h, o), 0) + 1
            for (h, o), n in sorted(pairs.items()):
                self._log("retrieve", h, o, n)
            self.holder[:] = self.owner
            self.check()

    def check(self):
        counts = self.held_counts()
        if sum(counts.values()) != self.capacity or np.any(~np.isin(self.holder, self.ranks)):
            raise ProtocolError(f"token conservation broken: {counts}")

    def to_csv(self, path):
        write_ledger_csv(path, self.events)


def write_ledger_csv(path, events):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["t_ns", "event", "from_rank", "to_rank", "tokens"])
        for ev in events:
            out.writerow([ev.t_ns, ev.event, ev.from_rank, ev.to_rank, ev.tokens])


def replay_ledger(events):
    """Per-rank token counts reconstructed from an event log."""
    held = {}
    for ev in events:
        if ev.from_rank >= 0:
            held[ev.from_rank] = held.get(ev.from_rank, 0) - ev.tokens
        held[ev.to_rank] = held.get(ev.to_rank, 0) + ev.tokens
    return held


@dataclass
class PhaseTiming:
    """Per-rank elapsed seconds of every phase, one record per step."""

    records: list = field(default_factory=list)

    def add(self, step, rank, phase, seconds):
        if seconds < 0:
            raise ValueError("elapsed time must be non-negative")
        self.records.append((int(step), int(rank), phase, float(seconds)))

    def steps(self):
        return sorted({r[0] for r in self.records})

    def times(self, step, phase):
        """Per-rank seconds of ``phase`` at ``step``, ordered by rank."""
        rows = sorted((r[1], r[3]) for r in self.records if r[0] == step and r[2] == phase)
        return np.array([s for _, s in rows])

    def per_rank_median(self, phase, warmup=0):
        """Median over steps ``>= warmup`` of each rank's time for ``phase``."""
        steps = [s for s in self.steps() if s >= warmup]
        if not steps:
            raise ValueError("no steps left after warm-up")
        return np.median(np.array([self.times(s, phase) for s in steps]), axis=0)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["step", "rank", "phase", "seconds"])
            out.writerows(self.records)


class NodeRendezvous:
    """Blocking call and barrier for the ranks of one node.

    ``pools`` maps rank to its :class:`LanePool` (or ``None`` when the rank
    has no second-level parallelism); lending resizes them.
    """

    def __init__(self, ranks, config, pools):
        self.ranks = list(ranks)
        self.config = config
        self.pools = pools
        self.ledger = CoreLedger(self.ranks, config.lanes_per_rank)
        self._cond = threading.Condition()
        self._arrived = set()
        self._waiting = set()
        self._round = 0
        self._error = None

    def _borrower(self, rank):
        running = [r for r in self.ranks if r not in self._arrived]
        if not running:
            return None
        # most remaining items first, lowest rank on ties
        return max(running, key=lambda r: (self.pools[r].remaining, -r))

    def _sync_pools(self):
        for r in self.ranks:
            held = self.ledger.held(r)
            if self.pools.get(r) is not None and held:
                self.pools[r].resize(held)

    def simulated_blocking_call(self, rank):
        with self._cond:
            if rank not in self.ranks:
                raise ProtocolError(f"rank {rank} does not belong to this node")
            if rank in self._arrived:
                raise ProtocolError(f"rank {rank} entered the blocking call twice in one round")
            self._arrived.add(rank)
            if self.config.dlb_enabled and len(self.ranks) > 1:
                target = self._borrower(rank)
                if target is not None and self.ledger.lend(rank, target):
                    self._sync_pools()
            self._cond.notify_all()

    def barrier(self, rank):
        with self._cond:
            if rank not in self._arrived:
                raise ProtocolError(f"rank {rank} reached the barrier without the blocking call")
            my_round = self._round
            self._waiting.add(rank)
            # release on barrier arrivals, not blocking calls: a rank may still be
            # between the two when the others are done
            if len(self._waiting) == len(self.ranks):
                self.ledger.reclaim_all()
                if self.config.dlb_enabled:
                    for r in self.ranks:
                        if self.pools.get(r) is not None:
                            self.pools[r].resize(self.config.lanes_per_rank)
                self._arrived.clear()
                self._waiting.clear()
                self._round += 1
                self._cond.notify_all()
            while self._round == my_round and self._error is None:
                self._cond.wait()
            if self._error is not None:
                raise ProtocolError("another rank of the node failed") from self._error

    def abort(self, exc):
        with self._cond:
            self._error = exc
            self._cond.notify_all()


def simulated_blocking_call(node, rank):
    node.simulated_blocking_call(rank)


def barrier(node, rank):
    node.barrier(rank)


def _run_node_ranks(node_config, n_ranks, jobs, pools, timing, step):
    """Run every rank's phases in its own thread; returns the node rendezvous objects."""
    rpn = node_config.ranks_per_node
    if n_ranks % rpn:
        raise ConfigurationError(f"{n_ranks} ranks do not fill nodes of {rpn}")
    nodes = [NodeRendezvous(range(k * rpn, (k + 1) * rpn), node_config, pools)
             for k in range(n_ranks // rpn)]
    errors = []

    def rank_main(r):
        node = nodes[r // rpn]
        try:
            for phase, body in jobs[r]:
                t0 = time.perf_counter()
                body(pools.get(r))
                timing.add(step, r, phase, time.perf_counter() - t0)
                node.simulated_blocking_call(r)
                node.barrier(r)
        except BaseException as exc:
            errors.append(exc)
            node.abort(exc)

    threads = [threading.Thread(target=rank_main, args=(r,), name=f"rank-{r}")
               for r in range(n_ranks)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    if errors:
        raise errors[0]
    return nodes


@dataclass
class RankResult:
    rank: int
    A: object
    b: np.ndarray
    subgrid: np.ndarray
    trace: Optional[object] = None


@dataclass
class HybridStepResult:
    results: list
    timing: PhaseTiming
    ledger_events: list
    makespan: float


def _make_pools(node_config, n_ranks, parallel):
    if not parallel:
        return {r: None for r in range(n_ranks)}
    return {r: LanePool(node_config.lanes_per_rank) for r in range(n_ranks)}


def run_hybrid_step(mesh, partition, strategy, node_config, chunk_size=200, *, step=0,
                    timing=None, ranks=None, source=1.0, repeat_factor=1, seed=None):
    """One time step on virtual ranks: assembly and subgrid loop, each closed by a rendezvous.

    Parameters
    ----------
    mesh : Mesh
    partition : RankPartition
        Its rank count must be a multiple of ``node_config.ranks_per_node``.
    strategy : Strategy or str
    node_config : NodeConfig
    chunk_size : int
    ranks : list of RankAssembly, optional
        Prepared per-rank data, reused across steps.

    Returns
    -------
    HybridStepResult
    """
    strategy = Strategy(strategy)
    if strategy is Strategy.SEQUENTIAL and node_config.dlb_enabled:
        raise ConfigurationError("Sequential has no lanes to lend; disable load balancing")
    n_ranks = partition.n_ranks
    if ranks is None:
        ranks = [RankAssembly(mesh, partition.elements[r]) for r in range(n_ranks)]
    if len(ranks) != n_ranks:
        raise ConfigurationError("prepared ranks do not match the partition")
    timing = PhaseTiming() if timing is None else timing
    config = AssemblyConfig(strategy, chunk_size, node_config.lanes_per_rank, source=source,
                            repeat_factor=repeat_factor, seed=seed)
    out = [RankResult(r, None, None, None) for r in range(n_ranks)]

    def jobs_for(r):
        rank = ranks[r]

        def assembly(pool):
            out[r].A, out[r].b = assemble(rank, config, pool)
            out[r].trace = pool.last_trace if pool is not None else None

        def subgrid(pool):
            field = rank.coords.sum(axis=1)
            out[r].subgrid = subgrid_loop(rank, field, config, pool)

        return [("assembly", assembly), ("subgrid", subgrid)]

    pools = _make_pools(node_config, n_ranks, strategy is not Strategy.SEQUENTIAL)
    t0 = time.perf_counter()
    nodes = _run_node_ranks(node_config, n_ranks, [jobs_for(r) for r in range(n_ranks)],
                            pools, timing, step)
    makespan = time.perf_counter() - t0
    events = [ev for node in nodes for ev in node.ledger.events]
    return HybridStepResult(out, timing, events, makespan)


def run_synthetic_step(work_units, node_config, unit_seconds=0.002, units_per_chunk=1, *,
                       step=0, timing=None):
    """Single-phase step where rank ``r`` sleeps through ``work_units[r]`` cost units.

    Sleeping releases the interpreter, so the makespan follows the lending
    schedule even on a machine with fewer cores than lanes.
    """
    n_ranks = len(work_units)
    timing = PhaseTiming() if timing is None else timing

    def chunk(units):
        time.sleep(units * unit_seconds)

    def jobs_for(r):
        n = int(work_units[r])
        sizes = [min(units_per_chunk, n - i) for i in range(0, n, units_per_chunk)]

        def body(pool):
            pool.run_loop([sizes], chunk)

        return [("assembly", body)]

    pools = _make_pools(node_config, n_ranks, True)
    t0 = time.perf_counter()
    nodes = _run_node_ranks(node_config, n_ranks, [jobs_for(r) for r in range(n_ranks)],
                            pools, timing, step)
    makespan = time.perf_counter() - t0
    events = [ev for node in nodes for ev in node.ledger.events]
    return HybridStepResult([], timing, events, makespan)
