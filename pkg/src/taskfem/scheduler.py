"""Lane pool with commutative exclusion, priorities and live resizing.

A :class:`LanePool` owns ``lanes`` worker threads. It runs either

* a list of :class:`Task` objects whose exclusion sets must never be held by
  two running tasks at once (commutative dependences: mutual exclusion with
  no imposed order), or
* a dynamically scheduled loop: phases of work items handed out through a
  shared monotone cursor, with a barrier between phases.

Exclusion sets are acquired all-or-nothing under the pool lock, so a task
never holds part of its set while waiting for the rest and deadlock cannot
arise. Among the ready tasks whose sets are free, the first in
``(-priority, tie-break)`` order starts.

``resize`` may be called from any thread while a run is in progress; surplus
lanes retire after their current item, missing lanes are spawned at once.
"""

import csv
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "Task", "LoopPhase", "RunTrace", "LanePool", "DeadlockError", "run_commutative",
    "resize_lanes", "exclusion_violations",
]

_DONE = object()


class DeadlockError(RuntimeError):
    """No task completed within the watchdog window."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass
class Task:
    id: int
    resources: frozenset
    priority: int = 0
    work: Optional[Callable[[], None]] = None
    phase: int = 0
    lane: Optional[int] = None

    def __post_init__(self):
        self.resources = frozenset(self.resources)
        if not self.resources:
            raise ValueError(f"task {self.id} has an empty exclusion set")


@dataclass
class LoopPhase:
    """Items of one barrier-delimited loop; ``lane`` pins the phase to a lane."""

    items: list
    lane: Optional[int] = None


@dataclass
class RunTrace:
    records: list = field(default_factory=list)
    violations: dict = field(default_factory=dict)

    def arrays(self):
        if not self.records:
            empty = np.empty(0, dtype=np.int64)
            return empty, empty, empty, empty
        rec = np.array(self.records, dtype=np.int64)
        return rec[:, 0], rec[:, 1], rec[:, 2], rec[:, 3]

    @property
    def order(self):
        """Task ids in start order."""
        return [r[0] for r in sorted(self.records, key=lambda r: (r[2], r[0]))]

    @property
    def total_violations(self):
        return int(sum(self.violations.values()))

    def max_concurrency(self, since_ns=None):
        events = []
        for _, _, start, end in self.records:
            if since_ns is not None and end <= since_ns:
                continue
            events.append((max(start, since_ns or start), 1))
            events.append((end, -1))
        events.sort()
        best = cur = 0
        for _, delta in events:
            cur += delta
            best = max(best, cur)
        return best

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["task", "lane", "start_ns", "end_ns"])
            out.writerows(sorted(self.records, key=lambda r: (r[2], r[0])))


def exclusion_violations(trace, tasks):
    """Pairs of tasks with intersecting exclusion sets whose runs overlap in time."""
    by_id = {t.id: t for t in tasks}
    span = {r[0]: (r[2], r[3]) for r in trace.records}
    owners = defaultdict(list)
    for t in tasks:
        for res in t.resources:
            owners[res].append(t.id)
    bad = set()
    for ids in owners.values():
        ivals = sorted((span[i][0], span[i][1], i) for i in ids if i in span)
        for (s0, e0, a), (s1, e1, b) in zip(ivals, ivals[1:]):
            if s1 < e0:
                bad.add((min(a, b), max(a, b)))
    return sorted(p for p in bad if by_id[p[0]].resources & by_id[p[1]].resources)


class _TaskSource:
    def __init__(self, tasks, seed, ignore_exclusion):
        self.tasks = tasks
        tiebreak = (np.random.default_rng(seed).permutation(len(tasks))
                    if seed is not None else np.arange(len(tasks)))
        keys = sorted({t.phase for t in tasks})
        self.phase_of = [keys.index(t.phase) for t in tasks] if len(keys) > 1 else [0] * len(tasks)
        self.phases = [[] for _ in keys]
        for i in range(len(tasks)):
            self.phases[self.phase_of[i]].append(i)
        for ready in self.phases:
            ready.sort(key=lambda i: (-tasks[i].priority, tiebreak[i], tasks[i].id))
        self.outstanding = [len(p) for p in self.phases]
        self.current = 0
        self.held = set()
        self.watch = [_DONE] * len(tasks)
        self.ignore_exclusion = ignore_exclusion
        self.remaining = len(tasks)
        self.pinned = any(t.lane is not None for t in tasks)

    def next(self, lane):
        while self.current < len(self.phases):
            ready = self.phases[self.current]
            if ready:
                break
            if self.outstanding[self.current]:
                return None
            self.current += 1
        else:
            return _DONE
        held = self.held
        watch = self.watch
        for pos, i in enumerate(ready):
            # a resource that blocked this task last time; usually still held
            if watch[i] in held:
                continue
            t = self.tasks[i]
            if t.lane is not None and t.lane != lane:
                continue
            if self.ignore_exclusion or held.isdisjoint(t.resources):
                held.update(t.resources)
                del ready[pos]
                self.remaining -= 1
                return i
            watch[i] = next(iter(t.resources & held))
        return None

    def run(self, i):
        work = self.tasks[i].work
        if work is not None:
            work()

    def finish(self, i):
        """Release the task's set; True when every lane should re-check."""
        t = self.tasks[i]
        self.held.difference_update(t.resources)
        self.outstanding[self.phase_of[i]] -= 1
        return self.pinned or not self.outstanding[self.phase_of[i]]

    def task_id(self, i):
        return self.tasks[i].id

    def resources(self, i):
        return self.tasks[i].resources


class _LoopSource:
    def __init__(self, phases, body):
        self.phases = [p if isinstance(p, LoopPhase) else LoopPhase(list(p)) for p in phases]
        self.body = body
        self.cursor = 0
        self.current = 0
        self.outstanding = len(self.phases[0].items) if self.phases else 0
        self.offset = 0
        self.remaining = sum(len(p.items) for p in self.phases)

    def next(self, lane):
        while self.current < len(self.phases):
            phase = self.phases[self.current]
            if self.cursor < len(phase.items):
                if phase.lane is not None and phase.lane != lane:
                    return None
                item = (self.current, self.cursor, self.offset + self.cursor)
                self.cursor += 1
                self.remaining -= 1
                return item
            if self.outstanding:
                return None
            self.offset += len(phase.items)
            self.current += 1
            self.cursor = 0
            if self.current < len(self.phases):
                self.outstanding = len(self.phases[self.current].items)
        return _DONE

    def run(self, item):
        p, k, _ = item
        self.body(self.phases[p].items[k])

    def finish(self, item):
        self.outstanding -= 1
        return self.outstanding == 0

    def task_id(self, item):
        return item[2]

    def resources(self, item):
        return ()


class LanePool:
    """Resizable pool of worker lanes.

    Parameters
    ----------
    lanes : int
        Initial number of lanes.
    debug : bool
        Count exclusion violations per resource with an independent
        occupancy counter.
    watchdog : float
        Seconds without any completion before :class:`DeadlockError`.
    """

    def __init__(self, lanes=1, *, debug=False, watchdog=30.0, ignore_exclusion=False):
        if lanes < 1:
            raise ValueError("lanes must be >= 1")
        self._target = int(lanes)
        self.debug = debug
        self.watchdog = watchdog
        self.ignore_exclusion = ignore_exclusion
        self._lock = threading.Lock()
        # lanes wait on _idle, the submitting thread on _done
        self._idle = threading.Condition(self._lock)
        self._done = threading.Condition(self._lock)
        self._source = None
        self._live = {}
        self._occ_lock = threading.Lock()
        self.last_trace = None

    @property
    def lanes(self):
        return self._target

    @property
    def remaining(self):
        """Items of the current run not yet started (0 when idle)."""
        with self._lock:
            return self._source.remaining if self._source is not None else 0

    def resize(self, new_count):
        if int(new_count) != new_count or new_count < 1:
            raise ValueError(f"lane count must be a positive integer, got {new_count!r}")
        with self._lock:
            self._target = int(new_count)
            if self._source is not None:
                self._spawn_missing()
            self._idle.notify_all()

    def run_tasks(self, tasks, seed=None):
        """Run commutative tasks to completion and return their trace."""
        tasks = list(tasks)
        ids = [t.id for t in tasks]
        if len(set(ids)) != len(ids):
            raise ValueError("task ids must be unique")
        return self._run(_TaskSource(tasks, seed, self.ignore_exclusion), len(tasks))

    def run_loop(self, phases, body):
        """Dynamically schedule ``body(item)`` over phases separated by barriers."""
        source = _LoopSource(phases, body)
        return self._run(source, source.remaining)

    def _spawn_missing(self):
        for lane in range(self._target):
            if lane not in self._live:
                th = threading.Thread(target=self._worker, args=(lane,), daemon=True,
                                      name=f"lane-{lane}")
                self._live[lane] = th
                th.start()

    def _run(self, source, total):
        trace = RunTrace()
        with self._lock:
            if self._source is not None:
                raise RuntimeError("pool is already running")
            self._source = source
            self._trace = trace
            self._total = total
            self._completed = 0
            self._error = None
            self._abort = False
            self._occupancy = defaultdict(int)
            self._violations = defaultdict(int)
            self._last_progress = time.monotonic()
            self._spawn_missing()
            while self._completed < total and self._error is None:
                self._done.wait(timeout=min(0.5, self.watchdog))
                if (self._completed < total and self._error is None
                        and time.monotonic() - self._last_progress > self.watchdog):
                    self._error = DeadlockError(
                        f"no progress for {self.watchdog:.1f}s: "
                        f"{self._completed}/{total} completed", trace)
            self._abort = True
            self._idle.notify_all()
            workers = list(self._live.values())
        for th in workers:
            th.join()
        with self._lock:
            self._source = None
            self._live.clear()
        trace.violations = dict(self._violations)
        self.last_trace = trace
        if self._error is not None:
            raise self._error
        return trace

    def _retire(self, lane):
        if self._live.get(lane) is threading.current_thread():
            del self._live[lane]

    def _acquire(self, lane):
        """Next item for ``lane``, waiting if needed; None tells the lane to retire."""
        while True:
            if self._abort or self._error is not None or lane >= self._target:
                self._retire(lane)
                return None
            item = self._source.next(lane)
            if item is _DONE:
                self._retire(lane)
                return None
            if item is not None:
                # chain wake-up: one more lane tries while work may be available
                self._idle.notify()
                return item
            self._idle.wait()

    def _complete(self, source, item, lane, start, end):
        self._trace.records.append((source.task_id(item), lane, start, end))
        broadcast = source.finish(item)
        self._completed += 1
        self._last_progress = time.monotonic()
        if self._completed == self._total:
            self._done.notify_all()
        if broadcast:
            self._idle.notify_all()
        else:
            self._idle.notify()

    def _worker(self, lane):
        finished = None
        while True:
            with self._lock:
                if finished is not None:
                    self._complete(*finished)
                item = self._acquire(lane)
                if item is None:
                    return
                source = self._source
            resources = source.resources(item) if self.debug else ()
            if resources:
                self._enter(resources)
            start = time.perf_counter_ns()
            try:
                source.run(item)
            except BaseException as exc:  # re-raised by _run
                with self._lock:
                    if self._error is None:
                        self._error = exc
                    self._done.notify_all()
                    self._idle.notify_all()
                    self._retire(lane)
                return
            end = time.perf_counter_ns()
            if resources:
                self._leave(resources)
            finished = (source, item, lane, start, end)

    def _enter(self, resources):
        with self._occ_lock:
            for r in resources:
                self._occupancy[r] += 1
                if self._occupancy[r] > 1:
                    self._violations[r] += 1

    def _leave(self, resources):
        with self._occ_lock:
            for r in resources:
                self._occupancy[r] -= 1


def run_commutative(tasks, lanes, deterministic_seed=None, *, debug=True, watchdog=30.0):
    """Run ``tasks`` on a fresh pool of ``lanes`` lanes; see :class:`LanePool`."""
    return LanePool(lanes, debug=debug, watchdog=watchdog).run_tasks(
        tasks, seed=deterministic_seed)


def resize_lanes(engine, new_count):
    engine.resize(new_count)
