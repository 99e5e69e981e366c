"""Load balance, scalability and speedup, plus the benchmark report writers."""

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np

from .partition import RankPartition

__all__ = [
    "LbReport", "ScalingTable", "ReportRow", "lb_measured", "lb_theoretical", "lb_report",
    "scalability", "speedup", "median_after_warmup", "write_report_csv", "write_report_json",
    "read_report_csv", "REPORT_COLUMNS",
]

REPORT_COLUMNS = ("mesh", "nelem", "strategy", "dlb", "nodes", "ranks_per_node",
                  "lanes_per_rank", "chunk", "phase", "median_s", "lb_measured", "lb_w", "lb_nw")


def _mean_over_max(values):
    values = np.asarray(values, dtype=float)
    # rounding in the mean can push equal values a hair above 1
    return min(float(values.mean() / values.max()), 1.0)


def lb_measured(times):
    """Mean over max of per-rank elapsed times.

    >>> lb_measured([1.0, 1.0, 2.0])
    0.6666666666666666
    """
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        raise ValueError("need at least one time")
    if np.any(times <= 0):
        raise ValueError("times must be positive")
    return _mean_over_max(times)


def _rank_element_lists(partition):
    if isinstance(partition, RankPartition):
        return list(partition.elements)
    return [np.asarray(e, dtype=np.int64) for e in partition]


def lb_theoretical(partition, weights=None):
    """Mean over max of per-rank weight sums (element counts without weights).

    ``partition`` is a :class:`RankPartition` or a sequence of per-rank
    element index arrays.
    """
    groups = _rank_element_lists(partition)
    if not groups:
        raise ValueError("empty partition")
    if weights is None:
        sums = [len(g) for g in groups]
    else:
        w = np.asarray(weights, dtype=float)
        sums = [w[g].sum() for g in groups]
    if max(sums) <= 0:
        raise ValueError("partition carries no work")
    return _mean_over_max(sums)


@dataclass(frozen=True)
class LbReport:
    measured_lb: float
    theoretical_weighted_lb: float
    theoretical_nonweighted_lb: float
    n_ranks: int
    weight_sums: tuple
    counts: tuple


def lb_report(partition, weights, times):
    groups = _rank_element_lists(partition)
    w = np.asarray(weights, dtype=float)
    return LbReport(
        measured_lb=lb_measured(times),
        theoretical_weighted_lb=lb_theoretical(groups, w),
        theoretical_nonweighted_lb=lb_theoretical(groups),
        n_ranks=len(groups),
        weight_sums=tuple(float(w[g].sum()) for g in groups),
        counts=tuple(len(g) for g in groups),
    )


@dataclass
class ScalingTable:
    """Phase times indexed by ``(resources, version)``.

    ``base`` is the smallest resource count; ``baseline`` names the version
    every speedup is measured against.
    """

    times: dict
    base: object
    baseline: str

    def __post_init__(self):
        if any(t <= 0 for t in self.times.values()):
            raise ValueError("times must be positive")

    def get(self, x, y):
        try:
            return self.times[(x, y)]
        except KeyError:
            raise ValueError(f"no time for resources={x!r}, version={y!r}") from None


def scalability(table, x, y):
    """``time(base, y) / time(x, y)``: how version ``y`` scales with resources."""
    return table.get(table.base, y) / table.get(x, y)


def speedup(table, x, y):
    """``time(base, baseline) / time(x, y)``: gain over the baseline version at base."""
    return table.get(table.base, table.baseline) / table.get(x, y)


def median_after_warmup(samples, warmup=2):
    samples = list(samples)
    if len(samples) <= warmup:
        raise ValueError(f"need more than {warmup} samples, got {len(samples)}")
    return float(np.median(samples[warmup:]))


@dataclass
class ReportRow:
    mesh: str
    nelem: int
    strategy: str
    dlb: bool
    nodes: int
    ranks_per_node: int
    lanes_per_rank: int
    chunk: int
    phase: str
    median_s: float
    lb_measured: float
    lb_w: float
    lb_nw: float


def write_report_csv(path, rows, seed):
    with open(path, "w", newline="") as fh:
        fh.write(f"# seed={seed}\n")
        out = csv.writer(fh)
        out.writerow(REPORT_COLUMNS)
        for row in rows:
            d = asdict(row)
            d["dlb"] = int(row.dlb)
            out.writerow([d[c] for c in REPORT_COLUMNS])


def write_report_json(path, rows, seed):
    with open(path, "w") as fh:
        json.dump({"seed": seed, "rows": [asdict(r) for r in rows]}, fh, indent=1)


def read_report_csv(path):
    """Returns ``(seed, rows)`` with rows as dicts of strings."""
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith("# seed="):
            raise ValueError("missing seed header")
        seed = first.split("=", 1)[1]
        return (int(seed) if seed.lstrip("-").isdigit() else seed), list(csv.DictReader(fh))
