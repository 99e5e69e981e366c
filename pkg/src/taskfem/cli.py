"""Benchmark driver: run a matrix of configurations and write the reports.

Configuration files are flat ``key = value`` text; ``#`` starts a comment and
repeating a key builds a list::

    mesh = 30x30x20x2        # nx x ny x nz x boundary layers
    strategy = Atomic
    strategy = Multidep
    chunk = 10
    chunk = 200
    node = 2x4               # ranks_per_node x lanes_per_rank
    dlb = off
    dlb = on
    steps = 10
    seed = 7

Outputs in ``--out``: ``report.csv`` and ``report.json`` (one row per
configuration and phase), ``equivalence.csv`` (one row per configuration
and rank) and per-configuration trace CSVs under ``traces/``.
"""

import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assembly import (
    AssemblyError, CsrMatrix, RankAssembly, SafetyError, Strategy, assemble_sequential, read_coo,
    write_coo,
)
from .dlb import (
    PHASES, ConfigurationError, NodeConfig, PhaseTiming, ProtocolError, run_hybrid_step,
    write_ledger_csv,
)
from .mesh import generate_box_mesh
from .metrics import ReportRow, lb_measured, lb_theoretical, write_report_csv, write_report_json
from .partition import element_weights, partition_weighted_greedy

__all__ = [
    "ConfigError", "StructuralError", "BenchConfig", "EquivalenceResult", "parse_config",
    "load_config", "check_equivalence", "run_benchmark", "main",
]

log = logging.getLogger("taskfem")

DEFAULT_CHUNK = 200


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class StructuralError(ValueError):
    """Two matrix dumps do not share a sparsity pattern."""


def _dims(text):
    parts = text.lower().split("x")
    if len(parts) != 4:
        raise ValueError("expected nx x ny x nz x layers, e.g. 30x30x20x2")
    dims = tuple(int(p) for p in parts)
    if min(dims[:3]) < 1 or dims[3] < 0:
        raise ValueError("mesh sizes must be positive")
    return dims


def _node(text):
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise ValueError("expected ranks_per_node x lanes_per_rank, e.g. 2x4")
    return int(parts[0]), int(parts[1])


def _flag(text):
    t = text.lower()
    if t in ("on", "true", "yes", "1"):
        return True
    if t in ("off", "false", "no", "0"):
        return False
    raise ValueError(f"expected on/off, got {text!r}")


def _positive(cast):
    def parse(text):
        v = cast(text)
        if v <= 0:
            raise ValueError("must be positive")
        return v
    return parse


# key -> (parser, is_list, default)
_KEYS = {
    "mesh": (_dims, False, (20, 20, 10, 2)),
    "jitter": (float, False, 0.0),
    "strategy": (lambda s: Strategy(s).value, True, ["Sequential"]),
    "chunk": (_positive(int), True, [DEFAULT_CHUNK]),
    "node": (_node, True, [(1, 1)]),
    "nodes": (_positive(int), False, 1),
    "dlb": (_flag, True, [False]),
    "steps": (_positive(int), False, 10),
    "warmup": (int, False, 2),
    "seed": (int, False, 0),
    "repeat_factor": (_positive(int), False, 1),
    "source": (float, False, 1.0),
    "tol": (_positive(float), False, 1e-12),
}


@dataclass
class BenchConfig:
    mesh: tuple = (20, 20, 10, 2)
    jitter: float = 0.0
    strategy: list = field(default_factory=lambda: ["Sequential"])
    chunk: list = field(default_factory=lambda: [DEFAULT_CHUNK])
    node: list = field(default_factory=lambda: [(1, 1)])
    nodes: int = 1
    dlb: list = field(default_factory=lambda: [False])
    steps: int = 10
    warmup: int = 2
    seed: int = 0
    repeat_factor: int = 1
    source: float = 1.0
    tol: float = 1e-12

    @property
    def mesh_label(self):
        return "x".join(str(d) for d in self.mesh)


def parse_config(text):
    """Parse ``key = value`` lines into a :class:`BenchConfig`."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        parser, is_list, _ = _KEYS[key]
        try:
            parsed = parser(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno) from None
        if is_list:
            values.setdefault(key, []).append(parsed)
        elif key in values:
            raise ConfigError(f"{key!r} given twice", lineno)
        else:
            values[key] = parsed
    cfg = BenchConfig(**values)
    if cfg.warmup < 0:
        raise ConfigError("warmup must be >= 0")
    return cfg


def load_config(path):
    return parse_config(Path(path).read_text())


@dataclass(frozen=True)
class EquivalenceResult:
    passed: bool
    max_diff: float
    worst: tuple


def _triples(obj):
    if isinstance(obj, CsrMatrix):
        return obj.nodes[obj.rows()], obj.nodes[obj.col_idx], obj.values
    if isinstance(obj, (str, Path)):
        return read_coo(obj)
    rows, cols, vals = obj
    return np.asarray(rows), np.asarray(cols), np.asarray(vals, dtype=float)


def check_equivalence(reference, candidate, tol=1e-12):
    """Entrywise relative comparison of two matrices with the same pattern.

    Each argument is a COO dump path, a ``(rows, cols, values)`` triple or a
    :class:`CsrMatrix`. The relative difference of an entry is
    ``|a - b| / max(|a|, |b|)`` (zero when both are equal).
    """
    r0, c0, v0 = _triples(reference)
    r1, c1, v1 = _triples(candidate)
    o0 = np.lexsort((c0, r0))
    o1 = np.lexsort((c1, r1))
    if len(o0) != len(o1) or np.any(r0[o0] != r1[o1]) or np.any(c0[o0] != c1[o1]):
        raise StructuralError("sparsity patterns differ")
    a, b = v0[o0], v1[o1]
    diff = np.abs(a - b)
    scale = np.maximum(np.abs(a), np.abs(b))
    rel = np.divide(diff, scale, out=np.zeros_like(diff), where=diff > 0)
    if not len(rel):
        return EquivalenceResult(True, 0.0, ())
    k = int(np.argmax(rel))
    worst = (int(r0[o0][k]), int(c0[o0][k]))
    return EquivalenceResult(bool(rel[k] <= tol), float(rel[k]), worst)


def _rhs_rel_diff(a, b):
    diff = np.abs(a - b)
    scale = np.maximum(np.abs(a), np.abs(b))
    rel = np.divide(diff, scale, out=np.zeros_like(diff), where=diff > 0)
    return float(rel.max()) if len(rel) else 0.0


def _matrix(cfg):
    """Configurations in run order: ``(strategy, chunk, node_config)``."""
    runs = []
    for rpn, lpr in cfg.node:
        for strategy in cfg.strategy:
            chunks = cfg.chunk[:1] if strategy == "Sequential" else cfg.chunk
            for chunk in chunks:
                for dlb in cfg.dlb:
                    if strategy == "Sequential" and dlb:
                        log.info("skipping Sequential with dlb=on (no lanes to lend)")
                        continue
                    runs.append((strategy, chunk, NodeConfig(rpn, lpr, dlb)))
    return runs


def run_benchmark(cfg, out_dir, *, verify_only=False, dump_matrices=False):
    """Execute the configuration matrix; returns True iff every check passed."""
    out = Path(out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    if dump_matrices:
        (out / "matrices").mkdir(exist_ok=True)
    mesh = generate_box_mesh(*cfg.mesh, jitter=cfg.jitter, seed=cfg.seed)
    weights = element_weights(mesh)
    log.info("mesh %s: %r", cfg.mesh_label, mesh)

    rows, equivalence = [], []
    all_passed = True
    prepared = {}
    for strategy, chunk, node in _matrix(cfg):
        n_ranks = cfg.nodes * node.ranks_per_node
        if n_ranks not in prepared:
            part = partition_weighted_greedy(mesh, n_ranks, weights)
            ranks = [RankAssembly(mesh, part.elements[r]) for r in range(n_ranks)]
            refs = []
            for r, rank in enumerate(ranks):
                A, b = assemble_sequential(rank)
                refs.append((A, b))
                if dump_matrices:
                    write_coo(out / "matrices" / f"reference_r{n_ranks}_rank{r}.coo", A)
            prepared[n_ranks] = (part, ranks, refs)
        part, ranks, refs = prepared[n_ranks]
        run_id = f"{strategy}_c{chunk}_n{cfg.nodes}x{node.label}_dlb{int(node.dlb_enabled)}"
        log.info("running %s", run_id)

        timing = PhaseTiming()
        n_steps = 1 if verify_only else cfg.warmup + cfg.steps
        steps = [run_hybrid_step(mesh, part, strategy, node, chunk, step=step, timing=timing,
                                 ranks=ranks, source=cfg.source,
                                 repeat_factor=cfg.repeat_factor, seed=cfg.seed)
                 for step in range(n_steps)]
        first, last = steps[0], steps[-1]

        for rr in first.results:
            A_ref, b_ref = refs[rr.rank]
            if dump_matrices:
                path = out / "matrices" / f"{run_id}_rank{rr.rank}.coo"
                write_coo(path, rr.A)
                eq = check_equivalence(
                    out / "matrices" / f"reference_r{n_ranks}_rank{rr.rank}.coo", path, cfg.tol)
            else:
                eq = check_equivalence(A_ref, rr.A, cfg.tol)
            rhs = _rhs_rel_diff(b_ref, rr.b)
            passed = eq.passed and rhs <= cfg.tol
            all_passed &= passed
            equivalence.append((run_id, rr.rank, eq.max_diff, rhs, int(passed)))

        write_ledger_csv(out / "traces" / f"{run_id}_ledger.csv", last.ledger_events)
        timing.to_csv(out / "traces" / f"{run_id}_phases.csv")
        for rr in last.results:
            if rr.trace is not None:
                rr.trace.to_csv(out / "traces" / f"{run_id}_rank{rr.rank}_tasks.csv")
        if verify_only:
            continue
        lb_w = lb_theoretical(part, weights)
        lb_nw = lb_theoretical(part)
        for phase in PHASES:
            per_rank = timing.per_rank_median(phase, warmup=cfg.warmup)
            step_max = [timing.times(s, phase).max() for s in timing.steps() if s >= cfg.warmup]
            rows.append(ReportRow(
                cfg.mesh_label, mesh.nelem, strategy, node.dlb_enabled, cfg.nodes,
                node.ranks_per_node, node.lanes_per_rank, chunk, phase,
                float(np.median(step_max)), lb_measured(np.maximum(per_rank, 1e-12)),
                lb_w, lb_nw))

    with open(out / "equivalence.csv", "w") as fh:
        fh.write(f"# seed={cfg.seed}\nrun,rank,max_rel_diff_A,max_rel_diff_b,passed\n")
        for run_id, rank, da, db, ok in equivalence:
            fh.write(f"{run_id},{rank},{da!r},{db!r},{ok}\n")
    if not verify_only:
        write_report_csv(out / "report.csv", rows, cfg.seed)
        write_report_json(out / "report.json", rows, cfg.seed)
    return all_passed


def main(argv=None):
    ap = argparse.ArgumentParser(prog="taskfem-bench", description=__doc__.splitlines()[0])
    ap.add_argument("--config", required=True, help="key = value run specification")
    ap.add_argument("--out", default="bench_out", help="output directory")
    ap.add_argument("--seed", type=int, help="override the seed from the config")
    ap.add_argument("--verify-only", action="store_true",
                    help="one step per configuration, equivalence checks only")
    ap.add_argument("--dump-matrices", action="store_true",
                    help="write COO dumps and compare them file against file")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
    except (OSError, ConfigError) as exc:
        print(f"{args.config}: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg.seed = args.seed
    try:
        ok = run_benchmark(cfg, args.out, verify_only=args.verify_only,
                           dump_matrices=args.dump_matrices)
    except ConfigurationError as exc:
        print(f"{args.config}: {exc}", file=sys.stderr)
        return 2
    except (ProtocolError, SafetyError, AssemblyError) as exc:
        print(f"invariant check failed: {exc}", file=sys.stderr)
        return 1
    if not ok:
        print("equivalence check failed; see equivalence.csv", file=sys.stderr)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
