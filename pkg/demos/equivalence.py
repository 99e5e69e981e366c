"""Assemble one hybrid mesh with every strategy and compare against the sequential loop."""

import time

import numpy as np

from taskfem import AssemblyConfig, Strategy, assemble, generate_box_mesh
from taskfem.assembly import assemble_sequential, prepare_rank
from taskfem.scheduler import LanePool

mesh = generate_box_mesh(20, 20, 10, 2, jitter=0.1, seed=3)
print(mesh)
rank = prepare_rank(mesh, np.arange(mesh.nelem))
A0, b0 = assemble_sequential(rank)

pool = LanePool(8)
for strategy in Strategy:
    cfg = AssemblyConfig(strategy, 200, 8)
    t0 = time.perf_counter()
    A, b = assemble(rank, cfg, pool)
    dt = time.perf_counter() - t0
    scale = np.maximum(np.abs(A.values), np.abs(A0.values))
    diff = np.abs(A.values - A0.values) / np.where(scale > 0, scale, 1)
    print(f"{strategy.value:15s} {dt * 1e3:7.1f} ms   max rel diff {diff.max():.1e}")
