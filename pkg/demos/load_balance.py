"""Two virtual ranks with a 2:1 work split, with and without lending idle lanes."""

from taskfem.dlb import NodeConfig, run_synthetic_step

for dlb in (False, True):
    res = run_synthetic_step([100, 50], NodeConfig(2, 1, dlb), unit_seconds=0.004)
    print(f"dlb={'on ' if dlb else 'off'} makespan {res.makespan:.3f}s")
    for ev in res.ledger_events:
        print(f"    {ev.event:8s} {ev.from_rank:2d} -> {ev.to_rank} ({ev.tokens} token)")
