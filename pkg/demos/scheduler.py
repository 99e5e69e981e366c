"""Commutative tasks: a ring of chunks where neighbours exclude each other."""

import time

from taskfem.scheduler import LanePool, Task

n = 12
# chunk i touches nodes shared with i-1 and i+1
tasks = [Task(i, {i, (i + 1) % n}, priority=n - i, work=lambda: time.sleep(0.01))
         for i in range(n)]
pool = LanePool(4, debug=True)
trace = pool.run_tasks(tasks)
print("start order:", trace.order)
print("max concurrency:", trace.max_concurrency(), "violations:", trace.total_violations)
