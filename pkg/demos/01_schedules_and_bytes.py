"""Who trains when, and what it costs.

A ring keeps one model moving: only the node (or group) at the current ring
position trains, then hands the model on. Chains put several models on the
same ring at fixed offsets. This walks a small Tornado schedule (a ring of
star groups) and then prices every architecture on one federation.
"""

import numpy as np

from tornadoagg.grouping import GroupAssignment
from tornadoagg.topology import ARCHITECTURES, ArchitectureConfig, build_rings, comm_cost, schedule, schedule_comm

N, G = 12, 4
grouping = GroupAssignment(np.arange(N) % G, G)

tornado = ArchitectureConfig.from_name("RING-stars", num_groups=G, grouping_scheme="random", chains=2, tau1=2, tau2=3)
rings = build_rings(tornado, grouping, seed=0)
print(f"group ring order: {rings.top.order}")
for plan in schedule(tornado, grouping, rings, 24):
    groups = sorted({k for k, _ in plan.active})
    events = [f"{e.kind}->{list(e.targets)}" for e in plan.global_syncs]
    if plan.syncs:
        print(f"t={plan.step + 1:2d}  active groups {groups}  bytes {plan.bytes}  {' '.join(events)}")

print("\nclosed-form cost over T=120 steps, 1 byte per model copy")
print(f"{'architecture':<12} {'total':>7} {'peak links':>11}")
for name in ARCHITECTURES:
    cfg = ArchitectureConfig.from_name(name, num_groups=1 if name in ("STAR", "RING") else G,
                                       grouping_scheme="single" if name in ("STAR", "RING") else "random",
                                       chains=2, tau=6, tau1=2, tau2=3)
    g = grouping if cfg.num_groups == G else GroupAssignment(np.zeros(N, dtype=np.int64), 1)
    report = comm_cost(cfg, 1, 120, N)
    measured = schedule_comm(cfg, schedule(cfg, g, build_rings(cfg, g, 0), 120))
    assert measured.total_bytes == report.total_bytes
    print(f"{name:<12} {report.total_bytes:>7} {report.peak_concurrent_links:>11}")
