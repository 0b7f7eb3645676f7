"""Continuous trajectory search around two obstacles.

The robot plans a short motion-primitive path every cycle, measures along it,
and refits. The script prints per-cycle progress and a text map of the
executed path (o) over the obstacles (#).

    python demos/continuous_obstacles.py [seed]
"""
import sys

import numpy as np

from palpsearch.search import Disc, Polygon, RobotFootprint, SearchConfig, clearance
from palpsearch.sim import SimConfig, simulate

OBSTACLES = (Disc((0.6, 0.4), 0.12), Polygon(((0.15, 0.65), (0.4, 0.7), (0.35, 0.9), (0.2, 0.85))))
FOOTPRINT = RobotFootprint(0.02)


def main(seed=0, cycles=10, size=40):
    sc = SearchConfig(budget=cycles, measurement_stride=8, obstacles=OBSTACLES, footprint=FOOTPRINT)
    res = simulate(SimConfig(search=sc, mode="continuous"), seed)

    for i, (ev, r, n) in enumerate(zip(res.state.events, res.recall.recall, res.measurements), 1):
        p = ev["path"].positions
        c = clearance(p, OBSTACLES, FOOTPRINT).min()
        print(f"cycle {i:2d}: start ({p[0, 0]:.2f}, {p[0, 1]:.2f})  measurements {n:3d}  "
              f"recall {r:.2f}  min clearance {c:.3f}")

    ticks = (np.arange(size) + 0.5) / size
    xx, yy = np.meshgrid(ticks, ticks)
    cells = np.column_stack([xx.ravel(), yy.ravel()])
    canvas = np.where(clearance(cells, OBSTACLES, RobotFootprint(0.0)) <= 0, "#", " ").reshape(size, size)
    for ev in res.state.events:
        ij = np.clip((ev["path"].positions * size).astype(int), 0, size - 1)
        canvas[ij[:, 1], ij[:, 0]] = "o"
    print("\n" + "\n".join("|" + "".join(row) + "|" for row in canvas[::-1]))


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 0)
