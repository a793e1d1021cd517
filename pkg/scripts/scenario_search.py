"""Search two-bump conformal metrics for a usable saddle -> minimum flow line.

A candidate is kept when S has an index-1 saddle between two nondegenerate
minima, the Hessian eigenvalues at the target minimum are well separated from
zero, and the connecting line reaches the minimum inside the time window.
Prints one row per candidate, best first.

    python3 scripts/scenario_search.py [--quick]
"""
import argparse
import itertools

import numpy as np

from eternalflow.flowline import TimeGrid, connecting_line, find_critical_points
from eternalflow.metric import Bump, MetricField


def candidate(sep, amp, w1, w2):
    b1 = Bump((-sep, 0, 0), w1, (((0, 0, 0), amp * 1.1), ((1, 0, 0), 0.03), ((0, 1, 0), 0.02)))
    b2 = Bump((sep, 0.05, 0), w2, (((0, 0, 0), amp), ((0, 0, 1), 0.015)))
    return MetricField(3, "conformal", bumps=(b1, b2), domain_radius=6.0)


def assess(metric, sep):
    seeds = np.array([[x, 0.02, 0.0] for x in np.linspace(-1.5 * sep, 1.5 * sep, 31)])
    cps, _ = find_critical_points(metric, seeds)
    good = [c for c in cps if c.nondegenerate]
    saddles = [c for c in good if c.morse_index == 1 and np.linalg.norm(c.location) < sep]
    minima = [c for c in good if c.morse_index == 0 and c.location[0] > 0]
    if not saddles or not minima:
        return None
    sad, mn = saddles[0], minima[0]
    line = connecting_line(metric, sad, TimeGrid(8.0, 97, margin=2.0), toward=mn.location)
    miss = float(np.linalg.norm(line.gamma[-1] - mn.location))
    lam = np.linalg.eigvalsh(mn.hessian_S)
    lam_sad = np.linalg.eigvalsh(sad.hessian_S)
    return {
        "S_drop": sad.S - mn.S, "end_miss": miss, "lam_min": float(lam.min()),
        "saddle_gap": float(np.min(np.abs(lam_sad))), "saddle": sad.location.round(3).tolist(),
        "minimum": mn.location.round(3).tolist(),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true", help="only the shipped parameters")
    args = ap.parse_args()
    if args.quick:
        grid = [(1.1, -0.18, 0.7, 0.75)]
    else:
        grid = list(itertools.product([0.9, 1.0, 1.1, 1.2], [-0.12, -0.15, -0.18], [0.6, 0.7], [0.65, 0.75]))
    rows = []
    for sep, amp, w1, w2 in grid:
        res = assess(candidate(sep, amp, w1, w2), sep)
        if res is None or res["end_miss"] > 1e-4:
            continue
        rows.append(((sep, amp, w1, w2), res))
    # prefer lines that settle quickly and saddles far from degenerate
    rows.sort(key=lambda r: -min(r[1]["lam_min"], 3 * r[1]["saddle_gap"]))
    for params, res in rows:
        print(params, res)


if __name__ == "__main__":
    main()
