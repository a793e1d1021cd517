"""Record the critical points of the shipped scenario as a golden file.

    python3 scripts/freeze_golden.py
"""
import json
from pathlib import Path

import numpy as np

from eternalflow.cli import load_scenario
from eternalflow.flowline import find_critical_points

ROOT = Path(__file__).resolve().parents[1]


def main():
    sc = load_scenario(ROOT / "scenarios" / "shipped.ini")
    metric = sc.metric()
    seeds = np.array([[x, 0.02, 0.0] for x in np.linspace(-1.5, 1.5, 31)])
    found, _ = find_critical_points(metric, seeds)
    keep = [c for c in found if c.nondegenerate and np.linalg.norm(c.location) < 2]
    out = {
        "scenario": sc.name,
        "points": [
            {"location": c.location.tolist(), "S": c.S, "morse_index": c.morse_index,
             "hessian_eigenvalues": np.linalg.eigvalsh(c.hessian_S).tolist()}
            for c in sorted(keep, key=lambda c: c.location[0])
        ],
    }
    path = ROOT / "tests" / "golden" / "shipped_critical_points.json"
    path.write_text(json.dumps(out, indent=2) + "\n")
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
