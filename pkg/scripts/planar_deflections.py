"""Elastic deflection curves of the clamped rod under growing vertical load.

Writes one CSV per load time (columns x1, v1, v2) plus a tip summary.
"""

import argparse
from pathlib import Path

import numpy as np

from plasticrod.io_utils import atomic_write, csv_text
from plasticrod.planar_example import PlanarConfig, planar_frames, solve_elastic_angle
from plasticrod.rod_model import integrate_positions


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--times", type=float, nargs="+", default=[0.5, 1.0, 2.0, 5.0, 10.0])
    ap.add_argument("--nodes", type=int, default=1024, help="number of intervals")
    ap.add_argument("--out", default="out/deflections")
    args = ap.parse_args()

    cfg = PlanarConfig(n_intervals=args.nodes)
    out = Path(args.out)
    tips, alpha = [], None
    for t in sorted(args.times):
        alpha = solve_elastic_angle(cfg, t, alpha0=alpha)
        v = integrate_positions(planar_frames(alpha), cfg.dx)
        atomic_write(out / f"deflection_t{t:g}.csv", csv_text(("x1", "v1", "v2"), zip(cfg.nodes, v[:, 0], v[:, 1])))
        tips.append((t, v[-1, 0], v[-1, 1], alpha[-1]))
        print(f"t = {t:6g}  tip = ({v[-1, 0]: .6f}, {v[-1, 1]: .6f})  tip angle = {alpha[-1]: .6f}")
    atomic_write(out / "tips.csv", csv_text(("t", "tip_x", "tip_y", "tip_angle"), tips))


if __name__ == "__main__":
    main()
