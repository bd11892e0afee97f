"""Onset time of plastic flow: closed-form bracket, elastic-regime bisection
and the first plastic step of the reduced incremental solve."""

import argparse

import numpy as np

from plasticrod.planar_example import (
    PlanarConfig,
    ReducedSolver,
    t_star_bounds,
    t_star_estimate,
    t_star_membership,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--delta", type=float, default=1.0)
    ap.add_argument("--dt", type=float, nargs="+", default=[0.02, 0.01])
    ap.add_argument("--intervals", type=int, default=64)
    ap.add_argument("--refinement", type=int, default=1)
    args = ap.parse_args()

    fine = PlanarConfig(delta=args.delta, n_intervals=1024)
    lower, upper = t_star_bounds(fine)
    print(f"bracket            [{lower:.11g}, {upper:.11g}]")
    print(f"elastic regime     t* = {t_star_membership(fine, t_hi=upper):.8f}")
    cfg = PlanarConfig(delta=args.delta, n_intervals=args.intervals)
    solver = ReducedSolver(cfg, refinement=args.refinement)
    for dt in args.dt:
        traj = solver.solve(np.arange(0.0, 5.0 * lower + dt / 2, dt))
        print(f"reduced, dt={dt:<6g} t* = {t_star_estimate(traj, solver):.6f}")


if __name__ == "__main__":
    main()
