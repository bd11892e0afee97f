"""Energy-balance residual of the reduced planar scheme under time-step halving."""

import argparse

import numpy as np

from plasticrod.planar_example import PlanarConfig, ReducedSolver, planar_energy_balance


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--t-end", type=float, default=1.0)
    ap.add_argument("--dt", type=float, default=0.02, help="coarsest step")
    ap.add_argument("--halvings", type=int, default=2)
    ap.add_argument("--intervals", type=int, default=32)
    ap.add_argument("--sweep-tol", type=float, default=1e-14)
    args = ap.parse_args()

    cfg = PlanarConfig(n_intervals=args.intervals)
    solver = ReducedSolver(cfg, refinement=1, sweep_tol=args.sweep_tol)
    prev = None
    for i in range(args.halvings + 1):
        dt = args.dt / 2**i
        traj = solver.solve(np.arange(0.0, args.t_end + dt / 2, dt))
        res = float(np.abs(planar_energy_balance(traj, cfg)).max())
        ratio = "" if prev is None else f"  ratio {prev / res:.2f}"
        print(f"dt = {dt:<8g} max |residual| = {res:.3e}  dissipated {traj.cumulative_dissipation[-1]:.6e}{ratio}")
        prev = res


if __name__ == "__main__":
    main()
