"""Command-line entry point: ``plasticrod {effective,solve,planar,gamma}``.

Exit codes: 0 success, 2 config error, 3 solver failure, 4 I/O error.
Every run writes ``manifest.json`` listing all artifacts with their SHA-256
and the fully resolved configuration; a manifest can be passed back as
``--config`` to reproduce the run.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import (
    CONFIG_TYPES,
    EffectiveConfig,
    GammaConfig,
    PlanarRunConfig,
    SolveConfig,
    config_from_dict,
    config_to_dict,
)
from .errors import ConfigError, InvalidInput, PlasticRodError, StagnationError

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4
MANIFEST_SCHEMA = "manifest-v1"

log = logging.getLogger("plasticrod")


# ---------------------------------------------------------------------------
# config


def parse_config(path, command):
    """Read and validate the JSON config of ``command``.

    Raises ``OSError`` when the file cannot be read and :class:`ConfigError`
    (listing every problem) when it is malformed or violates a constraint.
    A manifest from an earlier run is accepted in place of a config.
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"<root>: malformed JSON ({exc.msg} at line {exc.lineno})"]) from None
    if isinstance(doc, dict) and doc.get("schema") == MANIFEST_SCHEMA:
        if doc.get("command") != command:
            raise ConfigError([f"command: manifest was written by {doc.get('command')!r}, not {command!r}"])
        doc = doc.get("config", {})
    return config_from_dict(command, doc)


def _with_seed(cfg, seed):
    if seed is None or not hasattr(cfg, "seed"):
        return cfg
    import dataclasses

    if seed < 0:
        raise ConfigError(["--seed: must be >= 0"])
    return dataclasses.replace(cfg, seed=seed)


# ---------------------------------------------------------------------------
# artifacts


class Artifacts:
    """Atomic writer that remembers what it wrote."""

    def __init__(self, out_dir):
        self.out = Path(out_dir)
        self.files = []

    def text(self, name, text):
        from .io_utils import atomic_write

        digest = atomic_write(self.out / name, text)
        self.files.append({"name": name, "sha256": digest, "bytes": len(text.encode("utf-8"))})
        return self.out / name

    def json(self, name, obj):
        from .io_utils import dumps_json

        return self.text(name, dumps_json(obj) + "\n")

    def manifest(self, command, cfg, status, threads, extra=None):
        from . import __version__
        from .io_utils import atomic_write, dumps_json

        doc = {
            "schema": MANIFEST_SCHEMA,
            "command": command,
            "package_version": __version__,
            "status": status,
            "threads": threads,
            "config": config_to_dict(cfg),
            "files": list(self.files),
        }
        if extra:
            doc.update(extra)
        atomic_write(self.out / "manifest.json", dumps_json(doc) + "\n")


class RunFailure(Exception):
    """Solver failure after partial artifacts were written."""

    def __init__(self, cause, diagnostics):
        super().__init__(str(cause))
        self.cause = cause
        self.diagnostics = diagnostics


# ---------------------------------------------------------------------------
# shared builders


def _section_mesh(spec, refinement=None):
    from .cross_section import generate_disc_mesh, generate_rect_mesh

    r = spec.refinement if refinement is None else refinement
    if spec.kind == "disc":
        return generate_disc_mesh(r)
    return generate_rect_mesh(spec.width, spec.height, spec.nx * 2**r, spec.ny * 2**r)


def _section_model(spec, mu, lam, refinement=None):
    from .cross_section import ElasticTensor, solve_correctors

    return solve_correctors(_section_mesh(spec, refinement), ElasticTensor.isotropic(mu, lam))


# ---------------------------------------------------------------------------
# subcommands


def run_effective(cfg: EffectiveConfig, art: Artifacts):
    import numpy as np

    from .io_utils import csv_text

    mu, lam = cfg.material.mu, cfg.material.lam
    model = _section_model(cfg.section, mu, lam)
    gram = model.gram
    eig = np.linalg.eigvalsh(gram)
    doc = {
        "schema": "xsec-coefficients-v1",
        "section": cfg.section.kind,
        "refinement": cfg.section.refinement,
        "gram": gram,
        "gram_inverse": model.gram_inverse,
        "gram_eigenvalues": eig,
        "axial_correctors": model.a,
        "area": model.mesh.area,
        "area_defect": abs(model.mesh.area - 1.0),
        "rotation_constraint_error": model.rotation_constraint_error(),
    }
    if cfg.section.kind == "disc" and lam == 0.0:
        ref = mu / (8.0 * np.pi)
        doc["disc_reference_gram"] = ref
        doc["disc_relative_error"] = float(np.linalg.norm(gram - ref * np.eye(3)) / np.linalg.norm(ref * np.eye(3)))
    art.json("coefficients.json", doc)
    art.text("section_model.json", model.dumps() + "\n")
    rows = []
    for r in cfg.refinements:
        m = model if r == cfg.section.refinement else _section_model(cfg.section, mu, lam, r)
        rows.append({"refinement": r, "C11": m.gram[0, 0], "C22": m.gram[1, 1], "C33": m.gram[2, 2],
                     "area_defect": abs(m.mesh.area - 1.0)})
        log.info("refinement %d: C = %s", r, np.diag(m.gram))
    art.text("convergence.csv", csv_text(("refinement", "C11", "C22", "C33", "area_defect"), rows))
    return {}


def run_solve(cfg: SolveConfig, art: Artifacts):
    import numpy as np

    from .algebra import PLANAR_DEV_COMPONENTS
    from .eris_solver import (
        IncrementalProblem,
        certification_csv,
        energy_balance_check,
        incremental_solve,
        stability_check,
    )
    from .rod_model import LoadProfile, PlasticLaw, RodState, trajectory_csv

    mat = cfg.material
    model = _section_model(cfg.section, mat.mu, mat.lam)
    law = PlasticLaw(mat.rho_value, mat.delta)
    if cfg.load.kind == "zero":
        load = LoadProfile.zero()
    else:
        load = LoadProfile.vertical(cfg.load.beta, cfg.load.f, cfg.load.beta.rate)
    initial = RodState.straight(cfg.rod.n_intervals, model.n_quad, cfg.rod.length)
    times = cfg.time.partition()
    comps = PLANAR_DEV_COMPONENTS if cfg.plastic_components == "planar" else None
    problem = IncrementalProblem(
        times, initial, model, law, load, components=comps, max_sweeps=cfg.solver.max_sweeps,
        sweep_tol=cfg.solver.sweep_tol, elastic_tol=cfg.solver.elastic_tol,
    )

    def progress(i, t, E, D):
        log.info("t = %.6g  E = %.10g  D = %.3g", t, E.total, D)

    try:
        traj = incremental_solve(problem, progress)
    except StagnationError as exc:
        partial = exc.partial
        if partial is not None and partial.times:
            art.text("trajectory.csv", trajectory_csv(partial.trajectory_rows()))
        raise RunFailure(exc, {"failed_after": partial.times[-1] if partial and partial.times else None}) from exc
    energy_balance_check(traj, load)
    if cfg.solver.certify:
        rng = np.random.default_rng(cfg.seed)
        traj.stability_margins = [
            stability_check(problem, t, s, cfg.solver.stability_competitors, cfg.solver.stability_amplitude, rng)
            for t, s in zip(traj.times, traj.states)
        ]
    art.text("trajectory.csv", trajectory_csv(traj.trajectory_rows()))
    art.text("certification.csv", certification_csv(traj.certification_rows()))
    art.text("final_state.json", traj.states[-1].dumps() + "\n")
    stay = [o <= s for o, s in zip(traj.objectives, traj.stay_put)]
    return {"summary": {"steps": len(traj.times), "stay_put_minimal": all(stay),
                        "max_abs_balance_residual": float(np.max(np.abs(traj.balance_residuals)))}}


def run_planar(cfg: PlanarRunConfig, art: Artifacts):
    import numpy as np

    from .io_utils import csv_text
    from .planar_example import (
        PlanarConfig,
        ReducedSolver,
        planar_energy_balance,
        planar_frames,
        solve_elastic_angle,
        t_star_bounds,
        t_star_estimate,
        t_star_membership,
    )
    from .rod_model import integrate_positions

    mat = cfg.material

    def planar(n):
        return PlanarConfig(mu=mat.mu, rho=mat.rho_value, delta=mat.delta, beta=cfg.load.beta,
                            beta_rate=cfg.load.beta.rate, f=cfg.load.f, n_intervals=n)

    fine = planar(cfg.grid.elastic_intervals)
    lower, upper = t_star_bounds(fine)
    t_end = cfg.time.t_end
    if t_end is None:
        if not np.isfinite(lower):
            raise ConfigError(["time.t_end: required when the elastic-regime lower bound is infinite"])
        t_end = 5.0 * lower
    membership = t_star_membership(fine, t_hi=upper if np.isfinite(upper) else None)

    solver = ReducedSolver(planar(cfg.grid.n_intervals), cfg.grid.refinement, cfg.convexified,
                           max_sweeps=cfg.solver.max_sweeps, sweep_tol=cfg.solver.sweep_tol)
    times = cfg.time.partition(t_end)
    traj = solver.solve(times, progress=lambda i, t, E, D: log.info("t = %.6g  E = %.10g  D = %.3g", t, E.total, D))
    t_est = t_star_estimate(traj, solver)
    # the sine and its convex extension agree on [-pi/2, 0]; report where the two evolutions part
    other = ReducedSolver(solver.config, cfg.grid.refinement, not cfg.convexified, model=solver.model,
                          max_sweeps=cfg.solver.max_sweeps, sweep_tol=cfg.solver.sweep_tol).solve(times)
    gaps = [float(np.abs(a - b).max()) for a, b in zip(traj.alphas, other.alphas)]
    split = next((t for t, g in zip(traj.times, gaps) if g > 1e-8), None)
    balance = planar_energy_balance(traj, solver.config)
    norms = traj.plastic_norms()
    cum = traj.cumulative_dissipation
    tips = traj.tips()
    rows = [
        {"t": t, "tip_x": tips[i, 0], "tip_y": tips[i, 1], **traj.energies[i].as_dict(), "z_norm": norms[i],
         "diss_increment": traj.diss_increments[i], "diss_cumulative": cum[i], "balance_residual": balance[i]}
        for i, t in enumerate(traj.times)
    ]
    cols = ("t", "tip_x", "tip_y", "total", "bending_torsion", "residual", "hardening", "load", "z_norm",
            "diss_increment", "diss_cumulative", "balance_residual")
    art.text("trajectory.csv", csv_text(cols, rows))

    deflections = {}
    alpha = None
    for k, t in sorted(enumerate(cfg.deflection_times), key=lambda p: p[1]):
        alpha = solve_elastic_angle(fine, t, alpha0=alpha)
        v = integrate_positions(planar_frames(alpha), fine.dx)
        name = f"deflection_{k:02d}.csv"
        art.text(name, csv_text(("x1", "v1", "v2"), zip(fine.nodes, v[:, 0], v[:, 1])))
        deflections[name] = t
    stay = [o <= s for o, s in zip(traj.objectives, traj.stay_put)]
    art.json("bounds.json", {
        "t_star_estimate": t_est,
        "lower": lower,
        "upper": upper,
        "membership_t_star": membership,
        "estimate_within_bounds": bool(lower <= t_est <= upper),
        "variant_max_angle_difference": max(gaps),
        "variants_diverge": split is not None,
        "variants_first_divergence_time": split,
        "dt": cfg.time.dt,
        "t_end": float(times[-1]),
        "stay_put_minimal": all(stay),
        "dissipation_monotone": bool(np.all(np.diff(cum) >= 0)),
        "max_abs_balance_residual": float(np.max(np.abs(balance))),
        "deflection_times": deflections,
    })
    return {}


def run_gamma(cfg: GammaConfig, art: Artifacts):
    import numpy as np

    from .gamma_harness import REPORT_COLUMNS, MaterialLaw3D, RodGrid, affine_section_field, convergence_study
    from .io_utils import csv_text

    m = cfg.material
    law = MaterialLaw3D(m.mu, m.rho_value, m.delta, m.r, m.p, m.alpha_C, m.alpha_R, m.scaled_gradient)
    grid = RodGrid(cfg.grid.n1, cfg.grid.n_r, cfg.grid.n_theta, cfg.grid.length)
    z = None
    if cfg.plastic:
        z = affine_section_field(grid, **{k: np.array(v, dtype=float) for k, v in cfg.plastic.items()})
    zt = None if cfg.increment is None else np.array(cfg.increment, dtype=float)
    report = convergence_study(np.array(cfg.curvature), cfg.h_list, law, grid, z, zt)
    art.text("report.csv", csv_text(REPORT_COLUMNS, report.rows))
    art.json("slopes.json", {
        "slopes": report.slopes,
        "expected": {"HC_term": (1.0 - m.alpha_C) * m.p, "HR_term": m.alpha_R * m.p},
        "corrector_free_limit": report.limit,
    })
    return {}


RUNNERS = {"effective": run_effective, "solve": run_solve, "planar": run_planar, "gamma": run_gamma}


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    p = argparse.ArgumentParser(prog="plasticrod", description="Elastoplastic rod simulator and verification runs.")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "effective": "cross-section correctors and effective coefficients",
        "solve": "time-incremental rod evolution with certificates",
        "planar": "clamped planar rod: elastic regime, reduced evolution, bounds",
        "gamma": "scaled 3D energies on Cosserat fields as the thickness shrinks",
    }
    for name in CONFIG_TYPES:
        s = sub.add_parser(name, help=helps[name])
        s.add_argument("--config", help="JSON config (or a manifest of an earlier run); defaults apply when omitted")
        s.add_argument("--out", default=f"out/{name}", help="output directory")
        s.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        s.add_argument("--threads", type=int, default=None, help="BLAS/OpenMP thread cap")
        s.add_argument("-q", "--quiet", action="store_true")
    return p


def _set_threads(n):
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s",
                        stream=sys.stderr)
    if args.threads is not None and args.threads < 1:
        print("config error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    _set_threads(args.threads)
    try:
        if args.config:
            cfg = parse_config(args.config, args.command)
        else:
            cfg = config_from_dict(args.command, {})
        cfg = _with_seed(cfg, args.seed)
    except ConfigError as exc:
        for prob in exc.problems:
            print(f"config error: {prob}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO

    art = Artifacts(args.out)
    try:
        extra = RUNNERS[args.command](cfg, art)
        art.manifest(args.command, cfg, "ok", args.threads, extra)
        return EXIT_OK
    except (ConfigError, InvalidInput) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RunFailure, PlasticRodError) as exc:
        cause = exc.cause if isinstance(exc, RunFailure) else exc
        diag = {"error": type(cause).__name__, "message": str(cause)}
        if isinstance(exc, RunFailure):
            diag.update(exc.diagnostics)
        print(f"solver failure: {type(cause).__name__}: {cause}", file=sys.stderr)
        try:
            art.json("diagnostics.json", diag)
            art.manifest(args.command, cfg, "failed", args.threads)
        except OSError:
            return EXIT_IO
        return EXIT_SOLVER
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
