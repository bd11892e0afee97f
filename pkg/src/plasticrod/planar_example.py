"""Clamped planar rod under a downward distributed load.

The rod occupies ``[0, 1]`` with a circular unit-area section, is clamped at
``x1 = 0`` and loaded by ``l = -beta(t) f(x1) e2``. Planar configurations are
parameterised by the angle ``alpha`` with ``R = rotation about e3 by alpha``;
the bending-torsion strain is ``K = -alpha' sqrt2 K_2``. Plastic strains are
restricted to the components ``z11, z22, z33, z23`` (DevSym3 components
0, 1 and 4).

Discretisation matches :mod:`plasticrod.rod_model`: nodal angles, midpoint
positions, trapezoid load. With these choices the load work is
``-int l.v = beta sum_k c_k sin(alpha_k)`` where ``c_k / dx`` is a discrete
version of ``F(x) = int_x^1 f``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.linalg import solveh_banded

from .algebra import PLANAR_DEV_COMPONENTS
from .cross_section import ElasticTensor, generate_disc_mesh, solve_correctors
from .errors import InvalidInput, SolverFailure
from .eris_solver import plastic_prox, plastic_quadratic
from .rod_model import EnergyBreakdown, PlasticLaw, RodState, SliceOperator, integrate_positions

SQRT2 = np.sqrt(2.0)


def _linear(t):
    return float(t)


def _one(t):
    return 1.0


def _unit(x):
    return np.ones_like(np.asarray(x, dtype=float))


@dataclass(frozen=True, eq=False)
class PlanarConfig:
    mu: float = 4.0 * np.pi
    rho: float = 4.0 * np.pi
    delta: float = 1.0
    beta: Callable[[float], float] = _linear
    beta_rate: Callable[[float], float] | None = _one
    f: Callable[[np.ndarray], np.ndarray] = _unit
    n_intervals: int = 1024

    def __post_init__(self):
        problems = []
        if not self.mu > 0:
            problems.append("mu must be positive")
        if not self.rho > 0:
            problems.append("rho must be positive")
        if not self.delta >= 0:
            problems.append("delta must be non-negative")
        if self.n_intervals < 2:
            problems.append("need at least two intervals")
        if abs(float(self.beta(0.0))) > 1e-14:
            problems.append("beta(0) must vanish")
        if problems:
            raise InvalidInput("; ".join(problems))

    @property
    def nodes(self):
        return np.linspace(0.0, 1.0, self.n_intervals + 1)

    @property
    def dx(self):
        return 1.0 / self.n_intervals

    def F(self, x):
        """``F(x) = int_x^1 f`` by adaptive quadrature."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.array([integrate.quad(lambda s: float(self.f(np.array([s]))[0]), xi, 1.0)[0] for xi in x])

    def load_coefficients(self):
        """``c_k`` with ``-int l.v = beta sum_k c_k sin(alpha_k)`` for the discrete rod."""
        x = self.nodes
        dx = self.dx
        w = np.full(len(x), dx)
        w[0] = w[-1] = 0.5 * dx
        wf = w * np.asarray(self.f(x), dtype=float)
        tail = np.concatenate([np.cumsum(wf[::-1])[::-1][1:], [0.0]])  # G_j = sum_{k>j}
        c = np.zeros(len(x))
        c[:-1] += 0.5 * dx * tail[:-1]
        c[1:] += 0.5 * dx * tail[:-1]
        return c

    def law(self):
        return PlasticLaw(self.rho, self.delta)


# ---------------------------------------------------------------------------
# angle representation


def planar_frames(alpha):
    alpha = np.asarray(alpha, dtype=float)
    c, s = np.cos(alpha), np.sin(alpha)
    R = np.zeros(alpha.shape + (3, 3))
    R[..., 0, 0], R[..., 0, 1] = c, -s
    R[..., 1, 0], R[..., 1, 1] = s, c
    R[..., 2, 2] = 1.0
    return R


def rod_from_angle(alpha, nodes=None, plastic=None, n_quad=1):
    """Rod state of a planar angle field (``alpha[0]`` must be 0)."""
    alpha = np.asarray(alpha, dtype=float)
    if alpha[0] != 0.0:
        raise InvalidInput("alpha(0) must be 0 (clamped end)")
    nodes = np.linspace(0.0, 1.0, len(alpha)) if nodes is None else np.asarray(nodes, dtype=float)
    if plastic is None:
        plastic = np.zeros((len(alpha) - 1, n_quad, 5))
    plastic = np.asarray(plastic, dtype=float)
    if plastic.shape[-1] == len(PLANAR_DEV_COMPONENTS):
        full = np.zeros(plastic.shape[:-1] + (5,))
        full[..., list(PLANAR_DEV_COMPONENTS)] = plastic
        plastic = full
    frames = planar_frames(alpha)
    return RodState(nodes, frames, integrate_positions(frames, nodes[1] - nodes[0]), plastic)


def sin_tilde(a):
    a = np.asarray(a, dtype=float)
    return np.where(a <= -np.pi / 2, -1.0, np.where(a <= 0.0, np.sin(a), a))


def sin_tilde_d(a):
    a = np.asarray(a, dtype=float)
    return np.where(a <= -np.pi / 2, 0.0, np.where(a <= 0.0, np.cos(a), 1.0))


def sin_tilde_dd(a):
    a = np.asarray(a, dtype=float)
    return np.where((a > -np.pi / 2) & (a <= 0.0), -np.sin(a), 0.0)


_LOADS = {
    False: (np.sin, np.cos, lambda a: -np.sin(a)),
    True: (sin_tilde, sin_tilde_d, sin_tilde_dd),
}


@dataclass
class AngleProblem:
    """``a sum_j dx (alpha'_j - gamma_j)^2 + beta sum_k c_k s(alpha_k)`` with ``alpha_0 = 0``."""

    stiffness: float  # a
    dx: float
    c: np.ndarray
    beta: float
    gamma: np.ndarray | None = None
    convexified: bool = False

    def _gamma(self, n):
        return np.zeros(n) if self.gamma is None else self.gamma

    def value(self, alpha):
        s = _LOADS[self.convexified][0]
        d = np.diff(alpha) / self.dx - self._gamma(len(alpha) - 1)
        return self.stiffness * self.dx * float(d @ d) + self.beta * float(self.c @ s(alpha))

    def gradient(self, alpha):
        ds = _LOADS[self.convexified][1]
        flux = 2.0 * self.stiffness * (np.diff(alpha) / self.dx - self._gamma(len(alpha) - 1))
        g = self.beta * self.c * ds(alpha)
        g[1:] += flux
        g[:-1] -= flux
        g[0] = 0.0
        return g

    def hessian_bands(self, alpha):
        """Upper banded form of the (convexity-clipped) Hessian on nodes 1..n."""
        dds = _LOADS[self.convexified][2]
        k = 2.0 * self.stiffness / self.dx
        n = len(alpha) - 1
        ab = np.zeros((2, n))
        ab[1, :] = 2.0 * k
        ab[1, -1] = k
        ab[0, 1:] = -k
        ab[1, :] += np.maximum(self.beta * self.c[1:] * dds(alpha[1:]), 0.0)
        return ab


def newton_angle(problem: AngleProblem, alpha0, tol=1e-13, max_iter=200):
    """Damped Newton for the discrete Euler-Lagrange equations of the angle."""
    alpha = np.array(alpha0, dtype=float)
    alpha[0] = 0.0
    E = problem.value(alpha)
    scale = 2.0 * problem.stiffness / problem.dx
    for _ in range(max_iter):
        g = problem.gradient(alpha)
        if np.abs(g).max() <= tol * scale * problem.dx * max(1.0, np.abs(alpha).max()):
            return alpha
        step = np.zeros_like(alpha)
        step[1:] = solveh_banded(problem.hessian_bands(alpha), -g[1:])
        if np.abs(step).max() <= 1e-12 * (1.0 + np.abs(alpha).max()):
            # quadratic convergence: the remaining error is far below the step
            return alpha + step
        slope = float(g @ step)
        eta = 1.0
        while True:
            trial = alpha + eta * step
            Et = problem.value(trial)
            # allowance for roundoff in the energy once the step is tiny
            if Et <= E + 1e-4 * eta * slope + 1e-14 * (1.0 + abs(E)) or eta < 1e-12:
                break
            eta *= 0.5
        if eta < 1e-12:
            # roundoff floor reached: accept if the residual is already tiny
            if np.abs(g).max() <= 1e3 * tol * scale * problem.dx * max(1.0, np.abs(alpha).max()):
                return alpha
            raise SolverFailure("angle Newton iteration stagnated")
        alpha, E = trial, Et
    raise SolverFailure("angle Newton iteration did not converge")


def elastic_angle_problem(config: PlanarConfig, t, convexified=False):
    return AngleProblem(
        stiffness=config.mu / (4.0 * np.pi),
        dx=config.dx,
        c=config.load_coefficients(),
        beta=float(config.beta(t)),
        convexified=convexified,
    )


def solve_elastic_angle(config: PlanarConfig, t, alpha0=None, convexified=True):
    """Elastic equilibrium angle for ``z = 0``.

    The convexified energy (``sin`` replaced by ``sin_tilde``) is strictly
    convex, so Newton converges from any start; its minimiser lies in
    ``[-pi/2, 0]`` where both energies coincide.
    """
    beta = float(config.beta(t))
    if beta < 0:
        raise InvalidInput("beta(t) must be non-negative")
    x = config.nodes
    if alpha0 is None:
        alpha0 = first_picard_iterate(config, t)
        alpha0 = np.clip(alpha0, -np.pi / 2, 0.0)
    if beta == 0.0:
        return np.zeros_like(x)
    return newton_angle(elastic_angle_problem(config, t, convexified), alpha0)


def _discrete_double_integral(config: PlanarConfig, weights):
    """``alpha_j = -(1/(2a)) sum_{i<j} dx sum_{k>i} weights_k`` with ``a = mu/(4 pi)``."""
    a = config.mu / (4.0 * np.pi)
    tail = np.concatenate([np.cumsum(weights[::-1])[::-1][1:], [0.0]])
    slope = -tail[:-1] / (2.0 * a)
    return np.concatenate([[0.0], np.cumsum(slope) * config.dx])


def first_picard_iterate(config: PlanarConfig, t):
    """First iterate of the integral equation from ``alpha = 0``."""
    return _discrete_double_integral(config, float(config.beta(t)) * config.load_coefficients())


def integral_equation_residual(config: PlanarConfig, t, alpha):
    """Sup-norm defect of the discrete integral equation ``alpha = T(alpha)``."""
    rhs = _discrete_double_integral(config, float(config.beta(t)) * config.load_coefficients() * np.cos(alpha))
    return float(np.abs(alpha - rhs).max())


def ode_residual(config: PlanarConfig, t, alpha, F=None):
    """``-(mu/2pi) alpha'' + beta F cos(alpha)`` at interior nodes (finite differences)."""
    x = config.nodes
    dx = config.dx
    F = config.F(x) if F is None else F
    d2 = (alpha[2:] - 2.0 * alpha[1:-1] + alpha[:-2]) / dx**2
    return -(config.mu / (2.0 * np.pi)) * d2 + float(config.beta(t)) * F[1:-1] * np.cos(alpha[1:-1])


# ---------------------------------------------------------------------------
# elastic regime and t* bounds


def elastic_regime_check(config: PlanarConfig, alpha):
    """Membership of the elastic regime for the equilibrium angle ``alpha``.

    Returns ``(member, margin)`` with
    ``margin = delta sqrt3 / (mu sqrt8) - max|alpha'| pi^{-1/2}``.
    """
    slope = np.abs(np.diff(alpha)).max() / config.dx if len(alpha) > 1 else 0.0
    margin = config.delta * np.sqrt(3.0) / (config.mu * np.sqrt(8.0)) - slope / np.sqrt(np.pi)
    return bool(margin >= 0.0), float(margin)


def _first_time_beta_reaches(beta, level, tol=1e-10, t_max=1e15):
    """``inf{t : beta(t) >= level}`` for increasing beta; ``inf`` if never."""
    if float(beta(0.0)) >= level:
        return 0.0
    hi = 1.0
    while float(beta(hi)) < level:
        hi *= 2.0
        if hi > t_max:
            return float("inf")
    lo = 0.0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if float(beta(mid)) >= level:
            hi = mid
        else:
            lo = mid
    return hi


def t_star_bound_levels(config: PlanarConfig):
    """Load levels ``beta`` of the lower and upper t* bounds."""
    F0 = float(config.F(0.0)[0])  # F decreasing, so ||F||_inf = F(0)
    Fh = float(config.F(0.5)[0])
    mu, delta = config.mu, config.delta
    lower = delta * np.sqrt(3.0) / (F0 * np.sqrt(32.0 * np.pi))
    upper = 9.0 * mu / (8.0 * (np.pi - 3.0) * Fh) * max(np.pi**2, 3.0 * np.pi * delta**2 / (16.0 * mu**2))
    return lower, upper


def t_star_bounds(config: PlanarConfig, tol=1e-10):
    """Bracket ``[lower, upper]`` for the onset time of plastic flow."""
    lo_level, up_level = t_star_bound_levels(config)
    lower = _first_time_beta_reaches(config.beta, lo_level, tol)
    upper = _first_time_beta_reaches(config.beta, up_level, tol)
    return lower, upper


def t_star_membership(config: PlanarConfig, t_hi=None, tol=1e-6):
    """Onset time from the elastic-regime test on elastic equilibria (bisection)."""
    lower, upper = t_star_bounds(config)
    lo = 0.0
    hi = upper if t_hi is None else t_hi
    if not np.isfinite(hi):
        return float("inf")
    if elastic_regime_check(config, solve_elastic_angle(config, hi))[0]:
        return float("inf")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if elastic_regime_check(config, solve_elastic_angle(config, mid))[0]:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# reduced incremental solve


@dataclass
class PlanarTrajectory:
    times: list = field(default_factory=list)
    alphas: list = field(default_factory=list)
    plastic: list = field(default_factory=list)  # (n, nq, 3) reduced coefficients
    energies: list = field(default_factory=list)
    diss_increments: list = field(default_factory=list)
    objectives: list = field(default_factory=list)
    stay_put: list = field(default_factory=list)
    sweeps: list = field(default_factory=list)
    cell_weights: np.ndarray | None = None
    nodes: np.ndarray | None = None

    @property
    def cumulative_dissipation(self):
        return np.cumsum(self.diss_increments)

    def plastic_norms(self):
        return [float(np.sqrt(np.sum(self.cell_weights[..., None] * c**2))) for c in self.plastic]

    def tips(self):
        out = []
        for a in self.alphas:
            v = integrate_positions(planar_frames(a), self.nodes[1] - self.nodes[0])
            out.append(v[-1])
        return np.array(out)

    def deflection(self, i):
        v = integrate_positions(planar_frames(self.alphas[i]), self.nodes[1] - self.nodes[0])
        return self.nodes, v[:, 0], v[:, 1]


class ReducedSolver:
    """Alternating minimisation of the reduced incremental problem.

    The angle block is the discrete Euler-Lagrange system (Newton on a
    tridiagonal Hessian); the plastic block is the per-slice proximal problem
    restricted to the planar components.
    """

    def __init__(self, config: PlanarConfig, refinement=1, convexified=False, model=None,
                 max_sweeps=200, sweep_tol=1e-10):
        self.config = config
        self.convexified = convexified
        if model is None:
            mesh = generate_disc_mesh(refinement)
            model = solve_correctors(mesh, ElasticTensor.isotropic(config.mu))
        self.model = model
        self.op = SliceOperator(model, PLANAR_DEV_COMPONENTS)
        self.law = config.law()
        self.c_load = config.load_coefficients()
        self.max_sweeps = max_sweeps
        self.sweep_tol = sweep_tol
        self.cell_weights = config.dx * np.broadcast_to(model.mesh.quad_weights, (config.n_intervals, model.n_quad))
        g = model.gram
        self.stiffness = 2.0 * g[1, 1]

    # -- energy ---------------------------------------------------------------
    def curvature(self, alpha):
        K = np.zeros((len(alpha) - 1, 3))
        K[:, 1] = -SQRT2 * np.diff(alpha) / self.config.dx
        return K

    def energy(self, t, alpha, c) -> EnergyBreakdown:
        dx = self.config.dx
        bend, res, zz = self.op.slice_energies(self.curvature(alpha), c)
        s = _LOADS[self.convexified][0]
        return EnergyBreakdown(
            bending_torsion=float(dx * bend.sum()),
            residual=float(dx * res.sum()),
            hardening=float(dx * self.law.rho * zz.sum()),
            load=-float(self.config.beta(t)) * float(self.c_load @ s(alpha)),
        )

    def dissipation(self, c_old, c):
        return float(self.law.delta * np.sum(self.cell_weights * np.linalg.norm(c - c_old, axis=-1)))

    # -- blocks ---------------------------------------------------------------
    def plastic_target(self, c):
        """Shift ``gamma`` with ``q_eff(K - K_eff) = a (alpha' - gamma)^2 + const``."""
        k = self.op.k_eff(c)
        g = self.model.gram
        shift = k[:, 1] + (g[1, 0] * k[:, 0] + g[1, 2] * k[:, 2]) / g[1, 1]
        return -shift / SQRT2

    def angle_step(self, t, alpha, c):
        prob = AngleProblem(
            self.stiffness, self.config.dx, self.c_load, float(self.config.beta(t)),
            self.plastic_target(c), self.convexified,
        )
        return newton_angle(prob, alpha)

    def plastic_step(self, alpha, c, c_old):
        quad = plastic_quadratic(self.op, self.law, self.curvature(alpha))
        return plastic_prox(quad, c_old, self.law.delta, c_init=c)

    def step(self, t, alpha_prev, c_prev):
        E_stay = self.energy(t, alpha_prev, c_prev).total
        alpha, c = alpha_prev, c_prev
        last = E_stay
        sweeps = 0
        for sweeps in range(1, self.max_sweeps + 1):
            alpha = self.angle_step(t, alpha, c)
            c = self.plastic_step(alpha, c, c_prev)
            cur = self.energy(t, alpha, c).total + self.dissipation(c_prev, c)
            if last - cur < self.sweep_tol * (1.0 + abs(cur)):
                break
            last = cur
        alpha = self.angle_step(t, alpha, c)
        E = self.energy(t, alpha, c)
        D = self.dissipation(c_prev, c)
        if E.total + D > E_stay:
            alpha, c, E, D = alpha_prev, c_prev, self.energy(t, alpha_prev, c_prev), 0.0
        return alpha, c, E, D, E_stay, sweeps

    def solve(self, times, alpha0=None, c0=None, progress=None) -> PlanarTrajectory:
        times = np.asarray(times, dtype=float)
        if np.any(np.diff(times) <= 0):
            raise InvalidInput("time partition must be strictly increasing")
        n = self.config.n_intervals
        alpha = np.zeros(n + 1) if alpha0 is None else np.array(alpha0, dtype=float)
        c = np.zeros((n, self.model.n_quad, len(PLANAR_DEV_COMPONENTS))) if c0 is None else np.array(c0)
        traj = PlanarTrajectory(cell_weights=self.cell_weights, nodes=self.config.nodes)
        for i, t in enumerate(times):
            alpha, c, E, D, E_stay, sweeps = self.step(t, alpha, c)
            traj.times.append(float(t))
            traj.alphas.append(alpha)
            traj.plastic.append(c)
            traj.energies.append(E)
            traj.diss_increments.append(D)
            traj.objectives.append(E.total + D)
            traj.stay_put.append(E_stay)
            traj.sweeps.append(sweeps)
            if progress is not None:
                progress(i, t, E, D)
        return traj

    def lifted_state(self, alpha, c):
        return rod_from_angle(alpha, self.config.nodes, self.op.embed(c))


def reduced_incremental_solve(config: PlanarConfig, times, refinement=1, convexified=False,
                              model=None, progress=None, **kw) -> PlanarTrajectory:
    solver = ReducedSolver(config, refinement, convexified, model, **kw)
    return solver.solve(times, progress=progress)


def planar_energy_balance(traj: PlanarTrajectory, config: PlanarConfig):
    """Energy-balance residual per node; power ``-beta'(t) sum_k c_k sin(alpha_k)``."""
    c = config.load_coefficients()
    if config.beta_rate is not None:
        rate = np.array([float(config.beta_rate(t)) for t in traj.times])
    else:
        h = 1e-6
        rate = np.array([(float(config.beta(t + h)) - float(config.beta(max(t - h, 0.0)))) / (t + h - max(t - h, 0.0)) for t in traj.times])
    P = rate * np.array([float(c @ np.sin(a)) for a in traj.alphas])
    E = np.array([e.total for e in traj.energies])
    diss = traj.cumulative_dissipation - traj.diss_increments[0]
    dt = np.diff(traj.times)
    work = np.concatenate([[0.0], np.cumsum(0.5 * dt * (P[1:] + P[:-1]))])
    return E + diss - E[0] - work


def t_star_estimate(traj: PlanarTrajectory, solver: ReducedSolver | None = None, threshold=1e-10):
    """First time with ``|z| > threshold``, sharpened by one bisection in time.

    Returns the right end point of the (refined) bracket; the last time if
    the trajectory never becomes plastic.
    """
    norms = traj.plastic_norms()
    idx = next((i for i, v in enumerate(norms) if v > threshold), None)
    if idx is None:
        return traj.times[-1]
    if idx == 0 or solver is None:
        return traj.times[idx]
    t_lo, t_hi = traj.times[idx - 1], traj.times[idx]
    mid = 0.5 * (t_lo + t_hi)
    alpha, c, *_ = solver.step(mid, traj.alphas[idx - 1], traj.plastic[idx - 1])
    plastic_mid = np.sqrt(np.sum(traj.cell_weights[..., None] * c**2)) > threshold
    return mid if plastic_mid else t_hi
