"""Time-incremental minimisation of the limiting rod energy plus dissipation.

Each time step minimises ``E0(t_i, frames, z) + D0(z_{i-1}, z)`` by block
alternation: frames with ``z`` fixed (preconditioned Riemannian gradient
descent on the product of rotation groups) and ``z`` with frames fixed
(per-slice accelerated proximal gradient). Both blocks only ever decrease
the incremental objective, and the stay-put state is always a candidate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .algebra import COEFF_TO_AXIAL, coeffs_from_axial, right_jacobian_inv, so3_exp_axial, so3_log_axial
from .cross_section import CrossSectionModel
from .errors import InvalidInput, PlasticRodError, StagnationError
from .io_utils import csv_text
from .rod_model import (
    EnergyBreakdown,
    LoadProfile,
    PlasticLaw,
    RodState,
    SliceOperator,
    cell_weights,
    curvature_field,
    dissipation_d0,
    energy_e0,
    frame_load_weights,
    trapezoid_weights,
)

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# plastic block


@dataclass(eq=False)
class SliceQuadratic:
    """``f(c) = 1/2 <c, H c> - <b, c>`` on a batch of independent slices.

    ``apply`` maps ``(S, nq, m)`` to ``(S, nq, m)`` and must be symmetric
    positive definite per slice; ``weights`` (``nq``) define the metric in
    which the dissipation ``delta * sum_q w_q |c_q - c_old_q|`` is isotropic.
    ``dense`` may hold the ``(nq*m, nq*m)`` matrix of ``H`` when available.
    """

    apply: object
    b: np.ndarray
    weights: np.ndarray
    dense: np.ndarray | None = None
    lipschitz: float | None = None

    def value(self, c):
        return 0.5 * np.einsum("sqa,sqa->s", c, self.apply(c)) - np.einsum("sqa,sqa->s", self.b, c)

    def gradient(self, c):
        return self.apply(c) - self.b

    def estimate_lipschitz(self, n_iter=30, seed=0):
        """Largest eigenvalue of ``W^{-1} H`` by power iteration (plus 10% margin)."""
        if self.lipschitz is not None:
            return self.lipschitz
        shape = (1,) + self.b.shape[1:]
        w = self.weights[None, :, None]
        x = np.random.default_rng(seed).normal(size=shape)
        lam = 0.0
        for _ in range(n_iter):
            y = self.apply(x) / w
            nrm = np.sqrt(np.sum(w * y * y))
            if nrm == 0:
                raise InvalidInput("slice quadratic is identically zero (not coercive)")
            lam = np.sum(w * x * y) / np.sum(w * x * x)
            x = y / nrm
        self.lipschitz = 1.1 * float(lam)
        return self.lipschitz


def _shrink(d, thresh):
    nrm = np.linalg.norm(d, axis=-1, keepdims=True)
    scale = np.maximum(0.0, 1.0 - thresh / np.maximum(nrm, 1e-300))
    return d * scale


def prox_objective(quad: SliceQuadratic, c, c_old, delta):
    diss = delta * np.einsum("q,sq->s", quad.weights, np.linalg.norm(c - c_old, axis=-1))
    return quad.value(c) + diss


def plastic_prox(quad: SliceQuadratic, c_old, delta, tol=1e-13, max_iter=20000, c_init=None):
    """Minimise ``f(c) + delta * sum_q w_q |c_q - c_old_q|`` per slice.

    FISTA in the ``w``-weighted metric with gradient-based adaptive restart.
    The result is never worse than ``c_old`` (stay-put) or ``c_init``.
    """
    c_old = np.asarray(c_old, dtype=float)
    if delta < 0:
        raise InvalidInput("delta must be non-negative")
    w = quad.weights[None, :, None]
    if delta == 0 and quad.dense is not None:
        S = c_old.shape[0]
        sol = np.linalg.solve(quad.dense, quad.b.reshape(S, -1).T).T
        return sol.reshape(c_old.shape)
    L = quad.estimate_lipschitz()
    if not (L > 0 and np.isfinite(L)):
        raise InvalidInput("slice quadratic is not coercive")
    step = 1.0 / L
    thresh = delta * step
    x = c_old.copy() if c_init is None else np.array(c_init, dtype=float)
    y = x.copy()
    tk = 1.0
    for it in range(max_iter):
        g = quad.gradient(y)
        v = y - step * g / w
        x_new = c_old + _shrink(v - c_old, thresh)
        diff = x_new - x
        # restart momentum when it points uphill
        if np.sum((y - x_new) * (x_new - x)) > 0:
            tk = 1.0
            y = x_new.copy()
        else:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
            y = x_new + ((tk - 1.0) / t_next) * diff
            tk = t_next
        x = x_new
        dn = np.sqrt(np.sum(w * diff * diff, axis=(1, 2)))
        xn = np.sqrt(np.sum(w * x * x, axis=(1, 2)))
        if np.all(dn <= tol * (1.0 + xn)):
            break
    # safeguards: never return something worse than the candidates we know
    best = x
    fb = prox_objective(quad, best, c_old, delta)
    cands = [c_old] + ([np.asarray(c_init, dtype=float)] if c_init is not None else [])
    for cand in cands:
        fc = prox_objective(quad, cand, c_old, delta)
        worse = fc < fb
        if np.any(worse):
            best = np.where(worse[:, None, None], cand, best)
            fb = np.minimum(fb, fc)
    return best


def plastic_quadratic(op: SliceOperator, law: PlasticLaw, K):
    """Per-slice quadratic of the plastic block (energy density divided by dx).

    Slice energy: ``K.C.K - 2 K.p(c) + (z, z + chi_z)_Q + rho |z|^2``.
    """
    w = op.weights
    rho = law.rho
    lead = (np.asarray(K).shape[0],)

    def apply(c):
        return 2.0 * op.residual_apply(c) + 2.0 * rho * w[None, :, None] * c

    b = 2.0 * np.einsum("si,iqa->sqa", np.asarray(K, dtype=float), op.moment_matrix)
    dense = None
    if op._dense is not None:
        N = op._dense.shape[0]
        dense = 2.0 * op._dense + 2.0 * rho * np.diag(np.repeat(w, op.n_comp))
        assert dense.shape == (N, N)
    quad = SliceQuadratic(apply, b.reshape(lead + (op.n_quad, op.n_comp)), w, dense)
    return quad


# ---------------------------------------------------------------------------
# elastic block


@dataclass
class FrameObjective:
    """Energy of the frames for fixed plastic curvature ``k_plastic`` (per interval)."""

    nodes: np.ndarray
    gram: np.ndarray
    k_plastic: np.ndarray  # (n, 3)
    load_weights: np.ndarray  # (n+1, 3) vectors L_k
    const: float = 0.0  # everything independent of the frames

    @property
    def dx(self):
        return float(self.nodes[1] - self.nodes[0])

    def value(self, frames):
        K = curvature_field(frames, self.dx)
        d = K - self.k_plastic
        bend = self.dx * np.einsum("ji,ik,jk->", d, self.gram, d)
        return float(bend - np.einsum("ka,ka->", frames[:, :, 0], self.load_weights) + self.const)

    def value_and_grad(self, frames):
        dx = self.dx
        rel = np.swapaxes(frames[:-1], -1, -2) @ frames[1:]
        omega = so3_log_axial(rel)
        K = coeffs_from_axial(omega) / dx
        d = K - self.k_plastic
        Cd = d @ self.gram  # gram symmetric
        val = dx * np.einsum("ji,ji->", d, Cd)
        gK = 2.0 * dx * Cd
        gw = (2.0 / dx) * gK @ COEFF_TO_AXIAL  # dE/domega
        J = right_jacobian_inv(omega)
        grad = np.zeros((len(frames), 3))
        grad[1:] += np.einsum("jab,ja->jb", J, gw)
        grad[:-1] -= np.einsum("jab,jb->ja", J, gw)
        loc = np.einsum("kba,kb->ka", frames, self.load_weights)  # R^T L
        val -= np.einsum("ka,ka->", frames[:, :, 0], self.load_weights)
        grad -= np.cross(np.array([1.0, 0.0, 0.0]), loc)
        grad[0] = 0.0
        return float(val + self.const), grad


def _retract(frames, direction, eta):
    return frames @ so3_exp_axial(-eta * direction)


class _Preconditioner:
    """Inverse of ``Lap (x) B + shift`` with ``B`` the bending stiffness per unit angle."""

    def __init__(self, n_nodes, dx, gram, shift):
        M = COEFF_TO_AXIAL
        B = (8.0 / dx) * (M.T @ gram @ M)
        lam, V = np.linalg.eigh(0.5 * (B + B.T))
        self.V = V
        m = n_nodes - 1  # node 0 is clamped
        self.bands = []
        for lk in lam:
            ab = np.zeros((3, m))
            ab[1, :] = 2.0 * lk + shift
            ab[1, -1] = lk + shift
            ab[0, 1:] = -lk
            ab[2, :-1] = -lk
            self.bands.append(ab)

    def __call__(self, g):
        r = g[1:] @ self.V
        out = np.empty_like(r)
        for a, ab in enumerate(self.bands):
            out[:, a] = solve_banded((1, 1), ab, r[:, a])
        res = np.zeros_like(g)
        res[1:] = out @ self.V.T
        return res


@dataclass
class ElasticResult:
    frames: np.ndarray
    energy: float
    grad_norm: float
    iterations: int
    converged: bool


def elastic_step(objective: FrameObjective, frames0, tol=1e-8, max_iter=2000, max_fail=60, memory=8):
    """Minimise the frame energy on the product of rotation groups.

    Search directions are preconditioned limited-memory quasi-Newton
    directions in the body-frame tangent coordinates (the bending stiffness
    preconditioner seeds the inverse Hessian). Steps use the retraction
    ``R_k <- R_k exp(-eta d_k)`` with Armijo backtracking (c = 1e-4, halving).
    Stops when the largest per-node tangent gradient is below
    ``tol * (1 + |E|)``. The returned energy never exceeds the warm start's.
    """
    frames = np.array(frames0, dtype=float)
    n = len(frames)
    P = _Preconditioner(n, objective.dx, objective.gram, 1e-8)
    E, g = objective.value_and_grad(frames)
    hist = []
    it = 0
    gnorm = float(np.linalg.norm(g, axis=1).max())
    while it < max_iter:
        gnorm = float(np.linalg.norm(g, axis=1).max())
        if gnorm <= tol * (1.0 + abs(E)):
            return ElasticResult(frames, E, gnorm, it, True)
        d = _two_loop(g, hist, P)
        slope = float(np.sum(g * d))
        if not slope > 0:  # lost descent; restart from the preconditioned gradient
            hist.clear()
            d = P(g)
            slope = float(np.sum(g * d))
        eta, fails, accepted = 1.0, 0, False
        while fails < max_fail:
            try:
                trial = _retract(frames, d, eta)
                Et, gt = objective.value_and_grad(trial)
            except PlasticRodError:  # log branch cut: step too long
                Et = np.inf
            if Et <= E - 1e-4 * eta * slope:
                accepted = True
                break
            eta *= 0.5
            fails += 1
        if not accepted:
            if hist:
                hist.clear()
                continue
            raise StagnationError(
                f"elastic line search failed {max_fail} times (|grad| = {gnorm:.3e})",
                best=ElasticResult(frames, E, gnorm, it, False),
            )
        s_vec = -eta * d
        y_vec = gt - g
        sy = float(np.sum(s_vec * y_vec))
        if sy > 1e-12 * np.sqrt(np.sum(s_vec**2) * np.sum(y_vec**2)):
            hist.append((s_vec, y_vec, 1.0 / sy))
            if len(hist) > memory:
                hist.pop(0)
        frames, E, g = trial, Et, gt
        it += 1
    return ElasticResult(frames, E, gnorm, it, False)


def _two_loop(g, hist, P):
    q = g.copy()
    alphas = []
    for s_vec, y_vec, r in reversed(hist):
        a = r * np.sum(s_vec * q)
        alphas.append(a)
        q -= a * y_vec
    d = P(q)
    for (s_vec, y_vec, r), a in zip(hist, reversed(alphas)):
        b = r * np.sum(y_vec * d)
        d += (a - b) * s_vec
    d[0] = 0.0
    return d


# ---------------------------------------------------------------------------
# incremental problem


@dataclass(eq=False)
class IncrementalProblem:
    times: np.ndarray
    initial: RodState
    model: CrossSectionModel
    law: PlasticLaw
    load: LoadProfile
    slack: float = 0.0
    components: tuple | None = None  # restrict plastic flow to these DevSym3 components
    max_sweeps: int = 200
    sweep_tol: float = 1e-10
    elastic_tol: float = 1e-8
    operator: SliceOperator | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.ndim != 1 or len(self.times) < 1 or np.any(np.diff(self.times) <= 0):
            raise InvalidInput("time partition must be strictly increasing")
        if self.initial.n_quad != self.model.n_quad:
            raise InvalidInput("initial plastic field does not match the section quadrature")
        if self.operator is None:
            self.operator = SliceOperator(self.model, self.components)


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    diss_increments: list = field(default_factory=list)
    objectives: list = field(default_factory=list)  # E(t_i, q_i) + D(z_{i-1}, z_i)
    stay_put: list = field(default_factory=list)  # E(t_i, q_{i-1})
    sweeps: list = field(default_factory=list)
    stability_margins: list = field(default_factory=list)
    balance_residuals: list = field(default_factory=list)

    @property
    def cumulative_dissipation(self):
        return np.cumsum(self.diss_increments)

    def plastic_norms(self, weights):
        return [float(np.sqrt(np.sum(weights[..., None] * s.plastic**2))) for s in self.states]

    def trajectory_rows(self):
        rows = []
        for t, s, e, d in zip(self.times, self.states, self.energies, self.diss_increments):
            r = e.as_dict()
            r.update(t=t, diss_increment=d, tip_x=s.tip[0], tip_y=s.tip[1], tip_z=s.tip[2])
            rows.append(r)
        return rows

    def certification_rows(self):
        n = len(self.times)
        sm = self.stability_margins or [float("nan")] * n
        br = self.balance_residuals or [float("nan")] * n
        return [
            {"t": t, "stability_margin": a, "balance_residual": b}
            for t, a, b in zip(self.times, sm, br)
        ]


CERTIFICATION_COLUMNS = ("t", "stability_margin", "balance_residual")


def certification_csv(rows):
    return csv_text(CERTIFICATION_COLUMNS, rows)


def _frame_objective(problem: IncrementalProblem, t, state: RodState, c):
    op = problem.operator
    lv = problem.load.values(t, state.nodes)
    w = trapezoid_weights(state.nodes)
    const = -float(np.einsum("k,ka->a", w, lv) @ state.positions[0])
    return FrameObjective(
        state.nodes, problem.model.gram, op.k_eff(c), frame_load_weights(state.nodes, lv), const
    )


def _plastic_step(problem, state, c, c_old):
    op = problem.operator
    K = curvature_field(state)
    quad = plastic_quadratic(op, problem.law, K)
    return plastic_prox(quad, c_old, problem.law.delta, c_init=c)


def _energy(problem, t, state):
    return energy_e0(t, state, problem.model, problem.law, problem.load, problem.operator)


def incremental_objective(problem, t, state, z_old):
    E = _energy(problem, t, state)
    D = dissipation_d0(z_old, state.plastic, problem.law.delta, cell_weights(state, problem.model))
    return E, D


def solve_step(problem: IncrementalProblem, t, prev: RodState):
    """One incremental minimisation from the warm start ``prev``."""
    op = problem.operator
    c_old = op.restrict(prev.plastic)
    c = c_old.copy()
    state = prev
    E_stay = _energy(problem, t, prev).total
    last = E_stay
    sweeps = 0
    for sweeps in range(1, problem.max_sweeps + 1):
        obj = _frame_objective(problem, t, state, c)
        res = elastic_step(obj, state.frames, tol=problem.elastic_tol)
        state = state.with_frames(res.frames)
        c = _plastic_step(problem, state, c, c_old)
        state = state.with_plastic(op.embed(c))
        E, D = incremental_objective(problem, t, state, prev.plastic)
        cur = E.total + D
        if last - cur < problem.sweep_tol * (1.0 + abs(cur)):
            break
        last = cur
    # final polish of the frames for the converged plastic field
    obj = _frame_objective(problem, t, state, c)
    res = elastic_step(obj, state.frames, tol=problem.elastic_tol)
    state = state.with_frames(res.frames)
    E, D = incremental_objective(problem, t, state, prev.plastic)
    if E.total + D > E_stay:  # stay-put is admissible and better
        state = prev
        E, D = _energy(problem, t, prev), 0.0
    return state, E, D, E_stay, sweeps


def incremental_solve(problem: IncrementalProblem, progress=None) -> Trajectory:
    """Time-incremental scheme over the partition; node 0 is the initial state
    with its frames relaxed elastically at ``t_0``."""
    traj = Trajectory()
    state = problem.initial
    for i, t in enumerate(problem.times):
        try:
            state, E, D, E_stay, sweeps = solve_step(problem, t, state)
        except StagnationError as exc:
            exc.partial = traj
            raise
        traj.times.append(float(t))
        traj.states.append(state)
        traj.energies.append(E)
        traj.diss_increments.append(float(D))
        traj.objectives.append(E.total + D)
        traj.stay_put.append(E_stay)
        traj.sweeps.append(sweeps)
        if progress is not None:
            progress(i, t, E, D)
    return traj


# ---------------------------------------------------------------------------
# certificates


def _random_dev_field(rng, shape, weights, components):
    xi = np.zeros(shape + (5,))
    xi[..., list(components)] = rng.normal(size=shape + (len(components),))
    nrm = np.sqrt(np.sum(weights[..., None] * xi**2))
    return xi / nrm


def stability_check(problem: IncrementalProblem, t, state: RodState, n_competitors=8, amplitude=1e-3,
                    rng=None, include_gradient=True):
    """Sampled global-stability margin ``min E(t, q_hat) + D(z, z_hat) - E(t, q)``.

    Competitors perturb ``z`` by ``amplitude`` (in ``L^2(Omega)``) along random
    deviatoric directions and, optionally, along the steepest-descent direction
    of the energy in ``z``; frames are re-optimised for each competitor.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    op = problem.operator
    weights = cell_weights(state, problem.model)
    base = _energy(problem, t, state).total
    comps = op.components
    directions = [_random_dev_field(rng, state.plastic.shape[:2], weights, comps) for _ in range(n_competitors)]
    if include_gradient:
        K = curvature_field(state)
        quad = plastic_quadratic(op, problem.law, K)
        g = op.embed(quad.gradient(op.restrict(state.plastic)))
        g = -g / op.weights[None, :, None]
        nrm = np.sqrt(np.sum(weights[..., None] * g**2))
        if nrm > 0:
            directions.append(g / nrm)
    margin = np.inf
    for xi in directions:
        z_hat = state.plastic + amplitude * xi
        cand = state.with_plastic(z_hat)
        obj = _frame_objective(problem, t, cand, op.restrict(z_hat))
        res = elastic_step(obj, cand.frames, tol=problem.elastic_tol)
        cand = cand.with_frames(res.frames)
        E = _energy(problem, t, cand).total
        D = dissipation_d0(state.plastic, z_hat, problem.law.delta, weights)
        margin = min(margin, E + D - base)
    return float(margin) if np.isfinite(margin) else 0.0


def power(load: LoadProfile, t, state: RodState):
    """``d/dt E(t, q)`` at fixed state: ``-int dl/dt . v`` (trapezoid in x)."""
    w = trapezoid_weights(state.nodes)
    return -float(np.einsum("k,ka,ka->", w, load.time_derivative(t, state.nodes), state.positions))


def energy_balance_check(traj: Trajectory, load: LoadProfile):
    """Residual ``E(t_i) + Diss[0, t_i] - E(t_0) - int_{t_0}^{t_i} dE/ds ds``.

    The power integral uses the trapezoid rule on the partition nodes.
    """
    E = np.array([e.total for e in traj.energies])
    diss = traj.cumulative_dissipation - traj.diss_increments[0]
    P = np.array([power(load, t, s) for t, s in zip(traj.times, traj.states)])
    dt = np.diff(traj.times)
    work = np.concatenate([[0.0], np.cumsum(0.5 * dt * (P[1:] + P[:-1]))])
    res = E + diss - E[0] - work
    traj.balance_residuals = [float(r) for r in res]
    return res
