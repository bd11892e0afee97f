"""Discrete rod states and the limiting energy / dissipation.

A rod on ``[0, length]`` is discretised by ``n`` equal intervals. Frames live
on the ``n + 1`` nodes; positions are derived from them by the midpoint rule
``v_{j+1} - v_j = dx/2 (R_j + R_{j+1}) e1``; the plastic strain is constant
on each (interval, section quadrature point) cell and is stored by its five
DevSym3 coefficients.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .algebra import DEV_BASIS, coeffs_from_axial, dev_from_coeffs, so3_log_axial, sym
from .cross_section import CrossSectionModel
from .errors import InvalidInput
from .io_utils import csv_text, dumps_json

SCHEMA_VERSION = "rod-v1"
TRAJECTORY_COLUMNS = (
    "t",
    "total",
    "bending_torsion",
    "residual",
    "hardening",
    "load",
    "diss_increment",
    "tip_x",
    "tip_y",
    "tip_z",
)




# ---------------------------------------------------------------------------
# state


def integrate_positions(frames, dx, origin=None):
    """Midpoint rule for ``v' = R e1`` starting at ``origin``."""
    frames = np.asarray(frames, dtype=float)
    t = frames[:, :, 0]
    steps = 0.5 * dx * (t[:-1] + t[1:])
    v = np.zeros((len(frames), 3))
    v[1:] = np.cumsum(steps, axis=0)
    if origin is not None:
        v += np.asarray(origin, dtype=float)
    return v


@dataclass(frozen=True, eq=False)
class RodState:
    nodes: np.ndarray  # (n+1,)
    frames: np.ndarray  # (n+1, 3, 3)
    positions: np.ndarray  # (n+1, 3)
    plastic: np.ndarray  # (n, nq, 5) DevSym3 coefficients

    def __post_init__(self):
        for name in ("nodes", "frames", "positions", "plastic"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float))
        n1 = len(self.nodes)
        if self.frames.shape != (n1, 3, 3) or self.positions.shape != (n1, 3):
            raise InvalidInput("frames/positions do not match the node grid")
        if self.plastic.ndim != 3 or self.plastic.shape[0] != n1 - 1 or self.plastic.shape[2] != 5:
            raise InvalidInput("plastic field must have shape (n_intervals, n_quad, 5)")
        d = np.diff(self.nodes)
        if np.any(d <= 0) or np.ptp(d) > 1e-12 * max(d.max(), 1.0):
            raise InvalidInput("nodes must be an increasing uniform grid")

    @classmethod
    def from_frames(cls, nodes, frames, plastic, origin=None):
        nodes = np.asarray(nodes, dtype=float)
        dx = nodes[1] - nodes[0]
        return cls(nodes, frames, integrate_positions(frames, dx, origin), plastic)

    @classmethod
    def straight(cls, n_intervals: int, n_quad: int, length: float = 1.0):
        nodes = np.linspace(0.0, length, n_intervals + 1)
        frames = np.broadcast_to(np.eye(3), (n_intervals + 1, 3, 3)).copy()
        return cls.from_frames(nodes, frames, np.zeros((n_intervals, n_quad, 5)))

    @property
    def n_intervals(self):
        return len(self.nodes) - 1

    @property
    def dx(self):
        return float(self.nodes[1] - self.nodes[0])

    @property
    def n_quad(self):
        return self.plastic.shape[1]

    @property
    def tip(self):
        return self.positions[-1]

    def plastic_matrices(self):
        return dev_from_coeffs(self.plastic)

    def with_frames(self, frames):
        return RodState.from_frames(self.nodes, frames, self.plastic, self.positions[0])

    def with_plastic(self, plastic):
        return replace(self, plastic=np.array(plastic, dtype=float))

    def orthogonality_error(self):
        F = self.frames
        e = np.abs(np.swapaxes(F, -1, -2) @ F - np.eye(3)).max()
        return float(max(e, np.abs(np.linalg.det(F) - 1.0).max()))

    def compatibility_error(self):
        ref = integrate_positions(self.frames, self.dx, self.positions[0])
        return float(np.abs(ref - self.positions).max())

    # -- serialisation --------------------------------------------------------
    def to_dict(self):
        return {
            "schema": SCHEMA_VERSION,
            "nodes": self.nodes.tolist(),
            "frames": self.frames.reshape(-1, 9).tolist(),
            "positions": self.positions.tolist(),
            "plastic": self.plastic.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("schema") != SCHEMA_VERSION:
            raise InvalidInput(f"unsupported rod schema {doc.get('schema')!r}")
        frames = np.asarray(doc["frames"], dtype=float).reshape(-1, 3, 3)
        return cls(doc["nodes"], frames, doc["positions"], doc["plastic"])

    def dumps(self):
        return dumps_json(self.to_dict())

    @classmethod
    def loads(cls, text):
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# material and load


@dataclass(frozen=True)
class PlasticLaw:
    """``Q_pl(z) = rho |z|^2`` and dissipation ``delta |dz|``."""

    rho: float
    delta: float

    def __post_init__(self):
        if not self.rho > 0:
            raise InvalidInput("hardening modulus rho must be positive")
        if not self.delta >= 0:
            raise InvalidInput("dissipation strength delta must be non-negative")


def _zero_rate(t):
    return 0.0


@dataclass(frozen=True, eq=False)
class LoadProfile:
    """Separable line load ``l(t, x) = beta(t) g(x)``.

    ``shape`` maps an array of positions ``x`` to ``(len(x), 3)`` force
    densities. ``rate`` is ``beta'``; when omitted a central difference is used.
    """

    shape: Callable[[np.ndarray], np.ndarray]
    beta: Callable[[float], float]
    rate: Callable[[float], float] | None = None
    fd_step: float = 1e-6

    def values(self, t, x):
        return float(self.beta(t)) * np.asarray(self.shape(np.asarray(x, dtype=float)), dtype=float)

    def beta_dot(self, t):
        if self.rate is not None:
            return float(self.rate(t))
        h = self.fd_step
        return (float(self.beta(t + h)) - float(self.beta(max(t - h, 0.0)))) / (t + h - max(t - h, 0.0))

    def time_derivative(self, t, x):
        return self.beta_dot(t) * np.asarray(self.shape(np.asarray(x, dtype=float)), dtype=float)

    @classmethod
    def zero(cls):
        return cls(lambda x: np.zeros((len(x), 3)), lambda t: 0.0, _zero_rate)

    @classmethod
    def vertical(cls, beta, f, rate=None):
        """``l = -beta(t) f(x) e2`` (downward distributed force)."""

        def shape(x):
            out = np.zeros((len(x), 3))
            out[:, 1] = -np.asarray(f(x), dtype=float)
            return out

        return cls(shape, beta, rate)


def trapezoid_weights(nodes):
    nodes = np.asarray(nodes, dtype=float)
    w = np.zeros(len(nodes))
    d = np.diff(nodes)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


def load_work(state: RodState, load_values):
    """Trapezoid approximation of ``int l . v``."""
    w = trapezoid_weights(state.nodes)
    return float(np.einsum("k,ka,ka->", w, load_values, state.positions))


def frame_load_weights(nodes, load_values):
    """Vectors ``L_k`` with ``int l.v = v_0 . sum(w l) + sum_k (R_k e1) . L_k``."""
    w = trapezoid_weights(nodes)
    dx = nodes[1] - nodes[0]
    wl = w[:, None] * load_values
    tail = np.cumsum(wl[::-1], axis=0)[::-1]  # tail[j] = sum_{k >= j}
    lam = np.zeros_like(wl)  # lam[j] = sum_{k > j}, for interval j
    lam[:-1] = tail[1:]
    L = np.zeros_like(wl)
    L[:-1] += 0.5 * dx * lam[:-1]
    L[1:] += 0.5 * dx * lam[:-1]
    return L


# ---------------------------------------------------------------------------
# curvature


def curvature_field(state_or_frames, dx=None):
    """Skew coefficients of ``log(R_j^T R_{j+1}) / dx`` per interval."""
    if isinstance(state_or_frames, RodState):
        frames, dx = state_or_frames.frames, state_or_frames.dx
    else:
        frames = np.asarray(state_or_frames, dtype=float)
    rel = np.swapaxes(frames[:-1], -1, -2) @ frames[1:]
    omega = so3_log_axial(rel)
    return coeffs_from_axial(omega) / dx


# ---------------------------------------------------------------------------
# slice operator


class SliceOperator:
    """Linear algebra of one section slice in DevSym3 coefficients.

    For coefficients ``c`` of shape ``(..., nq, 5)`` (or a subset of the five
    components, see ``components``) it provides

    * ``moments(c)``: ``p_i = (z, Psi_i)_Q`` so that ``K_eff = C^{-1} p``;
    * ``residual_form(c)``: ``(z, z + chi_z)_Q`` where ``chi_z`` is the
      relaxation of ``z`` (``|z + chi_z|^2 = |z_res|^2 + p.C^{-1}p``);
    * gradients of both.

    The relaxation solve is linear; for small sections it is tabulated once as
    a dense matrix, otherwise applied through the factorised corrector system.
    """

    def __init__(self, model: CrossSectionModel, components=None, dense_limit=6000):
        self.model = model
        self.components = tuple(range(5)) if components is None else tuple(components)
        self.basis = DEV_BASIS[list(self.components)]  # (m, 3, 3)
        m = len(self.components)
        nq = model.n_quad
        self.n_quad, self.n_comp = nq, m
        w = model.mesh.quad_weights
        self.weights = w
        Cm = model.tensor.matrix
        Cb = (self.basis.reshape(m, 9) @ Cm).reshape(m, 3, 3)  # C E_a
        self._cbasis = Cb
        # p_i = sum_q w_q E_a : C psi_i(q) c_qa
        self.moment_matrix = np.einsum("q,aij,kqij->kqa", w, Cb, model.psi)  # (3, nq, m)
        # local metric of (z, z)_Q in coefficients: M_ab = E_a : C E_b
        self.local_metric = np.einsum("aij,bij->ab", Cb, self.basis)
        self._dense = None
        if nq * m <= dense_limit:
            self._dense = self._tabulate()

    # -- helpers --------------------------------------------------------------
    def to_matrices(self, c):
        return np.einsum("...a,aij->...ij", c, self.basis)

    def embed(self, c):
        """Full five-component coefficients from the operator's subset."""
        c = np.asarray(c, dtype=float)
        out = np.zeros(c.shape[:-1] + (5,))
        out[..., list(self.components)] = c
        return out

    def restrict(self, c_full):
        return np.asarray(c_full, dtype=float)[..., list(self.components)]

    def _relaxed_coeff_grad(self, c):
        """``w_q E_a : C (z + chi_z)`` per sample, shape of ``c``."""
        lead = c.shape[:-2]
        flat = c.reshape((-1, self.n_quad, self.n_comp))
        z = self.to_matrices(flat)
        chi = self.model.relaxation(z)
        g = np.einsum("sqij,aij->sqa", z + chi, self._cbasis) * self.weights[None, :, None]
        return g.reshape(lead + (self.n_quad, self.n_comp))

    def _tabulate(self):
        N = self.n_quad * self.n_comp
        eye = np.eye(N).reshape(N, self.n_quad, self.n_comp)
        cols = []
        for start in range(0, N, 512):
            cols.append(self._relaxed_coeff_grad(eye[start : start + 512]).reshape(-1, N))
        A = np.vstack(cols)
        return 0.5 * (A + A.T)

    # -- public ---------------------------------------------------------------
    def moments(self, c):
        return np.einsum("kqa,...qa->...k", self.moment_matrix, c)

    def k_eff(self, c):
        return self.moments(c) @ self.model.gram_inverse.T

    def residual_apply(self, c):
        """Half-gradient of ``(z, z + chi_z)_Q``: a symmetric PSD operator."""
        c = np.asarray(c, dtype=float)
        if self._dense is not None:
            flat = c.reshape(c.shape[:-2] + (-1,))
            return (flat @ self._dense).reshape(c.shape)
        return self._relaxed_coeff_grad(c)

    def residual_form(self, c):
        c = np.asarray(c, dtype=float)
        return np.einsum("...qa,...qa->...", c, self.residual_apply(c))

    def plastic_norm2(self, c):
        """``int_S |z|^2`` (Frobenius, basis orthonormal)."""
        return np.einsum("q,...qa,...qa->...", self.weights, c, c)

    def slice_energies(self, K, c):
        """Per-slice (bending_torsion, residual, |z|^2) densities."""
        p = self.moments(c)
        keff = p @ self.model.gram_inverse.T
        bend = self.model.q_eff(K - keff)
        res = self.residual_form(c) - np.einsum("...i,...i->...", p, keff)
        return bend, np.maximum(res, 0.0), self.plastic_norm2(c)


# ---------------------------------------------------------------------------
# energy and dissipation


@dataclass(frozen=True)
class EnergyBreakdown:
    bending_torsion: float
    residual: float
    hardening: float
    load: float
    total: float = field(default=float("nan"))

    def __post_init__(self):
        object.__setattr__(
            self, "total", self.bending_torsion + self.residual + self.hardening - self.load
        )

    def as_dict(self):
        return {
            "total": self.total,
            "bending_torsion": self.bending_torsion,
            "residual": self.residual,
            "hardening": self.hardening,
            "load": self.load,
        }


def _check_grids(state: RodState, model: CrossSectionModel):
    if state.n_quad != model.n_quad:
        raise InvalidInput(
            f"plastic field has {state.n_quad} section samples, model has {model.n_quad}"
        )


def energy_e0(t, state: RodState, model: CrossSectionModel, law: PlasticLaw, load: LoadProfile,
              operator: SliceOperator | None = None) -> EnergyBreakdown:
    """Limiting energy of a discrete rod state."""
    _check_grids(state, model)
    op = operator if operator is not None else SliceOperator(model)
    if op.components != tuple(range(5)):
        c = op.restrict(state.plastic)
        if np.abs(state.plastic - op.embed(c)).max() > 0:
            op = SliceOperator(model)
            c = state.plastic
    else:
        c = state.plastic
    K = curvature_field(state)
    bend, res, zz = op.slice_energies(K, c)
    dx = state.dx
    lv = load.values(t, state.nodes)
    return EnergyBreakdown(
        bending_torsion=float(dx * bend.sum()),
        residual=float(dx * res.sum()),
        hardening=float(dx * law.rho * zz.sum()),
        load=load_work(state, lv),
    )


def cell_weights(state: RodState, model: CrossSectionModel):
    """Volume weight of every (interval, section sample) cell."""
    return state.dx * np.broadcast_to(model.mesh.quad_weights, (state.n_intervals, model.n_quad))


def dissipation_d0(z, z_hat, delta, weights, tol=1e-12):
    """``delta * int |z_hat - z|``; ``inf`` unless the increment is deviatoric symmetric.

    ``z`` and ``z_hat`` are either DevSym3 coefficient arrays ``(..., 5)``
    (always admissible) or matrix fields ``(..., 3, 3)``.
    """
    z = np.asarray(z, dtype=float)
    z_hat = np.asarray(z_hat, dtype=float)
    if z.shape != z_hat.shape:
        raise InvalidInput("plastic fields live on different grids")
    d = z_hat - z
    if d.shape[-2:] == (3, 3):
        scale = max(np.abs(z).max(initial=0.0), np.abs(z_hat).max(initial=0.0), 1.0)
        asym = np.abs(d - np.swapaxes(d, -1, -2)).max(initial=0.0)
        trace = np.abs(np.trace(d, axis1=-2, axis2=-1)).max(initial=0.0)
        if asym > tol * scale or trace > tol * scale:
            return float("inf")
        mag = np.linalg.norm(sym(d), axis=(-2, -1))
    elif d.shape[-1] == 5:
        mag = np.linalg.norm(d, axis=-1)
    else:
        raise InvalidInput("plastic field must end in (3, 3) or (5,)")
    return float(delta * np.sum(np.asarray(weights) * mag))


# ---------------------------------------------------------------------------
# csv


def trajectory_csv(rows):
    """Rows are dicts with the TRAJECTORY_COLUMNS keys."""
    return csv_text(TRAJECTORY_COLUMNS, rows)
