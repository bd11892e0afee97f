"""Scaled three-dimensional energies on Cosserat-type fields.

The rod domain ``Omega = (0, length) x S`` with ``S`` the unit-area disc is
sampled on a tensor grid: uniform nodes in ``x1`` (trapezoid weights),
Gauss-Legendre nodes in the section radius (weight ``r dr``) and uniform
periodic nodes in the section angle. Derivatives of sampled fields use
second-order finite differences in ``x1`` and ``r``, the spectral derivative
in the angle, and the chain rule to ``(d2, d3)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .algebra import expm_sym, frobenius, hat, logm_near_identity, polar_decompose, skew_from_coeffs
from .cross_section import DISC_RADIUS
from .errors import DegenerateDeformation, InvalidInput

INFINITE_ENERGY = float("inf")


# ---------------------------------------------------------------------------
# material


@dataclass(frozen=True)
class MaterialLaw3D:
    """``W_el(F) = mu/4 |F^T F - I|^2`` (``det F > 0``), ``W_pl(P) = rho |P - I|^2`` on
    ``K_pl = {P in SL(3): |log P| <= r}``, strain-gradient densities ``|.|^p``."""

    mu: float = 4.0 * np.pi
    rho: float = 4.0 * np.pi
    delta: float = 1.0
    r: float = 0.5
    p: float = 4.0
    alpha_C: float = 0.4
    alpha_R: float = 0.3
    scaled_gradient: bool = False

    def __post_init__(self):
        problems = self.violations()
        if problems:
            raise InvalidInput("; ".join(problems))

    def violations(self):
        out = []
        if not self.mu > 0:
            out.append("mu must be positive")
        if not self.rho > 0:
            out.append("rho must be positive")
        if not self.delta >= 0:
            out.append("delta must be non-negative")
        if not 0 < self.r < 1:
            out.append("plastic log-ball radius r must lie in (0, 1)")
        if not self.p > 3:
            out.append("strain-gradient exponent p must exceed 3")
        if not (0 < self.alpha_C < 1 and 0 < self.alpha_R < 1):
            out.append("alpha_C and alpha_R must lie in (0, 1)")
        elif not self.alpha_R < (2.0 / 3.0) * (1.0 - self.alpha_C):
            out.append(
                f"scalings need alpha_R < (2/3)(1 - alpha_C) = {(2.0 / 3.0) * (1.0 - self.alpha_C):.6g}"
            )
        return out

    def w_el(self, F):
        F = np.asarray(F, dtype=float)
        C = np.swapaxes(F, -1, -2) @ F
        val = 0.25 * self.mu * np.sum((C - np.eye(3)) ** 2, axis=(-2, -1))
        return np.where(np.linalg.det(F) > 0, val, np.inf)

    def q_el(self, G):
        """Quadratic form of ``W_el`` at the identity: ``mu |sym G|^2``."""
        G = np.asarray(G, dtype=float)
        S = 0.5 * (G + np.swapaxes(G, -1, -2))
        return self.mu * np.sum(S * S, axis=(-2, -1))

    def in_k_pl(self, P, det_tol=1e-10):
        """Membership of ``K_pl`` (boolean per sample)."""
        P = np.asarray(P, dtype=float)
        eye = np.eye(3)
        near = frobenius(P - eye) < 1.0
        ok = near & (np.abs(np.linalg.det(P) - 1.0) <= det_tol)
        out = np.zeros(P.shape[:-2], dtype=bool)
        if np.any(ok):
            L = logm_near_identity(P[ok])
            out[ok] = frobenius(L) <= self.r
        return out

    def w_pl(self, P):
        P = np.asarray(P, dtype=float)
        val = self.rho * np.sum((P - np.eye(3)) ** 2, axis=(-2, -1))
        return np.where(self.in_k_pl(P), val, np.inf)

    def h_grad(self, G):
        """``|G|^p`` for third-order gradients ``(..., 3, 3, 3)``."""
        return np.sum(np.asarray(G) ** 2, axis=(-3, -2, -1)) ** (0.5 * self.p)

    def to_dict(self):
        return {
            "mu": self.mu,
            "rho": self.rho,
            "delta": self.delta,
            "r": self.r,
            "p": self.p,
            "alpha_C": self.alpha_C,
            "alpha_R": self.alpha_R,
            "scaled_gradient": self.scaled_gradient,
        }


# ---------------------------------------------------------------------------
# grid


@dataclass(frozen=True, eq=False)
class RodGrid:
    n1: int = 64
    n_r: int = 16
    n_theta: int = 16
    length: float = 1.0
    radius: float = DISC_RADIUS

    def __post_init__(self):
        if self.n1 < 3 or self.n_r < 3 or self.n_theta < 4:
            raise InvalidInput("grid too small for second-order differences")

    @property
    def x1(self):
        return np.linspace(0.0, self.length, self.n1)

    @property
    def radii(self):
        t, _ = np.polynomial.legendre.leggauss(self.n_r)
        return 0.5 * self.radius * (t + 1.0)

    @property
    def angles(self):
        return 2.0 * np.pi * np.arange(self.n_theta) / self.n_theta

    def weights(self):
        """Quadrature weights ``(n1, n_r, n_theta)`` summing to ``|Omega|``."""
        x = self.x1
        w1 = np.zeros(self.n1)
        d = np.diff(x)
        w1[:-1] += 0.5 * d
        w1[1:] += 0.5 * d
        _, wr = np.polynomial.legendre.leggauss(self.n_r)
        wr = 0.5 * self.radius * wr * self.radii
        wt = np.full(self.n_theta, 2.0 * np.pi / self.n_theta)
        return w1[:, None, None] * wr[None, :, None] * wt[None, None, :]

    def section_points(self):
        """``(n_r, n_theta, 2)`` Cartesian coordinates ``(x2, x3)``."""
        r, t = np.meshgrid(self.radii, self.angles, indexing="ij")
        return np.stack([r * np.cos(t), r * np.sin(t)], axis=-1)

    def gradient(self, f):
        """Unscaled ``(d1, d2, d3)`` of ``f`` sampled on the grid; the
        derivative axis is appended last."""
        f = np.asarray(f, dtype=float)
        extra = f.ndim - 3
        d1 = np.gradient(f, self.x1, axis=0, edge_order=2)
        dr = np.gradient(f, self.radii, axis=1, edge_order=2)
        # spectral in the periodic angle; the Nyquist mode is dropped
        k = np.fft.fftfreq(self.n_theta, 1.0 / self.n_theta)
        if self.n_theta % 2 == 0:
            k[self.n_theta // 2] = 0.0
        k = k.reshape((1, 1, -1) + (1,) * extra)
        dt = np.real(np.fft.ifft(1j * k * np.fft.fft(f, axis=2), axis=2))
        r = self.radii[None, :, None]
        th = self.angles[None, None, :]
        c, s = np.cos(th), np.sin(th)
        shape = r.shape + (1,) * extra
        c, s, r = c.reshape(c.shape + (1,) * extra), s.reshape(s.shape + (1,) * extra), r.reshape(shape)
        d2 = c * dr - s / r * dt
        d3 = s * dr + c / r * dt
        return np.stack([d1, d2, d3], axis=-1)


# ---------------------------------------------------------------------------
# fields


@dataclass(eq=False)
class ScaledField3D:
    h: float
    grid: RodGrid
    y: np.ndarray  # (n1, n_r, n_t, 3)
    grad_h: np.ndarray  # (n1, n_r, n_t, 3, 3) scaled gradient (d1 | h^{-1} grad-bar)
    z: np.ndarray  # (n1, n_r, n_t, 3, 3) plastic strain z^h

    def __post_init__(self):
        if np.any(np.linalg.det(self.grad_h) <= 0):
            raise DegenerateDeformation("det of the scaled gradient must be positive")

    def with_plastic(self, z):
        return ScaledField3D(self.h, self.grid, self.y, self.grad_h, np.asarray(z, dtype=float))

    def rotated(self, Q):
        Q = np.asarray(Q, dtype=float)
        return ScaledField3D(self.h, self.grid, self.y @ Q.T, Q @ self.grad_h, self.z)


def constant_curvature_rod(k, x1):
    """Frames ``R = exp(x1 K)`` and centreline ``v = int_0^x1 R e1`` in closed form."""
    K = skew_from_coeffs(np.asarray(k, dtype=float))
    w = np.array([K[2, 1], K[0, 2], K[1, 0]])
    th = np.linalg.norm(w)
    x1 = np.asarray(x1, dtype=float)
    A = hat(w)
    A2 = A @ A
    if th < 1e-12:
        R = np.broadcast_to(np.eye(3), x1.shape + (3, 3)).copy()
        Iint = x1[:, None, None] * np.eye(3)
    else:
        s, c = np.sin(th * x1), np.cos(th * x1)
        R = np.eye(3) + (s / th)[:, None, None] * A + ((1 - c) / th**2)[:, None, None] * A2
        Iint = (
            x1[:, None, None] * np.eye(3)
            + ((1 - c) / th**2)[:, None, None] * A
            + ((x1 - s / th) / th**2)[:, None, None] * A2
        )
    v = Iint[:, :, 0]
    return v, R, np.broadcast_to(K, R.shape).copy()


def build_cosserat(v, R, K, h, grid: RodGrid, z=None, check_tol=1e-12):
    """Cosserat ansatz ``y = v + h R xbar`` with analytic scaled gradient
    ``R + h R (K xbar | 0)``; ``K = R^T R'`` is given per ``x1`` node."""
    v, R, K = (np.asarray(a, dtype=float) for a in (v, R, K))
    pts = grid.section_points()
    xbar = np.zeros(pts.shape[:2] + (3,))
    xbar[..., 1:] = pts
    y = v[:, None, None, :] + h * np.einsum("iab,rtb->irta", R, xbar)
    G = np.zeros((grid.n1,) + pts.shape[:2] + (3, 3))
    G[..., 0] = np.einsum("iab,rtb->irta", K, xbar)
    grad = R[:, None, None] + h * np.einsum("iab,irtbc->irtac", R, G)
    if np.any(np.linalg.det(grad) <= 0):
        raise DegenerateDeformation("curvature too large for this thickness")
    # consistency of the right Cauchy-Green tensor with its closed form
    C_direct = np.swapaxes(grad, -1, -2) @ grad
    C_closed = np.eye(3) + 2 * h * 0.5 * (G + np.swapaxes(G, -1, -2)) + h * h * np.swapaxes(G, -1, -2) @ G
    if np.abs(C_direct - C_closed).max() > check_tol * max(1.0, np.abs(C_direct).max()):
        raise InvalidInput("frames are not orthonormal (Cauchy-Green mismatch)")
    if z is None:
        z = np.zeros_like(grad)
    return ScaledField3D(h, grid, y, grad, np.asarray(z, dtype=float))


def affine_section_field(grid: RodGrid, Z0=None, Z2=None, Z3=None):
    """``z(x) = Z0 + x2 Z2 + x3 Z3`` sampled on the grid (constant in ``x1``)."""
    pts = grid.section_points()
    out = np.zeros((grid.n1,) + pts.shape[:2] + (3, 3))
    for M, coord in ((Z0, None), (Z2, pts[..., 0]), (Z3, pts[..., 1])):
        if M is None:
            continue
        M = np.asarray(M, dtype=float)
        out += M if coord is None else coord[None, :, :, None, None] * M
    return out


# ---------------------------------------------------------------------------
# plastic recovery and dissipation


@dataclass(eq=False)
class RecoveredPlastic:
    z: np.ndarray  # base field z^h
    z_hat: np.ndarray  # recovered field
    z_tilde: np.ndarray  # increment along the exponential path
    mask: np.ndarray  # U^h
    h: float


def _exp(h, zt):
    """``exp(h zt)`` for symmetric increments (eigen route), general otherwise."""
    zt = np.asarray(zt, dtype=float)
    if np.abs(zt - np.swapaxes(zt, -1, -2)).max(initial=0.0) <= 1e-14 * max(1.0, np.abs(zt).max(initial=0.0)):
        return expm_sym(h * zt)
    from scipy.linalg import expm

    flat = (h * zt).reshape(-1, 3, 3)
    return np.array([expm(m) for m in flat]).reshape(zt.shape)


def recovery_plastic(z, z_tilde, h, law: MaterialLaw3D) -> RecoveredPlastic:
    """``z_hat = h^{-1}(exp(h zt)(I + h z) - I)`` on ``U = {that factor in K_pl}``, ``z`` elsewhere."""
    z = np.asarray(z, dtype=float)
    zt = np.broadcast_to(np.asarray(z_tilde, dtype=float), z.shape)
    P = _exp(h, zt) @ (np.eye(3) + h * z)
    mask = law.in_k_pl(P)
    z_hat = np.where(mask[..., None, None], (P - np.eye(3)) / h, z)
    return RecoveredPlastic(z, z_hat, np.array(zt), mask, float(h))


def plastic_field_from_limit(z_limit, h):
    """``z^h = h^{-1}(exp(h z) - I)``: plastic factor ``exp(h z)`` exactly."""
    return (_exp(h, z_limit) - np.eye(3)) / h


def dissipation_3d(rec: RecoveredPlastic, delta, weights):
    """``delta int_U |z_tilde|``: exact dissipation along the exponential path."""
    if not isinstance(rec, RecoveredPlastic):
        raise InvalidInput("dissipation_3d needs the output of recovery_plastic (common path)")
    P = _exp(rec.h, rec.z_tilde) @ (np.eye(3) + rec.h * rec.z)
    expect = np.where(rec.mask[..., None, None], (P - np.eye(3)) / rec.h, rec.z)
    if np.abs(expect - rec.z_hat).max(initial=0.0) > 1e-9 * max(1.0, np.abs(rec.z_hat).max(initial=0.0)):
        raise InvalidInput("plastic pair was not generated from a common exponential path")
    mag = frobenius(rec.z_tilde)
    return float(delta * np.sum(weights * np.where(rec.mask, mag, 0.0)))


# ---------------------------------------------------------------------------
# energies


@dataclass
class EnergyTerms3D:
    w_el: float
    h_c: float
    h_r: float
    w_pl: float

    @property
    def total(self):
        return self.w_el + self.h_c + self.h_r + self.w_pl


def energy_3d(field: ScaledField3D, law: MaterialLaw3D) -> EnergyTerms3D:
    h = field.h
    grid = field.grid
    w = grid.weights()
    F = field.grad_h
    P = np.eye(3) + h * field.z
    if np.any(np.linalg.det(P) <= 0):
        raise DegenerateDeformation("plastic factor has non-positive determinant")
    Fel = F @ np.linalg.inv(P)
    wel = law.w_el(Fel)
    if np.any(~np.isfinite(wel)):
        raise DegenerateDeformation("elastic factor has non-positive determinant")
    R, U = polar_decompose(F)
    dU = grid.gradient(U)  # (..., 3, 3, 3) last axis: derivative direction
    dR = grid.gradient(R)
    if law.scaled_gradient:
        scale = np.array([1.0, 1.0 / h, 1.0 / h])
        dU = dU * scale
        dR = dR * scale
    hc = law.h_grad(dU)
    hr = law.h_grad(dR)
    wpl = law.w_pl(P)
    w_pl_term = float(np.sum(w * wpl) / h**2) if np.all(np.isfinite(wpl)) else INFINITE_ENERGY
    return EnergyTerms3D(
        w_el=float(np.sum(w * wel) / h**2),
        h_c=float(h ** (-law.alpha_C * law.p) * np.sum(w * hc)),
        h_r=float(h ** (law.alpha_R * law.p) * np.sum(w * hr)),
        w_pl=w_pl_term,
    )


def corrector_free_limit(K, z, grid: RodGrid, law: MaterialLaw3D):
    """``int Q_el(sym(K xbar | 0) - sym z)`` by the grid quadrature."""
    pts = grid.section_points()
    xbar = np.zeros(pts.shape[:2] + (3,))
    xbar[..., 1:] = pts
    G = np.zeros((grid.n1,) + pts.shape[:2] + (3, 3))
    G[..., 0] = np.einsum("iab,rtb->irta", np.asarray(K, dtype=float), xbar)
    return float(np.sum(grid.weights() * law.q_el(G - z)))


# ---------------------------------------------------------------------------
# convergence study

REPORT_COLUMNS = ("h", "W_el_term", "HC_term", "HR_term", "W_pl_term", "D_term", "gap")


@dataclass
class ConvergenceReport:
    rows: list = field(default_factory=list)
    slopes: dict = field(default_factory=dict)
    limit: float = 0.0

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=float)


def loglog_slope(hs, values):
    """Least-squares slope of ``log(values)`` against ``log(h)``; NaN when undefined."""
    hs = np.asarray(hs, dtype=float)
    v = np.asarray(values, dtype=float)
    ok = np.isfinite(v) & (v > 0)
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(hs[ok]), np.log(v[ok]), 1)[0])


def convergence_study(k, h_list, law: MaterialLaw3D, grid: RodGrid | None = None,
                      z_limit=None, z_tilde=None) -> ConvergenceReport:
    """Energies of the Cosserat recovery family for a constant-curvature rod.

    ``k`` are the skew coefficients of the (constant) bending-torsion strain;
    ``z_limit`` and ``z_tilde`` are ``(n1, n_r, n_t, 3, 3)`` fields or
    constant matrices.
    """
    grid = RodGrid() if grid is None else grid
    hs = [float(h) for h in h_list]
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise InvalidInput("h_list must be strictly decreasing")
    v, R, K = constant_curvature_rod(k, grid.x1)
    shape = (grid.n1, grid.n_r, grid.n_theta, 3, 3)
    z = np.zeros(shape) if z_limit is None else np.broadcast_to(np.asarray(z_limit, dtype=float), shape)
    zt = np.zeros(shape) if z_tilde is None else np.broadcast_to(np.asarray(z_tilde, dtype=float), shape)
    w = grid.weights()
    limit = corrector_free_limit(K, z, grid, law)
    report = ConvergenceReport(limit=limit)
    for h in hs:
        zh = plastic_field_from_limit(z, h)
        fld = build_cosserat(v, R, K, h, grid, zh)
        terms = energy_3d(fld, law)
        rec = recovery_plastic(zh, zt, h, law)
        d = dissipation_3d(rec, law.delta, w)
        report.rows.append(
            {
                "h": h,
                "W_el_term": terms.w_el,
                "HC_term": terms.h_c,
                "HR_term": terms.h_r,
                "W_pl_term": terms.w_pl,
                "D_term": d,
                "gap": abs(terms.w_el - limit),
            }
        )
    for name in ("W_el_term", "HC_term", "HR_term", "gap"):
        report.slopes[name] = loglog_slope(hs, report.column(name))
    return report
