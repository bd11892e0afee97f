"""Matrix and rotation-group primitives.

All functions accept arrays with arbitrary leading batch dimensions and act on
the trailing ``(3, 3)`` (matrices) or ``(3,)`` / ``(5,)`` (coefficient) axes.

Two coordinate systems for skew matrices are used:

* *skew coefficients* ``k`` in the orthonormal basis ``K_1, K_2, K_3`` below
  (Frobenius-orthonormal, the rod's bending-torsion coordinates), and
* *axial vectors* ``w`` with ``hat(w) @ x == cross(w, x)`` (used internally
  for exp/log and Jacobians).
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateDeformation, InvalidInput, LogBranchCut

_S2 = np.sqrt(2.0)

# K_1 = (0 | -e3 | e2)/sqrt2, K_2 = (-e2 | e1 | 0)/sqrt2, K_3 = (-e3 | 0 | e1)/sqrt2
SKEW_BASIS = np.zeros((3, 3, 3))
SKEW_BASIS[0, 2, 1], SKEW_BASIS[0, 1, 2] = -1.0 / _S2, 1.0 / _S2
SKEW_BASIS[1, 1, 0], SKEW_BASIS[1, 0, 1] = -1.0 / _S2, 1.0 / _S2
SKEW_BASIS[2, 2, 0], SKEW_BASIS[2, 0, 2] = -1.0 / _S2, 1.0 / _S2

# Orthonormal basis of trace-free symmetric matrices: two diagonal directions,
# then the (1,2), (1,3), (2,3) off-diagonal directions.
DEV_BASIS = np.zeros((5, 3, 3))
DEV_BASIS[0] = np.diag([2.0, -1.0, -1.0]) / np.sqrt(6.0)
DEV_BASIS[1] = np.diag([0.0, 1.0, -1.0]) / _S2
for _n, (_i, _j) in enumerate([(0, 1), (0, 2), (1, 2)], start=2):
    DEV_BASIS[_n, _i, _j] = DEV_BASIS[_n, _j, _i] = 1.0 / _S2

# DevSym3 components admissible in the planar example (z12 = z13 = 0).
PLANAR_DEV_COMPONENTS = (0, 1, 4)

_HAT = np.zeros((3, 3, 3))
_HAT[0, 2, 1], _HAT[0, 1, 2] = 1.0, -1.0
_HAT[1, 0, 2], _HAT[1, 2, 0] = 1.0, -1.0
_HAT[2, 1, 0], _HAT[2, 0, 1] = 1.0, -1.0

# axial vector of each skew basis element; w = k @ COEFF_TO_AXIAL
COEFF_TO_AXIAL = np.einsum("kij,aij->ka", SKEW_BASIS, _HAT) / 2.0


def hat(w):
    return np.einsum("...a,aij->...ij", np.asarray(w, dtype=float), _HAT)


def vee(A):
    A = np.asarray(A, dtype=float)
    return 0.5 * np.stack(
        [A[..., 2, 1] - A[..., 1, 2], A[..., 0, 2] - A[..., 2, 0], A[..., 1, 0] - A[..., 0, 1]],
        axis=-1,
    )


def axial_from_coeffs(k):
    return np.asarray(k, dtype=float) @ COEFF_TO_AXIAL


def coeffs_from_axial(w):
    # COEFF_TO_AXIAL is (1/sqrt2) times an orthogonal matrix
    return 2.0 * np.asarray(w, dtype=float) @ COEFF_TO_AXIAL.T


def skew_from_coeffs(k):
    return np.einsum("...k,kij->...ij", np.asarray(k, dtype=float), SKEW_BASIS)


def coeffs_from_skew(A, tol=1e-12):
    A = np.asarray(A, dtype=float)
    norm = np.linalg.norm(A, axis=(-2, -1))
    asym = np.linalg.norm(A + np.swapaxes(A, -1, -2), axis=(-2, -1))
    if np.any(asym > tol * np.maximum(norm, 1e-300)):
        raise InvalidInput("matrix is not skew-symmetric")
    return np.einsum("...ij,kij->...k", A, SKEW_BASIS)


def sym(A):
    A = np.asarray(A, dtype=float)
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def dev_sym(A):
    S = sym(A)
    tr = np.trace(S, axis1=-2, axis2=-1)
    return S - tr[..., None, None] / 3.0 * np.eye(3)


def dev_coeffs(A):
    """DevSym3 coefficients of the deviatoric symmetric part of ``A``."""
    return np.einsum("...ij,nij->...n", dev_sym(A), DEV_BASIS)


def dev_from_coeffs(c):
    return np.einsum("...n,nij->...ij", np.asarray(c, dtype=float), DEV_BASIS)


def _sinc_terms(theta):
    """Return (sin t / t, (1 - cos t) / t^2) with series near zero."""
    small = theta < 1e-4
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    a = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, np.sin(t) / t)
    b = np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, (1.0 - np.cos(t)) / (t * t))
    return a, b


def so3_exp_axial(w):
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)
    a, b = _sinc_terms(theta)
    W = hat(w)
    return np.eye(3) + a[..., None, None] * W + b[..., None, None] * (W @ W)


def so3_exp(A):
    """Exponential of a skew matrix (Rodrigues formula)."""
    return so3_exp_axial(vee(A))


def so3_log_axial(R, max_angle=np.pi - 1e-6):
    R = np.asarray(R, dtype=float)
    v = vee(R - np.swapaxes(R, -1, -2))  # = 2 sin(t) * axis
    s = 0.5 * np.linalg.norm(v, axis=-1)
    c = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    theta = np.arctan2(s, c)
    if np.any(theta >= max_angle):
        raise LogBranchCut(f"rotation angle {np.max(theta):.6g} too close to pi")
    small = theta < 1e-4
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    factor = np.where(
        small, 0.5 + t2 / 12.0 + 7.0 * t2 * t2 / 720.0, t / (2.0 * np.where(small, 1.0, s))
    )
    return factor[..., None] * v


def so3_log(R):
    """Principal logarithm of a rotation, returned as a skew matrix."""
    return hat(so3_log_axial(R))


def right_jacobian_inv(w):
    """Inverse right Jacobian: log(exp(w) exp(e)) = w + Jr^{-1}(w) e + O(e^2)."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)
    small = theta < 1e-3
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    coef = np.where(
        small,
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0,
        1.0 / (t * t) - (1.0 + np.cos(t)) / (2.0 * t * np.sin(t)),
    )
    W = hat(w)
    return np.eye(3) + 0.5 * W + coef[..., None, None] * (W @ W)


def polar_decompose(F):
    """Polar factors ``F = R @ U`` with ``R`` a rotation and ``U`` SPD.

    Uses the eigendecomposition of ``F^T F``. Raises DegenerateDeformation
    if any ``det F <= 0``.
    """
    F = np.asarray(F, dtype=float)
    if np.any(np.linalg.det(F) <= 0.0):
        raise DegenerateDeformation("polar decomposition needs det F > 0")
    lam, V = np.linalg.eigh(np.swapaxes(F, -1, -2) @ F)
    s = np.sqrt(lam)
    Vt = np.swapaxes(V, -1, -2)
    U = (V * s[..., None, :]) @ Vt
    R = F @ ((V / s[..., None, :]) @ Vt)
    return R, sym(U)


def matrix_exp_dev(xi, scale=1.0):
    """``exp(scale * xi)`` for DevSym3 coefficients ``xi`` (symmetric, det 1)."""
    S = dev_from_coeffs(xi) * scale
    lam, V = np.linalg.eigh(S)
    return (V * np.exp(lam)[..., None, :]) @ np.swapaxes(V, -1, -2)


def expm_sym(S):
    """Exponential of symmetric matrices via eigendecomposition."""
    lam, V = np.linalg.eigh(sym(S))
    return (V * np.exp(lam)[..., None, :]) @ np.swapaxes(V, -1, -2)


def logm_near_identity(F, n_terms=40):
    """Principal logarithm of matrices with ``|F - I| < 1`` (Frobenius).

    Uses ``log F = 2 artanh(X)``, ``X = (F - I)(F + I)^{-1}``; the odd power
    series converges geometrically for the admissible inputs.
    """
    F = np.asarray(F, dtype=float)
    eye = np.eye(3)
    if np.any(np.linalg.norm(F - eye, axis=(-2, -1)) >= 1.0):
        raise InvalidInput("logm_near_identity needs |F - I| < 1")
    X = np.linalg.solve(np.swapaxes(F + eye, -1, -2), np.swapaxes(F - eye, -1, -2))
    X = np.swapaxes(X, -1, -2)
    X2 = X @ X
    term = X
    out = X.copy()
    for k in range(1, n_terms):
        term = term @ X2
        out = out + term / (2 * k + 1)
        if np.max(np.abs(term)) < 1e-18:
            break
    return 2.0 * out


def frobenius(A):
    return np.linalg.norm(np.asarray(A, dtype=float), axis=(-2, -1))
