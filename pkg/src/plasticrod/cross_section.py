"""Cross-section corrector problems and effective rod coefficients.

The cross-section ``S`` is triangulated; the in-section displacement ``phi`` is
piecewise linear (three components per vertex) and the axial stretch ``a`` is
one scalar per problem. The kernel of the energy (rigid in-plane motions and
constants) is removed by Lagrange multipliers for ``int phi = 0`` and
``int (d3 phi_2 - d2 phi_3) = 0``.

Fields on the section ("section strain fields") are sampled at the mid-edge
quadrature points, ``nq = 3 * n_triangles`` of them, ordered triangle by
triangle. All inner products use the same quadrature.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .algebra import SKEW_BASIS, sym
from .errors import InvalidInput, SolverFailure
from .io_utils import dumps_json

DISC_RADIUS = 1.0 / np.sqrt(np.pi)
SCHEMA_VERSION = "xsec-v1"


# ---------------------------------------------------------------------------
# meshes


@dataclass(frozen=True, eq=False)
class SectionMesh:
    vertices: np.ndarray  # (nv, 2) coordinates (x2, x3)
    triangles: np.ndarray  # (nt, 3) counter-clockwise vertex indices
    boundary_radius: float | None = None  # set for discs; boundary snapped to it

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if v.ndim != 2 or v.shape[1] != 2 or t.ndim != 2 or t.shape[1] != 3:
            raise InvalidInput("mesh arrays have wrong shape")
        if np.any(self.signed_areas <= 0.0):
            raise InvalidInput("triangles must be positively oriented and non-degenerate")

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_quad(self):
        return 3 * len(self.triangles)

    @cached_property
    def signed_areas(self):
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def areas(self):
        return self.signed_areas

    @property
    def area(self):
        return float(self.areas.sum())

    @cached_property
    def shape_gradients(self):
        """(nt, 3, 2): gradient of each P1 hat function on each triangle."""
        p = self.vertices[self.triangles]
        x, y = p[..., 0], p[..., 1]
        two_a = 2.0 * self.areas
        g = np.empty((self.n_triangles, 3, 2))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            g[:, i, 0] = (y[:, j] - y[:, k]) / two_a
            g[:, i, 1] = (x[:, k] - x[:, j]) / two_a
        return g

    @cached_property
    def quad_points(self):
        p = self.vertices[self.triangles]
        mids = 0.5 * (p + np.roll(p, -1, axis=1))  # edges 01, 12, 20
        return mids.reshape(-1, 2)

    @cached_property
    def quad_weights(self):
        return np.repeat(self.areas / 3.0, 3)

    def integrate(self, values):
        """Quadrature over the section; ``values`` has the quadrature axis last."""
        return np.asarray(values) @ self.quad_weights

    def moments(self):
        x2, x3 = self.quad_points.T
        return {
            "area": self.area,
            "x2": self.integrate(x2),
            "x3": self.integrate(x3),
            "x2x3": self.integrate(x2 * x3),
            "x2x2": self.integrate(x2 * x2),
            "x3x3": self.integrate(x3 * x3),
        }

    def is_connected(self):
        t = self.triangles
        rows = np.concatenate([t[:, 0], t[:, 1], t[:, 2]])
        cols = np.concatenate([t[:, 1], t[:, 2], t[:, 0]])
        adj = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.n_vertices,) * 2)
        n, _ = connected_components(adj, directed=False)
        return n == 1

    def boundary_edges(self):
        edges = np.sort(self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        uniq, counts = np.unique(edges, axis=0, return_counts=True)
        return uniq[counts == 1]


def _refine(vertices, triangles, radius=None):
    """Split every triangle into four; snap new boundary midpoints to the circle."""
    nv = len(vertices)
    e = np.stack(
        [triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]], axis=1
    )  # (nt, 3, 2)
    flat = np.sort(e.reshape(-1, 2), axis=1)
    uniq, inverse, counts = np.unique(flat, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    mids = 0.5 * (vertices[uniq[:, 0]] + vertices[uniq[:, 1]])
    if radius is not None:
        on_bnd = counts == 1
        r = np.linalg.norm(mids[on_bnd], axis=1)
        mids[on_bnd] *= (radius / r)[:, None]
    m = (nv + inverse).reshape(-1, 3)  # midpoint index of edges 01, 12, 20
    a, b, c = triangles.T
    m01, m12, m20 = m.T
    new = np.concatenate(
        [
            np.stack([a, m01, m20], 1),
            np.stack([m01, b, m12], 1),
            np.stack([m20, m12, c], 1),
            np.stack([m01, m12, m20], 1),
        ]
    )
    return np.vstack([vertices, mids]), new


def generate_disc_mesh(refinement: int = 0, radius: float = DISC_RADIUS, base_sides: int = 12):
    """Disc of the given radius (default: unit area) by regular refinement.

    The base mesh is a fan of ``base_sides`` triangles; every refinement level
    splits each triangle into four and projects new boundary vertices onto the
    circle. The 12-fold rotational symmetry makes the first moments and the
    mixed moment vanish up to rounding.
    """
    if refinement < 0:
        raise InvalidInput("refinement must be non-negative")
    ang = 2.0 * np.pi * np.arange(base_sides) / base_sides
    verts = np.vstack([[0.0, 0.0], radius * np.stack([np.cos(ang), np.sin(ang)], 1)])
    k = np.arange(base_sides)
    tris = np.stack([np.zeros(base_sides, dtype=int), 1 + k, 1 + (k + 1) % base_sides], 1)
    for _ in range(refinement):
        verts, tris = _refine(verts, tris, radius)
    return SectionMesh(verts, tris, boundary_radius=radius)


def generate_rect_mesh(width: float, height: float, nx: int, ny: int, normalize: bool = True):
    """Structured, centred rectangle mesh, rescaled to unit area by default."""
    if width <= 0 or height <= 0:
        raise InvalidInput("rectangle dimensions must be positive")
    if nx < 1 or ny < 1:
        raise InvalidInput("need at least one cell per direction")
    s = 1.0 / np.sqrt(width * height) if normalize else 1.0
    xs = (np.linspace(-0.5, 0.5, nx + 1) * width) * s
    ys = (np.linspace(-0.5, 0.5, ny + 1) * height) * s
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    verts = np.stack([X.ravel(), Y.ravel()], 1)
    idx = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
    v00, v10 = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
    v01, v11 = idx[:-1, 1:].ravel(), idx[1:, 1:].ravel()
    tris = np.concatenate([np.stack([v00, v10, v11], 1), np.stack([v00, v11, v01], 1)])
    return SectionMesh(verts, tris)


# ---------------------------------------------------------------------------
# elastic tensor


@dataclass(frozen=True, eq=False)
class ElasticTensor:
    """Fourth-order tensor acting on 3x3 matrices through their symmetric part."""

    C: np.ndarray

    def __post_init__(self):
        C = np.asarray(self.C, dtype=float).reshape(3, 3, 3, 3)
        # minor and major symmetrisation
        C = 0.5 * (C + C.transpose(1, 0, 2, 3))
        C = 0.5 * (C + C.transpose(0, 1, 3, 2))
        C = 0.5 * (C + C.transpose(2, 3, 0, 1))
        object.__setattr__(self, "C", C)

    @classmethod
    def isotropic(cls, mu: float, lam: float = 0.0):
        """``Q(G) = mu |sym G|^2 + lam/2 (tr G)^2``."""
        eye = np.eye(3)
        P = 0.5 * (np.einsum("ik,jl->ijkl", eye, eye) + np.einsum("il,jk->ijkl", eye, eye))
        return cls(mu * P + 0.5 * lam * np.einsum("ij,kl->ijkl", eye, eye))

    @cached_property
    def matrix(self):
        return self.C.reshape(9, 9)

    def apply(self, G):
        return np.einsum("ijkl,...kl->...ij", self.C, G)

    def quad(self, G):
        G = np.asarray(G, dtype=float)
        return np.einsum("...ij,...ij->...", G, self.apply(G))

    def inner(self, G, H):
        return np.einsum("...ij,...ij->...", G, self.apply(H))

    def bounds(self):
        """(c, C) with c|sym G|^2 <= Q(G) <= C|sym G|^2."""
        basis = []
        for i in range(3):
            for j in range(i, 3):
                E = np.zeros((3, 3))
                E[i, j] = E[j, i] = 1.0
                basis.append(E / np.linalg.norm(E))
        B = np.array(basis).reshape(6, 9)
        ev = np.linalg.eigvalsh(B @ self.matrix @ B.T)
        return float(ev[0]), float(ev[-1])

    def to_dict(self):
        return {"components": self.C.reshape(-1).tolist()}


# ---------------------------------------------------------------------------
# corrector system


class _CorrectorSystem:
    """Factorised saddle-point system for min sum_q w_q Q(B_q u + S_q)."""

    def __init__(self, mesh: SectionMesh, tensor: ElasticTensor):
        if not mesh.is_connected():
            raise SolverFailure("section mesh is disconnected; corrector system singular")
        self.mesh = mesh
        self.tensor = tensor
        nv, nt = mesh.n_vertices, mesh.n_triangles
        self.n_dof = 3 * nv + 1
        a_dof = 3 * nv
        g = mesh.shape_gradients  # (nt, 3, 2)

        # local strain operator: 9 strain components x 10 local dofs (9 phi + a)
        Bl = np.zeros((nt, 9, 10))
        for ell in range(3):
            for c in range(3):
                d = 3 * ell + c
                Bl[:, 3 * c + 1, d] = g[:, ell, 0]
                Bl[:, 3 * c + 2, d] = g[:, ell, 1]
        Bl[:, 0, 9] = 1.0
        self._Bl = Bl
        dofs = np.concatenate(
            [(3 * mesh.triangles[:, :, None] + np.arange(3)).reshape(nt, 9), np.full((nt, 1), a_dof)],
            axis=1,
        )
        self._dofs = dofs
        self._scatter = sp.csr_matrix(
            (np.ones(dofs.size), (np.arange(dofs.size), dofs.ravel())), shape=(dofs.size, self.n_dof)
        )

        Cm = tensor.matrix
        Kl = np.einsum("t,tgi,gh,thj->tij", mesh.areas, Bl, Cm, Bl)
        rows = np.repeat(dofs, 10, axis=1).ravel()
        cols = np.tile(dofs, (1, 10)).ravel()
        A = sp.coo_matrix((Kl.ravel(), (rows, cols)), shape=(self.n_dof, self.n_dof)).tocsr()

        # constraints: int phi_c = 0 (c = 0,1,2), int (d3 phi_1 - d2 phi_2) = 0
        L = np.zeros((4, self.n_dof))
        lump = np.zeros(nv)
        np.add.at(lump, mesh.triangles.ravel(), np.repeat(mesh.areas / 3.0, 3))
        for c in range(3):
            L[c, c:a_dof:3] = lump
        rot = np.zeros((nv, 3))
        np.add.at(rot[:, 1], mesh.triangles.ravel(), (mesh.areas[:, None] * g[:, :, 1]).ravel())
        np.add.at(rot[:, 2], mesh.triangles.ravel(), -(mesh.areas[:, None] * g[:, :, 0]).ravel())
        L[3, :a_dof] = rot.ravel()
        L /= mesh.area
        self.constraints = L
        Ls = sp.csr_matrix(L)
        K = sp.bmat([[A, Ls.T], [Ls, None]], format="csc")
        self._K = K
        try:
            self._lu = spla.splu(K)
        except RuntimeError as exc:  # exactly singular factor
            raise SolverFailure(f"corrector system is singular: {exc}") from exc

    def strain(self, u):
        """Strain samples B_q u for dof vectors u of shape (m, n_dof) -> (m, nq, 3, 3)."""
        u = np.atleast_2d(u)
        loc = u[:, self._dofs]  # (m, nt, 10)
        G = np.einsum("tgi,mti->mtg", self._Bl, loc)  # constant per triangle
        G = np.repeat(G, 3, axis=1)
        return G.reshape(u.shape[0], -1, 3, 3)

    def rhs(self, S):
        """Right-hand sides -sum_q w_q B_q^T C S_q for S of shape (m, nq, 3, 3)."""
        m = S.shape[0]
        w = self.mesh.quad_weights
        CS = (S.reshape(m, -1, 9) @ self.tensor.matrix) * w[None, :, None]
        CS = CS.reshape(m, self.mesh.n_triangles, 3, 9).sum(axis=2)
        loc = np.einsum("tgi,mtg->mti", self._Bl, CS)
        return -(self._scatter.T @ loc.reshape(m, -1).T).T

    def solve(self, S, refine_steps=2, tol=1e-12):
        """Minimiser u of sum_q w_q Q(B_q u + S_q), batched over S's first axis."""
        b = self.rhs(S)
        m = b.shape[0]
        full = np.zeros((self.n_dof + 4, m))
        full[: self.n_dof] = b.T
        x = self._lu.solve(full)
        scale = max(np.abs(full).max(), 1e-300)
        for _ in range(refine_steps):
            r = full - self._K @ x
            if np.abs(r).max() <= tol * scale:
                break
            x = x + self._lu.solve(r)
        if not np.all(np.isfinite(x)):
            raise SolverFailure("corrector solve produced non-finite values")
        return x[: self.n_dof].T


# ---------------------------------------------------------------------------
# model


@dataclass(frozen=True, eq=False)
class CrossSectionModel:
    mesh: SectionMesh
    tensor: ElasticTensor
    a: np.ndarray  # (3,) axial stretch of each corrector
    phi: np.ndarray  # (3, nv, 3) nodal corrector displacements
    psi: np.ndarray  # (3, nq, 3, 3) symmetric corrector strains
    gram: np.ndarray  # (3, 3)
    gram_inverse: np.ndarray
    _system: _CorrectorSystem | None = field(default=None, repr=False)

    @property
    def n_quad(self):
        return self.mesh.n_quad

    @property
    def system(self):
        if self._system is None:
            object.__setattr__(self, "_system", _CorrectorSystem(self.mesh, self.tensor))
        return self._system

    # -- inner products -----------------------------------------------------
    def _check(self, z):
        z = np.asarray(z, dtype=float)
        if z.ndim < 3 or z.shape[-3:] != (self.n_quad, 3, 3):
            raise InvalidInput(
                f"section field must have trailing shape ({self.n_quad}, 3, 3), got {z.shape}"
            )
        return z

    def inner(self, z1, z2):
        """(z1, z2)_Q over the section."""
        return self.mesh.integrate(self.tensor.inner(z1, z2))

    def norm2(self, z):
        return self.inner(z, z)

    # -- effective quantities ---------------------------------------------
    def q_eff(self, k):
        k = np.asarray(k, dtype=float)
        return np.einsum("...i,ij,...j->...", k, self.gram, k)

    def psi_products(self, z):
        z = self._check(z)
        return np.stack([self.inner(z, self.psi[i]) for i in range(3)], axis=-1)

    def k_eff(self, z):
        return self.psi_products(z) @ self.gram_inverse.T

    def relaxation(self, z):
        """sym(a_z e1 | grad phi_z): the minimiser over the relaxation space of
        ``int Q(chi + z)``; equals ``-P_rel z``."""
        z = self._check(z)
        flat = z.reshape((-1,) + z.shape[-3:])
        u = self.system.solve(flat)
        return sym(self.system.strain(u)).reshape(z.shape)

    def z_res(self, z):
        z = sym(self._check(z))
        p = self.k_eff(z)
        macro = np.einsum("...i,iqab->...qab", p, self.psi)
        return z + self.relaxation(z) - macro

    def relaxed_energy_density(self, k, z):
        """min over chi in H_rel of int Q(sym(K xbar|0) + chi - z), via the
        decomposition into q_eff and the residual energy."""
        z = sym(self._check(z))
        kk = np.asarray(k, dtype=float) - self.k_eff(z)
        return self.q_eff(kk) + self.norm2(self.z_res(z))

    def relaxed_energy_direct(self, k, z):
        """Same quantity by a single constrained minimisation."""
        z = sym(self._check(z))
        S = bending_field(self.mesh, k) - z
        lead = S.shape[:-3]
        flat = S.reshape((-1,) + S.shape[-3:])
        u = self.system.solve(flat)
        G = flat + self.system.strain(u)
        return self.norm2(G).reshape(lead)

    def corrector_energy(self, i):
        return float(self.gram[i, i])

    def rotation_constraint_error(self):
        """Max |constraint residual| of the three correctors (reported, not enforced)."""
        u = np.concatenate([self.phi.reshape(3, -1), self.a[:, None]], axis=1)
        return float(np.abs(u @ self.system.constraints.T).max())

    # -- serialisation ------------------------------------------------------
    def to_dict(self):
        return {
            "schema": SCHEMA_VERSION,
            "mesh": {
                "vertices": self.mesh.vertices.tolist(),
                "triangles": self.mesh.triangles.tolist(),
                "boundary_radius": self.mesh.boundary_radius,
            },
            "tensor": self.tensor.to_dict(),
            "gram": self.gram.tolist(),
            "correctors": {"a": self.a.tolist(), "phi": self.phi.tolist()},
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("schema") != SCHEMA_VERSION:
            raise InvalidInput(f"unsupported cross-section schema {doc.get('schema')!r}")
        mesh = SectionMesh(
            np.array(doc["mesh"]["vertices"]),
            np.array(doc["mesh"]["triangles"]),
            doc["mesh"].get("boundary_radius"),
        )
        tensor = ElasticTensor(np.array(doc["tensor"]["components"]))
        a = np.array(doc["correctors"]["a"], dtype=float)
        phi = np.array(doc["correctors"]["phi"], dtype=float)
        return _assemble_model(mesh, tensor, a, phi, None)

    def dumps(self):
        return dumps_json(self.to_dict())

    @classmethod
    def loads(cls, text):
        return cls.from_dict(json.loads(text))


def bending_field(mesh: SectionMesh, k):
    """(K xbar | 0) sampled at the quadrature points, batched over k."""
    k = np.asarray(k, dtype=float)
    K = np.einsum("...i,iab->...ab", k, SKEW_BASIS)
    xbar = np.zeros((mesh.n_quad, 3))
    xbar[:, 1:] = mesh.quad_points
    G = np.zeros(k.shape[:-1] + (mesh.n_quad, 3, 3))
    G[..., 0] = np.einsum("...ab,qb->...qa", K, xbar)
    return G


def _assemble_model(mesh, tensor, a, phi, system):
    nv = mesh.n_vertices
    if system is None:
        system = _CorrectorSystem(mesh, tensor)
    u = np.concatenate([phi.reshape(3, 3 * nv), a[:, None]], axis=1)
    G0 = bending_field(mesh, np.eye(3))
    psi = sym(G0 + system.strain(u))
    w = mesh.quad_weights
    gram = np.array(
        [[w @ tensor.inner(psi[i], psi[j]) for j in range(3)] for i in range(3)]
    )
    gram = 0.5 * (gram + gram.T)
    try:
        np.linalg.cholesky(gram)
    except np.linalg.LinAlgError as exc:
        raise SolverFailure("gram matrix is not positive definite") from exc
    return CrossSectionModel(
        mesh, tensor, a, phi, psi, gram, np.linalg.inv(gram), _system=system
    )


def solve_correctors(mesh: SectionMesh, tensor: ElasticTensor) -> CrossSectionModel:
    """Solve the three corrector problems and assemble the Gram matrix."""
    system = _CorrectorSystem(mesh, tensor)
    u = system.solve(bending_field(mesh, np.eye(3)))
    a = u[:, -1].copy()
    phi = u[:, :-1].reshape(3, mesh.n_vertices, 3)
    return _assemble_model(mesh, tensor, a, phi, system)
