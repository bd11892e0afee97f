import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from plasticrod.algebra import DEV_BASIS, SKEW_BASIS, dev_coeffs, so3_exp, skew_from_coeffs
from plasticrod.cross_section import ElasticTensor, generate_disc_mesh, solve_correctors
from plasticrod.errors import InvalidInput, LogBranchCut
from plasticrod.rod_model import (
    TRAJECTORY_COLUMNS,
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
    integrate_positions,
    load_work,
    trajectory_csv,
)

from .oracles import bent_rod_positions, random_rotation, rot_z

MU = 4.0 * np.pi


def bent_state(kappa, n, nq, plastic=None):
    nodes = np.linspace(0, 1, n + 1)
    frames = so3_exp(nodes[:, None, None] * kappa * np.sqrt(2) * SKEW_BASIS[1])
    if plastic is None:
        plastic = np.zeros((n, nq, 5))
    return RodState.from_frames(nodes, frames, plastic)


# -- state ------------------------------------------------------------------------


def test_straight_state_invariants():
    s = RodState.straight(8, 3, 2.0)
    assert np.allclose(s.tip, [2, 0, 0])
    assert s.orthogonality_error() < 1e-15 and s.compatibility_error() == 0
    assert s.dx == 0.25 and s.n_quad == 3


def test_state_validation():
    with pytest.raises(InvalidInput):
        RodState(np.linspace(0, 1, 3), np.zeros((2, 3, 3)), np.zeros((3, 3)), np.zeros((2, 1, 5)))
    with pytest.raises(InvalidInput):
        RodState.straight(4, 2).with_plastic(np.zeros((4, 2, 3)))
    with pytest.raises(InvalidInput):
        RodState(np.array([0, 0.1, 1.0]), np.tile(np.eye(3), (3, 1, 1)), np.zeros((3, 3)), np.zeros((2, 1, 5)))


def test_positions_match_arc_of_circle():
    kappa, n = 0.8, 400
    s = bent_state(kappa, n, 1)
    # frames rotate e1 towards -e2
    exact = bent_rod_positions(kappa, s.nodes) * np.array([1, -1, 1])
    assert np.abs(s.positions - exact).max() < 1e-5
    assert s.compatibility_error() <= 1e-12


def test_rod_json_roundtrip(rng):
    s = bent_state(0.3, 5, 2, rng.normal(size=(5, 2, 5)))
    back = RodState.loads(s.dumps())
    for name in ("nodes", "frames", "positions", "plastic"):
        assert np.array_equal(getattr(back, name), getattr(s, name))
    doc = s.to_dict()
    assert doc["schema"] == "rod-v1" and len(doc["frames"][0]) == 9
    doc["schema"] = "rod-v0"
    with pytest.raises(InvalidInput):
        RodState.from_dict(doc)


# -- curvature ------------------------------------------------------------------------


def test_curvature_examples():
    assert np.allclose(curvature_field(RodState.straight(4, 1)), 0)
    kappa = 1.3
    K = curvature_field(bent_state(kappa, 10, 1))
    assert np.allclose(K, [0, np.sqrt(2) * kappa, 0], atol=1e-13)


def _smooth_frames(x, A, B):
    return np.array([so3_exp(xi * A) @ so3_exp(xi**2 * B) for xi in x])


def test_curvature_second_order(rng):
    A = skew_from_coeffs(rng.normal(size=3))
    B = skew_from_coeffs(rng.normal(size=3))
    errs = []
    for n in (10, 20, 40, 80):
        x = np.linspace(0, 1, n + 1)
        K = curvature_field(_smooth_frames(x, A, B), 1.0 / n)
        xm = 0.5 * (x[1:] + x[:-1])
        # R^T R' = exp(-x^2 B) A exp(x^2 B) + 2 x B
        exact = np.array([so3_exp(-s**2 * B) @ A @ so3_exp(s**2 * B) + 2 * s * B for s in xm])
        ek = np.einsum("qij,kij->qk", exact, SKEW_BASIS)
        errs.append(np.abs(K - ek).max())
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.8)


def test_curvature_branch_cut():
    frames = np.array([np.eye(3), rot_z(np.pi)])
    with pytest.raises(LogBranchCut):
        curvature_field(frames, 1.0)


# -- energy ------------------------------------------------------------------------


def test_straight_rod_zero_energy(disc1):
    s = RodState.straight(6, disc1.n_quad)
    E = energy_e0(0.0, s, disc1, PlasticLaw(MU, 1.0), LoadProfile.zero())
    assert E.total == 0 and E.bending_torsion == 0 and E.hardening == 0


def test_constant_curvature_energy(disc2):
    kappa = 0.5
    s = bent_state(kappa, 16, disc2.n_quad)
    E = energy_e0(0.0, s, disc2, PlasticLaw(MU, 1.0), LoadProfile.zero())
    assert np.isclose(E.bending_torsion, 2 * kappa**2 * disc2.gram[1, 1], rtol=1e-12)
    assert np.isclose(E.bending_torsion, MU * kappa**2 / (4 * np.pi), rtol=0.01)
    assert E.residual < 1e-14 and E.hardening == 0


def test_plastic_bending_accommodation(disc2):
    kappa, n = 0.5, 8
    mesh = disc2.mesh
    x2 = mesh.quad_points[:, 0]
    z = kappa * x2[:, None, None] * np.diag([1.0, -0.5, -0.5])
    c = np.broadcast_to(dev_coeffs(z), (n, disc2.n_quad, 5))
    s = bent_state(kappa, n, disc2.n_quad, c)
    rho = 3.0
    E = energy_e0(0.0, s, disc2, PlasticLaw(rho, 1.0), LoadProfile.zero())
    assert E.bending_torsion < 1e-20
    # brute-force quadrature of rho |z|^2 over every cell
    hard = sum(rho * np.sum(z[q] ** 2) * w for q, w in enumerate(mesh.quad_weights)) * n * s.dx
    assert np.isclose(E.hardening, hard, rtol=1e-12)
    # the in-plane part is compatible, so only P1 discretisation error remains
    assert E.residual < 0.05 * E.hardening


def test_accommodated_residual_vanishes_under_refinement(disc1, disc2):
    coarse = solve_correctors(generate_disc_mesh(3), ElasticTensor.isotropic(MU))
    vals = []
    for m in (disc1, disc2, coarse):
        x2 = m.mesh.quad_points[:, 0]
        vals.append(m.norm2(m.z_res(0.5 * x2[:, None, None] * np.diag([1.0, -0.5, -0.5]))))
    assert vals[0] / vals[1] > 3.5 and vals[1] / vals[2] > 3.5


def test_load_term_trapezoid():
    s = RodState.straight(5, 1)
    load = LoadProfile(lambda x: np.stack([np.ones_like(x), 0 * x, 0 * x], 1), lambda t: 2.0 * t)
    assert np.isclose(load_work(s, load.values(1.5, s.nodes)), 1.5)  # 3 * int x
    assert np.isclose(load.beta_dot(0.7), 2.0, rtol=1e-8)


def test_frame_load_weights_identity(rng):
    n = 7
    nodes = np.linspace(0, 1, n + 1)
    frames = np.array([random_rotation(rng) for _ in nodes])
    origin = rng.normal(size=3)
    v = integrate_positions(frames, nodes[1] - nodes[0], origin)
    lv = rng.normal(size=(n + 1, 3))
    w = np.full(n + 1, 1.0 / n)
    w[[0, -1]] *= 0.5
    direct = np.einsum("k,ka,ka->", w, lv, v)
    L = frame_load_weights(nodes, lv)
    via = origin @ (w @ lv) + np.einsum("ka,ka->", frames[:, :, 0], L)
    assert np.isclose(direct, via, rtol=1e-12)


def test_energy_breakdown_total():
    E = EnergyBreakdown(1.5, 0.25, 0.125, 2.0)
    assert E.total == 1.5 + 0.25 + 0.125 - 2.0
    assert set(E.as_dict()) == {"total", "bending_torsion", "residual", "hardening", "load"}


def test_frame_indifference_of_internal_energy(disc1, rng):
    n = 6
    s = RodState.from_frames(
        np.linspace(0, 1, n + 1),
        np.array([so3_exp(skew_from_coeffs(0.3 * rng.normal(size=3))) for _ in range(n + 1)]),
        0.1 * rng.normal(size=(n, disc1.n_quad, 5)),
    )
    Q = random_rotation(rng)
    moved = RodState(s.nodes, Q @ s.frames, s.positions @ Q.T + rng.normal(size=3), s.plastic)
    law = PlasticLaw(MU, 1.0)
    a = energy_e0(0.0, s, disc1, law, LoadProfile.zero())
    b = energy_e0(0.0, moved, disc1, law, LoadProfile.zero())
    for name in ("bending_torsion", "residual", "hardening"):
        assert np.isclose(getattr(a, name), getattr(b, name), rtol=1e-12)


def test_slice_energies_match_relaxed_energy(disc1, rng):
    op = SliceOperator(disc1)
    K = rng.normal(size=3)
    c = rng.normal(size=(disc1.n_quad, 5))
    bend, res, zz = op.slice_energies(K, c)
    z = np.einsum("qa,aij->qij", c, DEV_BASIS)
    assert np.isclose(bend + res, disc1.relaxed_energy_density(K, z), rtol=1e-10)
    assert np.isclose(zz, disc1.mesh.integrate(np.sum(z * z, axis=(1, 2))))


def test_slice_operator_dense_and_matrix_free_agree(disc1, rng):
    dense = SliceOperator(disc1)
    free = SliceOperator(disc1, dense_limit=0)
    c = rng.normal(size=(2, disc1.n_quad, 5))
    assert np.allclose(dense.residual_apply(c), free.residual_apply(c), atol=1e-12)


def test_energy_grid_mismatch(disc1):
    with pytest.raises(InvalidInput):
        energy_e0(0.0, RodState.straight(3, disc1.n_quad + 1), disc1, PlasticLaw(1, 1), LoadProfile.zero())


# -- dissipation ------------------------------------------------------------------------

cells = arrays(np.float64, (3, 2, 5), elements=st.floats(-5, 5, allow_nan=False))
W = np.full((3, 2), 0.5)


def test_dissipation_examples():
    z = np.zeros((2, 3, 3))
    assert dissipation_d0(z, z, 1.0, np.ones(2)) == 0
    bad = z.copy()
    bad[1, 0, 0] = 1.0
    assert dissipation_d0(z, bad, 1.0, np.ones(2)) == np.inf
    # reduced form with z11, z22, z33, z23
    dz = np.zeros((1, 3, 3))
    dz[0] = np.diag([0.3, -0.1, -0.2])
    dz[0, 1, 2] = dz[0, 2, 1] = 0.4
    expect = 2.0 * 0.7 * np.sqrt(0.3**2 + 0.1**2 + 0.2**2 + 2 * 0.4**2)
    assert np.isclose(dissipation_d0(np.zeros((1, 3, 3)), dz, 2.0, np.array([0.7])), expect)


@given(cells, cells, cells)
def test_dissipation_triangle_inequality(a, b, c):
    d13 = dissipation_d0(a, c, 1.3, W)
    assert d13 <= dissipation_d0(a, b, 1.3, W) + dissipation_d0(b, c, 1.3, W) + 1e-12
    assert np.isclose(dissipation_d0(a, b, 1.3, W), dissipation_d0(b, a, 1.3, W))


@given(cells, cells, st.floats(0.01, 100))
def test_dissipation_positive_homogeneity(z, w, lam):
    lhs = dissipation_d0(z, z + lam * w, 0.8, W)
    rhs = lam * dissipation_d0(z, z + w, 0.8, W)
    assert np.isclose(lhs, rhs, rtol=1e-9, atol=1e-12)


def test_cell_weights_sum_to_volume(disc1):
    s = RodState.straight(5, disc1.n_quad, 2.0)
    assert np.isclose(cell_weights(s, disc1).sum(), 2.0 * disc1.mesh.area)


def test_trajectory_csv_header_and_digits():
    row = {c: 1 / 3 for c in TRAJECTORY_COLUMNS}
    text = trajectory_csv([row])
    header, line = text.strip().split("\n")
    assert header.split(",") == list(TRAJECTORY_COLUMNS)
    assert line.split(",")[0] == "0.33333333333333331"
