import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from plasticrod.errors import DegenerateDeformation, InvalidInput
from plasticrod.gamma_harness import (
    MaterialLaw3D,
    RecoveredPlastic,
    RodGrid,
    affine_section_field,
    build_cosserat,
    constant_curvature_rod,
    convergence_study,
    corrector_free_limit,
    dissipation_3d,
    energy_3d,
    loglog_slope,
    plastic_field_from_limit,
    recovery_plastic,
)

from .oracles import matrix_exp, random_rotation

LAW = MaterialLaw3D()
GRID = RodGrid(n1=33, n_r=8, n_theta=16)
BEND = np.array([0.0, 0.5 * np.sqrt(2.0), 0.0])  # curvature 0.5 in the (e1, e2) plane

small = arrays(np.float64, (3, 3), elements=st.floats(-1, 1, allow_nan=False))


def trace_free(M):
    return M - np.trace(M) / 3.0 * np.eye(3)


def bent(h, kappa_coeffs=BEND, z=None, grid=GRID):
    v, R, K = constant_curvature_rod(kappa_coeffs, grid.x1)
    return build_cosserat(v, R, K, h, grid, z)


# -- material ---------------------------------------------------------------


def test_material_validation():
    with pytest.raises(InvalidInput, match="alpha_R"):
        MaterialLaw3D(alpha_C=0.7, alpha_R=0.3)
    for bad in (dict(p=3.0), dict(r=1.5), dict(delta=-1.0), dict(mu=0.0)):
        with pytest.raises(InvalidInput):
            MaterialLaw3D(**bad)
    assert MaterialLaw3D(alpha_C=0.5, alpha_R=0.3).violations() == []


@given(small, st.integers(0, 1000))
def test_elastic_density_frame_indifferent(G, seed):
    Q = random_rotation(np.random.default_rng(seed))
    F = np.eye(3) + 0.3 * G
    assert np.isclose(LAW.w_el(Q @ F), LAW.w_el(F), rtol=1e-10, atol=1e-12)
    assert LAW.w_el(np.diag([1.0, 1.0, -1.0])) == np.inf


@given(small)
def test_elastic_density_quadratic_expansion(G):
    eps = 0.5
    rem = abs(LAW.w_el(np.eye(3) + eps * G) - LAW.q_el(eps * G))
    assert rem <= 3 * LAW.mu * np.linalg.norm(eps * G) ** 3 + 1e-12


def test_plastic_set_membership():
    A = trace_free(np.array([[0.1, 0.2, 0.0], [0.0, -0.1, 0.05], [0.1, 0.0, 0.0]]))
    assert LAW.in_k_pl(matrix_exp(A))
    assert not LAW.in_k_pl(matrix_exp(3 * A / np.linalg.norm(A)))
    assert not LAW.in_k_pl(1.01 * np.eye(3))  # det != 1
    assert LAW.w_pl(1.01 * np.eye(3)) == np.inf


# -- grid -------------------------------------------------------------------


def test_grid_weights_and_linear_derivatives():
    assert np.isclose(GRID.weights().sum(), 1.0, rtol=1e-12)
    pts = GRID.section_points()
    f = 2.0 * GRID.x1[:, None, None] + 3.0 * pts[None, ..., 0] - pts[None, ..., 1]
    g = GRID.gradient(f)
    assert np.allclose(g, [2.0, 3.0, -1.0], atol=1e-10)
    with pytest.raises(InvalidInput):
        RodGrid(n1=2)


def test_constant_curvature_rod_closed_form():
    x = np.linspace(0, 1, 201)
    v, R, K = constant_curvature_rod([0.3, -0.2, 0.7], x)
    dv = np.gradient(v, x, axis=0, edge_order=2)
    assert np.abs(dv - R[:, :, 0]).max() < 1e-4
    dR = np.gradient(R, x, axis=0, edge_order=2)
    assert np.abs(np.swapaxes(R, 1, 2) @ dR - K).max() < 1e-4


# -- Cosserat fields ------------------------------------------------------------


def test_straight_rod_has_zero_energy():
    terms = energy_3d(bent(0.1, np.zeros(3)), LAW)
    assert terms.w_el < 1e-25 and terms.h_c < 1e-25 and terms.h_r < 1e-25 and terms.w_pl == 0


def test_cauchy_green_check_rejects_bad_frames():
    v, R, K = constant_curvature_rod(BEND, GRID.x1)
    with pytest.raises(InvalidInput):
        build_cosserat(v, 1.05 * R, K, 0.1, GRID)
    with pytest.raises(DegenerateDeformation):
        build_cosserat(*constant_curvature_rod([0, 10.0, 0], GRID.x1), 0.5, GRID)


def test_gradient_terms_closed_form():
    h = 0.05
    terms = energy_3d(bent(h), LAW)
    kappa = 0.5
    assert np.isclose(terms.h_c, h ** (4 - 0.4 * 4) * kappa**4, rtol=1e-8)
    Kn2 = np.sum(constant_curvature_rod(BEND, [0.0])[2][0] ** 2)
    assert np.isclose(terms.h_r, h ** (0.3 * 4) * Kn2**2, rtol=1e-3)


def test_energy_frame_indifferent():
    fld = bent(0.1, np.array([0.2, 0.4, -0.1]))
    Q = random_rotation(np.random.default_rng(3))
    a, b = energy_3d(fld, LAW), energy_3d(fld.rotated(Q), LAW)
    for name in ("w_el", "h_c", "h_r", "w_pl"):
        assert np.isclose(getattr(a, name), getattr(b, name), rtol=1e-10)


def test_elastic_term_converges_to_limit():
    limit = corrector_free_limit(constant_curvature_rod(BEND, GRID.x1)[2], 0.0, GRID, LAW)
    assert np.isclose(limit, LAW.mu * 0.25 / (4 * np.pi), rtol=1e-10)
    hs = [2.0**-k for k in range(3, 7)]
    gaps = [abs(energy_3d(bent(h), LAW).w_el - limit) for h in hs]
    assert abs(loglog_slope(hs, gaps) - 2.0) < 0.1


def test_square_root_gradient_comparable_to_half_gradient():
    fld = bent(0.2, np.array([0.3, 0.6, 0.2]))
    F = fld.grad_h
    C = np.swapaxes(F, -1, -2) @ F
    lam, V = np.linalg.eigh(C)
    U = np.einsum("...ij,...j,...kj->...ik", V, np.sqrt(lam), V)
    nU = np.linalg.norm(GRID.gradient(U).reshape(U.shape[:3] + (-1,)), axis=-1)
    nC = np.linalg.norm(GRID.gradient(C).reshape(C.shape[:3] + (-1,)), axis=-1)
    ratio = nU[nC > 1e-12] / (0.5 * nC[nC > 1e-12])
    assert ratio.min() >= 0.5 and ratio.max() <= 2.0


# -- plastic recovery and dissipation ----------------------------------------------


Z = trace_free(np.array([[0.3, 0.1, 0.0], [0.1, -0.2, 0.2], [0.0, 0.2, 0.1]]))
ZT = trace_free(np.array([[0.0, 0.2, -0.1], [0.2, 0.1, 0.0], [-0.1, 0.0, 0.3]]))


def test_recovery_without_increment_keeps_field():
    zh = plastic_field_from_limit(np.broadcast_to(Z, (4, 3, 3)), 0.1)
    rec = recovery_plastic(zh, np.zeros((3, 3)), 0.1, LAW)
    assert rec.mask.all() and np.allclose(rec.z_hat, zh, atol=1e-14)


def test_recovery_converges_at_first_order():
    errs, hs = [], [0.1, 0.05, 0.025, 0.0125]
    for h in hs:
        zh = plastic_field_from_limit(Z, h)
        rec = recovery_plastic(zh, ZT, h, LAW)
        assert rec.mask.all()
        assert np.isclose(np.linalg.det(np.eye(3) + h * rec.z_hat), 1.0, atol=1e-12)
        errs.append(np.linalg.norm(rec.z_hat - zh - ZT))
    assert abs(loglog_slope(hs, errs) - 1.0) < 0.1


def test_recovery_falls_back_outside_plastic_set():
    h = 1.5
    zh = plastic_field_from_limit(Z, h)
    rec = recovery_plastic(zh, ZT, h, LAW)
    assert not rec.mask.any() and np.array_equal(rec.z_hat, zh)
    assert dissipation_3d(rec, 1.0, np.ones(1)) == 0


def test_dissipation_values():
    w = GRID.weights()
    zt = affine_section_field(GRID, Z0=ZT)
    rec = recovery_plastic(np.zeros_like(zt), zt, 0.1, LAW)
    assert np.isclose(dissipation_3d(rec, 2.0, w), 2.0 * np.linalg.norm(ZT), rtol=1e-12)
    # growing increments shrink the set where they are admissible
    prev = np.inf
    for s in (1.0, 20.0, 40.0, 80.0):
        zt = affine_section_field(GRID, Z0=0.2 * ZT, Z2=s * ZT)
        rec = recovery_plastic(np.zeros_like(zt), zt, 0.1, LAW)
        frac = rec.mask.mean()
        assert frac <= prev
        prev = frac
        assert dissipation_3d(rec, 1.0, w) <= np.sum(w * np.linalg.norm(zt, axis=(-2, -1))) + 1e-12
    assert prev < 1


def test_dissipation_rejects_inconsistent_pair():
    rec = recovery_plastic(np.broadcast_to(Z, (2, 3, 3)), ZT, 0.1, LAW)
    bad = RecoveredPlastic(rec.z, rec.z_hat + 0.01, rec.z_tilde, rec.mask, rec.h)
    with pytest.raises(InvalidInput):
        dissipation_3d(bad, 1.0, np.ones(2))
    with pytest.raises(InvalidInput):
        dissipation_3d((rec.z, rec.z_hat), 1.0, np.ones(2))


def test_plastic_term_uses_exponential_factor():
    zh = plastic_field_from_limit(affine_section_field(GRID, Z0=Z), 0.1)
    terms = energy_3d(bent(0.1, z=zh), LAW)
    expect = LAW.rho * np.sum((matrix_exp(0.1 * Z) - np.eye(3)) ** 2) / 0.01
    assert np.isclose(terms.w_pl, expect, rtol=1e-10)
    traced = affine_section_field(GRID, Z0=0.1 * np.eye(3))
    assert energy_3d(bent(0.1, z=traced), LAW).w_pl == np.inf


# -- convergence study ------------------------------------------------------------


def test_convergence_study_slopes():
    hs = [2.0**-k for k in range(3, 7)]
    rep = convergence_study(BEND, hs, LAW, GRID)
    assert abs(rep.slopes["gap"] - 2.0) < 0.1
    assert abs(rep.slopes["HC_term"] - 2.4) < 1e-6
    assert abs(rep.slopes["HR_term"] - 1.2) < 1e-6
    assert len(rep.rows) == 4 and np.all(rep.column("D_term") == 0)
    with pytest.raises(InvalidInput):
        convergence_study(BEND, [0.1, 0.2], LAW, GRID)


def test_loglog_slope_degenerate():
    assert np.isnan(loglog_slope([1.0, 0.5], [0.0, 0.0]))
    assert np.isclose(loglog_slope([1.0, 0.5, 0.25], [1.0, 0.125, 1 / 64]), 3.0)
