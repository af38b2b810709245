import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from avmc.fem import assemble_load, assemble_stiffness, make_domain, nodal_gradients
from avmc.fields import CoefficientField, coefficient_tt, constant_tt
from avmc.estimate import (EstimatorConfig, estimate, eta_alg, eta_det, eta_sto, eta_total,
                           flux_tt, galerkin_operator)
from avmc.tt import TensorTrain, tt_apply, tt_from_dense, tt_inner, tt_scale
from oracles import dense_estimator


def random_surrogate(mesh, dims, ranks, rng, scale=0.1):
    full = [1] + list(ranks) + [1]
    shape = [mesh.n_vertices] + list(dims)
    cores = [rng.standard_normal((full[k], shape[k], full[k + 1])) * scale
             for k in range(len(shape))]
    cores[0][0][mesh.boundary_vertices] = 0
    return TensorTrain(cores)


def unit_coefficient(mesh, n_modes=1):
    return constant_tt(np.ones(mesh.n_vertices), [1] * n_modes)


@pytest.mark.parametrize("kind", ["affine", "lognormal"])
@pytest.mark.parametrize("round_tol", [None, 1e-10])
def test_matches_dense_oracle(kind, round_tol):
    mesh = make_domain("unit-square", 32)
    L = 3 if kind == "affine" else 2
    field = CoefficientField(kind, L)
    measure = field.measure(rho=1.0, theta=0.1)
    options = {} if kind == "affine" else {"tol": 1e-8, "degree_cap": 3}
    a = coefficient_tt(field, mesh, measure, **options)
    dims = (3, 2) if kind == "affine" else (3,)
    w = random_surrogate(mesh, dims, (2,) * len(dims), np.random.default_rng(1))
    report = estimate(w, a, mesh, measure, EstimatorConfig(round_tol=round_tol))
    ref = dense_estimator(w, a, mesh, measure)
    for got, want in zip((report.eta_det, report.eta_sto, report.eta_alg), ref):
        assert got == pytest.approx(want, rel=1e-10)


def test_eta_total_examples():
    assert eta_total(0, 0, 0) == 0
    assert eta_total(1, 0, 0) == 1
    assert eta_total(1, 1, 1) == pytest.approx(np.sqrt(10))
    with pytest.raises(ValueError):
        eta_total(-1, 0, 0)


def test_report_parts_are_consistent():
    mesh = make_domain("unit-square", 32)
    field = CoefficientField("affine", 4)
    measure = field.measure()
    a = coefficient_tt(field, mesh, measure)
    w = random_surrogate(mesh, (3, 2), (2, 2), np.random.default_rng(2))
    rep = estimate(w, a, mesh, measure)
    assert rep.eta == pytest.approx(eta_total(rep.eta_det, rep.eta_sto, rep.eta_alg))
    assert np.sum(rep.local_det**2) == pytest.approx(rep.eta_det**2, rel=1e-12)
    assert len(rep.local_sto) == w.n_modes + 1
    assert np.all(rep.local_sto >= 0)
    assert rep.local_sto.sum() <= rep.eta_sto * np.sqrt(len(rep.local_sto)) + 1e-14


def test_unit_coefficient_zero_surrogate():
    mesh = make_domain("l-shape", 48)
    measure = CoefficientField("affine", 1).measure()
    w = TensorTrain([np.zeros((1, mesh.n_vertices, 1)), np.zeros((1, 1, 1))])
    det, local = eta_det(w, unit_coefficient(mesh), mesh, measure)
    assert det == pytest.approx(np.sqrt(np.sum(mesh.diameters**2 * mesh.areas)), rel=1e-13)
    assert np.allclose(local**2, mesh.diameters**2 * mesh.areas)
    sto, _ = eta_sto(w, unit_coefficient(mesh), mesh, measure)
    assert sto == 0
    assert eta_alg(w, unit_coefficient(mesh), mesh, measure) > 0


def test_harmonic_patch_has_zero_residual():
    mesh = make_domain("unit-square", 32)
    measure = CoefficientField("affine", 1).measure()
    linear = 0.3 * mesh.vertices[:, 0] - 0.7 * mesh.vertices[:, 1]
    w = TensorTrain([linear[None, :, None], np.ones((1, 1, 1))])
    det, _ = eta_det(w, unit_coefficient(mesh), mesh, measure, EstimatorConfig(source=0.0))
    assert det <= 1e-12


def test_flux_with_unit_coefficient_is_gradient():
    mesh = make_domain("unit-square", 8)
    w = random_surrogate(mesh, (3, 2), (2, 2), np.random.default_rng(3))
    a = unit_coefficient(mesh, 2)
    flux = flux_tt(w, a, mesh, CoefficientField("affine", 2).measure().expansion_family(), None)
    assert flux.dims == w.dims
    grads = nodal_gradients(mesh, w.full().reshape(mesh.n_vertices, -1))
    assert np.allclose(flux.flux.full().reshape(mesh.n_triangles, 2, -1), grads, atol=1e-14)


def test_flux_of_deterministic_surrogate():
    mesh = make_domain("unit-square", 8)
    field = CoefficientField("affine", 3)
    measure = field.measure()
    a = coefficient_tt(field, mesh, measure)
    w0 = np.random.default_rng(4).standard_normal(mesh.n_vertices)
    w = TensorTrain([w0[None, :, None], np.ones((1, 1, 1))])
    flux = flux_tt(w, a, mesh, measure.expansion_family(), None)
    full = flux.flux.full().reshape(mesh.n_triangles, 2, *flux.dims)
    gamma = field.expansion_functions(mesh.vertices)[mesh.triangles].mean(axis=1)
    grad = nodal_gradients(mesh, w0)
    for ell in range(3):
        mu = [0, 0, 0]
        mu[ell] = 1
        expected = gamma[:, ell, None] / np.sqrt(3) * grad
        assert np.allclose(full[(slice(None), slice(None)) + tuple(mu)], expected, atol=1e-14)
    # a deterministic coefficient couples nothing: no stochastic remainder
    sto, _ = eta_sto(w, unit_coefficient(mesh, 3), mesh, measure)
    assert sto <= 1e-14


def test_galerkin_operator_symmetric_and_exact_solution():
    mesh = make_domain("unit-square", 8)
    for kind in ("affine", "lognormal"):
        field = CoefficientField(kind, 1, decay=4)
        measure = field.measure()
        a = coefficient_tt(field, mesh, measure, **({} if kind == "affine" else
                                                    {"tol": 1e-12, "degree_cap": 6}))
        dims = (2,)
        op = galerkin_operator(a, mesh, measure.expansion_family(), dims)
        rng = np.random.default_rng(5)
        nf = len(mesh.free_dofs)
        x = tt_from_dense(rng.standard_normal((nf, 2)))
        y = tt_from_dense(rng.standard_normal((nf, 2)))
        assert tt_inner(tt_apply(op, x), y) == pytest.approx(tt_inner(x, tt_apply(op, y)),
                                                              rel=1e-11)
        dense = np.column_stack([tt_apply(op, tt_from_dense(e.reshape(nf, 2))).full().ravel()
                                 for e in np.eye(2 * nf)])
        rhs = np.zeros((nf, 2))
        rhs[:, 0] = assemble_load(mesh, 1.0)
        sol = np.linalg.solve(dense, rhs.ravel()).reshape(nf, 2)
        full = np.zeros((mesh.n_vertices, 2))
        full[mesh.free_dofs] = sol
        assert eta_alg(tt_from_dense(full), a, mesh, measure) <= 1e-10
        assert eta_alg(tt_from_dense(0 * full), a, mesh, measure) > 0


def test_mean_problem_residual():
    mesh = make_domain("l-shape", 24)
    field = CoefficientField("affine", 2)
    measure = field.measure()
    a = coefficient_tt(field, mesh, measure)
    w0 = np.zeros(mesh.n_vertices)
    w0[mesh.free_dofs] = np.random.default_rng(6).standard_normal(len(mesh.free_dofs))
    w = TensorTrain([w0[None, :, None], np.ones((1, 1, 1))])
    k = assemble_stiffness(mesh, 1.0)
    res = k @ w0[mesh.free_dofs] - assemble_load(mesh, 1.0)
    expected = np.sqrt(res @ np.linalg.solve(k.toarray(), res))
    assert eta_alg(w, a, mesh, measure) == pytest.approx(expected, rel=1e-12)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.1, 10.0), st.integers(0, 10**6))
def test_homogeneity(c, seed):
    mesh = make_domain("unit-square", 8)
    field = CoefficientField("affine", 2)
    measure = field.measure()
    a = coefficient_tt(field, mesh, measure)
    w = random_surrogate(mesh, (2, 2), (2, 2), np.random.default_rng(seed))
    base = estimate(w, a, mesh, measure, EstimatorConfig(round_tol=None))
    scaled = estimate(tt_scale(w, c), a, mesh, measure, EstimatorConfig(round_tol=None, source=c))
    assert scaled.eta_det == pytest.approx(c * base.eta_det, rel=1e-10)
    assert scaled.eta_sto == pytest.approx(c * base.eta_sto, rel=1e-10)
    assert scaled.eta_alg == pytest.approx(c * base.eta_alg, rel=1e-10)


def test_affine_norms_are_plain_coefficient_norms():
    mesh = make_domain("unit-square", 8)
    field = CoefficientField("affine", 2)
    measure = field.measure()
    a = coefficient_tt(field, mesh, measure)
    w = random_surrogate(mesh, (2,), (2,), np.random.default_rng(7))
    flux = flux_tt(w, a, mesh, measure.expansion_family(), None)
    coeffs = flux.flux.full().reshape(mesh.n_triangles, 2, *flux.dims)
    coeffs[:, :, :2, :1] = 0
    plain = np.sqrt(np.sum(mesh.areas[:, None, None, None] * coeffs**2))
    assert eta_sto(w, a, mesh, measure, flux=flux)[0] == pytest.approx(plain, rel=1e-12)
