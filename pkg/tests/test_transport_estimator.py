import json

import numpy as np
import pytest

from conftest import random_filter, random_psd_grid, random_transport_problem
from oracles import ar1_autocov, central_difference, toeplitz_from_lags
from otspec.covariance_ingest import target_from_spectrum
from otspec.dual_solver import SolverOptions
from otspec.filter_bank import CovarianceTarget, gamma_apply, make_covariance_lag_bank
from otspec.spectral_core import FrequencyGrid, MatrixGrid, StateSpaceFilter, congruence, eval_transfer, hermitian_sqrt
from otspec.transport_estimator import (
    BoundaryError,
    Multiplier,
    TransportProblem,
    dual_gradient,
    dual_objective,
    estimate,
    indirect_spectrum,
    reconstruct_phi,
    solve_dual,
)

G256 = FrequencyGrid(256)
BANK = make_covariance_lag_bank(2, 3, G256)
BANK1 = make_covariance_lag_bank(1, 2, G256)


def interior_multiplier(prob, rng, fraction=0.5):
    d = rng.standard_normal(prob.bank.dim_range)
    t = min(1.0, fraction * prob.max_step(np.zeros_like(d), d))
    return Multiplier.from_coeffs(t * d, prob.bank)


def objective_by_matrix(prob, lam):
    """``J`` from the full symmetric matrix, bypassing Range Gamma coordinates."""
    M = prob.omega.values + prob.bank.quad_form(lam)
    K = prob.omega.values @ prob.psi.values @ prob.omega.values
    total = 0.0
    for Kk, Mk in zip(K, M):
        total += np.trace(np.linalg.solve(Mk, Kk)).real
    return total / len(K) + np.trace(prob.sigma_hat.sigma @ lam)


def test_objective_at_zero_is_weighted_prior_mass(rng):
    prob, _ = random_transport_problem(rng, BANK)
    expected = np.trace(prob.psi.values @ prob.omega.values, axis1=-2, axis2=-1).real.mean()
    assert dual_objective(Multiplier.zero(BANK), prob) == pytest.approx(expected, rel=1e-12)


def test_objective_identity_case_equals_channel_count():
    ident = MatrixGrid.identity(G256, 2, "psd")
    prob = TransportProblem(
        CovarianceTarget.from_matrix(np.eye(6), BANK), ident, ident.with_values(ident.values, "weight"), BANK
    )
    assert dual_objective(Multiplier.zero(BANK), prob) == pytest.approx(2.0, abs=1e-12)


def test_objective_matches_matrix_form_and_ignores_kernel(rng):
    prob, _ = random_transport_problem(rng, BANK)
    lam = interior_multiplier(prob, rng)
    J = dual_objective(lam, prob)
    assert objective_by_matrix(prob, lam.lam) == pytest.approx(J, rel=1e-12)
    for K in BANK.kernel_basis[:5]:
        assert objective_by_matrix(prob, lam.lam + 3.0 * K) == pytest.approx(J, abs=1e-9)


def test_objective_lower_bound(rng):
    prob, truth = random_transport_problem(rng, BANK)
    R = hermitian_sqrt(truth.values)
    bound = -np.trace(R @ prob.omega.values @ R, axis1=-2, axis2=-1).real.mean()
    for _ in range(10):
        lam = interior_multiplier(prob, rng, fraction=rng.uniform(0.1, 0.99))
        assert dual_objective(lam, prob) >= bound


def test_boundary_raises(rng):
    prob, _ = random_transport_problem(rng, BANK)
    d = rng.standard_normal(BANK.dim_range)
    t = prob.max_step(np.zeros_like(d), d)
    outside = Multiplier.from_coeffs(1.5 * t * d, BANK)
    with pytest.raises(BoundaryError):
        dual_objective(outside, prob)
    with pytest.raises(BoundaryError):
        dual_gradient(outside, prob)
    with pytest.raises(BoundaryError):
        reconstruct_phi(outside, prob)


def test_gradient_vanishes_at_prior_target(rng):
    psi = random_psd_grid(rng, G256)
    prob = TransportProblem(
        target_from_spectrum(psi, BANK), psi, MatrixGrid.identity(G256, 2), BANK
    )
    assert np.linalg.norm(dual_gradient(Multiplier.zero(BANK), prob)) < 1e-12


def test_gradient_against_central_differences(rng):
    prob, _ = random_transport_problem(rng, BANK)
    for _ in range(5):
        lam = interior_multiplier(prob, rng, 0.3)
        d = rng.standard_normal(BANK.dim_range)
        d /= np.linalg.norm(d)
        fd = central_difference(lambda c: prob.evaluate(c)[0], lam.coeffs, d)
        G = dual_gradient(lam, prob)
        analytic = np.trace(G @ BANK.assemble(d))
        assert abs(fd - analytic) <= 1e-5 * max(abs(analytic), 1e-3)


def test_sampled_convexity(rng):
    prob, _ = random_transport_problem(rng, BANK)
    for _ in range(10):
        a, b = interior_multiplier(prob, rng, 0.9), interior_multiplier(prob, rng, 0.9)
        mid = Multiplier.from_coeffs(0.5 * (a.coeffs + b.coeffs), BANK)
        avg = 0.5 * (dual_objective(a, prob) + dual_objective(b, prob))
        assert dual_objective(mid, prob) <= avg + 1e-9


def test_hessian_against_gradient_differences(rng):
    prob, _ = random_transport_problem(rng, BANK)
    c = interior_multiplier(prob, rng, 0.3).coeffs
    d = rng.standard_normal(BANK.dim_range)
    h = 1e-6
    fd = (prob.evaluate(c + h * d)[1] - prob.evaluate(c - h * d)[1]) / (2 * h)
    assert np.allclose(prob.hessian(c) @ d, fd, rtol=1e-5, atol=1e-6 * np.linalg.norm(fd))


def test_scalar_reconstruction_closed_form():
    g = G256
    omega, psi, c = 2.0, 3.0, 0.4
    prob = TransportProblem(
        target_from_spectrum(MatrixGrid.constant(g, [[1.0]]), BANK1),
        MatrixGrid.constant(g, [[psi]]),
        MatrixGrid.constant(g, [[omega]], "weight"),
        BANK1,
    )
    # Lambda = c I gives G^* Lambda G = 2c at every frequency for two lags
    lam = Multiplier.from_coeffs(BANK1.coords(c * np.eye(2)), BANK1)
    phi = reconstruct_phi(lam, prob)
    assert np.allclose(phi.values, omega**2 * psi / (omega + 2 * c) ** 2, atol=1e-12)
    assert np.array_equal(reconstruct_phi(Multiplier.zero(BANK1), prob).values, prob.psi.values)


def test_prior_recovery(rng):
    psi = random_psd_grid(rng, G256)
    om = random_psd_grid(rng, G256, order=1, radius=0.3)
    prob = TransportProblem(target_from_spectrum(psi, BANK), psi, om.with_values(om.values, "weight"), BANK)
    res = estimate(prob)
    assert res.converged
    assert np.linalg.norm(res.multiplier.lam) <= 1e-6
    assert np.max(np.abs(res.phi_hat.values - psi.values)) <= 1e-6


def test_ar1_moment_matching():
    c0, c1 = ar1_autocov(0.5, 0), ar1_autocov(0.5, 1)
    S = toeplitz_from_lags([np.array([[c0]]), np.array([[c1]])])
    one = MatrixGrid.identity(G256, 1, "psd")
    prob = TransportProblem(CovarianceTarget.from_matrix(S, BANK1), one, one.with_values(one.values, "weight"), BANK1)
    res = estimate(prob)
    assert res.converged
    assert np.max(np.abs(gamma_apply(BANK1, res.phi_hat) - S)) <= 1e-6


def test_random_problems_match_moments(rng):
    for _ in range(3):
        prob, _ = random_transport_problem(rng, BANK)
        res = estimate(prob)
        assert res.converged and res.moment_residual <= 1e-6


def test_uniqueness_from_two_starts(rng):
    prob, _ = random_transport_problem(rng, BANK)
    a = solve_dual(prob)
    b = solve_dual(prob, start=interior_multiplier(prob, rng, 0.8))
    assert a.info.converged and b.info.converged
    assert np.linalg.norm(a.lam - b.lam) <= 1e-6 * (1 + np.linalg.norm(a.lam))


def test_descent_along_accepted_steps(rng):
    prob, _ = random_transport_problem(rng, BANK)
    hist = np.array(solve_dual(prob).info.history)
    # strict Armijo decrease, except for steps inside the quadrature noise band
    slack = SolverOptions().flat_rtol * (1 + np.abs(hist[:-1]))
    assert np.all(np.diff(hist) <= slack)
    assert hist[-1] < hist[0]


def test_nonconvergence_is_reported(rng):
    prob, _ = random_transport_problem(rng, BANK)
    res = estimate(prob, SolverOptions(max_iter=1, continuation=False))
    assert not res.converged and "maximum iterations" in res.message


def test_infeasible_target_rejected(rng):
    psi = random_psd_grid(rng, G256)
    bad = CovarianceTarget.from_matrix(np.eye(6) + 0.3 * BANK.kernel_basis[0], BANK)
    with pytest.raises(ValueError, match="not feasible"):
        TransportProblem(bad, psi, MatrixGrid.identity(G256, 2), BANK)


def test_result_json(rng):
    prob, _ = random_transport_problem(rng, BANK)
    obj = json.loads(json.dumps(estimate(prob).to_dict()))
    assert obj["method"] == "transport" and obj["phi_xi_hat"] is None
    assert len(obj["multiplier"]["coeffs"]) == BANK.dim_range


# indirect measurements ----------------------------------------------------


def test_indirect_identity_and_round_trip(rng):
    phi = random_psd_grid(rng, G256)
    same = indirect_spectrum(phi, StateSpaceFilter.constant(np.eye(2)))
    assert np.allclose(same.values, phi.values, atol=1e-15)
    h_inv = random_filter(rng)
    back = indirect_spectrum(indirect_spectrum(phi, h_inv, "to_source"), h_inv, "to_measurement")
    assert np.max(np.abs(back.values - phi.values)) <= 1e-9
    with pytest.raises(ValueError):
        indirect_spectrum(phi, h_inv, "sideways")


def test_indirect_scalar_first_order():
    g = G256
    h_inv = StateSpaceFilter([[0.5]], [[1.0]], [[0.5]], [[1.0]])  # 1 / (1 - 0.5 z^{-1})
    phi = MatrixGrid.identity(g, 1, "psd")
    src = indirect_spectrum(phi, h_inv).values[:, 0, 0].real
    assert np.allclose(src, np.abs(1 - 0.5 * np.exp(-1j * g.thetas)) ** 2, atol=1e-12)


def test_indirect_estimate_matches_factored_form(rng):
    h_inv = random_filter(rng)
    psi_xi = random_psd_grid(rng, G256)
    truth = random_psd_grid(rng, G256)
    prob = TransportProblem.indirect(target_from_spectrum(truth, BANK), psi_xi, h_inv, BANK)
    res = estimate(prob)
    assert res.converged
    Hi = eval_transfer(h_inv, G256).values
    GLG = BANK.quad_form(res.multiplier.lam)
    inner = np.eye(2) + np.conj(np.swapaxes(Hi, -1, -2)) @ GLG @ Hi
    Ti = np.linalg.inv(inner)
    ref = Ti @ psi_xi.values @ np.conj(np.swapaxes(Ti, -1, -2))
    assert np.max(np.abs(res.phi_xi_hat.values - ref)) <= 1e-9 * np.max(np.abs(ref))
    # the prior on the measurement side is the congruence of the source prior
    assert np.allclose(prob.psi.values, congruence(eval_transfer(h_inv, G256), psi_xi).values, atol=1e-12)
