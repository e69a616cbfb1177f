import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_filter, random_is_problem, random_psd_grid
from oracles import central_difference, is_divergence_loop
from otspec.covariance_ingest import target_from_spectrum
from otspec.dual_solver import SolverOptions
from otspec.filter_bank import make_covariance_lag_bank
from otspec.itakura_saito import (
    ISProblem,
    estimate_is,
    is_divergence,
    is_dual_gradient,
    is_dual_objective,
    reconstruct_phi_is,
    solve_is_dual,
    weighted_is_divergence,
)
from otspec.spectral_core import FrequencyGrid, MatrixGrid, congruence, eval_transfer
from otspec.transport_estimator import BoundaryError, Multiplier, indirect_spectrum

G256 = FrequencyGrid(256)
BANK = make_covariance_lag_bank(2, 3, G256)
BANK1 = make_covariance_lag_bank(1, 2, G256)


def interior_multiplier(prob, rng, fraction=0.5):
    d = rng.standard_normal(prob.bank.dim_range)
    t = min(1.0, fraction * prob.max_step(np.zeros_like(d), d))
    return Multiplier.from_coeffs(t * d, prob.bank)


# divergences ------------------------------------------------------------


def test_scalar_divergence_closed_form():
    one, two = MatrixGrid.constant(G256, [[1.0]]), MatrixGrid.constant(G256, [[2.0]])
    assert is_divergence(one, two) == pytest.approx(1 - np.log(2), abs=1e-14)
    assert is_divergence(two, two) == 0.0


def test_divergence_matches_loop_oracle(rng):
    psi, phi = random_psd_grid(rng, G256), random_psd_grid(rng, G256)
    assert is_divergence(psi, phi) == pytest.approx(is_divergence_loop(psi.values, phi.values), rel=1e-10)


def test_congruence_invariance(rng):
    psi, phi = random_psd_grid(rng, G256), random_psd_grid(rng, G256)
    for _ in range(3):
        T = eval_transfer(random_filter(rng), G256)
        moved = is_divergence(congruence(T, psi), congruence(T, phi))
        assert moved == pytest.approx(is_divergence(psi, phi), abs=1e-9)


def test_weighted_divergence_reductions(rng):
    psi, phi = random_psd_grid(rng, G256), random_psd_grid(rng, G256)
    ident = MatrixGrid.identity(G256, 2)
    assert weighted_is_divergence(psi, phi, ident) == pytest.approx(is_divergence(psi, phi), abs=1e-10)
    a, b = MatrixGrid.constant(G256, [[1.0]]), MatrixGrid.constant(G256, [[2.0]])
    two = MatrixGrid.constant(G256, [[2.0]], "weight")
    assert weighted_is_divergence(a, b, two) == pytest.approx(2 * is_divergence(a, b), abs=1e-14)


def test_divergence_input_checks(rng):
    psi = random_psd_grid(rng, G256)
    with pytest.raises(ValueError):
        is_divergence(psi, random_psd_grid(rng, FrequencyGrid(128)))
    zero = MatrixGrid(G256, np.zeros((256, 2, 2)), "psd", eps_coercive=0.0)
    with pytest.raises(ValueError, match="coercive"):
        is_divergence(psi, zero)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), shape=st.sampled_from(["scalar", "commuting"]))
def test_weighted_divergence_zero_iff_equal(seed, shape):
    r = np.random.default_rng(seed)
    g = FrequencyGrid(64)
    psi = random_psd_grid(r, g)
    if shape == "scalar":
        w = (1.5 + np.cos(g.thetas + r.uniform(0, np.pi)))[:, None, None] * np.eye(2)
    else:
        w = psi.values @ psi.values + np.eye(2)  # commutes with psi
    omega = MatrixGrid(g, w, "weight")
    scale = np.trace(w, axis1=-2, axis2=-1).real.mean()
    assert weighted_is_divergence(psi, psi, omega) <= 1e-12 * scale
    shifted = psi.with_values(psi.values + 0.1 * np.eye(2))
    assert weighted_is_divergence(psi, shifted, omega) > 0
    assert is_divergence(psi, shifted) > 0


def test_weighted_divergence_matches_loop_with_scalar_weight(rng):
    psi, phi = random_psd_grid(rng, G256), random_psd_grid(rng, G256)
    w = 1.2 + 0.5 * np.sin(G256.thetas)
    omega = MatrixGrid(G256, w[:, None, None] * np.eye(2), "weight")
    terms = [is_divergence_loop(psi.values[k : k + 1], phi.values[k : k + 1]) for k in range(256)]
    assert weighted_is_divergence(psi, phi, omega) == pytest.approx(np.mean(w * np.array(terms)), rel=1e-10)


def test_weighted_divergence_noncommuting_weight_warns():
    g = FrequencyGrid(8)
    psi = MatrixGrid.constant(g, np.diag([1.0, 4.0]))
    # a small step against the gradient, which does not vanish at phi = psi
    phi = MatrixGrid.constant(g, np.diag([1.0, 4.0]) - 0.02 * np.array([[0.0, 1.0], [1.0, 0.0]]))
    omega = MatrixGrid.constant(g, np.array([[1.0, 0.9], [0.9, 1.0]]), "weight")
    with pytest.warns(RuntimeWarning, match="commute"):
        assert weighted_is_divergence(psi, phi, omega) < 0


# dual --------------------------------------------------------------------


def test_problem_validation(rng):
    prob, _ = random_is_problem(rng, BANK)
    assert prob.method == "is"
    with pytest.raises(ValueError, match="coercive"):
        ISProblem(prob.sigma_hat, prob.psi, BANK, np.zeros(256))
    with pytest.raises(ValueError, match="psi"):
        ISProblem(prob.sigma_hat, random_psd_grid(rng, G256, m=1), BANK)
    assert ISProblem(prob.sigma_hat, prob.psi, BANK, 2.0).method == "is_weighted"


@pytest.mark.parametrize("weighted", [False, True])
def test_gradient_against_central_differences(rng, weighted):
    prob, _ = random_is_problem(rng, BANK, weighted=weighted)
    for _ in range(5):
        lam = interior_multiplier(prob, rng, 0.3)
        d = rng.standard_normal(BANK.dim_range)
        d /= np.linalg.norm(d)
        fd = central_difference(lambda c: prob.evaluate(c)[0], lam.coeffs, d)
        analytic = np.trace(is_dual_gradient(lam, prob) @ BANK.assemble(d))
        assert abs(fd - analytic) <= 1e-5 * max(abs(analytic), 1e-3)


@pytest.mark.parametrize("weighted", [False, True])
def test_hessian_against_gradient_differences(rng, weighted):
    prob, _ = random_is_problem(rng, BANK, weighted=weighted)
    c = interior_multiplier(prob, rng, 0.3).coeffs
    d = rng.standard_normal(BANK.dim_range)
    h = 1e-6
    fd = (prob.evaluate(c + h * d)[1] - prob.evaluate(c - h * d)[1]) / (2 * h)
    assert np.allclose(prob.hessian(c) @ d, fd, rtol=1e-5, atol=1e-6 * np.linalg.norm(fd))


def test_sampled_convexity(rng):
    prob, _ = random_is_problem(rng, BANK)
    for _ in range(10):
        a, b = interior_multiplier(prob, rng, 0.9), interior_multiplier(prob, rng, 0.9)
        mid = Multiplier.from_coeffs(0.5 * (a.coeffs + b.coeffs), BANK)
        avg = 0.5 * (is_dual_objective(a, prob) + is_dual_objective(b, prob))
        assert is_dual_objective(mid, prob) <= avg + 1e-9


def test_boundary_raises(rng):
    prob, _ = random_is_problem(rng, BANK)
    d = rng.standard_normal(BANK.dim_range)
    outside = Multiplier.from_coeffs(1.5 * prob.max_step(np.zeros_like(d), d) * d, BANK)
    for fn in (is_dual_objective, is_dual_gradient, reconstruct_phi_is):
        with pytest.raises(BoundaryError):
            fn(outside, prob)


def test_scalar_reconstruction_closed_form():
    psi, omega, c = 3.0, 2.0, 0.4
    prob = ISProblem(
        target_from_spectrum(MatrixGrid.constant(G256, [[1.0]]), BANK1),
        MatrixGrid.constant(G256, [[psi]]),
        BANK1,
        omega,
    )
    lam = Multiplier.from_coeffs(BANK1.coords(c * np.eye(2)), BANK1)
    phi = reconstruct_phi_is(lam, prob)
    assert np.allclose(phi.values, 1.0 / (1.0 / psi + 2 * c / omega), atol=1e-12)


def test_prior_recovery(rng):
    psi = random_psd_grid(rng, G256)
    res = estimate_is(ISProblem(target_from_spectrum(psi, BANK), psi, BANK))
    assert res.converged and res.iterations == 0
    assert np.linalg.norm(res.multiplier.lam) <= 1e-6
    assert np.max(np.abs(res.phi_hat.values - psi.values)) <= 1e-6


@pytest.mark.parametrize("weighted", [False, True])
def test_random_problems_match_moments(rng, weighted):
    for _ in range(3):
        prob, _ = random_is_problem(rng, BANK, weighted=weighted)
        res = estimate_is(prob)
        assert res.converged and res.moment_residual <= 1e-6
        assert res.method == prob.method


def test_two_start_probe_runs(rng):
    # existence is guaranteed, uniqueness is only probed and reported
    prob, _ = random_is_problem(rng, BANK)
    a = solve_is_dual(prob)
    b = solve_is_dual(prob, start=interior_multiplier(prob, rng, 0.8))
    assert a.info.converged and b.info.converged
    gap = np.linalg.norm(a.lam - b.lam) / (1 + np.linalg.norm(a.lam))
    print(f"IS two-start relative gap {gap:.2e}")


def test_indirect_form_matches_congruence(rng):
    h_inv = random_filter(rng)
    Hi = eval_transfer(h_inv, G256)
    psi_xi = random_psd_grid(rng, G256)
    truth = random_psd_grid(rng, G256)
    prob = ISProblem(target_from_spectrum(truth, BANK), congruence(Hi, psi_xi), BANK, h_inv=h_inv)
    res = estimate_is(prob)
    assert res.converged
    GLG = BANK.quad_form(res.multiplier.lam)
    direct = np.linalg.inv(np.linalg.inv(psi_xi.values) + np.conj(np.swapaxes(Hi.values, -1, -2)) @ GLG @ Hi.values)
    assert np.max(np.abs(res.phi_xi_hat.values - direct)) <= 1e-9 * np.max(np.abs(direct))
    assert np.allclose(indirect_spectrum(res.phi_hat, h_inv).values, res.phi_xi_hat.values, atol=1e-12)


def test_result_json_tagged(rng):
    prob, _ = random_is_problem(rng, BANK, weighted=True)
    obj = json.loads(json.dumps(estimate_is(prob, SolverOptions(max_iter=3, continuation=False)).to_dict()))
    assert obj["method"] == "is_weighted" and obj["converged"] is False
