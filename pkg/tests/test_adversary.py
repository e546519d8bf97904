import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from distcert.adversary import (GreedyStepProblem, NoLaplacianError, greedy_step, graph_violation,
                                reconstruct_laplacian, replay_with_laplacians, sector_violation, worst_mode,
                                worst_trajectory)
from distcert.algorithms import catalog
from distcert.certify import ProblemClass, certify_rate, lyapunov_value
from distcert.linalg import nullspace_basis, projector
from distcert.simulate import empirical_rate, random_laplacian
from distcert.svl import design

M, L = 1.0, 10.0


def test_sector_violation_examples():
    y = np.array([[1.0, -2.0]])
    assert sector_violation(y, M * y, M, L)[0] == pytest.approx(0.0)
    mid = 0.5 * (M + L) * y
    assert sector_violation(y, mid, M, L)[0] == pytest.approx((L - M) ** 2 / 2 * 5.0)
    assert sector_violation(y, 2 * L * y, M, L)[0] < 0
    with pytest.raises(ValueError):
        sector_violation(np.ones((2, 2)), np.ones((2, 3)), M, L)


def test_graph_violation_examples():
    z = np.ones((4, 1, 2)) * [1.0, 3.0]
    assert graph_violation(z, np.zeros_like(z), 0.5) == pytest.approx(0.0)
    rng = np.random.default_rng(0)
    n = 6
    Lap = random_laplacian(n, 0.4, rng)
    z = rng.standard_normal((n, 2))
    assert graph_violation(z, Lap @ z, 0.4) >= -1e-12
    # a Laplacian further from I - Pi than sigma allows
    Pc = np.eye(n) - projector(n)
    zc = Pc @ rng.standard_normal(n)
    assert graph_violation(zc, (1 - 2 * 0.3) * zc, 0.3) < 0


@pytest.fixture(scope="module")
def svl06():
    pc = ProblemClass(M, L, 0.6)
    r = design(pc).realization()
    rho, cert = certify_rate(r, pc)
    return r, pc, rho, cert


def test_zero_state_has_zero_increment(svl06):
    r, pc, rho, cert = svl06
    prob = GreedyStepProblem(r, pc, cert, np.zeros((3, r.n_states, 1)), restarts=2)
    th, inc = greedy_step(prob, seed=0)
    assert inc == pytest.approx(0.0, abs=1e-12)


def test_slack_rate_gives_strict_decrease(svl06):
    r, pc, rho, cert = svl06
    loose = dataclasses.replace(cert, rho=rho + 0.05)
    rng = np.random.default_rng(1)
    X = rng.standard_normal((3, r.n_states, 2))
    # the certificate covers states whose average satisfies the invariant
    N = nullspace_basis(r.F_x)
    X += (N @ N.T - np.eye(r.n_states)) @ X.mean(axis=0)
    X /= np.sqrt(lyapunov_value(cert, X, 3))
    prob = GreedyStepProblem(r, pc, loose, X, restarts=4)
    _, inc = greedy_step(prob, seed=1)
    assert inc < -0.05


def test_gradient_descent_worst_rate():
    pc = ProblemClass(M, L, 0.0)
    r = design(pc).realization()
    rho, cert = certify_rate(r, pc)
    res = worst_trajectory(r, pc, cert, 2, 1, 30, seed=0, restarts=2)
    assert empirical_rate(res.trajectory.x_err_norms(), 10) == pytest.approx(9 / 11, abs=1e-2)


def test_worst_trajectory_respects_certificate(svl06):
    r, pc, rho, cert = svl06
    res = worst_trajectory(r, pc, cert, 3, 2, 20, seed=2, restarts=2)
    assert np.all(res.increments <= 1e-9 * res.V[0])
    k = np.arange(len(res.V))
    assert np.all(res.V <= res.V[0] * rho ** (2 * k) * (1 + 1e-6))
    for st_ in res.steps:
        assert st_["sector_min"] >= -1e-7 and st_["graph_min"] >= -1e-7


def test_worst_mode_matches_certified_rate(svl06):
    r, pc, rho, _ = svl06
    mode = worst_mode(r, pc)
    assert mode.radius == pytest.approx(0.8741910, abs=1e-5)
    assert mode.radius <= rho + 1e-6
    real = worst_mode(r, pc, complex_gains=False)
    assert real.radius <= mode.radius + 1e-12 and not real.is_complex


def test_reconstruct_consensus_signal():
    n = 5
    z = np.ones((n, 1)) * 2.5
    Lap, nrm = reconstruct_laplacian(z, np.zeros((n, 1)), n, 1)
    assert nrm < 1e-12
    np.testing.assert_allclose(Lap, np.eye(n) - projector(n), atol=1e-12)


@settings(max_examples=10, deadline=None)
@given(st.integers(3, 8), st.floats(0.05, 0.9), st.integers(1, 2), st.integers(0, 2 ** 31))
def test_reconstruct_recovers_feasible_laplacian(n, sigma, d, seed):
    rng = np.random.default_rng(seed)
    L0 = random_laplacian(n, sigma, rng)
    z = rng.standard_normal((n, d))
    Lap, nrm = reconstruct_laplacian(z, L0 @ z, n, d)
    assert nrm <= sigma + 1e-6
    np.testing.assert_allclose(Lap @ z, L0 @ z, atol=1e-7)
    np.testing.assert_allclose(Lap @ np.ones(n), 0, atol=1e-9)
    np.testing.assert_allclose(np.ones(n) @ Lap, 0, atol=1e-9)


def test_reconstruct_rejects_unbalanced_v():
    with pytest.raises(NoLaplacianError):
        reconstruct_laplacian(np.arange(3.0), np.ones(3), 3, 1)
    with pytest.raises(NoLaplacianError):
        # z in consensus but v nonzero
        reconstruct_laplacian(np.ones(3), np.array([1.0, -1.0, 0.0]), 3, 1)


def test_replay_reproduces_worst_trajectory():
    pc = ProblemClass(M, L, 0.5)
    r = catalog("NIDS", 0.15, 1.0, m=M, L=L)
    rho, cert = certify_rate(r, pc)
    res = worst_trajectory(r, pc, cert, 4, 1, 12, seed=0, restarts=2, reconstruct=True)
    Ls = [np.array(s["laplacian"]) for s in res.steps]
    assert max(s["achieved_norm"] for s in res.steps) <= pc.sigma + 1e-4
    X = replay_with_laplacians(r, res.trajectory.x[0], res.trajectory.u, Ls)
    np.testing.assert_allclose(X, res.trajectory.x[:len(X)], atol=1e-8)


def test_greedy_problem_validation(svl06):
    r, pc, _, cert = svl06
    with pytest.raises(ValueError):
        GreedyStepProblem(r, pc, cert, np.zeros((1, r.n_states, 1)))
    with pytest.raises(ValueError):
        GreedyStepProblem(r, pc, cert, np.zeros((3, r.n_states + 1, 1)))
    with pytest.raises(ValueError):
        worst_trajectory(r, pc, cert, 2, 1, 5)
