import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from helpers import qp_oracle, random_qp
from pdnr.errors import QpInfeasibleError
from pdnr.qp import INFEASIBLE, OK, QpProblem, kkt_residuals, solve_qp, solve_qp_batch


@given(st.integers(0, 2**32 - 1))
def test_matches_enumeration_oracle(seed):
    rng = np.random.default_rng(seed)
    H, c, lb, ub, E, d = random_qp(rng)
    ref = qp_oracle(H, c, lb, ub, E, d)
    sol = solve_qp(QpProblem(H, c, lb, ub, E, d))
    assert np.max(np.abs(sol.x - ref[1])) <= 1e-5
    assert sol.eq_residual <= 1e-6 and sol.stationarity <= 1e-6


@given(st.integers(0, 2**32 - 1))
def test_warm_start_does_not_change_answer(seed):
    rng = np.random.default_rng(seed)
    H, c, lb, ub, E, d = random_qp(rng)
    cold = solve_qp(QpProblem(H, c, lb, ub, E, d)).x
    x0 = np.where(rng.random(len(c)) < 0.5, lb, ub)
    warm = solve_qp(QpProblem(H, c, lb, ub, E, d), warm_start=x0).x
    assert np.allclose(cold, warm, atol=1e-9)


def test_batch_agrees_with_single(rng):
    B, n, m = 8, 5, 2
    probs = []
    while len(probs) < B:
        H, c, lb, ub, E, d = random_qp(rng, n_max=n, m_max=m)
        if len(c) == n and E.shape[0] == m:
            probs.append((H, c, lb, ub, E, d))
    stack = [np.stack(a) for a in zip(*probs)]
    x, nu, status, _ = solve_qp_batch(*stack)
    assert np.all(status == OK)
    for k, p in enumerate(probs):
        assert np.allclose(x[k], solve_qp(QpProblem(*p)).x, atol=1e-10)


def test_pinned_variables_stay_put():
    H = np.eye(3)
    c = np.array([5.0, -5.0, 1.0])
    lb = np.array([0.3, -1.0, -1.0])
    ub = np.array([0.3, 1.0, 1.0])
    E = np.array([[1.0, 1.0, 1.0]])
    d = np.array([0.5])
    sol = solve_qp(QpProblem(H, c, lb, ub, E, d))
    assert sol.x[0] == 0.3
    assert np.allclose(sol.x, qp_oracle(H, c, lb, ub, E, d)[1], atol=1e-9)


def test_pinned_block_may_be_singular():
    # H is singular on the pinned coordinate only
    H = np.diag([0.0, 1.0])
    sol = solve_qp(QpProblem(H, np.array([1.0, -2.0]), np.array([1.0, -5.0]), np.array([1.0, 5.0])))
    assert np.allclose(sol.x, [1.0, 2.0])


def test_semidefinite_via_proximal_point():
    H = np.zeros((3, 3))
    H[0, 0] = 1.0
    c = np.array([0.0, -1.0, 1.0])
    sol = solve_qp(QpProblem(H, c, -np.ones(3), np.ones(3)))
    assert np.allclose(sol.x, [0.0, 1.0, -1.0], atol=1e-6)


def test_sparse_input():
    H = sp.identity(4, format="csr")
    E = sp.csr_matrix(np.ones((1, 4)))
    sol = solve_qp(QpProblem(H, np.zeros(4), -np.ones(4), np.ones(4), E, np.array([2.0])))
    assert np.allclose(sol.x, 0.5)


def test_infeasible_detected():
    E = np.array([[1.0, 1.0]])
    with pytest.raises(QpInfeasibleError):
        solve_qp(QpProblem(np.eye(2), np.zeros(2), np.zeros(2), np.ones(2), E, np.array([3.0])))
    x, _, status, _ = solve_qp_batch(np.eye(2)[None], np.zeros((1, 2)), np.zeros((1, 2)), np.ones((1, 2)), E[None], np.array([[3.0]]))
    assert status[0] == INFEASIBLE


def test_problem_validation():
    with pytest.raises(ValueError):
        QpProblem(np.eye(2), np.zeros(2), np.ones(2), np.zeros(2))
    with pytest.raises(ValueError):
        QpProblem(np.eye(3), np.zeros(2), 0, 1)


def test_kkt_residuals_detect_wrong_point():
    H, c = np.eye(2), np.array([-1.0, -1.0])
    lb, ub = np.zeros(2), np.full(2, 0.5)
    E, d = np.zeros((0, 2)), np.zeros(0)
    assert kkt_residuals(H, c, E, d, lb, ub, np.full(2, 0.5), np.zeros(0))[1] == 0.0
    assert kkt_residuals(H, c, E, d, lb, ub, np.full(2, 0.25), np.zeros(0))[1] > 0.1
