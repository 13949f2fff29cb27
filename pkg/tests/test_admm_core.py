import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import random_case
from pdnr import admm_core as ac
from pdnr.errors import InfeasibleError
from pdnr.graph import is_spanning_arborescence
from pdnr.qp import solve_qp


def random_agent_state(case, i, rng, binary_b=True):
    m, n = case.n_arcs, case.n_nodes
    ag = ac.make_agent(case, i, (rng.random(m) < 0.5).astype(float) if binary_b else rng.normal(size=m))
    ag.primal = ac.AgentPrimal(*(rng.normal(size=m) for _ in range(4)), rng.uniform(0.8, 1.2, n))
    ag.duals = ac.AgentDuals(rng.normal(size=m), rng.normal(size=m), rng.normal(size=m), rng.normal(size=4 * m + n))
    return ag


def all_binary(m):
    return np.array(list(itertools.product((0.0, 1.0), repeat=m)))


def test_weight_identity_exhaustive_toy(toy, rng):
    ag = random_agent_state(toy, 2, rng)
    h = ac.projection_weights(toy, ag, ag.primal, ag.duals)
    du = ag.duals
    h0 = ac.penalty_H(toy, ag, ag.primal, np.zeros(toy.n_arcs), du.alpha, du.beta, du.gamma)
    for b in all_binary(toy.n_arcs)[::7]:
        hb = ac.penalty_H(toy, ag, ag.primal, b, du.alpha, du.beta, du.gamma)
        assert 2.0 * (hb - h0) == pytest.approx(h @ b, abs=1e-10)


@given(st.integers(0, 2**32 - 1))
def test_weight_identity_random_voltage_cases(seed):
    rng = np.random.default_rng(seed)
    case = random_case(rng, int(rng.integers(2, 5)), extra=1, voltage=True)
    i = int(rng.integers(case.n_nodes))
    ag = random_agent_state(case, i, rng)
    h = ac.projection_weights(case, ag, ag.primal, ag.duals)
    du = ag.duals
    h0 = ac.penalty_H(case, ag, ag.primal, np.zeros(case.n_arcs), du.alpha, du.beta, du.gamma)
    for b in all_binary(case.n_arcs):
        hb = ac.penalty_H(case, ag, ag.primal, b, du.alpha, du.beta, du.gamma)
        assert abs(2.0 * (hb - h0) - h @ b) <= 1e-10 * max(1.0, abs(hb))


def test_b_update_is_exact_minimiser_over_trees(toy, rng):
    from pdnr.graph import enumerate_arborescences

    ag = random_agent_state(toy, 0, rng)
    h = ac.projection_weights(toy, ag, ag.primal, ag.duals)
    b = ac.b_update(toy, ag, h)
    du = ag.duals
    val = ac.penalty_H(toy, ag, ag.primal, b, du.alpha, du.beta, du.gamma)
    for s in enumerate_arborescences(toy.digraph):
        assert val <= ac.penalty_H(toy, ag, ag.primal, s.astype(float), du.alpha, du.beta, du.gamma) + 1e-12


def test_b_update_respects_forbidden(toy, rng):
    ag = random_agent_state(toy, 1, rng)
    ag.forbidden[list(toy.line_arcs((1, 2)))] = True
    b = ac.b_update(toy, ag, rng.normal(size=toy.n_arcs) - 10)
    assert is_spanning_arborescence(toy.digraph, b) and not b[ag.forbidden].any()
    ag.forbidden[:] = True
    with pytest.raises(InfeasibleError):
        ac.b_update(toy, ag, np.zeros(toy.n_arcs))


def test_primal_bounds(baran, toy):
    lb, ub = ac.primal_bounds(baran)
    m = baran.n_arcs
    assert lb[4 * m + baran.root] == ub[4 * m + baran.root] == 1.0
    assert np.all(lb[: 4 * m] == 0)
    lo, hi = baran.u_bounds
    assert lo == pytest.approx(0.81) and hi == pytest.approx(1.21)
    lb, ub = ac.primal_bounds(toy)
    assert np.all(lb[4 * toy.n_arcs :] == 1.0) and np.all(ub[4 * toy.n_arcs :] == 1.0)


def test_initial_switches_deterministic(baran):
    a = ac.initial_switches(baran, 1.0, 3)
    assert np.array_equal(a, ac.initial_switches(baran, 1.0, 3))
    assert not np.array_equal(a, ac.initial_switches(baran, 1.0, 4))
    assert np.allclose(ac.initial_switches(baran, 2.0, 3), 2 * a)


def test_config_validation():
    for bad in (dict(delta=0), dict(eta=-1), dict(k_max=0), dict(sigma=0), dict(restarts=0)):
        with pytest.raises(ValueError):
            ac.SolverConfig(**bad)
    assert ac.SolverConfig().tolerance(33) == pytest.approx(0.0033)
    assert ac.SolverConfig(eta=0.5).tolerance(33) == 0.5


def _batch_inputs(case, layout, rng, binary):
    N, M = case.n_nodes, case.n_arcs
    dim = layout.dim
    X = np.clip(rng.uniform(0, 1, (N, dim)), layout.lb, layout.ub)
    lam = rng.normal(size=(N, dim))
    al, be = rng.normal(size=(N, M)), rng.normal(size=(N, M))
    ga = rng.normal(size=(N, M)) * layout.incident
    b = (rng.random((N, M)) < 0.5).astype(float) if binary else rng.normal(size=(N, M))
    D = layout.nbrs.shape[1]
    Xn = np.zeros((N, D, dim))
    for i in range(N):
        for s, j in enumerate(layout.nbrs[i]):
            if j >= 0:
                Xn[i, s] = X[j]
    rho = np.stack([case.rho1, case.rho2], 1)
    return X, Xn, lam, al, be, ga, b, rho


@pytest.mark.parametrize("name", ["toy", "baran"])
def test_batched_x_update_matches_reference_qp(name, request, rng):
    case = request.getfixturevalue(name)
    layout = ac.Layout.build(case)
    M = case.n_arcs
    delta = 0.7
    for binary in (False, True):
        X, Xn, lam, al, be, ga, b, rho = _batch_inputs(case, layout, rng, binary)
        ids = np.arange(case.n_nodes)
        out = ac.x_update_batch(layout, ids, X, Xn, lam, al, be, ga, b, rho, delta)
        for i in range(0, case.n_nodes, 4 if name == "baran" else 1):
            ag = ac.make_agent(case, i, b[i])
            ag.primal = ac.AgentPrimal.from_vector(X[i], M)
            ag.duals = ac.AgentDuals(al[i], be[i], ga[i], lam[i])
            nbp = {j: ac.AgentPrimal.from_vector(X[j], M) for j in ag.neighbors}
            ref = solve_qp(ac.build_x_update(case, ag, nbp, ac.SolverConfig(delta=delta)), warm_start=X[i]).x
            assert np.max(np.abs(ref - out[i])) <= 1e-6
            one = ac.x_update_batch(layout, ids[i : i + 1], X[i : i + 1], Xn[i : i + 1], lam[i : i + 1], al[i : i + 1], be[i : i + 1], ga[i : i + 1], b[i : i + 1], rho[i : i + 1], delta)
            assert np.array_equal(one[0], out[i])


def test_x_update_satisfies_own_balance(baran, rng):
    layout = ac.Layout.build(baran)
    X, Xn, lam, al, be, ga, b, rho = _batch_inputs(baran, layout, rng, True)
    ids = np.arange(baran.n_nodes)
    out = ac.x_update_batch(layout, ids, X, Xn, lam, al, be, ga, b, rho, 1.0)
    for i in ids:
        E = ac.divergence_rows(baran, [i])
        assert np.allclose(E @ out[i], rho[i], atol=1e-9)
        assert np.all(out[i] >= layout.lb - 1e-12) and np.all(out[i] <= layout.ub + 1e-12)


def test_batched_weights_and_duals_match_reference(baran, rng):
    layout = ac.Layout.build(baran)
    M = baran.n_arcs
    X, Xn, lam, al, be, ga, b, _ = _batch_inputs(baran, layout, rng, True)
    ids = np.arange(baran.n_nodes)
    H = ac.weights_batch(layout, ids, X, al, be, ga)
    duals = ac.dual_update_batch(layout, ids, X, Xn, b, al, be, ga, lam)
    for i in ids:
        ag = ac.make_agent(baran, i, b[i])
        xp = ac.AgentPrimal.from_vector(X[i], M)
        ag.duals = ac.AgentDuals(al[i], be[i], ga[i], lam[i])
        assert np.allclose(H[i], ac.projection_weights(baran, ag, xp, ag.duals), atol=1e-12)
        nbp = {j: ac.AgentPrimal.from_vector(X[j], M) for j in ag.neighbors}
        ref = ac.dual_update(baran, ag, xp, b[i], nbp)
        for got, want in zip(duals, (ref.alpha, ref.beta, ref.gamma, ref.lam)):
            assert np.allclose(got[i], want, atol=1e-12)


def test_agent_knows_only_local_data(baran):
    ag = ac.make_agent(baran, 5, np.zeros(baran.n_arcs))
    inc = baran.digraph.incident(5)
    assert np.all(ag.local_r[~inc] == 0) and np.all(ag.local_r[inc] == baran.r[inc])
    assert ag.rho == (baran.rho1[5], baran.rho2[5])


def test_reference_update_requires_all_neighbours(toy):
    ag = ac.make_agent(toy, 0, np.zeros(toy.n_arcs))
    with pytest.raises(KeyError):
        ac.build_x_update(toy, ag, {}, ac.SolverConfig())
