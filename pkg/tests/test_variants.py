import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import random_case
from pdnr import admm_core as ac
from pdnr.distributed import run
from pdnr.graph import is_spanning_arborescence
from pdnr.variants import (
    ALGORITHMS,
    RelaxPool,
    _relax_arc,
    central_dual_update,
    central_weights,
    central_x_update,
    centralized_run,
    project_relaxed,
    relax_bounds,
    relax_run,
    relax_x_update_batch,
)


def ineq_qp_oracle(H, c, A, u):
    """min 0.5 x'Hx + c'x s.t. A x <= u, by enumerating active subsets (strictly convex H)."""
    n = len(c)
    best = None
    for k in range(n + 1):
        for S in itertools.combinations(range(len(u)), k):
            S = list(S)
            K = np.block([[H, A[S].T], [A[S], np.zeros((k, k))]])
            try:
                sol = np.linalg.solve(K, np.concatenate([-c, u[S]]))
            except np.linalg.LinAlgError:
                continue
            x = sol[:n]
            if np.all(A @ x <= u + 1e-9):
                f = 0.5 * x @ H @ x + c @ x
                if best is None or f < best[0]:
                    best = (f, x)
    return best


@given(st.integers(0, 2**32 - 1))
def test_relax_arc_is_exact(seed):
    rng = np.random.default_rng(seed)
    ap, aq = rng.uniform(0.5, 5, 2)
    cp, cq, cw = rng.normal(size=3) * 3
    capp, capq = rng.choice([0.0, 0.5, 2.0], 2)
    p, q, w = (float(v) for v in _relax_arc(np.array(ap), np.array(cp), np.array(capp), np.array(aq), np.array(cq), np.array(capq), np.array(cw)))
    H = np.diag([ap, aq, 1.0])
    c = np.array([cp, cq, cw])
    A = np.array([[-1, 0, 0], [1, 0, -capp], [0, -1, 0], [0, 1, -capq], [0, 0, -1], [0, 0, 1.0]])
    u = np.array([0, 0, 0, 0, 0, 1.0])
    f_ref, x_ref = ineq_qp_oracle(H, c, A, u)
    x = np.array([p, q, w])
    assert np.all(A @ x <= u + 1e-12)
    assert 0.5 * x @ H @ x + c @ x == pytest.approx(f_ref, abs=1e-10)
    assert np.allclose(x, x_ref, atol=1e-7)


@given(st.integers(0, 2**32 - 1))
def test_relaxed_projection_is_always_a_tree(seed):
    rng = np.random.default_rng(seed)
    case = random_case(rng, int(rng.integers(2, 7)), extra=3)
    v = rng.normal(size=case.n_arcs) * rng.choice([0.01, 1, 100])
    b = project_relaxed(case, v)
    assert is_spanning_arborescence(case.digraph, b)


def test_mwrap_projection_is_nearest_tree(toy, rng):
    from pdnr.graph import enumerate_arborescences

    v = rng.uniform(0, 1, toy.n_arcs)
    b = project_relaxed(toy, v)
    d = np.sum((b - v) ** 2)
    for s in enumerate_arborescences(toy.digraph):
        assert d <= np.sum((s - v) ** 2) + 1e-12


def test_naive_projection_rounds(toy):
    v = np.linspace(0, 1, toy.n_arcs)
    b = project_relaxed(toy, v, projection="naive")
    assert np.array_equal(b, (v >= 0.5).astype(float))
    forb = np.zeros(toy.n_arcs, bool)
    forb[-1] = True
    assert project_relaxed(toy, v, forb, "naive")[-1] == 0
    with pytest.raises(ValueError):
        project_relaxed(toy, v, projection="other")


def test_central_weights_equal_full_knowledge_agent(baran, rng):
    m = baran.n_arcs
    layout = ac.Layout.build(baran)
    # an agent that sees every arc
    layout.incident[:] = True
    layout.local_r[:] = baran.r
    layout.local_x[:] = baran.x
    X = rng.normal(size=layout.dim)
    al, be, la = rng.normal(size=(3, m))
    h_dist = ac.weights_batch(layout, np.array([0]), X[None], al[None], be[None], la[None])[0]
    assert np.allclose(central_weights(baran, X, al, be, la), h_dist, atol=1e-12)


def test_central_x_update_feasible(baran, rng):
    m, n = baran.n_arcs, baran.n_nodes
    b = ac.initial_switches(baran, 1.0, 0)
    b = project_relaxed(baran, b)
    X = central_x_update(baran, np.zeros(4 * m + n), b, *rng.normal(size=(3, m)), 1.0)
    E = ac.divergence_rows(baran, range(n))
    assert np.allclose(E @ X, np.concatenate([baran.rho1, baran.rho2]), atol=1e-8)
    lb, ub = ac.primal_bounds(baran)
    assert np.all(X >= lb - 1e-12) and np.all(X <= ub + 1e-12)
    off = b == 0
    assert np.all(X[2 * m : 3 * m][off] == 0)  # held at their previous value


def test_central_dual_update_zero_at_consistent_point(baran):
    from pdnr.model import configuration_from_open_lines, tree_flows

    b = configuration_from_open_lines(baran, [(25, 29), (18, 33), (9, 15), (8, 21), (12, 22)]).astype(float)
    f = tree_flows(baran, b)
    X = np.concatenate([f.p, f.q, f.p, f.q, f.u])
    z = np.zeros(baran.n_arcs)
    a, be, la = central_dual_update(baran, X, b, z, z, z)
    assert np.allclose(a, 0) and np.allclose(be, 0)
    assert np.allclose(la[b == 1], 0)


def test_two_node_central_and_distributed_agree():
    case = random_case(np.random.default_rng(7), 2, extra=0)
    cfg = ac.SolverConfig(delta=1.0, k_max=500)
    c = centralized_run(case, cfg, seed=2)
    d = run(case, cfg, seed=2)
    assert c.converged and d.converged
    assert np.array_equal(c.consensus, d.consensus)


def test_centralized_toy(toy):
    res = centralized_run(toy, ac.SolverConfig(delta=10.0, k_max=500), seed=0)
    assert res.feasible and len(res.trace) == res.iterations
    assert res.trace[-1].s.shape == (1,)


def test_centralized_matched_seed_start(toy):
    cfg = ac.SolverConfig(delta=10.0, k_max=1)
    b0 = ac.initial_switches(toy, 1.0, 9)
    a = centralized_run(toy, cfg, seed=9)
    b = centralized_run(toy, cfg, b0=b0)
    assert np.array_equal(a.b_agents, b.b_agents)


def test_relax_x_update_properties(baran, rng):
    layout = ac.Layout.build(baran)
    M, N = baran.n_arcs, baran.n_nodes
    C = 2 * M + N
    lo, hi = relax_bounds(baran)
    X = np.clip(rng.uniform(0, 1, (N, C + M)), lo, hi)
    Xn = np.where(layout.nbr_ok[:, :, None], X[np.maximum(layout.nbrs, 0)], 0.0)
    b = np.tile(project_relaxed(baran, rng.normal(size=M)), (N, 1))
    ids = np.arange(N)
    rho = np.stack([baran.rho1, baran.rho2], 1)
    out = relax_x_update_batch(layout, ids, X, Xn, rng.normal(size=(N, C)), rng.normal(size=(N, M)), rng.normal(size=(N, M)), b, rho, 1.0)
    assert np.all(out >= lo - 1e-9) and np.all(out <= hi + 1e-9)
    p, q, w = out[:, :M], out[:, M : 2 * M], out[:, C:]
    assert np.all(p <= baran.p_cap * w + 1e-9) and np.all(q <= baran.q_cap * w + 1e-9)
    for i in ids:
        E = ac.divergence_rows(baran, [i]).toarray()
        assert np.allclose(E[:, :M] @ p[i] + E[:, M : 2 * M] @ q[i], rho[i], atol=1e-8)


def test_relax_run_keeps_agents_on_trees(toy):
    res = relax_run(toy, ac.SolverConfig(delta=10.0, k_max=40), seed=0)
    for row in res.b_agents:
        assert is_spanning_arborescence(toy.digraph, row)
    with pytest.raises(NotImplementedError):
        RelaxPool(toy, ac.Layout.build(toy), np.zeros(toy.n_arcs)).agent(0)


def test_relax_schedulers_identical(toy):
    cfg = ac.SolverConfig(delta=10.0, k_max=15)
    a = relax_run(toy, cfg, seed=1, scheduler="vectorized")
    b = relax_run(toy, cfg, seed=1, scheduler="sequential")
    assert [m.e_k for m in a.trace] == [m.e_k for m in b.trace]


def test_algorithm_table():
    assert set(ALGORITHMS) == {"distributed", "centralized", "relax"}
