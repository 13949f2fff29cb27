"""Independent oracles and random instance generators shared by the tests."""

import itertools

import numpy as np

from pdnr.graph import Digraph
from pdnr.model import NetworkCase

# acceptance criterion -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def random_strong_digraph(rng, n, density=0.5) -> Digraph:
    """Random strongly connected digraph: a Hamiltonian cycle plus random arcs."""
    perm = rng.permutation(n)
    arcs = {(int(perm[k]), int(perm[(k + 1) % n])) for k in range(n)} if n > 1 else set()
    for a in range(n):
        for b in range(n):
            if a != b and rng.random() < density:
                arcs.add((a, b))
    arcs = sorted(arcs)
    order = rng.permutation(len(arcs))
    return Digraph(n, tuple(arcs[k] for k in order), int(rng.integers(n)))


def random_tree_plus_edges(rng, n, extra) -> list:
    """Undirected edge list of a random spanning tree plus ``extra`` chords."""
    edges = {tuple(sorted((int(rng.integers(v)), v))) for v in range(1, n)}
    pool = [e for e in itertools.combinations(range(n), 2) if e not in edges]
    rng.shuffle(pool)
    edges.update(tuple(e) for e in pool[:extra])
    return sorted(edges)


def random_case(rng, n, extra=1, voltage=True, cap=10.0) -> NetworkCase:
    """Small bidirectional case with root 0, loads elsewhere and generous limits."""
    edges = random_tree_plus_edges(rng, n, extra)
    g = Digraph.bidirectional(n, edges, 0)
    r = np.repeat(rng.uniform(0.01, 0.05, len(edges)), 2)
    x = np.repeat(rng.uniform(0.01, 0.05, len(edges)), 2)
    loads1 = rng.uniform(0.05, 0.3, n - 1)
    loads2 = rng.uniform(0.02, 0.2, n - 1)
    rho1 = np.concatenate([[loads1.sum()], -loads1])
    rho2 = np.concatenate([[loads2.sum()], -loads2])
    return NetworkCase(
        digraph=g,
        r=r,
        x=x,
        p_cap=np.full(g.arc_count, cap),
        q_cap=np.full(g.arc_count, cap),
        rho1=rho1,
        rho2=rho2,
        epsilon=0.5,
        v0=1.0,
        voltage_enabled=voltage,
    )


def qp_oracle(H, c, lb, ub, E, d):
    """Global minimiser of a strictly convex box/equality QP by active-set enumeration."""
    n, m = len(c), len(d)
    best = None
    for st in itertools.product((0, -1, 1), repeat=n):
        st = np.array(st)
        F = st == 0
        xa = np.where(st < 0, lb, ub)
        K = np.block([[H[np.ix_(F, F)], E[:, F].T], [E[:, F], np.zeros((m, m))]])
        rhs = np.concatenate([-c[F] - H[np.ix_(F, ~F)] @ xa[~F], d - E[:, ~F] @ xa[~F]])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            continue
        x = xa.copy()
        x[F] = sol[: F.sum()]
        if np.all(x >= lb - 1e-9) and np.all(x <= ub + 1e-9) and np.allclose(E @ x, d, atol=1e-9):
            f = 0.5 * x @ H @ x + c @ x
            if best is None or f < best[0] - 1e-12:
                best = (f, x)
    return best


def random_qp(rng, n_max=6, m_max=2):
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(0, min(m_max, n - 1) + 1)) if n > 1 else 0
    A = rng.normal(size=(n, n))
    H = A @ A.T + 0.1 * np.eye(n)
    c = 3.0 * rng.normal(size=n)
    lb = -rng.random(n)
    ub = rng.random(n)
    E = rng.normal(size=(m, n))
    d = E @ rng.uniform(lb, ub)
    return H, c, lb, ub, E, d
