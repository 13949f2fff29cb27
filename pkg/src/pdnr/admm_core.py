"""Per-agent ADMM mathematics for the radial reconfiguration problem.

Every agent ``i`` owns a full copy ``X^i = (Y, Z, P, Q, U)`` of the primal
vector (``4|A| + |V|`` entries) together with scaled multipliers
``alpha, beta, gamma`` (arc vectors) and ``lam`` (same size as ``X``). The
substitution ``Y = P * b``, ``Z = Q * b`` turns the bilinear flow terms into
linear ones; the X-update is then a convex QP and the b-update a minimum
weight rooted arborescence problem.

The consensus auxiliaries and their edge multipliers can be eliminated in
closed form: the edge average collapses to ``(X^i + X^j) / 2`` and the
pairwise multipliers sum to the single per-agent multiplier ``lam``. They do
not appear in the runtime state.

Two implementations live here. The functions named after the operations
(``local_objective``, ``penalty_H``, ``build_x_update``, ...) work on one
agent with plain full-length vectors and are the readable reference. The
``*_batch`` functions operate on stacked agents and exploit the block
structure of the X-update: an arc not incident to the agent only couples
``(y_e, p_e)`` and ``(z_e, q_e)``, a voltage of a node outside the agent's
neighbourhood is a clipped scalar, and the remaining variables form one
small dense QP. Every batch function is row-wise, so a batch of one and a
batch of all agents give bitwise identical rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .graph import min_weight_rooted_arborescence, neighbors
from .model import NetworkCase
from .qp import QpProblem, solve_qp_batch, INFEASIBLE, OK
from .errors import InfeasibleError, QpError


# --------------------------------------------------------------------------
# state


@dataclass
class AgentPrimal:
    """One agent's estimate of the full primal vector."""

    y: np.ndarray
    z: np.ndarray
    p: np.ndarray
    q: np.ndarray
    u: np.ndarray

    @classmethod
    def zeros(cls, n_arcs: int, n_nodes: int) -> "AgentPrimal":
        return cls(*(np.zeros(n_arcs) for _ in range(4)), np.zeros(n_nodes))

    @classmethod
    def from_vector(cls, v, n_arcs: int) -> "AgentPrimal":
        v = np.asarray(v, dtype=float)
        m = n_arcs
        return cls(v[:m].copy(), v[m : 2 * m].copy(), v[2 * m : 3 * m].copy(), v[3 * m : 4 * m].copy(), v[4 * m :].copy())

    def vector(self) -> np.ndarray:
        return np.concatenate([self.y, self.z, self.p, self.q, self.u])


@dataclass
class AgentDuals:
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    lam: np.ndarray

    @classmethod
    def zeros(cls, n_arcs: int, n_nodes: int) -> "AgentDuals":
        return cls(np.zeros(n_arcs), np.zeros(n_arcs), np.zeros(n_arcs), np.zeros(4 * n_arcs + n_nodes))

    def vector(self) -> np.ndarray:
        return np.concatenate([self.alpha, self.beta, self.gamma, self.lam])


@dataclass
class AgentState:
    """Everything one agent knows and owns.

    ``local_r`` and ``local_x`` are zero off the agent's incident arcs.
    ``rho`` holds the agent's own (active, reactive) injection, the only
    load data it sees.
    """

    id: int
    primal: AgentPrimal
    duals: AgentDuals
    b: np.ndarray
    forbidden: np.ndarray
    local_r: np.ndarray
    local_x: np.ndarray
    rho: tuple[float, float]
    neighbors: tuple[int, ...] = ()


@dataclass(frozen=True)
class SolverConfig:
    """ADMM parameters; ``eta=None`` means ``1e-4 * |V|``."""

    delta: float = 1.0
    eta: float | None = None
    k_max: int = 5000
    sigma: float = 1.0
    restarts: int = 10
    seed: int = 0
    reset_duals_on_injection: bool = False

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.eta is not None and not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.k_max < 1 or self.restarts < 1:
            raise ValueError("k_max and restarts must be at least 1")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def tolerance(self, n_nodes: int) -> float:
        return 1e-4 * n_nodes if self.eta is None else self.eta


def incident_mask(case: NetworkCase, i: int) -> np.ndarray:
    return case.digraph.incident(i)


def make_agent(case: NetworkCase, i: int, b0) -> AgentState:
    """Algorithm start state: zero primal and duals, shared initial ``b``."""
    inc = incident_mask(case, i)
    m, n = case.n_arcs, case.n_nodes
    return AgentState(
        id=i,
        primal=AgentPrimal.zeros(m, n),
        duals=AgentDuals.zeros(m, n),
        b=np.array(b0, dtype=float),
        forbidden=np.zeros(m, dtype=bool),
        local_r=np.where(inc, case.r, 0.0),
        local_x=np.where(inc, case.x, 0.0),
        rho=(float(case.rho1[i]), float(case.rho2[i])),
        neighbors=tuple(sorted(neighbors(case.digraph, i))),
    )


def initial_switches(case: NetworkCase, sigma: float, seed: int) -> np.ndarray:
    """Shared Gaussian start ``b_0 ~ N(0, sigma^2 I)``."""
    return np.random.default_rng(seed).normal(0.0, sigma, case.n_arcs)


# --------------------------------------------------------------------------
# reference single-agent operations


def masked_A(case: NetworkCase, i: int, u) -> np.ndarray:
    """``A^i u``: voltage differences on the arcs incident to ``i``, zero elsewhere."""
    g = case.digraph
    u = np.asarray(u, dtype=float)
    return np.where(incident_mask(case, i), u[g.tails] - u[g.heads], 0.0)


def local_objective(case: NetworkCase, agent: AgentState, xp: AgentPrimal) -> float:
    """``sum r (y^2 + z^2)`` over the arcs leaving the agent."""
    out = case.digraph.tails == agent.id
    return float(np.sum(case.r[out] * (xp.y[out] ** 2 + xp.z[out] ** 2)))


def penalty_H(case: NetworkCase, agent: AgentState, xp: AgentPrimal, b, alpha, beta, gamma) -> float:
    """Augmented penalty of the substitution and voltage-drop constraints."""
    b = np.asarray(b, dtype=float)
    t1 = xp.p * b - xp.y + alpha
    t2 = xp.q * b - xp.z + beta
    val = 0.5 * float(t1 @ t1) + 0.5 * float(t2 @ t2)
    if case.voltage_enabled:
        t3 = b * masked_A(case, agent.id, xp.u) - 2.0 * (agent.local_r * xp.y + agent.local_x * xp.z) + gamma
        val += 0.5 * float(t3 @ t3)
    return val


def primal_bounds(case: NetworkCase) -> tuple[np.ndarray, np.ndarray]:
    """Box on ``X``; ``u`` of the root is pinned to 1, all of ``u`` when voltages are off."""
    m, n = case.n_arcs, case.n_nodes
    lo_u, hi_u = case.u_bounds
    lb = np.concatenate([np.zeros(4 * m), np.full(n, lo_u)])
    ub = np.concatenate([case.p_cap, case.q_cap, case.p_cap, case.q_cap, np.full(n, hi_u)])
    if case.voltage_enabled:
        lb[4 * m + case.root] = ub[4 * m + case.root] = 1.0
    else:
        lb[4 * m :] = ub[4 * m :] = 1.0
    return lb, ub


def divergence_rows(case: NetworkCase, nodes) -> sp.csr_matrix:
    """Rows ``div(Y)_i`` then ``div(Z)_i`` for each listed node, over the full ``X``."""
    g = case.digraph
    m, n = case.n_arcs, case.n_nodes
    rows, cols, vals = [], [], []
    nodes = list(nodes)
    for r, i in enumerate(nodes):
        for k in np.flatnonzero(g.tails == i):
            rows += [r, len(nodes) + r]
            cols += [k, m + k]
            vals += [1.0, 1.0]
        for k in np.flatnonzero(g.heads == i):
            rows += [r, len(nodes) + r]
            cols += [k, m + k]
            vals += [-1.0, -1.0]
    return sp.csr_matrix((vals, (rows, cols)), shape=(2 * len(nodes), 4 * m + n))


def _penalty_forms(case: NetworkCase, b, r_vec, x_vec, mask) -> sp.csr_matrix:
    # rows of the affine maps inside the three squared norms of H (without offsets)
    g = case.digraph
    m, n = case.n_arcs, case.n_nodes
    b = np.asarray(b, dtype=float)
    ar = np.arange(m)
    G1 = sp.csr_matrix((np.concatenate([-np.ones(m), b]), (np.concatenate([ar, ar]), np.concatenate([ar, 2 * m + ar]))), shape=(m, 4 * m + n))
    G2 = sp.csr_matrix((np.concatenate([-np.ones(m), b]), (np.concatenate([ar, ar]), np.concatenate([m + ar, 3 * m + ar]))), shape=(m, 4 * m + n))
    if not case.voltage_enabled:
        return sp.vstack([G1, G2]).tocsr()
    bm = b * mask
    G3 = sp.csr_matrix(
        (
            np.concatenate([bm, -bm, -2.0 * r_vec, -2.0 * x_vec]),
            (np.concatenate([ar] * 4), np.concatenate([4 * m + g.tails, 4 * m + g.heads, ar, m + ar])),
        ),
        shape=(m, 4 * m + n),
    )
    return sp.vstack([G1, G2, G3]).tocsr()


def build_x_update(case: NetworkCase, agent: AgentState, neighbor_primals: dict, cfg: SolverConfig) -> QpProblem:
    """The agent's X-update as one QP over the full ``4|A| + |V|`` vector.

    Objective: ``f_i / delta + H_i(X, b_k, duals_k) + lam' X
    + sum_j ||X - (X_k^i + X_k^j) / 2||^2``; box on ``X``; the agent's own
    two balance rows.
    """
    missing = set(agent.neighbors) - set(neighbor_primals)
    if missing:
        raise KeyError(f"missing neighbour primals {sorted(missing)}")
    m, n = case.n_arcs, case.n_nodes
    dim = 4 * m + n
    d = len(agent.neighbors)
    mask = incident_mask(case, agent.id).astype(float)
    G = _penalty_forms(case, agent.b, agent.local_r, agent.local_x, mask)
    du = agent.duals
    offs = [du.alpha, du.beta] + ([du.gamma] if case.voltage_enabled else [])
    g0 = np.concatenate(offs)
    out = (case.digraph.tails == agent.id).astype(float)
    obj = np.zeros(dim)
    obj[:m] = obj[m : 2 * m] = 2.0 * case.r * out / cfg.delta
    H = (G.T @ G + sp.diags(obj + 2.0 * d)).tocsr()
    xi = agent.primal.vector()
    nb_sum = np.zeros(dim)
    for j in agent.neighbors:
        nb_sum = nb_sum + neighbor_primals[j].vector()
    c = G.T @ g0 + du.lam - (d * xi + nb_sum)
    lb, ub = primal_bounds(case)
    E = divergence_rows(case, [agent.id])
    return QpProblem(H=H, c=c, lb=lb, ub=ub, E=E, d=np.array(agent.rho, dtype=float))


def projection_weights(case: NetworkCase, agent: AgentState, xp: AgentPrimal, duals: AgentDuals) -> np.ndarray:
    """Arc weights turning the b-update into a minimum weight arborescence.

    ``h^T b`` equals twice the b-dependent part of ``penalty_H`` for binary
    ``b``.
    """
    h = xp.p * (xp.p + 2.0 * (duals.alpha - xp.y)) + xp.q * (xp.q + 2.0 * (duals.beta - xp.z))
    if case.voltage_enabled:
        au = masked_A(case, agent.id, xp.u)
        h = h + au * (au + 2.0 * duals.gamma - 4.0 * (agent.local_r * xp.y + agent.local_x * xp.z))
    return h


def b_update(case: NetworkCase, agent: AgentState, h) -> np.ndarray:
    """Minimum weight arborescence avoiding the agent's known faults (0/1 floats)."""
    try:
        s = min_weight_rooted_arborescence(case.digraph, h, agent.forbidden)
    except InfeasibleError as err:
        raise InfeasibleError(str(err), agent=agent.id) from None
    return s.astype(float)


def dual_update(case: NetworkCase, agent: AgentState, xp: AgentPrimal, b, neighbor_primals: dict) -> AgentDuals:
    missing = set(agent.neighbors) - set(neighbor_primals)
    if missing:
        raise KeyError(f"missing neighbour primals {sorted(missing)}")
    b = np.asarray(b, dtype=float)
    du = agent.duals
    alpha = du.alpha + xp.p * b - xp.y
    beta = du.beta + xp.q * b - xp.z
    gamma = du.gamma
    if case.voltage_enabled:
        gamma = gamma + b * masked_A(case, agent.id, xp.u) - 2.0 * (agent.local_r * xp.y + agent.local_x * xp.z)
    xi = xp.vector()
    lam = du.lam.copy()
    for j in agent.neighbors:
        lam = lam + (xi - neighbor_primals[j].vector())
    return AgentDuals(alpha, beta, gamma.copy(), lam)


# --------------------------------------------------------------------------
# batched kernels


@dataclass
class Layout:
    """Index tables for the block-decomposed X-update of every agent.

    Each agent's coupled block holds ``y, z, p, q`` of its incident arcs
    (``L`` slots, padded) followed by ``u`` of itself and its neighbours
    (``K`` slots, padded). Padded slots are pinned to zero.
    """

    case: NetworkCase
    n_arcs: int
    n_nodes: int
    arcs: np.ndarray  # (V, L) incident arc ids, -1 padding
    arc_ok: np.ndarray  # (V, L)
    sign: np.ndarray  # (V, L) +1 leaving the agent, -1 entering
    tail_slot: np.ndarray  # (V, L) local slot of the arc tail in the node list
    head_slot: np.ndarray
    nodes: np.ndarray  # (V, K) [i, neighbours...], -1 padding
    node_ok: np.ndarray
    nbrs: np.ndarray  # (V, D) neighbour ids, -1 padding
    nbr_ok: np.ndarray
    degree: np.ndarray  # (V,)
    incident: np.ndarray  # (V, M) bool
    in_block_node: np.ndarray  # (V, N) bool
    local_r: np.ndarray  # (V, M)
    local_x: np.ndarray
    out_r: np.ndarray  # (V, M) r on arcs leaving the agent
    lb: np.ndarray  # (dim,)
    ub: np.ndarray
    _blk: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return 4 * self.n_arcs + self.n_nodes

    @classmethod
    def build(cls, case: NetworkCase) -> "Layout":
        g = case.digraph
        V, M = case.n_nodes, case.n_arcs
        inc_lists = [np.flatnonzero(g.incident(i)) for i in range(V)]
        nb_lists = [sorted(neighbors(g, i)) for i in range(V)]
        L = max(len(a) for a in inc_lists)
        D = max(max(len(a) for a in nb_lists), 1)
        K = D + 1
        arcs = np.full((V, L), -1, dtype=np.int64)
        sign = np.zeros((V, L))
        tail_slot = np.zeros((V, L), dtype=np.int64)
        head_slot = np.zeros((V, L), dtype=np.int64)
        nodes = np.full((V, K), -1, dtype=np.int64)
        nbrs = np.full((V, D), -1, dtype=np.int64)
        for i in range(V):
            nl = [i] + nb_lists[i]
            nodes[i, : len(nl)] = nl
            nbrs[i, : len(nb_lists[i])] = nb_lists[i]
            pos = {v: s for s, v in enumerate(nl)}
            for s, k in enumerate(inc_lists[i]):
                arcs[i, s] = k
                sign[i, s] = 1.0 if g.tails[k] == i else -1.0
                tail_slot[i, s] = pos[int(g.tails[k])]
                head_slot[i, s] = pos[int(g.heads[k])]
        incident = np.stack([g.incident(i) for i in range(V)])
        in_block = np.zeros((V, V), dtype=bool)
        for i in range(V):
            in_block[i, nodes[i][nodes[i] >= 0]] = True
        lb, ub = primal_bounds(case)
        out = np.stack([g.tails == i for i in range(V)])
        return cls(
            case=case,
            n_arcs=M,
            n_nodes=V,
            arcs=arcs,
            arc_ok=arcs >= 0,
            sign=sign,
            tail_slot=tail_slot,
            head_slot=head_slot,
            nodes=nodes,
            node_ok=nodes >= 0,
            nbrs=nbrs,
            nbr_ok=nbrs >= 0,
            degree=np.array([len(a) for a in nb_lists], dtype=float),
            incident=incident,
            in_block_node=in_block,
            local_r=np.where(incident, case.r, 0.0),
            local_x=np.where(incident, case.x, 0.0),
            out_r=np.where(out, case.r, 0.0),
            lb=lb,
            ub=ub,
        )

    def block_index(self, ids: np.ndarray) -> np.ndarray:
        """Positions in ``X`` of the coupled-block variables, ``(B, 4L + K)``."""
        M = self.n_arcs
        a = np.where(self.arc_ok[ids], self.arcs[ids], 0)
        nd = np.where(self.node_ok[ids], self.nodes[ids], 0)
        return np.concatenate([a, M + a, 2 * M + a, 3 * M + a, 4 * M + nd], axis=1)

    def block_valid(self, ids: np.ndarray) -> np.ndarray:
        ok = self.arc_ok[ids]
        return np.concatenate([ok, ok, ok, ok, self.node_ok[ids]], axis=1)


def neighbor_sum(layout: Layout, ids, Xn) -> np.ndarray:
    """``sum_j X^j`` over each agent's neighbours, in fixed slot order.

    ``Xn`` has shape ``(B, D, dim)`` with padded slots ignored.
    """
    ok = layout.nbr_ok[ids]
    acc = np.zeros((Xn.shape[0], Xn.shape[2]))
    for s in range(Xn.shape[1]):
        acc = acc + np.where(ok[:, s, None], Xn[:, s], 0.0)
    return acc


def neighbor_diff_sum(layout: Layout, ids, X, Xn) -> np.ndarray:
    """``sum_j (X^i - X^j)`` over each agent's neighbours, in fixed slot order."""
    ok = layout.nbr_ok[ids]
    acc = np.zeros_like(X)
    for s in range(Xn.shape[1]):
        acc = acc + np.where(ok[:, s, None], X - Xn[:, s], 0.0)
    return acc


def _box_qp2(h11, h12, h22, c1, c2, l1, u1, l2, u2):
    # Exact minimiser of a strictly convex 2-variable QP over a box, elementwise.
    def f(a, b):
        return 0.5 * h11 * a * a + h12 * a * b + 0.5 * h22 * b * b + c1 * a + c2 * b

    det = h11 * h22 - h12 * h12
    a0 = (h12 * c2 - h22 * c1) / det
    b0 = (h12 * c1 - h11 * c2) / det
    inside = (a0 >= l1) & (a0 <= u1) & (b0 >= l2) & (b0 <= u2)
    cands = []
    for a in (l1, u1):
        cands.append((a, np.clip(-(c2 + h12 * a) / h22, l2, u2)))
    for b in (l2, u2):
        cands.append((np.clip(-(c1 + h12 * b) / h11, l1, u1), b))
    best_a, best_b = cands[0]
    best_f = f(best_a, best_b)
    for a, b in cands[1:]:
        fv = f(a, b)
        better = fv < best_f
        best_a = np.where(better, a, best_a)
        best_b = np.where(better, b, best_b)
        best_f = np.where(better, fv, best_f)
    return np.where(inside, a0, best_a), np.where(inside, b0, best_b)


def x_update_batch(layout: Layout, ids, X, Xn, lam, alpha, beta, gamma, b, rho, delta):
    """Block-decomposed X-update for a batch of agents.

    Parameters
    ----------
    ids : ndarray of int, shape (B,)
        Agent ids.
    X : ndarray, shape (B, dim)
        Each agent's current iterate ``X_k^i`` (also the warm start).
    Xn : ndarray, shape (B, D, dim)
        Neighbour iterates ``X_k^j`` in the layout's slot order.
    lam : ndarray, shape (B, dim)
    alpha, beta, gamma, b : ndarray, shape (B, M)
    rho : ndarray, shape (B, 2)
        Each agent's own injections.
    delta : float

    Returns
    -------
    ndarray, shape (B, dim)

    Raises
    ------
    QpError
        If a coupled block cannot be solved.
    """
    case = layout.case
    ids = np.asarray(ids)
    B = len(ids)
    M = layout.n_arcs
    d = layout.degree[ids][:, None]
    twod = 2.0 * d
    # linear part of lam' X + sum_j ||X - (X^i + X^j)/2||^2
    lin = lam - (d * X + neighbor_sum(layout, ids, Xn))
    lb, ub = layout.lb, layout.ub
    out = np.empty_like(X)

    # (y_e, p_e) and (z_e, q_e) pairs for arcs away from the agent
    for off_f, off_b, dual in ((0, 2 * M, alpha), (M, 3 * M, beta)):
        cap = ub[off_f : off_f + M]
        ya, pa = _box_qp2(
            1.0 + twod,
            -b,
            b * b + twod,
            -dual + lin[:, off_f : off_f + M],
            b * dual + lin[:, off_b : off_b + M],
            0.0,
            cap,
            0.0,
            cap,
        )
        out[:, off_f : off_f + M] = ya
        out[:, off_b : off_b + M] = pa
    # voltages outside the neighbourhood
    out[:, 4 * M :] = np.clip(-lin[:, 4 * M :] / twod, lb[4 * M :], ub[4 * M :])

    # coupled block
    idx = layout.block_index(ids)
    valid = layout.block_valid(ids)
    L = layout.arcs.shape[1]
    K = layout.nodes.shape[1]
    nb = 4 * L + K
    rows = np.arange(B)[:, None]
    arcs = np.where(layout.arc_ok[ids], layout.arcs[ids], 0)
    ok = layout.arc_ok[ids].astype(float)
    bb = np.take_along_axis(b, arcs, axis=1) * ok
    al = np.take_along_axis(alpha, arcs, axis=1) * ok
    be = np.take_along_axis(beta, arcs, axis=1) * ok
    sl = np.arange(L)
    n_forms = 3 * L if case.voltage_enabled else 2 * L
    G = np.zeros((B, n_forms, nb))
    g0 = np.zeros((B, n_forms))
    G[:, sl, sl] = -ok
    G[:, sl, 2 * L + sl] = bb
    g0[:, :L] = al
    G[:, L + sl, L + sl] = -ok
    G[:, L + sl, 3 * L + sl] = bb
    g0[:, L : 2 * L] = be
    if case.voltage_enabled:
        ga = np.take_along_axis(gamma, arcs, axis=1) * ok
        rr = case.r[arcs] * ok
        xx = case.x[arcs] * ok
        f3 = 2 * L + sl
        ts = 4 * L + layout.tail_slot[ids]
        hs = 4 * L + layout.head_slot[ids]
        G[rows, f3[None, :], ts] += bb
        G[rows, f3[None, :], hs] -= bb
        G[:, f3, sl] = -2.0 * rr
        G[:, f3, L + sl] = -2.0 * xx
        g0[:, 2 * L :] = ga
    H = np.einsum("bfi,bfj->bij", G, G)
    diag = np.broadcast_to(twod, (B, nb)).copy()
    out_r = np.take_along_axis(layout.out_r[ids], arcs, axis=1) * ok
    diag[:, :L] += 2.0 * out_r / delta
    diag[:, L : 2 * L] += 2.0 * out_r / delta
    diag = np.where(valid, diag, 1.0)
    ii = np.arange(nb)
    H[:, ii, ii] += diag
    c = np.einsum("bfi,bf->bi", G, g0) + np.take_along_axis(lin, idx, axis=1)
    c = np.where(valid, c, 0.0)
    blb = np.where(valid, lb[idx], 0.0)
    bub = np.where(valid, ub[idx], 0.0)
    E = np.zeros((B, 2, nb))
    E[:, 0, :L] = layout.sign[ids]
    E[:, 1, L : 2 * L] = layout.sign[ids]
    x0 = np.where(valid, np.take_along_axis(X, idx, axis=1), 0.0)
    xb, _, status, _ = solve_qp_batch(H, c, blb, bub, E, np.asarray(rho, dtype=float), x0)
    if np.any(status != OK):
        bad = ids[status != OK]
        kind = "infeasible" if np.any(status == INFEASIBLE) else "iteration limit"
        raise QpError(f"X-update failed ({kind}) for agents {bad.tolist()}")
    rb, cb = np.nonzero(valid)
    out[rb, idx[rb, cb]] = xb[rb, cb]
    return out


def weights_batch(layout: Layout, ids, X, alpha, beta, gamma) -> np.ndarray:
    """Projection weights for a batch of agents, shape ``(B, M)``."""
    case = layout.case
    M = layout.n_arcs
    y, z, p, q, u = X[:, :M], X[:, M : 2 * M], X[:, 2 * M : 3 * M], X[:, 3 * M : 4 * M], X[:, 4 * M :]
    h = p * (p + 2.0 * (alpha - y)) + q * (q + 2.0 * (beta - z))
    if case.voltage_enabled:
        g = case.digraph
        inc = layout.incident[ids]
        au = np.where(inc, u[:, g.tails] - u[:, g.heads], 0.0)
        lr, lx = layout.local_r[ids], layout.local_x[ids]
        h = h + au * (au + 2.0 * gamma - 4.0 * (lr * y + lx * z))
    return h


def dual_update_batch(layout: Layout, ids, X, Xn, b, alpha, beta, gamma, lam):
    """Multiplier updates given the new iterates of agents and neighbours."""
    case = layout.case
    M = layout.n_arcs
    y, z, p, q, u = X[:, :M], X[:, M : 2 * M], X[:, 2 * M : 3 * M], X[:, 3 * M : 4 * M], X[:, 4 * M :]
    alpha = alpha + p * b - y
    beta = beta + q * b - z
    if case.voltage_enabled:
        g = case.digraph
        inc = layout.incident[ids]
        au = np.where(inc, u[:, g.tails] - u[:, g.heads], 0.0)
        lr, lx = layout.local_r[ids], layout.local_x[ids]
        gamma = gamma + b * au - 2.0 * (lr * y + lx * z)
    else:
        gamma = gamma.copy()
    lam = lam + neighbor_diff_sum(layout, ids, X, Xn)
    return alpha, beta, gamma, lam
