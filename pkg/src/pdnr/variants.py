"""Centralized counterpart of the distributed ADMM and the relaxation baseline.

Centralized variant
    One full-knowledge solver holds a single primal vector ``X``, the
    switch vector ``b`` and the multipliers ``alpha, beta, lam`` (``lam``
    takes the place of the voltage multiplier ``gamma``). Each iteration
    solves the global X-update QP with every balance row, takes the
    arborescence step with the unmasked projection weights and updates the
    multipliers.

Relaxation baseline
    A reconstruction of the classic relax-and-project scheme inside the same
    multi-agent driver. Each agent's consensus vector is ``(P, Q, U)``; a
    local continuous switch copy ``w`` in ``[0, 1]`` bounds the flows through
    ``0 <= p <= Pbar * w`` and ``0 <= q <= Qbar * w``. The switch step projects
    ``w + mu`` onto the arborescences (minimum weight arborescence with
    weights ``-(w + mu)``), or rounds it to ``{0, 1}`` when the naive
    projection is requested; ``mu`` accumulates ``w - b``.
"""

from __future__ import annotations

import time

import numpy as np

from . import admm_core as ac
from .distributed import AgentPool, ConvergenceMetrics, RunResult, _finish, _Round, run
from .errors import InfeasibleError, QpError
from .graph import min_weight_rooted_arborescence
from .model import NetworkCase
from .qp import INFEASIBLE, OK, solve_qp_batch

CENTRAL_TOLERANCE = 1e-4
SLACK_PROX = 1e-4

# --------------------------------------------------------------------------
# centralized


def central_weights(case: NetworkCase, X, alpha, beta, lam) -> np.ndarray:
    """Projection weights of the full-knowledge penalty (no agent masking)."""
    m = case.n_arcs
    y, z, p, q, u = X[:m], X[m : 2 * m], X[2 * m : 3 * m], X[3 * m : 4 * m], X[4 * m :]
    h = p * (p + 2.0 * (alpha - y)) + q * (q + 2.0 * (beta - z))
    if case.voltage_enabled:
        g = case.digraph
        au = u[g.tails] - u[g.heads]
        h = h + au * (au + 2.0 * lam - 4.0 * (case.r * y + case.x * z))
    return h


def _central_forms(case: NetworkCase, b) -> np.ndarray:
    # dense rows of the affine maps inside the squared norms of the penalty
    g = case.digraph
    m, n = case.n_arcs, case.n_nodes
    ar = np.arange(m)
    rows = 3 * m if case.voltage_enabled else 2 * m
    G = np.zeros((rows, 4 * m + n))
    G[ar, ar] = -1.0
    G[ar, 2 * m + ar] = b
    G[m + ar, m + ar] = -1.0
    G[m + ar, 3 * m + ar] = b
    if case.voltage_enabled:
        G[2 * m + ar, 4 * m + g.tails] += b
        G[2 * m + ar, 4 * m + g.heads] -= b
        G[2 * m + ar, ar] = -2.0 * case.r
        G[2 * m + ar, m + ar] = -2.0 * case.x
    return G


def central_x_update(case: NetworkCase, X, b, alpha, beta, lam, delta: float) -> np.ndarray:
    """Global X-update: ``r'(Y*Y + Z*Z) / delta + H(X, b, duals)`` over the box.

    Every balance row except the root's (implied by the zero-sum
    injections) is an equality. Flows on arcs with ``b_e = 0`` do not enter
    the objective; they keep their previous value, which is the limit of a
    proximal-point solve of the otherwise degenerate QP.
    """
    m, n = case.n_arcs, case.n_nodes
    lb, ub = ac.primal_bounds(case)
    off = np.flatnonzero(np.asarray(b) == 0.0)
    for base in (2 * m, 3 * m):
        lb[base + off] = ub[base + off] = np.clip(X[base + off], lb[base + off], ub[base + off])
    G = _central_forms(case, b)
    g0 = np.concatenate([alpha, beta] + ([lam] if case.voltage_enabled else []))
    H = G.T @ G
    d = np.arange(2 * m)
    H[d, d] += 2.0 * np.concatenate([case.r, case.r]) / delta
    c = G.T @ g0
    keep = [i for i in range(n) if i != case.root]
    E = ac.divergence_rows(case, keep).toarray()
    rhs = np.concatenate([case.rho1[keep], case.rho2[keep]])
    x, _, status, _ = solve_qp_batch(H[None], c[None], lb[None], ub[None], E[None], rhs[None], np.clip(X, lb, ub)[None])
    if status[0] != OK:
        kind = "infeasible" if status[0] == INFEASIBLE else "iteration limit"
        raise QpError(f"centralized X-update failed ({kind})")
    return x[0]


def central_dual_update(case: NetworkCase, X, b, alpha, beta, lam):
    m = case.n_arcs
    y, z, p, q, u = X[:m], X[m : 2 * m], X[2 * m : 3 * m], X[3 * m : 4 * m], X[4 * m :]
    alpha = alpha + p * b - y
    beta = beta + q * b - z
    if case.voltage_enabled:
        g = case.digraph
        lam = lam + b * (u[g.tails] - u[g.heads]) - 2.0 * (case.r * y + case.x * z)
    return alpha, beta, lam


def centralized_run(
    case: NetworkCase,
    cfg: ac.SolverConfig,
    seed: int | None = None,
    forbidden=None,
    sink=None,
    tol: float = CENTRAL_TOLERANCE,
    b0=None,
    **_ignored,
) -> RunResult:
    """Full-knowledge ADMM; stops when the successive change drops below ``tol``.

    The successive change is ``||dX, db|| + ||d(alpha, beta, lam)||``. The
    initial ``b`` is the same Gaussian draw the distributed run uses for
    ``seed``, so restarts are matched.
    """
    t0 = time.perf_counter()
    seed = cfg.seed if seed is None else seed
    m, n = case.n_arcs, case.n_nodes
    forbidden = np.zeros(m, dtype=bool) if forbidden is None else np.asarray(forbidden, dtype=bool)
    b = ac.initial_switches(case, cfg.sigma, seed) if b0 is None else np.asarray(b0, dtype=float)
    X = np.zeros(4 * m + n)
    alpha, beta, lam = np.zeros(m), np.zeros(m), np.zeros(m)
    trace = []
    converged = False
    k = 0
    while k < cfg.k_max:
        X1 = central_x_update(case, X, b, alpha, beta, lam, cfg.delta)
        h = central_weights(case, X1, alpha, beta, lam)
        b1 = min_weight_rooted_arborescence(case.digraph, h, forbidden).astype(float)
        a1, be1, l1 = central_dual_update(case, X1, b1, alpha, beta, lam)
        s = float(np.sqrt(np.sum((X1 - X) ** 2) + np.sum((b1 - b) ** 2)))
        r = float(np.sqrt(sum(np.sum((new - old) ** 2) for new, old in ((a1, alpha), (be1, beta), (l1, lam)))))
        mtr = ConvergenceMetrics(iteration=k, e_k=s + r, s=np.array([s]), r=np.array([r]), consensus=np.zeros(1))
        trace.append(mtr)
        if sink is not None:
            sink(mtr)
        X, b, alpha, beta, lam = X1, b1, a1, be1, l1
        k += 1
        if mtr.e_k < tol:
            converged = True
            break
    return _finish(case, b[None, :], converged, k, trace, time.perf_counter() - t0, seed, [])


# --------------------------------------------------------------------------
# relaxation baseline


def project_relaxed(case: NetworkCase, v, forbidden=None, projection: str = "mwrap") -> np.ndarray:
    """Switch step of the relaxation baseline.

    ``"mwrap"`` returns the arborescence minimising ``-(v' b)``, the exact
    projection of ``v`` onto the arborescence indicators (all have
    ``|V| - 1`` arcs). ``"naive"`` rounds ``v`` componentwise and may return a
    non-radial vector.
    """
    v = np.asarray(v, dtype=float)
    forbidden = np.zeros(case.n_arcs, dtype=bool) if forbidden is None else np.asarray(forbidden, dtype=bool)
    if projection == "mwrap":
        return min_weight_rooted_arborescence(case.digraph, -v, forbidden).astype(float)
    if projection == "naive":
        return np.where(forbidden, 0.0, (v >= 0.5).astype(float))
    raise ValueError(f"unknown projection {projection!r}")


def _relax_arc(ap, cp, capp, aq, cq, capq, cw):
    # Exact minimiser of 0.5 ap p^2 + cp p + 0.5 aq q^2 + cq q + 0.5 w^2 + cw w
    # subject to 0 <= p <= capp w, 0 <= q <= capq w, 0 <= w <= 1, elementwise.
    # Each of p, q sits at zero, at its free minimiser, or on the coupling
    # bound; for every pattern the optimal w is a clipped scalar.
    ph = -cp / ap
    qh = -cq / aq
    best_f = np.full(np.shape(cp), np.inf)
    best = [np.zeros(np.shape(cp)) for _ in range(3)]
    for sp in range(3):
        for sq in range(3):
            curv = np.ones(np.shape(cp))
            lin = np.array(cw, dtype=float, copy=True)
            wlo = np.zeros(np.shape(cp))
            bad = np.zeros(np.shape(cp), dtype=bool)
            for state, a, c, cap, hat in ((sp, ap, cp, capp, ph), (sq, aq, cq, capq, qh)):
                if state == 1:
                    need = np.where(cap > 0, hat / np.where(cap > 0, cap, 1.0), np.where(hat > 0, np.inf, 0.0))
                    bad |= hat < 0
                    wlo = np.maximum(wlo, need)
                elif state == 2:
                    curv = curv + a * cap * cap
                    lin = lin + c * cap
            bad |= wlo > 1.0
            w = np.clip(-lin / curv, wlo, 1.0)
            w = np.where(bad, 0.0, w)
            p = (0.0, ph, capp * w)[sp] * np.ones_like(w)
            q = (0.0, qh, capq * w)[sq] * np.ones_like(w)
            f = 0.5 * ap * p * p + cp * p + 0.5 * aq * q * q + cq * q + 0.5 * w * w + cw * w
            f = np.where(bad, np.inf, f)
            better = f < best_f
            best_f = np.where(better, f, best_f)
            for slot, val in zip(best, (p, q, w)):
                slot[...] = np.where(better, val, slot)
    return best


def relax_bounds(case: NetworkCase) -> tuple[np.ndarray, np.ndarray]:
    """Box of the relax vector ``(P, Q, U, w)``; ``p, q`` caps are enforced through ``w``."""
    m = case.n_arcs
    lb, ub = ac.primal_bounds(case)
    lbu, ubu = lb[4 * m :], ub[4 * m :]
    lo = np.concatenate([np.zeros(2 * m), lbu, np.zeros(m)])
    hi = np.concatenate([case.p_cap, case.q_cap, ubu, np.ones(m)])
    return lo, hi


def relax_x_update_batch(layout: ac.Layout, ids, X, Xn, lam, mu, gamma, b, rho, delta):
    """X-update of the relaxation baseline for a batch of agents.

    ``X`` rows are ``(P, Q, U, w)``; consensus terms act on ``(P, Q, U)``.
    The coupled block carries explicit slacks ``s = cap * w - flow`` with a
    small proximal weight around their previous values, which keeps the
    block strongly convex without moving its fixed points.
    """
    case = layout.case
    ids = np.asarray(ids)
    B = len(ids)
    M, N = layout.n_arcs, layout.n_nodes
    C = 2 * M + N
    lo, hi = relax_bounds(case)
    d = layout.degree[ids][:, None]
    twod = 2.0 * d
    lin = lam - (d * X[:, :C] + ac.neighbor_sum(layout, ids, Xn[:, :, :C]))
    out = np.empty_like(X)

    # arcs away from the agent
    pcap, qcap = case.p_cap[None, :], case.q_cap[None, :]
    a = np.broadcast_to(twod, (B, M))
    p, q, w = _relax_arc(a, lin[:, :M], pcap, a, lin[:, M : 2 * M], qcap, mu - b)
    out[:, :M], out[:, M : 2 * M], out[:, C:] = p, q, w
    out[:, 2 * M : C] = np.clip(-lin[:, 2 * M :] / twod, lo[2 * M : C], hi[2 * M : C])

    # coupled block: p, q, w, s_p, s_q of incident arcs, then u of the neighbourhood
    L = layout.arcs.shape[1]
    K = layout.nodes.shape[1]
    nb = 5 * L + K
    ok = layout.arc_ok[ids]
    okf = ok.astype(float)
    arcs = np.where(ok, layout.arcs[ids], 0)
    nodes = np.where(layout.node_ok[ids], layout.nodes[ids], 0)
    sl = np.arange(L)
    rows = np.arange(B)[:, None]
    idx_p, idx_q, idx_w, idx_u = arcs, M + arcs, C + arcs, 2 * M + nodes
    bb = np.take_along_axis(b, arcs, axis=1) * okf
    cp = case.p_cap[arcs] * okf
    cq = case.q_cap[arcs] * okf
    Xp, Xq, Xw = (np.take_along_axis(X, ix, axis=1) for ix in (idx_p, idx_q, idx_w))
    H = np.zeros((B, nb, nb))
    c = np.zeros((B, nb))
    if case.voltage_enabled:
        ga = np.take_along_axis(gamma, arcs, axis=1) * okf
        G = np.zeros((B, L, nb))
        G[:, sl, sl] = -2.0 * case.r[arcs] * okf
        G[:, sl, L + sl] = -2.0 * case.x[arcs] * okf
        G[rows, sl[None, :], 5 * L + layout.tail_slot[ids]] += bb
        G[rows, sl[None, :], 5 * L + layout.head_slot[ids]] -= bb
        H += np.einsum("bfi,bfj->bij", G, G)
        c += np.einsum("bfi,bf->bi", G, ga)
    diag = np.zeros((B, nb))
    out_r = np.take_along_axis(layout.out_r[ids], arcs, axis=1) * okf
    diag[:, :L] = twod + 2.0 * out_r / delta
    diag[:, L : 2 * L] = twod + 2.0 * out_r / delta
    diag[:, 2 * L : 3 * L] = 1.0
    diag[:, 3 * L : 5 * L] = SLACK_PROX
    diag[:, 5 * L :] = twod
    ii = np.arange(nb)
    H[:, ii, ii] += diag
    sp_prev = cp * Xw - Xp
    sq_prev = cq * Xw - Xq
    c[:, :L] += np.take_along_axis(lin, idx_p, axis=1)
    c[:, L : 2 * L] += np.take_along_axis(lin, idx_q, axis=1)
    c[:, 2 * L : 3 * L] += np.take_along_axis(mu - b, arcs, axis=1)
    c[:, 3 * L : 4 * L] -= SLACK_PROX * sp_prev
    c[:, 4 * L : 5 * L] -= SLACK_PROX * sq_prev
    c[:, 5 * L :] += np.take_along_axis(lin, idx_u, axis=1)

    node_ok = layout.node_ok[ids]
    zero = np.zeros((B, L))
    blb = np.concatenate([zero, zero, zero, np.where(ok, 0.0, -np.inf), np.where(ok, 0.0, -np.inf), np.where(node_ok, lo[2 * M + nodes], 0.0)], axis=1)
    bub = np.concatenate(
        [np.where(ok, cp, 0.0), np.where(ok, cq, 0.0), np.where(ok, 1.0, 0.0), np.full((B, 2 * L), np.inf), np.where(node_ok, hi[2 * M + nodes], 0.0)],
        axis=1,
    )
    valid = np.concatenate([ok, ok, ok, ok, ok, node_ok], axis=1)
    c = np.where(valid, c, 0.0)
    E = np.zeros((B, 2 + 2 * L, nb))
    E[:, 0, :L] = layout.sign[ids]
    E[:, 1, L : 2 * L] = layout.sign[ids]
    E[:, 2 + sl, sl] = 1.0
    E[:, 2 + sl, 3 * L + sl] = 1.0
    E[:, 2 + sl, 2 * L + sl] = -cp
    E[:, 2 + L + sl, L + sl] = 1.0
    E[:, 2 + L + sl, 4 * L + sl] = 1.0
    E[:, 2 + L + sl, 2 * L + sl] = -cq
    rhs = np.concatenate([np.asarray(rho, dtype=float), np.zeros((B, 2 * L))], axis=1)
    Xu = np.take_along_axis(X, idx_u, axis=1)
    x0 = np.concatenate([Xp * okf, Xq * okf, Xw * okf, np.where(ok, sp_prev, 0.0), np.where(ok, sq_prev, 0.0), np.where(node_ok, Xu, 0.0)], axis=1)
    x0 = np.clip(x0, blb, bub)
    xb, _, status, _ = solve_qp_batch(H, c, blb, bub, E, rhs, x0)
    if np.any(status != OK):
        bad = ids[status != OK]
        kind = "infeasible" if np.any(status == INFEASIBLE) else "iteration limit"
        raise QpError(f"relax X-update failed ({kind}) for agents {bad.tolist()}")
    for blk, ix in ((0, idx_p), (1, idx_q), (2, idx_w)):
        rb, cb = np.nonzero(ok)
        out[rb, ix[rb, cb]] = xb[:, blk * L : (blk + 1) * L][rb, cb]
    rb, cb = np.nonzero(node_ok)
    out[rb, idx_u[rb, cb]] = xb[:, 5 * L :][rb, cb]
    return out


def relax_dual_update_batch(layout: ac.Layout, ids, X, Xn, b, mu, gamma, lam):
    case = layout.case
    M, N = layout.n_arcs, layout.n_nodes
    C = 2 * M + N
    p, q, u, w = X[:, :M], X[:, M : 2 * M], X[:, 2 * M : C], X[:, C:]
    mu = mu + w - b
    if case.voltage_enabled:
        g = case.digraph
        au = np.where(layout.incident[ids], u[:, g.tails] - u[:, g.heads], 0.0)
        gamma = gamma + b * au - 2.0 * (layout.local_r[ids] * p + layout.local_x[ids] * q)
    else:
        gamma = gamma.copy()
    lam = lam + ac.neighbor_diff_sum(layout, ids, X[:, :C], Xn[:, :, :C])
    return mu, gamma, lam


class RelaxPool(AgentPool):
    """Agent state of the relaxation baseline: rows ``(P, Q, U, w)`` and duals ``(mu, gamma, lam)``."""

    def __init__(self, case: NetworkCase, layout: ac.Layout, b0, projection: str = "mwrap"):
        super().__init__(case, layout, b0)
        V, M, N = case.n_nodes, case.n_arcs, case.n_nodes
        self.projection = projection
        self.X = np.zeros((V, 3 * M + N))
        self.mu = np.zeros((V, M))
        self.lam = np.zeros((V, 2 * M + N))
        del self.alpha, self.beta

    @property
    def duals(self) -> list:
        return [self.mu, self.gamma, self.lam]

    @duals.setter
    def duals(self, values) -> None:
        self.mu, self.gamma, self.lam = values

    def agent(self, i: int):
        raise NotImplementedError("relax agents have no AgentState view")

    def new_round(self, exchange, delta: float) -> "_RelaxRound":
        return _RelaxRound(self, exchange, delta)


class _RelaxRound(_Round):
    def primal(self, ids) -> None:
        p = self.pool
        ids = np.asarray(ids)
        Xn = self.ex.neighbor_primals(ids)
        X = relax_x_update_batch(p.layout, ids, p.X[ids], Xn, p.lam[ids], p.mu[ids], p.gamma[ids], p.b[ids], p.rho[ids], self.delta)
        self.X_new[ids] = X
        self.ex.post(ids, X=X)

    def switch(self, ids) -> None:
        p = self.pool
        ids = np.asarray(ids)
        M, N = p.case.n_arcs, p.case.n_nodes
        X = self.X_new[ids]
        v = X[:, 2 * M + N :] + p.mu[ids]
        b = np.empty((len(ids), M))
        for row, i in enumerate(ids):
            try:
                b[row] = project_relaxed(p.case, v[row], p.forbidden[i], p.projection)
            except InfeasibleError as err:
                raise InfeasibleError(f"agent {i}: {err}", agent=int(i)) from None
        Xn = self.ex.neighbor_primals(ids)
        out = relax_dual_update_batch(p.layout, ids, X, Xn, b, p.mu[ids], p.gamma[ids], p.lam[ids])
        for dst, val in zip(self.duals_new, out):
            dst[ids] = val
        self.b_new[ids] = b
        self.ex.post(ids, b=b)


def relax_run(case: NetworkCase, cfg: ac.SolverConfig, scenario=None, seed=None, projection: str = "mwrap", **kwargs) -> RunResult:
    """Distributed relaxation baseline; same driver, stopping rule and outputs as :func:`pdnr.distributed.run`."""

    def factory(c, layout, b0):
        return RelaxPool(c, layout, b0, projection)

    return run(case, cfg, scenario=scenario, seed=seed, pool_factory=factory, **kwargs)


ALGORITHMS = {"distributed": run, "centralized": centralized_run, "relax": relax_run}

__all__ = [
    "ALGORITHMS",
    "central_dual_update",
    "central_weights",
    "central_x_update",
    "centralized_run",
    "project_relaxed",
    "relax_dual_update_batch",
    "relax_run",
    "relax_x_update_batch",
    "RelaxPool",
]
