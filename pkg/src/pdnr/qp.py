"""Convex QP with box bounds and linear equalities.

    minimize    0.5 x'Hx + c'x
    subject to  E x = d,  lb <= x <= ub

The core is a dual active-set method (Goldfarb-Idnani) on dense blocks,
vectorised over a batch of independent problems of equal shape. Bounds are
the only inequalities, so an active bound simply fixes a variable. A warm
start seeds the initial working set with the bounds the previous iterate
sat on; multipliers of the wrong sign are released before the dual
iterations begin, so the result does not depend on the seed.

Positive semidefinite problems are handled by proximal-point outer
iterations around the strongly convex kernel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import QpInfeasibleError, QpMaxIterationsError

OK, INFEASIBLE, MAXITER = 0, 1, 2

_FEAS = 1e-12


@dataclass
class QpProblem:
    """A QP instance; ``H`` and ``E`` may be dense arrays or scipy sparse matrices."""

    H: object
    c: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    E: object = None
    d: np.ndarray = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = self.c.shape[0]
        self.lb = np.broadcast_to(np.asarray(self.lb, dtype=float), (n,)).copy()
        self.ub = np.broadcast_to(np.asarray(self.ub, dtype=float), (n,)).copy()
        if self.E is None:
            self.E = np.zeros((0, n))
            self.d = np.zeros(0)
        self.d = np.asarray(self.d, dtype=float)
        if np.any(self.lb > self.ub):
            raise ValueError("lower bound exceeds upper bound")
        if _shape(self.H) != (n, n) or _shape(self.E)[1] != n or _shape(self.E)[0] != self.d.shape[0]:
            raise ValueError("inconsistent QP dimensions")

    @property
    def n(self) -> int:
        return self.c.shape[0]

    def dense(self):
        return _dense(self.H), _dense(self.E)

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ (self.H @ x) + self.c @ x)


@dataclass
class QpSolution:
    x: np.ndarray
    eq_residual: float
    stationarity: float
    iterations: int
    multipliers: np.ndarray
    status: int = OK

    @property
    def ok(self) -> bool:
        return self.status == OK


def _shape(a):
    return a.shape


def _dense(a):
    return a.toarray() if sp.issparse(a) else np.asarray(a, dtype=float)


def _kkt(H, E, act, rhs_x, rhs_d, bound_vals):
    # Solve the working-set KKT system for a batch; active rows pin x to bound_vals.
    B, n, _ = H.shape
    m = E.shape[1]
    fixed = act != 0
    M = np.zeros((B, n + m, n + m))
    M[:, :n, :n] = np.where(fixed[:, :, None], 0.0, H)
    M[:, :n, n:] = np.where(fixed[:, :, None], 0.0, -np.swapaxes(E, 1, 2))
    idx = np.arange(n)
    M[:, idx, idx] = np.where(fixed, 1.0, M[:, idx, idx])
    M[:, n:, :n] = E
    rhs = np.concatenate([np.where(fixed, bound_vals, rhs_x), rhs_d], axis=1)
    sol = np.linalg.solve(M, rhs[:, :, None])[:, :, 0]
    return sol[:, :n], sol[:, n:]


def _kkt_safe(H, E, act, rhs_x, rhs_d, bound_vals):
    try:
        z, nu = _kkt(H, E, act, rhs_x, rhs_d, bound_vals)
        return z, nu, np.ones(H.shape[0], dtype=bool)
    except np.linalg.LinAlgError:
        pass
    B, n, _ = H.shape
    z = np.zeros((B, n))
    nu = np.zeros((B, E.shape[1]))
    good = np.ones(B, dtype=bool)
    for b in range(B):
        s = slice(b, b + 1)
        try:
            z[s], nu[s] = _kkt(H[s], E[s], act[s], rhs_x[s], rhs_d[s], bound_vals[s])
        except np.linalg.LinAlgError:
            good[b] = False
    return z, nu, good


def _bound_values(act, lb, ub):
    return np.where(act < 0, lb, np.where(act > 0, ub, 0.0))


def _grad_residual(H, c, E, x, nu):
    # H x + c - E' nu
    return np.einsum("bij,bj->bi", H, x) + c - np.einsum("bmi,bm->bi", E, nu)


def solve_qp_batch(H, c, lb, ub, E=None, d=None, x0=None, max_iter=None):
    """Solve a batch of strongly convex QPs of identical shape.

    Parameters
    ----------
    H : ndarray, shape (B, n, n)
        Symmetric positive definite Hessians.
    c, lb, ub : ndarray, shape (B, n)
    E : ndarray, shape (B, m, n), optional
    d : ndarray, shape (B, m), optional
    x0 : ndarray, shape (B, n), optional
        Warm start; only the set of bounds it touches is used.

    Returns
    -------
    x, nu, status, iterations : ndarray
        Solutions, equality multipliers, per-problem status code
        (``OK``, ``INFEASIBLE``, ``MAXITER``) and iteration counts.
    """
    H = np.asarray(H, dtype=float)
    c = np.asarray(c, dtype=float)
    B, n = c.shape
    lb = np.asarray(lb, dtype=float)
    ub = np.asarray(ub, dtype=float)
    if E is None:
        E = np.zeros((B, 0, n))
        d = np.zeros((B, 0))
    E = np.asarray(E, dtype=float)
    d = np.asarray(d, dtype=float)
    m = E.shape[1]
    if max_iter is None:
        max_iter = 10 * (n + m) + 50

    act = np.zeros((B, n), dtype=np.int8)
    if x0 is not None:
        x0 = np.asarray(x0, dtype=float)
        scale = _FEAS * (1.0 + np.abs(x0))
        act[np.isfinite(lb) & (x0 <= lb + scale)] = -1
        act[np.isfinite(ub) & (x0 >= ub - scale) & (act == 0)] = 1
    # a variable with lb == ub is an equality in disguise and never leaves the working set
    pinned = lb == ub
    act[pinned] = -1

    status = np.zeros(B, dtype=np.int8)
    iters = np.zeros(B, dtype=np.int64)
    x = np.zeros((B, n))
    nu = np.zeros((B, m))

    # initial working set: drop bounds with negative multipliers until dual feasible
    for _ in range(n + 1):
        x, nu, good = _kkt_safe(H, E, act, -c, d, _bound_values(act, lb, ub))
        if not good.all():
            act[~good] = np.where(pinned[~good], -1, 0)
            x[~good], nu[~good], good2 = _kkt_safe(
                H[~good], E[~good], act[~good], -c[~good], d[~good], _bound_values(act[~good], lb[~good], ub[~good])
            )
            status[np.flatnonzero(~good)[~good2]] = INFEASIBLE
        g = _grad_residual(H, c, E, x, nu)
        mu = -act * g
        neg = (act != 0) & (mu < 0) & ~pinned
        if not neg.any():
            break
        act[neg] = 0

    g = _grad_residual(H, c, E, x, nu)
    mu = np.where((act != 0) & ~pinned, -act * g, 0.0)
    mu = np.maximum(mu, 0.0)

    adding = np.full(B, -1, dtype=np.int64)
    add_sign = np.zeros(B, dtype=np.int8)
    mu_add = np.zeros(B)
    live = status == OK
    rows = np.arange(B)

    while True:
        # choose a violated bound for problems that are not mid-way through an addition
        pick = live & (adding < 0)
        if pick.any():
            lo_v = np.where(act == 0, lb - x, -np.inf)
            hi_v = np.where(act == 0, x - ub, -np.inf)
            viol = np.maximum(lo_v, hi_v)
            tolv = _FEAS * (1.0 + np.maximum(np.abs(np.where(np.isfinite(lb), lb, 0)), np.abs(np.where(np.isfinite(ub), ub, 0))))
            viol = np.where(viol > tolv, viol, -np.inf)
            k = np.argmax(viol, axis=1)
            has = np.isfinite(viol[rows, k]) & pick
            finished = pick & ~has
            live = live & ~finished
            adding[has] = k[has]
            add_sign[has] = np.where(lo_v[rows[has], k[has]] >= hi_v[rows[has], k[has]], -1, 1)
            mu_add[has] = 0.0
        if not live.any():
            break
        over = live & (iters >= max_iter)
        if over.any():
            status[over] = MAXITER
            live &= ~over
            if not live.any():
                break

        idx = np.flatnonzero(live)
        p = adding[idx]
        sig = -add_sign[idx].astype(float)  # +1 lower bound constraint, -1 upper
        rhs_x = np.zeros((len(idx), n))
        rhs_x[np.arange(len(idx)), p] = sig
        z, dnu, good = _kkt_safe(H[idx], E[idx], act[idx], rhs_x, np.zeros((len(idx), m)), np.zeros((len(idx), n)))
        if not good.all():
            status[idx[~good]] = INFEASIBLE
            live[idx[~good]] = False
        hz = np.einsum("bij,bj->bi", H[idx], z) - np.einsum("bmi,bm->bi", E[idx], dnu)
        a = act[idx]
        # sigma_k = -act_k, so r_k = -sigma_k (Hz - E'dnu)_k = act_k (...)
        r = np.where(a != 0, a * hz, 0.0)
        # partial step length limited by working-set multipliers
        ratio = np.where((a != 0) & ~pinned[idx] & (r > 1e-14), mu[idx] / np.where(r > 1e-14, r, 1.0), np.inf)
        jblock = np.argmin(ratio, axis=1)
        t1 = ratio[np.arange(len(idx)), jblock]
        curv = sig * z[np.arange(len(idx)), p]
        xp = x[idx, p]
        bound = np.where(sig > 0, lb[idx, p], ub[idx, p])
        slack = sig * (xp - bound)  # negative when violated
        dependent = curv <= 1e-14 * (1.0 + np.abs(np.einsum("bii->bi", H[idx]).max(axis=1)))
        t2 = np.where(dependent, np.inf, -slack / np.where(dependent, 1.0, curv))
        t = np.minimum(t1, t2)
        infeas = good & ~np.isfinite(t)
        if infeas.any():
            status[idx[infeas]] = INFEASIBLE
            live[idx[infeas]] = False
        step = good & np.isfinite(t)
        s = idx[step]
        ts = t[step]
        primal = ~dependent[step]
        x[s] += np.where(primal[:, None], ts[:, None] * z[step], 0.0)
        # equality multipliers move on dual-only steps as well
        nu[s] += ts[:, None] * dnu[step]
        mu[s] = np.where(act[s] != 0, mu[s] - ts[:, None] * r[step], 0.0)
        mu_add[s] += ts
        iters[s] += 1
        full = t2[step] <= t1[step]
        fs = s[full]
        if len(fs):
            pf = adding[fs]
            act[fs, pf] = add_sign[fs]
            x[fs, pf] = np.where(add_sign[fs] < 0, lb[fs, pf], ub[fs, pf])
            mu[fs, pf] = mu_add[fs]
            adding[fs] = -1
        ps = s[~full]
        if len(ps):
            jb = jblock[step][~full]
            act[ps, jb] = 0
            mu[ps, jb] = 0.0
    x = np.clip(x, lb, ub)
    return x, nu, status, iters


def kkt_residuals(H, c, E, d, lb, ub, x, nu):
    """Equality residual and projected-gradient stationarity residual (max-norms)."""
    H, E = _dense(H), _dense(E)
    g = H @ x + c - E.T @ nu if E.size else H @ x + c
    at_lo = x <= lb + 1e-12 * (1 + np.abs(lb))
    at_hi = x >= ub - 1e-12 * (1 + np.abs(ub))
    res = np.where(at_lo & at_hi, 0.0, np.where(at_lo, np.maximum(-g, 0.0), np.where(at_hi, np.maximum(g, 0.0), np.abs(g))))
    eq = float(np.max(np.abs(E @ x - d))) if E.size else 0.0
    return eq, float(res.max()) if res.size else 0.0


def _is_pd(H, free=None) -> bool:
    if free is not None:
        H = H[np.ix_(free, free)]
    try:
        np.linalg.cholesky(H)
        return True
    except np.linalg.LinAlgError:
        return False


def solve_qp(problem: QpProblem, tol: float = 1e-8, warm_start=None, max_outer: int = 200) -> QpSolution:
    """Solve one QP to KKT tolerance ``tol``.

    Raises
    ------
    QpInfeasibleError
        When the bounds and equalities cannot be met together.
    QpMaxIterationsError
        When the residuals are still above ``tol``; ``.solution`` holds the
        best iterate.
    """
    H, E = problem.dense()
    H = 0.5 * (H + H.T)
    c, lb, ub, d = problem.c, problem.lb, problem.ub, problem.d
    n = problem.n
    x0 = None if warm_start is None else np.clip(np.asarray(warm_start, dtype=float), lb, ub)
    if _is_pd(H, lb != ub):
        x, nu, st, it = solve_qp_batch(H[None], c[None], lb[None], ub[None], E[None], d[None], None if x0 is None else x0[None])
        x, nu, status, total = x[0], nu[0], int(st[0]), int(it[0])
    else:
        # proximal point: each step is strongly convex
        scale = max(1.0, float(np.abs(H).max()))
        tau = 1e-4 * scale
        xk = np.zeros(n) if x0 is None else x0.copy()
        xk = np.clip(xk, np.where(np.isfinite(lb), lb, -1e300), np.where(np.isfinite(ub), ub, 1e300))
        xk = np.where(np.isfinite(xk), xk, 0.0)
        total = 0
        status = MAXITER
        Hp = H + tau * np.eye(n)
        for _ in range(max_outer):
            x, nu, st, it = solve_qp_batch(Hp[None], (c - tau * xk)[None], lb[None], ub[None], E[None], d[None], xk[None])
            x, nu = x[0], nu[0]
            total += int(it[0])
            if st[0] == INFEASIBLE:
                status = INFEASIBLE
                break
            eq, stat = kkt_residuals(H, c, E, d, lb, ub, x, nu)
            xk = x
            if eq <= tol and stat <= tol:
                status = OK
                break
    eq, stat = kkt_residuals(H, c, E, d, lb, ub, x, nu)
    sol = QpSolution(x=x, eq_residual=eq, stationarity=stat, iterations=total, multipliers=nu, status=status)
    if status == INFEASIBLE:
        raise QpInfeasibleError("box and equality constraints are incompatible", sol)
    if eq > tol or stat > tol or status != OK:
        sol.status = MAXITER
        raise QpMaxIterationsError(f"residuals eq={eq:.2e} stationarity={stat:.2e} above tolerance", sol)
    return sol
