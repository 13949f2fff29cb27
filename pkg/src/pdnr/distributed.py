"""Synchronous multi-agent driver for the distributed ADMM.

A round runs in two phases separated by barriers:

1. every agent solves its X-update from its own iterate and the neighbour
   iterates of the previous round; the new primals are exchanged;
2. every agent solves its b-update, updates its multipliers with the freshly
   exchanged neighbour primals, and publishes its new ``b``.

The :class:`Exchange` only commits posted payloads at a barrier, so within a
phase the order in which agents run cannot change anything. Three
schedulers drive the phases: a round-robin reference, a thread pool with
one task per agent, and a vectorised one that processes all agents as a
single batch. They produce bitwise identical traces.
"""

from __future__ import annotations

import csv
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import admm_core as ac
from .errors import InfeasibleError
from .graph import min_weight_rooted_arborescence
from .model import NetworkCase, evaluate, open_lines


@dataclass
class RoundMessage:
    """Payload one agent sends to its neighbours at the end of a round."""

    sender: int
    primal: ac.AgentPrimal
    b: np.ndarray


@dataclass
class ConvergenceMetrics:
    iteration: int
    e_k: float
    s: np.ndarray
    r: np.ndarray
    consensus: np.ndarray


@dataclass
class PhaseSnapshot:
    """State at the end of one inter-event interval of a scenario run."""

    start: int
    end: int
    b: np.ndarray
    case: NetworkCase
    converged_at: int | None
    forbidden: np.ndarray


@dataclass
class RunResult:
    """Outcome of one run; ``consensus`` is ``None`` when agents disagree.

    ``feasible`` means the agents agree on a configuration that passes
    :func:`pdnr.model.validate`; ``converged`` means the stopping tolerance
    was met as well.
    """

    b_agents: np.ndarray
    consensus: np.ndarray | None
    loss_kw: float | None
    feasible: bool
    converged: bool
    iterations: int
    trace: list
    wall_time: float
    seed: int
    status: str
    open_lines: list = field(default_factory=list)
    report: dict | None = None
    majority: np.ndarray | None = None
    majority_loss_kw: float | None = None
    majority_share: float = 0.0
    phases: list = field(default_factory=list)

    @property
    def e_trace(self) -> np.ndarray:
        return np.array([m.e_k for m in self.trace])


@dataclass
class RestartSummary:
    runs: list
    best: RunResult | None
    average_loss_kw: float | None
    min_loss_kw: float | None
    max_loss_kw: float | None
    average_iterations: float
    feasible_count: int

    @property
    def restarts(self) -> int:
        return len(self.runs)

    @property
    def feasibility_ratio(self) -> float:
        return self.feasible_count / len(self.runs)

    def ratio_text(self) -> str:
        return f"{self.feasible_count}/{len(self.runs)}"


class AgentPool:
    """Stacked state of all agents; row ``i`` belongs to agent ``i`` only."""

    def __init__(self, case: NetworkCase, layout: ac.Layout, b0):
        V, M, dim = case.n_nodes, case.n_arcs, layout.dim
        self.case = case
        self.layout = layout
        self.X = np.zeros((V, dim))
        self.alpha = np.zeros((V, M))
        self.beta = np.zeros((V, M))
        self.gamma = np.zeros((V, M))
        self.lam = np.zeros((V, dim))
        self.b = np.tile(np.asarray(b0, dtype=float), (V, 1))
        self.forbidden = np.zeros((V, M), dtype=bool)
        self.rho = np.stack([case.rho1, case.rho2], axis=1).astype(float)

    @property
    def n_agents(self) -> int:
        return self.X.shape[0]

    def agent(self, i: int) -> ac.AgentState:
        """Snapshot of agent ``i`` as an :class:`AgentState`."""
        M = self.case.n_arcs
        lay = self.layout
        return ac.AgentState(
            id=i,
            primal=ac.AgentPrimal.from_vector(self.X[i], M),
            duals=ac.AgentDuals(self.alpha[i].copy(), self.beta[i].copy(), self.gamma[i].copy(), self.lam[i].copy()),
            b=self.b[i].copy(),
            forbidden=self.forbidden[i].copy(),
            local_r=lay.local_r[i].copy(),
            local_x=lay.local_x[i].copy(),
            rho=(float(self.rho[i, 0]), float(self.rho[i, 1])),
            neighbors=tuple(int(j) for j in lay.nbrs[i] if j >= 0),
        )

    @property
    def duals(self) -> list:
        return [self.alpha, self.beta, self.gamma, self.lam]

    @duals.setter
    def duals(self, values) -> None:
        self.alpha, self.beta, self.gamma, self.lam = values

    def reset_duals(self) -> None:
        for arr in self.duals:
            arr[:] = 0.0

    def new_round(self, exchange: "Exchange", delta: float) -> "_Round":
        return _Round(self, exchange, delta)


class Exchange:
    """Neighbour-only mailbox with barrier commit.

    Payloads posted during a phase become visible to neighbours only after
    :meth:`barrier`.
    """

    def __init__(self, layout: ac.Layout, X0, b0):
        self.layout = layout
        self._X = np.array(X0, dtype=float)
        self._b = np.array(b0, dtype=float)
        self._X_stage = self._X.copy()
        self._b_stage = self._b.copy()

    def post(self, ids, X=None, b=None) -> None:
        if X is not None:
            self._X_stage[ids] = X
        if b is not None:
            self._b_stage[ids] = b

    def barrier(self) -> None:
        self._X[:] = self._X_stage
        self._b[:] = self._b_stage

    def neighbor_primals(self, ids) -> np.ndarray:
        nb = self.layout.nbrs[ids]
        return np.where(self.layout.nbr_ok[ids][:, :, None], self._X[np.maximum(nb, 0)], 0.0)

    def neighbor_switches(self, ids) -> np.ndarray:
        nb = self.layout.nbrs[ids]
        return np.where(self.layout.nbr_ok[ids][:, :, None], self._b[np.maximum(nb, 0)], 0.0)

    def messages_for(self, i: int) -> list[RoundMessage]:
        """Committed payloads of agent ``i``'s neighbours as messages."""
        M = self.layout.n_arcs
        return [
            RoundMessage(int(j), ac.AgentPrimal.from_vector(self._X[j], M), self._b[j].copy())
            for j in self.layout.nbrs[i]
            if j >= 0
        ]


class _Round:
    # phase bodies shared by all schedulers; each works on a subset of agents

    def __init__(self, pool: AgentPool, exchange: Exchange, delta: float):
        self.pool = pool
        self.ex = exchange
        self.delta = delta
        V = pool.n_agents
        self.X_new = np.empty_like(pool.X)
        self.b_new = np.empty_like(pool.b)
        self.duals_new = [np.empty_like(a) for a in pool.duals]
        self.errors: dict[int, Exception] = {}
        self._ids = np.arange(V)

    def primal(self, ids) -> None:
        p = self.pool
        ids = np.asarray(ids)
        Xn = self.ex.neighbor_primals(ids)
        X = ac.x_update_batch(
            p.layout, ids, p.X[ids], Xn, p.lam[ids], p.alpha[ids], p.beta[ids], p.gamma[ids], p.b[ids], p.rho[ids], self.delta
        )
        self.X_new[ids] = X
        self.ex.post(ids, X=X)

    def switch(self, ids) -> None:
        p = self.pool
        ids = np.asarray(ids)
        X = self.X_new[ids]
        h = ac.weights_batch(p.layout, ids, X, p.alpha[ids], p.beta[ids], p.gamma[ids])
        g = p.case.digraph
        b = np.empty((len(ids), p.case.n_arcs))
        for row, i in enumerate(ids):
            try:
                b[row] = min_weight_rooted_arborescence(g, h[row], p.forbidden[i])
            except InfeasibleError as err:
                raise InfeasibleError(f"agent {i}: {err}", agent=int(i)) from None
        Xn = self.ex.neighbor_primals(ids)
        out = ac.dual_update_batch(p.layout, ids, X, Xn, b, p.alpha[ids], p.beta[ids], p.gamma[ids], p.lam[ids])
        for dst, val in zip(self.duals_new, out):
            dst[ids] = val
        self.b_new[ids] = b
        self.ex.post(ids, b=b)


class SequentialScheduler:
    """Reference scheduler: agents one after another, barrier after each phase."""

    name = "sequential"

    def run_round(self, rnd: _Round) -> None:
        for i in range(rnd.pool.n_agents):
            rnd.primal([i])
        rnd.ex.barrier()
        for i in range(rnd.pool.n_agents):
            rnd.switch([i])
        rnd.ex.barrier()


class ThreadedScheduler:
    """One task per agent on a thread pool; each phase ends when all tasks finish."""

    name = "threaded"

    def __init__(self, workers: int | None = None):
        self.workers = workers

    def run_round(self, rnd: _Round) -> None:
        n = rnd.pool.n_agents
        with ThreadPoolExecutor(max_workers=self.workers) as ex:
            for fut in [ex.submit(rnd.primal, [i]) for i in range(n)]:
                fut.result()
            rnd.ex.barrier()
            for fut in [ex.submit(rnd.switch, [i]) for i in range(n)]:
                fut.result()
            rnd.ex.barrier()


class VectorizedScheduler:
    """All agents as one batch per phase."""

    name = "vectorized"

    def run_round(self, rnd: _Round) -> None:
        ids = np.arange(rnd.pool.n_agents)
        rnd.primal(ids)
        rnd.ex.barrier()
        rnd.switch(ids)
        rnd.ex.barrier()


SCHEDULERS = {
    "sequential": SequentialScheduler,
    "threaded": ThreadedScheduler,
    "vectorized": VectorizedScheduler,
}


def _row_norm(a) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", a, a))


def consensus_terms(layout: ac.Layout, b) -> np.ndarray:
    """``sum_j ||b^i - b^j||`` per agent, in fixed neighbour order."""
    V = b.shape[0]
    acc = np.zeros(V)
    for s in range(layout.nbrs.shape[1]):
        nb = layout.nbrs[:, s]
        ok = nb >= 0
        d = b - b[np.maximum(nb, 0)]
        acc = acc + np.where(ok, _row_norm(d), 0.0)
    return acc


def round_metrics(layout, k, X0, X1, b0, b1, duals0, duals1) -> ConvergenceMetrics:
    """Successive-change metric of one round from before/after snapshots."""
    s = np.sqrt(np.einsum("ij,ij->i", X1 - X0, X1 - X0) + np.einsum("ij,ij->i", b1 - b0, b1 - b0))
    r2 = np.zeros(X0.shape[0])
    for a0, a1 in zip(duals0, duals1):
        d = a1 - a0
        r2 = r2 + np.einsum("ij,ij->i", d, d)
    r = np.sqrt(r2)
    c = consensus_terms(layout, b1)
    return ConvergenceMetrics(iteration=k, e_k=float(np.sum(s + r + c)), s=s, r=r, consensus=c)


def run_round(pool: AgentPool, exchange: Exchange, cfg: ac.SolverConfig, k: int = 0, scheduler=None) -> ConvergenceMetrics:
    """Execute one synchronous round and commit it to ``pool``."""
    scheduler = scheduler or VectorizedScheduler()
    rnd = pool.new_round(exchange, cfg.delta)
    scheduler.run_round(rnd)
    m = round_metrics(pool.layout, k, pool.X, rnd.X_new, pool.b, rnd.b_new, pool.duals, rnd.duals_new)
    pool.X = rnd.X_new
    pool.b = rnd.b_new
    pool.duals = rnd.duals_new
    return m


def _evaluate_config(case, b):
    try:
        _, loss, rep = evaluate(case, b)
    except Exception:  # noqa: BLE001 - non-radial majority guesses
        return None, None
    return loss, rep


def summarize_agents(case: NetworkCase, b_agents) -> dict:
    """Consensus check, majority configuration and evaluation of a final state."""
    rows = [tuple(np.flatnonzero(row > 0.5)) for row in b_agents]
    counts = Counter(rows)
    top, n_top = max(counts.items(), key=lambda kv: (kv[1], [-x for x in kv[0]]))
    maj = np.zeros(case.n_arcs, dtype=np.int8)
    maj[list(top)] = 1
    agreed = len(counts) == 1
    loss, rep = _evaluate_config(case, maj)
    return {"agreed": agreed, "majority": maj, "share": n_top / len(rows), "loss": loss, "report": rep}


def run(
    case: NetworkCase,
    cfg: ac.SolverConfig,
    scenario=None,
    seed: int | None = None,
    scheduler: str | object = "vectorized",
    sink: Callable | None = None,
    b0=None,
    pool_factory: Callable = AgentPool,
) -> RunResult:
    """One run of the distributed algorithm.

    Parameters
    ----------
    case : NetworkCase
    cfg : SolverConfig
    scenario : object with ``events`` as ``(iteration, event)`` pairs, optional
        Each event's ``apply(pool, case, cfg)`` returns the updated true case.
        Events scheduled at iteration ``t`` are applied after ``t`` rounds.
    seed : int, optional
        Seed of the shared initial ``b``; defaults to ``cfg.seed``.
    scheduler : str or scheduler instance
    sink : callable, optional
        Receives every :class:`ConvergenceMetrics` as it is produced.
    b0 : array_like, optional
        Explicit initial ``b`` overriding the Gaussian draw.
    pool_factory : callable, optional
        Builds the agent state from ``(case, layout, b0)``; the pool's
        ``new_round`` supplies the per-round kernels. Variants of the
        algorithm plug in here.

    Returns
    -------
    RunResult
        ``status`` is ``"converged"``, ``"max_iterations"`` (consensus
        without meeting the tolerance) or ``"no_consensus"``.
    """
    t0 = time.perf_counter()
    seed = cfg.seed if seed is None else seed
    if isinstance(scheduler, str):
        scheduler = SCHEDULERS[scheduler]()
    layout = ac.Layout.build(case)
    if b0 is None:
        b0 = ac.initial_switches(case, cfg.sigma, seed)
    pool = pool_factory(case, layout, b0)
    exchange = Exchange(layout, pool.X, pool.b)
    eta = cfg.tolerance(case.n_nodes)
    events = sorted(scenario.events if scenario is not None else [], key=lambda ev: ev[0])
    pending = list(events)
    true_case = case
    trace: list[ConvergenceMetrics] = []
    phases: list[PhaseSnapshot] = []
    phase_start = 0
    phase_conv = None
    converged = False
    k = 0
    while k < cfg.k_max:
        if pending and pending[0][0] <= k:
            phases.append(PhaseSnapshot(phase_start, k, pool.b.copy(), true_case, phase_conv, pool.forbidden.copy()))
            while pending and pending[0][0] <= k:
                _, ev = pending.pop(0)
                true_case = ev.apply(pool, true_case, cfg)
            exchange._b[:] = pool.b
            exchange._b_stage[:] = pool.b
            phase_start, phase_conv = k, None
        m = run_round(pool, exchange, cfg, k, scheduler)
        trace.append(m)
        if sink is not None:
            sink(m)
        k += 1
        if m.e_k < eta:
            if phase_conv is None:
                phase_conv = k
            if not pending:
                converged = True
                break
        else:
            phase_conv = None
    phases.append(PhaseSnapshot(phase_start, k, pool.b.copy(), true_case, phase_conv, pool.forbidden.copy()))
    return _finish(true_case, pool.b, converged, k, trace, time.perf_counter() - t0, seed, phases)


def _finish(case, b_agents, converged, k, trace, wall, seed, phases) -> RunResult:
    info = summarize_agents(case, b_agents)
    if info["agreed"]:
        cons = info["majority"]
        rep = info["report"]
        status = "converged" if converged else "max_iterations"
        feasible = bool(rep is not None and rep.feasible)
        return RunResult(
            b_agents=b_agents.copy(),
            consensus=cons,
            loss_kw=info["loss"],
            feasible=feasible,
            converged=converged,
            iterations=k,
            trace=trace,
            wall_time=wall,
            seed=seed,
            status=status,
            open_lines=open_lines(case, cons),
            report=None if rep is None else rep.as_dict(),
            majority=cons,
            majority_loss_kw=info["loss"],
            majority_share=1.0,
            phases=phases,
        )
    rep = info["report"]
    return RunResult(
        b_agents=b_agents.copy(),
        consensus=None,
        loss_kw=None,
        feasible=False,
        converged=False,
        iterations=k,
        trace=trace,
        wall_time=wall,
        seed=seed,
        status="no_consensus",
        open_lines=open_lines(case, info["majority"]),
        report=None if rep is None else rep.as_dict(),
        majority=info["majority"],
        majority_loss_kw=info["loss"],
        majority_share=info["share"],
        phases=phases,
    )


def summarize(runs: Sequence[RunResult]) -> RestartSummary:
    """Table-style aggregate over restarts; losses over feasible runs only."""
    feas = [r for r in runs if r.feasible]
    losses = [r.loss_kw for r in feas]
    best = min(feas, key=lambda r: (r.loss_kw, r.seed)) if feas else None
    return RestartSummary(
        runs=list(runs),
        best=best,
        average_loss_kw=float(np.mean(losses)) if losses else None,
        min_loss_kw=float(min(losses)) if losses else None,
        max_loss_kw=float(max(losses)) if losses else None,
        average_iterations=float(np.mean([r.iterations for r in runs])),
        feasible_count=len(feas),
    )


def multi_restart(case: NetworkCase, cfg: ac.SolverConfig, scenario=None, runner=None, **kwargs) -> RestartSummary:
    """``cfg.restarts`` independent runs; restart ``r`` is seeded with ``cfg.seed + r``."""
    runner = runner or run
    runs = [runner(case, cfg, scenario=scenario, seed=cfg.seed + r, **kwargs) for r in range(cfg.restarts)]
    return summarize(runs)


class CsvTraceSink:
    """Streams metric rows (``iteration, e_k`` and optional per-agent norms) as CSV."""

    def __init__(self, fh, per_agent: bool = False):
        self._w = csv.writer(fh, lineterminator="\n")
        self._per_agent = per_agent
        self._header = False

    def __call__(self, m: ConvergenceMetrics) -> None:
        if not self._header:
            head = ["iteration", "e_k"]
            if self._per_agent:
                head += [f"s_{i}" for i in range(len(m.s))] + [f"r_{i}" for i in range(len(m.r))]
            self._w.writerow(head)
            self._header = True
        row = [m.iteration, repr(float(m.e_k))]
        if self._per_agent:
            row += [repr(float(v)) for v in m.s] + [repr(float(v)) for v in m.r]
        self._w.writerow(row)
