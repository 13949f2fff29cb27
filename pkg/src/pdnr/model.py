"""Grid data model and the simplified DistFlow evaluator.

Units: powers in MW / MVAr, impedances divided by the squared base voltage
(kV), so ``r * P**2`` is in MW. Losses are reported in kW. ``u`` holds the
squared voltage ratio ``V_i**2 / V_0**2`` with ``u[root] = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

import numpy as np

from .errors import InfeasibleError, NotRadialError, SizeGuardError
from .graph import Digraph, enumerate_arborescences, is_spanning_arborescence

BALANCE_TOL = 1e-6


@dataclass(frozen=True)
class NetworkCase:
    """Immutable description of a distribution grid.

    ``r``, ``x``, ``p_cap`` and ``q_cap`` are arc vectors; ``rho1``/``rho2``
    are node injections (supply positive, demand negative). ``labels`` maps
    internal node ids to the ids used in case files.
    """

    digraph: Digraph
    r: np.ndarray
    x: np.ndarray
    p_cap: np.ndarray
    q_cap: np.ndarray
    rho1: np.ndarray
    rho2: np.ndarray
    epsilon: float
    v0: float
    substations: frozenset = frozenset()
    voltage_enabled: bool = True
    labels: tuple = ()
    name: str = ""
    balance_tol: float = BALANCE_TOL
    _label_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        g = self.digraph
        for name in ("r", "x", "p_cap", "q_cap"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != (g.arc_count,):
                raise ValueError(f"{name} must have one entry per arc")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name in ("rho1", "rho2"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != (g.node_count,):
                raise ValueError(f"{name} must have one entry per node")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.r <= 0) or np.any(self.x <= 0):
            raise ValueError("r and x must be strictly positive on every arc")
        if np.any(self.p_cap < 0) or np.any(self.q_cap < 0):
            raise ValueError("capacities must be nonnegative")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        rev = g.reverse
        if np.any(rev < 0):
            raise ValueError("every arc needs its reverse")
        for name in ("r", "x", "p_cap", "q_cap"):
            arr = getattr(self, name)
            if not np.array_equal(arr, arr[rev]):
                raise ValueError(f"{name} differs between an arc and its reverse")
        for name in ("rho1", "rho2"):
            total = float(getattr(self, name).sum())
            if abs(total) > self.balance_tol:
                raise ValueError(f"{name} does not sum to zero (total {total:.3g})")
        labels = tuple(self.labels) if self.labels else tuple(range(g.node_count))
        if len(labels) != g.node_count or len(set(labels)) != len(labels):
            raise ValueError("labels must be unique, one per node")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "substations", frozenset(self.substations))
        object.__setattr__(self, "_label_index", {lab: k for k, lab in enumerate(labels)})

    @property
    def root(self) -> int:
        return self.digraph.root

    @property
    def n_nodes(self) -> int:
        return self.digraph.node_count

    @property
    def n_arcs(self) -> int:
        return self.digraph.arc_count

    @property
    def u_bounds(self) -> tuple[float, float]:
        return (1 - self.epsilon) ** 2, (1 + self.epsilon) ** 2

    def node(self, label) -> int:
        """Internal id of a node given its case-file label."""
        try:
            return self._label_index[label]
        except KeyError:
            raise KeyError(f"unknown bus {label!r}") from None

    def arc(self, tail_label, head_label) -> int:
        return self.digraph.arc_id(self.node(tail_label), self.node(head_label))

    def line_arcs(self, pair) -> tuple[int, int]:
        """Both arc ids of an undirected line given by case-file labels."""
        a, b = pair
        return self.arc(a, b), self.arc(b, a)

    def with_injections(self, rho1=None, rho2=None) -> "NetworkCase":
        return replace(
            self,
            rho1=self.rho1 if rho1 is None else rho1,
            rho2=self.rho2 if rho2 is None else rho2,
        )


@dataclass
class FlowSolution:
    p: np.ndarray
    q: np.ndarray
    u: np.ndarray


@dataclass
class FeasibilityReport:
    radial: bool
    capacity: bool
    voltage: bool
    balance: bool
    balance_residual: float
    min_u: float
    max_u: float

    @property
    def feasible(self) -> bool:
        return self.radial and self.capacity and self.voltage and self.balance

    def as_dict(self) -> dict:
        return {
            "radial": self.radial,
            "capacity": self.capacity,
            "voltage": self.voltage,
            "balance": self.balance,
            "balance_residual": self.balance_residual,
            "min_u": self.min_u,
            "max_u": self.max_u,
            "feasible": self.feasible,
        }


def apply_A(case: NetworkCase, u) -> np.ndarray:
    """Per-arc voltage difference ``u[tail] - u[head]``."""
    u = np.asarray(u, dtype=float)
    g = case.digraph
    if u.shape != (g.node_count,):
        raise ValueError("u must have one entry per node")
    return u[g.tails] - u[g.heads]


def divergence(case: NetworkCase, flow) -> np.ndarray:
    """Outflow minus inflow at every node."""
    g = case.digraph
    flow = np.asarray(flow, dtype=float)
    return np.bincount(g.tails, flow, g.node_count) - np.bincount(g.heads, flow, g.node_count)


def _tree_order(case: NetworkCase, b: np.ndarray):
    g = case.digraph
    parent_arc = np.full(g.node_count, -1, dtype=np.int64)
    sel = np.flatnonzero(b)
    parent_arc[g.heads[sel]] = sel
    children: dict[int, list[int]] = {}
    for k in sel:
        children.setdefault(int(g.tails[k]), []).append(int(k))
    order = [g.root]
    stack = [g.root]
    while stack:
        v = stack.pop()
        for k in children.get(v, ()):
            w = int(g.heads[k])
            order.append(w)
            stack.append(w)
    return parent_arc, order


def tree_flows(case: NetworkCase, b) -> FlowSolution:
    """Lossless flows and voltages on a radial configuration.

    Each tree arc carries the net demand of the subtree below it; voltages
    follow by a forward sweep from the root.

    Raises
    ------
    NotRadialError
        If ``b`` is not a spanning arborescence rooted at the case root.
    """
    b = np.asarray(b)
    g = case.digraph
    if not is_spanning_arborescence(g, b):
        raise NotRadialError("configuration is not a spanning arborescence")
    parent_arc, order = _tree_order(case, b != 0)
    p = np.zeros(g.arc_count)
    q = np.zeros(g.arc_count)
    sub1 = case.rho1.copy()
    sub2 = case.rho2.copy()
    for v in reversed(order[1:]):
        k = parent_arc[v]
        p[k] = -sub1[v]
        q[k] = -sub2[v]
        t = g.tails[k]
        sub1[t] += sub1[v]
        sub2[t] += sub2[v]
    u = np.ones(g.node_count)
    for v in order[1:]:
        k = parent_arc[v]
        u[v] = u[g.tails[k]] - 2.0 * (case.r[k] * p[k] + case.x[k] * q[k])
    return FlowSolution(p=p, q=q, u=u)


def sdm_loss(case: NetworkCase, f: FlowSolution) -> float:
    """Approximate active losses ``sum r (p^2 + q^2)`` in kW."""
    return 1000.0 * float(np.sum(case.r * (f.p**2 + f.q**2)))


def validate(case: NetworkCase, b, f: FlowSolution, tol: float = 1e-9) -> FeasibilityReport:
    """Check radiality, capacities, the voltage band and nodal balance.

    Violations are reported, never raised.
    """
    b = np.asarray(b)
    active = b != 0
    radial = is_spanning_arborescence(case.digraph, b)
    p = np.asarray(f.p, dtype=float)
    q = np.asarray(f.q, dtype=float)
    capacity = bool(
        np.all(p[active] >= -tol)
        and np.all(p[active] <= case.p_cap[active] + tol)
        and np.all(q[active] >= -tol)
        and np.all(q[active] <= case.q_cap[active] + tol)
    )
    u = np.asarray(f.u, dtype=float)
    lo, hi = case.u_bounds
    voltage = True
    if case.voltage_enabled:
        voltage = bool(np.all(u >= lo - tol) and np.all(u <= hi + tol))
    res = max(
        float(np.max(np.abs(divergence(case, p * active) - case.rho1))),
        float(np.max(np.abs(divergence(case, q * active) - case.rho2))),
    )
    return FeasibilityReport(
        radial=radial,
        capacity=capacity,
        voltage=voltage,
        balance=res <= 1e-6,
        balance_residual=res,
        min_u=float(u.min()),
        max_u=float(u.max()),
    )


def evaluate(case: NetworkCase, b):
    """Flows, loss (kW) and feasibility report of a radial configuration."""
    f = tree_flows(case, b)
    return f, sdm_loss(case, f), validate(case, b, f)


def brute_force_optimum(case: NetworkCase, forbidden=None):
    """Global loss minimiser over all feasible radial configurations.

    Only for small cases; returns ``(b, loss_kw)``.
    """
    if case.n_nodes > 10:
        raise SizeGuardError("brute force limited to 10 nodes")
    best = None
    for s in enumerate_arborescences(case.digraph, forbidden):
        f, loss, rep = evaluate(case, s)
        if not rep.feasible:
            continue
        if best is None or loss < best[1]:
            best = (s.astype(np.int8), loss)
    if best is None:
        raise InfeasibleError("no feasible radial configuration")
    return best


def configuration_from_open_lines(case: NetworkCase, open_lines: Iterable) -> np.ndarray:
    """Orient the closed lines away from the root; ``open_lines`` uses case labels."""
    g = case.digraph
    closed = np.ones(g.arc_count, dtype=bool)
    for pair in open_lines:
        k1, k2 = case.line_arcs(pair)
        closed[k1] = closed[k2] = False
    b = np.zeros(g.arc_count, dtype=np.int8)
    seen = {g.root}
    stack = [g.root]
    out = {}
    for k in np.flatnonzero(closed):
        out.setdefault(int(g.tails[k]), []).append(int(k))
    while stack:
        v = stack.pop()
        for k in out.get(v, ()):
            w = int(g.heads[k])
            if w not in seen:
                seen.add(w)
                b[k] = 1
                stack.append(w)
    if len(seen) != g.node_count:
        raise NotRadialError("closed lines do not connect every bus")
    if int(closed.sum()) // 2 != g.node_count - 1:
        raise NotRadialError("closed lines contain a loop")
    return b


def open_lines(case: NetworkCase, b) -> list[tuple]:
    """Undirected lines with both arcs inactive, as sorted case-label pairs."""
    g = case.digraph
    b = np.asarray(b)
    out = []
    for k in range(g.arc_count):
        kr = g.reverse[k]
        if k < kr and not b[k] and not b[kr]:
            a, c = case.labels[g.tails[k]], case.labels[g.heads[k]]
            out.append(tuple(sorted((a, c))))
    return sorted(out)


def injections_from_mapping(case: NetworkCase, changes: Mapping) -> tuple[np.ndarray, np.ndarray]:
    rho1 = case.rho1.copy()
    rho2 = case.rho2.copy()
    for label, (p, q) in changes.items():
        k = case.node(label)
        rho1[k] = p
        rho2[k] = q
    return rho1, rho2
