"""Directed graphs, arborescence checks and the minimum-weight rooted
arborescence solver used as the exact projection onto radial configurations.

Arc vectors are plain ``numpy`` arrays indexed by arc id; arc sets are boolean
arrays of the same length.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InfeasibleError, SizeGuardError

ENUMERATION_LIMIT = 10


@dataclass(frozen=True)
class Digraph:
    """Immutable digraph on nodes ``0..node_count-1`` with a designated root.

    Parameters
    ----------
    node_count : int
        Number of nodes.
    arcs : sequence of (int, int)
        Ordered arc list; the position of an arc is its id.
    root : int
        Root (generator) node.
    """

    node_count: int
    arcs: tuple[tuple[int, int], ...]
    root: int
    tails: np.ndarray = field(init=False, repr=False, compare=False)
    heads: np.ndarray = field(init=False, repr=False, compare=False)
    reverse: np.ndarray = field(init=False, repr=False, compare=False)
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        arcs = tuple((int(a), int(b)) for a, b in self.arcs)
        object.__setattr__(self, "arcs", arcs)
        if self.node_count < 1:
            raise ValueError("node_count must be positive")
        if not 0 <= self.root < self.node_count:
            raise ValueError(f"root {self.root} is not a valid node id")
        index = {}
        for k, (a, b) in enumerate(arcs):
            if not (0 <= a < self.node_count and 0 <= b < self.node_count):
                raise ValueError(f"arc {(a, b)} references an unknown node")
            if a == b:
                raise ValueError(f"self-loop {(a, b)} is not allowed")
            if (a, b) in index:
                raise ValueError(f"duplicate arc {(a, b)}")
            index[(a, b)] = k
        tails = np.array([a for a, _ in arcs], dtype=np.int64)
        heads = np.array([b for _, b in arcs], dtype=np.int64)
        reverse = np.array([index.get((b, a), -1) for a, b in arcs], dtype=np.int64)
        for arr in (tails, heads, reverse):
            arr.setflags(write=False)
        object.__setattr__(self, "tails", tails)
        object.__setattr__(self, "heads", heads)
        object.__setattr__(self, "reverse", reverse)
        object.__setattr__(self, "_index", index)

    @classmethod
    def bidirectional(cls, node_count: int, edges: Iterable[tuple[int, int]], root: int) -> "Digraph":
        """Build a digraph holding arcs ``(i, j)`` and ``(j, i)`` for every edge.

        Arc ``2k`` is the edge as given, arc ``2k+1`` its reverse.
        """
        arcs = []
        for a, b in edges:
            arcs.append((a, b))
            arcs.append((b, a))
        return cls(node_count, tuple(arcs), root)

    @property
    def arc_count(self) -> int:
        return len(self.arcs)

    def arc_id(self, tail: int, head: int) -> int:
        try:
            return self._index[(tail, head)]
        except KeyError:
            raise KeyError(f"no arc {(tail, head)}") from None

    def has_arc(self, tail: int, head: int) -> bool:
        return (tail, head) in self._index

    def is_bidirectional(self) -> bool:
        return bool(np.all(self.reverse >= 0))

    def incident(self, i: int) -> np.ndarray:
        """Boolean mask of arcs with ``i`` as tail or head."""
        return (self.tails == i) | (self.heads == i)

    def empty_set(self) -> np.ndarray:
        return np.zeros(self.arc_count, dtype=bool)

    def arc_set(self, arcs: Iterable[tuple[int, int]]) -> np.ndarray:
        s = self.empty_set()
        for a, b in arcs:
            s[self.arc_id(a, b)] = True
        return s


def neighbors(g: Digraph, i: int) -> set[int]:
    """All nodes joined to ``i`` by an arc in either direction."""
    if not 0 <= i < g.node_count:
        raise ValueError(f"invalid node id {i}")
    out = set(g.heads[g.tails == i].tolist())
    out.update(g.tails[g.heads == i].tolist())
    return out


def is_spanning_arborescence(g: Digraph, s: np.ndarray) -> bool:
    """True iff the selected arcs form a spanning arborescence rooted at ``g.root``."""
    s = np.asarray(s)
    if s.shape != (g.arc_count,):
        return False
    sel = np.flatnonzero(s != 0)
    if len(sel) != g.node_count - 1:
        return False
    indeg = np.bincount(g.heads[sel], minlength=g.node_count)
    if indeg[g.root] != 0:
        return False
    indeg[g.root] = 1
    if np.any(indeg != 1):
        return False
    children: dict[int, list[int]] = {}
    for k in sel:
        children.setdefault(int(g.tails[k]), []).append(int(g.heads[k]))
    seen = {g.root}
    stack = [g.root]
    while stack:
        v = stack.pop()
        for w in children.get(v, ()):
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return len(seen) == g.node_count


def _edmonds(n, root, tails, heads, w, tie, origin):
    # Chu-Liu/Edmonds with keys (w, tie) compared lexicographically.
    # Returns the list of origin ids of the chosen arcs.
    best = [-1] * n
    for k in range(len(tails)):
        v = heads[k]
        if v == root:
            continue
        b = best[v]
        if b < 0 or w[k] < w[b] or (w[k] == w[b] and tie[k] < tie[b]):
            best[v] = k
    for v in range(n):
        if v != root and best[v] < 0:
            raise InfeasibleError(f"node {v} cannot be reached from the root")

    # cycle detection on the best-in-arc functional graph
    state = [0] * n  # 0 new, 1 on current path, 2 done
    state[root] = 2
    cycles = []
    for start in range(n):
        path = []
        v = start
        while state[v] == 0:
            state[v] = 1
            path.append(v)
            v = tails[best[v]]
        if state[v] == 1:
            cyc = path[path.index(v):]
            cycles.append(cyc)
        for p in path:
            state[p] = 2
    if not cycles:
        return [origin[best[v]] for v in range(n) if v != root]

    comp = [-1] * n
    for c, cyc in enumerate(cycles):
        for v in cyc:
            comp[v] = c
    nxt = len(cycles)
    for v in range(n):
        if comp[v] < 0:
            comp[v] = nxt
            nxt += 1
    in_cycle = [False] * n
    for cyc in cycles:
        for v in cyc:
            in_cycle[v] = True

    st, sh, sw, stie, sorigin = [], [], [], [], []
    for k in range(len(tails)):
        a, b = comp[tails[k]], comp[heads[k]]
        if a == b:
            continue
        v = heads[k]
        if in_cycle[v]:
            kb = best[v]
            sw.append(w[k] - w[kb])
            stie.append(tie[k] - tie[kb])
        else:
            sw.append(w[k])
            stie.append(tie[k])
        st.append(a)
        sh.append(b)
        sorigin.append(k)
    chosen_local = _edmonds(nxt, comp[root], st, sh, sw, stie, sorigin)
    chosen = set(chosen_local)
    entered = set()
    for k in chosen:
        if in_cycle[heads[k]]:
            entered.add(heads[k])
    for cyc in cycles:
        for v in cyc:
            if v not in entered:
                chosen.add(best[v])
    return [origin[k] for k in chosen]


def min_weight_rooted_arborescence(g: Digraph, h, forbidden=None) -> np.ndarray:
    """Minimum-weight spanning arborescence rooted at ``g.root``.

    Ties between optimal arborescences are broken towards the
    lexicographically smallest sorted tuple of arc ids. Weights may be
    negative.

    Parameters
    ----------
    g : Digraph
    h : array_like
        Weight per arc id.
    forbidden : array_like of bool, optional
        Arcs that may not be used.

    Returns
    -------
    ndarray of bool
        Membership mask of the optimal arborescence.

    Raises
    ------
    InfeasibleError
        If no spanning arborescence avoids the forbidden arcs.
    """
    h = np.asarray(h, dtype=float)
    if h.shape != (g.arc_count,):
        raise ValueError("weight vector length does not match the arc count")
    if not np.all(np.isfinite(h)):
        raise ValueError("weights must be finite")
    allowed = np.ones(g.arc_count, dtype=bool) if forbidden is None else ~np.asarray(forbidden, dtype=bool)
    out = np.zeros(g.arc_count, dtype=bool)
    if g.node_count == 1:
        return out
    ids = np.flatnonzero(allowed).tolist()
    m = g.arc_count
    tails = g.tails[ids].tolist()
    heads = g.heads[ids].tolist()
    w = h[ids].tolist()
    # a lower id gets a bonus larger than all higher ids combined
    tie = [-(1 << (m - 1 - k)) for k in ids]
    chosen = _edmonds(g.node_count, g.root, tails, heads, w, tie, ids)
    out[chosen] = True
    return out


def enumerate_arborescences(g: Digraph, forbidden=None) -> list[np.ndarray]:
    """Every spanning arborescence rooted at ``g.root`` avoiding ``forbidden``.

    Exhaustive over one in-arc per non-root node; guarded to small graphs.
    """
    if g.node_count > ENUMERATION_LIMIT:
        raise SizeGuardError(f"enumeration limited to {ENUMERATION_LIMIT} nodes, got {g.node_count}")
    allowed = np.ones(g.arc_count, dtype=bool) if forbidden is None else ~np.asarray(forbidden, dtype=bool)
    others = [v for v in range(g.node_count) if v != g.root]
    choices = []
    for v in others:
        ks = [k for k in range(g.arc_count) if allowed[k] and g.heads[k] == v]
        if not ks:
            return []
        choices.append(ks)
    found = []
    for combo in itertools.product(*choices):
        s = np.zeros(g.arc_count, dtype=bool)
        s[list(combo)] = True
        if is_spanning_arborescence(g, s):
            found.append(s)
    return found


def arborescence_weight(h: Sequence[float], s: np.ndarray) -> float:
    return float(np.asarray(h, dtype=float)[np.asarray(s, dtype=bool)].sum())
