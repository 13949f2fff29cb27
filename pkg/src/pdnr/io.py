"""Case files, scenario files and result artifacts (JSON / CSV)."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .errors import CaseFileError
from .graph import Digraph
from .model import NetworkCase

CASE_VERSION = 1

CASE_SCHEMA = {
    "type": "object",
    "required": ["version", "base_voltage_kv", "epsilon", "buses", "branches"],
    "properties": {
        "version": {"const": CASE_VERSION},
        "name": {"type": "string"},
        "description": {"type": "string"},
        "base_voltage_kv": {"type": "number", "exclusiveMinimum": 0},
        "epsilon": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "balance_tolerance": {"type": "number", "minimum": 0},
        "voltage_enabled": {"type": "boolean"},
        "buses": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "rho1_mw", "rho2_mvar", "kind"],
                "properties": {
                    "id": {"type": "integer"},
                    "rho1_mw": {"type": "number"},
                    "rho2_mvar": {"type": "number"},
                    "kind": {"enum": ["root", "substation", "load", "der"]},
                },
                "additionalProperties": False,
            },
        },
        "branches": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["from", "to", "r_ohm", "x_ohm", "p_cap_mw", "q_cap_mvar"],
                "properties": {
                    "from": {"type": "integer"},
                    "to": {"type": "integer"},
                    "r_ohm": {"type": "number", "exclusiveMinimum": 0},
                    "x_ohm": {"type": "number", "exclusiveMinimum": 0},
                    "p_cap_mw": {"type": "number", "minimum": 0},
                    "q_cap_mvar": {"type": "number", "minimum": 0},
                },
                "additionalProperties": False,
            },
        },
    },
}


def _schema_error(err: jsonschema.ValidationError) -> CaseFileError:
    where = "/".join(str(p) for p in err.absolute_path) or "<root>"
    return CaseFileError(f"{where}: {err.message}")


def case_from_dict(doc: dict) -> NetworkCase:
    """Build a :class:`NetworkCase` from a parsed case document."""
    try:
        jsonschema.validate(doc, CASE_SCHEMA)
    except jsonschema.ValidationError as err:
        raise _schema_error(err) from None
    buses = doc["buses"]
    labels = [b["id"] for b in buses]
    if len(set(labels)) != len(labels):
        raise CaseFileError("buses: duplicated bus id")
    index = {lab: k for k, lab in enumerate(labels)}
    roots = [b["id"] for b in buses if b["kind"] == "root"]
    if len(roots) != 1:
        raise CaseFileError(f"buses: exactly one root required, found {len(roots)}")
    edges, seen = [], set()
    v0 = float(doc["base_voltage_kv"])
    r, x, pc, qc = [], [], [], []
    for n, br in enumerate(doc["branches"]):
        a, b = br["from"], br["to"]
        if a not in index or b not in index:
            raise CaseFileError(f"branches/{n}: unknown bus")
        if a == b:
            raise CaseFileError(f"branches/{n}: self-loop")
        key = frozenset((a, b))
        if key in seen:
            raise CaseFileError(f"branches/{n}: duplicated branch {a}-{b}")
        seen.add(key)
        edges.append((index[a], index[b]))
        for vec, val in ((r, br["r_ohm"] / v0**2), (x, br["x_ohm"] / v0**2), (pc, br["p_cap_mw"]), (qc, br["q_cap_mvar"])):
            vec.extend((val, val))
    g = Digraph.bidirectional(len(buses), edges, index[roots[0]])
    _check_connected(g)
    tol = float(doc.get("balance_tolerance", 1e-6))
    rho1 = np.array([b["rho1_mw"] for b in buses], dtype=float)
    rho2 = np.array([b["rho2_mvar"] for b in buses], dtype=float)
    for name, rho in (("rho1_mw", rho1), ("rho2_mvar", rho2)):
        if abs(rho.sum()) > tol:
            raise CaseFileError(f"buses: {name} imbalance {rho.sum():.6g} exceeds tolerance {tol:g}")
    return NetworkCase(
        digraph=g,
        r=np.array(r),
        x=np.array(x),
        p_cap=np.array(pc),
        q_cap=np.array(qc),
        rho1=rho1,
        rho2=rho2,
        epsilon=float(doc["epsilon"]),
        v0=v0,
        substations=frozenset(index[b["id"]] for b in buses if b["kind"] == "substation"),
        voltage_enabled=bool(doc.get("voltage_enabled", True)),
        labels=tuple(labels),
        name=doc.get("name", ""),
        balance_tol=tol,
    )


def _check_connected(g: Digraph) -> None:
    adj: dict[int, list[int]] = {}
    for a, b in g.arcs:
        adj.setdefault(a, []).append(b)
    seen = {g.root}
    stack = [g.root]
    while stack:
        v = stack.pop()
        for w in adj.get(v, ()):
            if w not in seen:
                seen.add(w)
                stack.append(w)
    if len(seen) != g.node_count:
        raise CaseFileError("branches: network is disconnected")


def _resolve(path) -> Path:
    p = Path(path)
    if p.exists():
        return p
    bundled = resources.files("pdnr") / "data" / p.name
    if bundled.is_file():
        return Path(str(bundled))
    raise FileNotFoundError(path)


def load_case(path) -> NetworkCase:
    """Read a case file; bare names such as ``baran33.json`` fall back to the bundled data."""
    with open(_resolve(path)) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as err:
            raise CaseFileError(f"invalid JSON: {err}") from None
    return case_from_dict(doc)


def case_to_dict(case: NetworkCase) -> dict:
    g = case.digraph
    v0sq = case.v0**2
    kind = []
    for k in range(g.node_count):
        if k == g.root:
            kind.append("root")
        elif k in case.substations:
            kind.append("substation")
        elif case.rho1[k] > 0:
            kind.append("der")
        else:
            kind.append("load")
    buses = [
        {"id": case.labels[k], "rho1_mw": float(case.rho1[k]), "rho2_mvar": float(case.rho2[k]), "kind": kind[k]}
        for k in range(g.node_count)
    ]
    branches = []
    for k in range(g.arc_count):
        if k < g.reverse[k]:
            branches.append(
                {
                    "from": case.labels[g.tails[k]],
                    "to": case.labels[g.heads[k]],
                    "r_ohm": float(case.r[k] * v0sq),
                    "x_ohm": float(case.x[k] * v0sq),
                    "p_cap_mw": float(case.p_cap[k]),
                    "q_cap_mvar": float(case.q_cap[k]),
                }
            )
    return {
        "version": CASE_VERSION,
        "name": case.name,
        "base_voltage_kv": case.v0,
        "epsilon": case.epsilon,
        "balance_tolerance": case.balance_tol,
        "voltage_enabled": case.voltage_enabled,
        "buses": buses,
        "branches": branches,
    }


def save_case(case: NetworkCase, path) -> None:
    Path(path).write_text(json.dumps(case_to_dict(case), indent=1) + "\n")


def case_hash(case: NetworkCase) -> str:
    blob = json.dumps(case_to_dict(case), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def trace_csv(rows, per_agent: bool = False) -> str:
    """Render metric rows (``iteration, e_k`` plus optional per-agent norms)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    rows = list(rows)
    header = ["iteration", "e_k"]
    if per_agent and rows:
        n = len(rows[0].s)
        header += [f"s_{i}" for i in range(n)] + [f"r_{i}" for i in range(n)]
    w.writerow(header)
    for m in rows:
        line = [m.iteration, repr(float(m.e_k))]
        if per_agent:
            line += [repr(float(v)) for v in m.s] + [repr(float(v)) for v in m.r]
        w.writerow(line)
    return buf.getvalue()
